/**
 * Typed client for the scoring service. Every request and response is
 * appended to a log so the UI can prove that each displayed number came
 * from the service rather than a local computation.
 */

export interface ServiceEntry {
  index: number;
  code: string;
  category: string;
}

export interface PatientSummary {
  id: string;
  characteristics: Record<string, number>;
  los: number;
  plan: string[];
  outcome: number;
  initial_risk: number;
}

export interface ScoreResponse {
  risk: number;
  reward: number;
}

export interface Recommendation {
  patient_id: string;
  plan: string[];
  risk: number;
  initial_risk: number;
  risk_reduction: number;
  simulations: number;
  mode: string;
  seed: number;
  plan_size: number;
}

export interface RecommendRequest {
  patient_id: string;
  mode?: string;
  budget?: number;
  plan_size?: number;
  seed?: number;
  pins?: string[];
}

export interface LogEntry {
  method: string;
  path: string;
  body: unknown;
  response: unknown;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, public detail: unknown) {
    super(`service responded ${status}`);
  }
}

export class ApiClient {
  readonly log: LogEntry[] = [];

  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { "content-type": "application/json" } };
    if (body !== undefined) {
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchFn(this.baseUrl + path, init);
    const payload = await resp.json();
    if (!resp.ok) {
      throw new ApiError(resp.status, payload);
    }
    this.log.push({ method, path, body: body ?? null, response: payload });
    return payload as T;
  }

  getCatalog(): Promise<{ services: ServiceEntry[] }> {
    return this.request("GET", "/catalog");
  }

  getPatients(): Promise<{ patients: PatientSummary[] }> {
    return this.request("GET", "/patients");
  }

  getPatient(id: string): Promise<PatientSummary> {
    return this.request("GET", `/patients/${id}`);
  }

  score(patientId: string, plan: string[]): Promise<ScoreResponse> {
    return this.request("POST", "/score", { patient_id: patientId, plan });
  }

  recommend(req: RecommendRequest): Promise<Recommendation> {
    return this.request("POST", "/recommend", req);
  }

  /** True when a numeric value appears in some logged response payload. */
  responseContains(value: number): boolean {
    const seen = (payload: unknown): boolean => {
      if (typeof payload === "number") {
        return payload === value;
      }
      if (Array.isArray(payload)) {
        return payload.some(seen);
      }
      if (payload && typeof payload === "object") {
        return Object.values(payload).some(seen);
      }
      return false;
    };
    return this.log.some((entry) => seen(entry.response));
  }
}
