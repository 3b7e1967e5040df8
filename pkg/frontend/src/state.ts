/**
 * What-if session state: one selected patient, a working plan the clinician
 * edits, pinned services that must survive re-optimization, and the risk
 * trail of every plan the service has scored.
 *
 * Risks are never computed locally; the store only ever displays numbers
 * that arrived in a service response. Concurrent edits are serialized by a
 * sequence number: a response for an outdated plan is discarded.
 */
import { ApiClient, PatientSummary, Recommendation } from "./api.js";

export interface RiskSnapshot {
  plan: string[];
  risk: number;
}

export interface PlanDiff {
  add: string[];
  remove: string[];
  keep: string[];
}

export class WhatIfStore {
  patient: PatientSummary | null = null;
  workingPlan = new Set<string>();
  pins = new Set<string>();
  displayedRisk: number | null = null;
  previousRisk: number | null = null;
  lastRecommendation: Recommendation | null = null;
  riskHistory: RiskSnapshot[] = [];

  private scoreSeq = 0;

  constructor(private api: ApiClient) {}

  get observedRisk(): number | null {
    return this.patient ? this.patient.initial_risk : null;
  }

  get deltaToPrevious(): number | null {
    if (this.displayedRisk === null || this.previousRisk === null) {
      return null;
    }
    return this.displayedRisk - this.previousRisk;
  }

  get deltaToObserved(): number | null {
    if (this.displayedRisk === null || this.observedRisk === null) {
      return null;
    }
    return this.displayedRisk - this.observedRisk;
  }

  async selectPatient(id: string): Promise<void> {
    const patient = await this.api.getPatient(id);
    this.patient = patient;
    this.workingPlan = new Set(patient.plan);
    this.pins = new Set();
    this.lastRecommendation = null;
    this.scoreSeq += 1; // invalidate in-flight scores for the old patient
    this.previousRisk = null;
    this.displayedRisk = patient.initial_risk;
    this.riskHistory = [{ plan: [...patient.plan].sort(), risk: patient.initial_risk }];
  }

  sortedPlan(): string[] {
    return [...this.workingPlan].sort();
  }

  async toggleService(code: string): Promise<void> {
    if (!this.patient) {
      throw new Error("no patient selected");
    }
    if (this.workingPlan.has(code)) {
      this.workingPlan.delete(code);
      this.pins.delete(code); // pins always stay inside the working plan
    } else {
      this.workingPlan.add(code);
    }
    await this.rescore();
  }

  async togglePin(code: string): Promise<void> {
    if (this.pins.has(code)) {
      this.pins.delete(code);
      return;
    }
    this.pins.add(code);
    if (!this.workingPlan.has(code)) {
      this.workingPlan.add(code);
      await this.rescore();
    }
  }

  private async rescore(): Promise<void> {
    if (!this.patient) {
      return;
    }
    const seq = ++this.scoreSeq;
    const plan = this.sortedPlan();
    const response = await this.api.score(this.patient.id, plan);
    if (seq !== this.scoreSeq) {
      return; // a newer plan was scored meanwhile; this response is stale
    }
    this.previousRisk = this.displayedRisk;
    this.displayedRisk = response.risk;
    this.riskHistory.push({ plan, risk: response.risk });
  }

  async reoptimize(options: { budget?: number; planSize?: number; seed?: number; mode?: string } = {}): Promise<Recommendation> {
    if (!this.patient) {
      throw new Error("no patient selected");
    }
    const rec = await this.api.recommend({
      patient_id: this.patient.id,
      mode: options.mode ?? "ph_and_time",
      budget: options.budget ?? 5000,
      plan_size: options.planSize ?? 8,
      seed: options.seed ?? 0,
      pins: [...this.pins].sort(),
    });
    this.lastRecommendation = rec;
    return rec;
  }

  /** Per-service difference between the recommendation and the working plan. */
  recommendationDiff(): PlanDiff | null {
    if (!this.lastRecommendation) {
      return null;
    }
    const recommended = new Set(this.lastRecommendation.plan);
    return {
      add: [...recommended].filter((c) => !this.workingPlan.has(c)).sort(),
      remove: [...this.workingPlan].filter((c) => !recommended.has(c)).sort(),
      keep: [...recommended].filter((c) => this.workingPlan.has(c)).sort(),
    };
  }

  /** Replace the working plan with the recommendation; its risk was already served. */
  acceptRecommendation(): void {
    const rec = this.lastRecommendation;
    if (!rec) {
      return;
    }
    this.workingPlan = new Set(rec.plan);
    this.pins = new Set([...this.pins].filter((c) => this.workingPlan.has(c)));
    this.scoreSeq += 1; // drop any in-flight score for the replaced plan
    this.previousRisk = this.displayedRisk;
    this.displayedRisk = rec.risk;
    this.riskHistory.push({ plan: [...rec.plan].sort(), risk: rec.risk });
  }
}
