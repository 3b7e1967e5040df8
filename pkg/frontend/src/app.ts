/**
 * Browser entry: wires the what-if store to a small DOM. The layout has a
 * patient picker, the working-plan editor with live risk display, the
 * re-optimization panel with an accept button, and a side-by-side case
 * report comparing the recommended selection with the observed one.
 */
import { ApiClient, ServiceEntry } from "./api.js";
import { decileForRisk, formatDelta, formatPercent } from "./format.js";
import { WhatIfStore } from "./state.js";

const api = new ApiClient("");
const store = new WhatIfStore(api);
let catalog: ServiceEntry[] = [];
let decileBoundaries: number[] | null = null;

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing #${id}`);
  }
  return node;
}

function renderRisk(): void {
  const risk = store.displayedRisk;
  el("risk-value").textContent = risk === null ? "–" : formatPercent(risk);
  const deltaPrev = store.deltaToPrevious;
  el("risk-delta-prev").textContent =
    deltaPrev === null ? "" : `${formatDelta(deltaPrev)} vs previous`;
  const deltaObs = store.deltaToObserved;
  el("risk-delta-observed").textContent =
    deltaObs === null ? "" : `${formatDelta(deltaObs)} vs observed plan`;
  const badge = el("decile-badge");
  if (risk !== null && decileBoundaries) {
    badge.textContent = `decile ${decileForRisk(risk, decileBoundaries)}`;
    badge.hidden = false;
  } else {
    badge.hidden = true;
  }
}

function renderCatalog(): void {
  const list = el("service-list");
  list.replaceChildren();
  for (const svc of catalog) {
    const row = document.createElement("li");
    const active = store.workingPlan.has(svc.code);
    const pinned = store.pins.has(svc.code);
    const toggle = document.createElement("button");
    toggle.textContent = `${active ? "✓ " : ""}${svc.code}`;
    toggle.className = active ? "service active" : "service";
    toggle.addEventListener("click", () => {
      void store.toggleService(svc.code).then(renderAll);
    });
    const pin = document.createElement("button");
    pin.textContent = pinned ? "pinned" : "pin";
    pin.className = pinned ? "pin active" : "pin";
    pin.addEventListener("click", () => {
      void store.togglePin(svc.code).then(renderAll);
    });
    const category = document.createElement("span");
    category.textContent = svc.category;
    category.className = "category";
    row.append(toggle, pin, category);
    list.append(row);
  }
}

function renderRecommendation(): void {
  const panel = el("recommendation");
  const rec = store.lastRecommendation;
  if (!rec) {
    panel.textContent = "No recommendation requested yet.";
    return;
  }
  const diff = store.recommendationDiff();
  panel.replaceChildren();
  const headline = document.createElement("p");
  headline.textContent =
    `Recommended plan risk ${formatPercent(rec.risk)} ` +
    `(reduction ${rec.risk_reduction.toFixed(1)} pp, ${rec.simulations} simulations)`;
  panel.append(headline);
  if (diff) {
    const ul = document.createElement("ul");
    for (const code of diff.add) {
      const li = document.createElement("li");
      li.textContent = `add ${code}`;
      li.className = "diff-add";
      ul.append(li);
    }
    for (const code of diff.remove) {
      const li = document.createElement("li");
      li.textContent = `remove ${code}`;
      li.className = "diff-remove";
      ul.append(li);
    }
    panel.append(ul);
  }
  const accept = document.createElement("button");
  accept.id = "accept-recommendation";
  accept.textContent = "Accept plan";
  accept.addEventListener("click", () => {
    store.acceptRecommendation();
    renderAll();
  });
  panel.append(accept);
}

function renderCaseReport(): void {
  const table = el("case-report") as HTMLTableElement;
  table.replaceChildren();
  const patient = store.patient;
  if (!patient) {
    table.textContent = "";
    return;
  }
  const conditions = Object.entries(patient.characteristics)
    .filter(([name, value]) => name !== "age" && value !== 0)
    .map(([name]) => name);
  const recommended = store.lastRecommendation ? [...store.lastRecommendation.plan].sort() : [];
  const observed = [...patient.plan].sort();
  const header = table.insertRow();
  for (const title of ["Conditions", "Selection (search)", "Selection (observed)"]) {
    const cell = document.createElement("th");
    cell.textContent = title;
    header.append(cell);
  }
  const rows = Math.max(conditions.length, recommended.length, observed.length, 1);
  for (let i = 0; i < rows; i += 1) {
    const row = table.insertRow();
    row.insertCell().textContent = conditions[i] ?? "";
    row.insertCell().textContent = recommended[i] ?? "";
    row.insertCell().textContent = observed[i] ?? "";
  }
  const counts = table.insertRow();
  counts.insertCell().textContent = "Number of services:";
  counts.insertCell().textContent = String(recommended.length);
  counts.insertCell().textContent = String(observed.length);
  const risks = table.insertRow();
  risks.insertCell().textContent = "Risk:";
  risks.insertCell().textContent = store.lastRecommendation
    ? formatPercent(store.lastRecommendation.risk)
    : "–";
  risks.insertCell().textContent = formatPercent(patient.initial_risk);
}

function renderAll(): void {
  renderRisk();
  renderCatalog();
  renderRecommendation();
  renderCaseReport();
}

async function start(): Promise<void> {
  catalog = (await api.getCatalog()).services;
  try {
    const resp = await fetch("./deciles.json");
    if (resp.ok) {
      decileBoundaries = (await resp.json()).boundaries as number[];
    }
  } catch {
    decileBoundaries = null; // badge simply stays hidden
  }
  const patients = (await api.getPatients()).patients;
  const picker = el("patient-picker") as HTMLSelectElement;
  picker.replaceChildren();
  for (const p of patients) {
    const option = document.createElement("option");
    option.value = p.id;
    option.textContent = `${p.id} (${formatPercent(p.initial_risk)})`;
    picker.append(option);
  }
  picker.addEventListener("change", () => {
    void store.selectPatient(picker.value).then(renderAll);
  });
  el("reoptimize").addEventListener("click", () => {
    void store.reoptimize().then(renderAll);
  });
  if (patients.length) {
    const first = patients[0];
    if (first) {
      await store.selectPatient(first.id);
    }
  }
  renderAll();
}

if (typeof document !== "undefined" && document.getElementById("patient-picker")) {
  void start();
}
