import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { WhatIfStore } from "../src/state.js";
import { FakeService } from "./fake-service.js";

async function freshStore() {
  const service = new FakeService();
  const api = new ApiClient("", service.fetch);
  const store = new WhatIfStore(api);
  await store.selectPatient("p0001");
  return { service, api, store };
}

describe("working plan editing", () => {
  it("starts from the observed plan and its served risk", async () => {
    const { store } = await freshStore();
    expect(store.sortedPlan()).toEqual(["APNEA", "WLKCANE"]);
    expect(store.displayedRisk).toBe(0.578);
  });

  it("toggling a service twice restores the displayed risk", async () => {
    const { store } = await freshStore();
    const before = store.displayedRisk;
    await store.toggleService("GRABBARS");
    const mid = store.displayedRisk;
    await store.toggleService("GRABBARS");
    expect(store.displayedRisk).toBe(before);
    expect(mid).not.toBe(before);
  });

  it("removing every service shows the empty-plan risk", async () => {
    const { store, service } = await freshStore();
    await store.toggleService("APNEA");
    await store.toggleService("WLKCANE");
    expect(store.sortedPlan()).toEqual([]);
    expect(store.displayedRisk).toBe(service.riskOf([]));
  });

  it("every displayed risk is verbatim from a logged response", async () => {
    const { store, api } = await freshStore();
    await store.toggleService("PHARMACY");
    await store.toggleService("DIETSRV");
    expect(store.displayedRisk).not.toBeNull();
    expect(api.responseContains(store.displayedRisk as number)).toBe(true);
    for (const snapshot of store.riskHistory) {
      expect(api.responseContains(snapshot.risk)).toBe(true);
    }
  });

  it("keeps the risk history append-only", async () => {
    const { store } = await freshStore();
    const lengths = [store.riskHistory.length];
    await store.toggleService("PHARMACY");
    lengths.push(store.riskHistory.length);
    await store.toggleService("PHARMACY");
    lengths.push(store.riskHistory.length);
    expect(lengths).toEqual([1, 2, 3]);
  });
});

describe("stale response handling", () => {
  it("discards the slower of two racing toggles", async () => {
    const { store, service } = await freshStore();
    service.deferNext = 2;
    const first = store.toggleService("GRABBARS");
    const second = store.toggleService("PHARMACY");
    expect(service.deferredScores.length).toBe(2);
    const [slow, fast] = service.deferredScores;
    // the second (newer) response lands first
    fast!.resolve();
    await second;
    const expected = store.displayedRisk;
    expect(expected).toBe(service.riskOf(store.sortedPlan()));
    // the stale first response lands afterwards and must be ignored
    slow!.resolve();
    await first;
    expect(store.displayedRisk).toBe(expected);
    expect(store.riskHistory[store.riskHistory.length - 1]!.risk).toBe(expected);
  });
});

describe("pins and re-optimization", () => {
  it("pinning keeps the code inside the working plan", async () => {
    const { store } = await freshStore();
    await store.togglePin("DIETSRV");
    expect(store.workingPlan.has("DIETSRV")).toBe(true);
    for (const code of store.pins) {
      expect(store.workingPlan.has(code)).toBe(true);
    }
    await store.toggleService("DIETSRV"); // removing also unpins
    expect(store.pins.has("DIETSRV")).toBe(false);
  });

  it("sends pins with the recommendation request and keeps them in the plan", async () => {
    const { store, service } = await freshStore();
    await store.togglePin("PHARMACY");
    const rec = await store.reoptimize({ planSize: 3 });
    const sent = service.requests.find((r) => r.path.endsWith("/recommend"));
    expect((sent!.body as { pins: string[] }).pins).toEqual(["PHARMACY"]);
    expect(rec.plan).toContain("PHARMACY");
    store.acceptRecommendation();
    expect(store.workingPlan.has("PHARMACY")).toBe(true);
  });

  it("accepting shows the recommendation's served risk, and rescoring agrees", async () => {
    const { store, service } = await freshStore();
    const rec = await store.reoptimize({ planSize: 3 });
    store.acceptRecommendation();
    expect(store.displayedRisk).toBe(rec.risk);
    // scoring the accepted plan returns the same number the service reported
    expect(service.riskOf(store.sortedPlan())).toBe(rec.risk);
  });

  it("computes the add/remove diff against the working plan", async () => {
    const { store } = await freshStore();
    await store.reoptimize({ planSize: 3 });
    const diff = store.recommendationDiff();
    expect(diff).not.toBeNull();
    for (const code of diff!.add) {
      expect(store.workingPlan.has(code)).toBe(false);
    }
    for (const code of diff!.remove) {
      expect(store.workingPlan.has(code)).toBe(true);
    }
  });

  it("renders an empty recommendation state without crashing", async () => {
    const { store } = await freshStore();
    expect(store.recommendationDiff()).toBeNull();
    expect(store.lastRecommendation).toBeNull();
  });
});
