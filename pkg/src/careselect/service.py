"""Stateless HTTP facade over scoring and search for the what-if UI and scripts.

Responses are pure functions of the loaded model file, cohort file and the
request body. Every recommendation runs its own single-threaded search, so
concurrent requests never share mutable state. Budgets over HTTP are
simulation counts only, which keeps responses reproducible.
"""
from __future__ import annotations

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from . import datagen, scoring, search
from .catalog import SchemaError, catalog_to_json


class ScoreRequest(BaseModel):
    patient_id: str
    plan: list[str] = Field(default_factory=list)


class RecommendRequest(BaseModel):
    patient_id: str
    mode: str = "ph_and_time"
    budget: int = 10000
    plan_size: int = 8
    seed: int = 0
    pins: list[str] = Field(default_factory=list)


def create_app(model_path, cohort_path, max_budget=200000) -> FastAPI:
    ensemble = scoring.load_model(model_path)
    catalog = scoring.catalog_of(ensemble)
    if catalog is None:
        raise scoring.ModelFormatError("model has no embedded catalog metadata")
    cohort = datagen.import_cohort(cohort_path, catalog)
    by_id = {p.id: p for p in cohort}
    initial_risk = {
        p.id: scoring.score_risk(ensemble, p, p.observed_plan) for p in cohort
    }

    app = FastAPI(title="careselect")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def patient_doc(p):
        return {
            "id": p.id,
            "characteristics": p.characteristics,
            "los": p.los,
            "plan": catalog.codes_of_plan(p.observed_plan),
            "outcome": p.observed_outcome,
            "initial_risk": initial_risk[p.id],
        }

    def get_patient(patient_id):
        patient = by_id.get(patient_id)
        if patient is None:
            raise HTTPException(status_code=404, detail=f"unknown patient id {patient_id!r}")
        return patient

    def parse_plan(codes):
        bad = [c for c in codes if c not in {s.code for s in catalog.services}]
        if bad:
            raise HTTPException(status_code=422, detail={"unknown_codes": bad})
        try:
            return catalog.plan_from_codes(codes)
        except SchemaError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.get("/catalog")
    def get_catalog():
        return catalog_to_json(catalog)

    @app.get("/patients")
    def list_patients():
        return {"patients": [patient_doc(p) for p in cohort]}

    @app.get("/patients/{patient_id}")
    def get_one_patient(patient_id: str):
        return patient_doc(get_patient(patient_id))

    @app.post("/score")
    def score(req: ScoreRequest):
        patient = get_patient(req.patient_id)
        plan = parse_plan(req.plan)
        risk = scoring.score_risk(ensemble, patient, plan)
        return {"risk": risk, "reward": 1.0 - risk}

    @app.post("/recommend")
    def recommend(req: RecommendRequest):
        patient = get_patient(req.patient_id)
        if req.budget > max_budget:
            raise HTTPException(
                status_code=422,
                detail=f"budget {req.budget} exceeds the cap {max_budget}; "
                "long searches belong on the command line",
            )
        pins = parse_plan(req.pins)
        try:
            cfg = search.SearchConfig(
                plan_size=req.plan_size,
                budget_sims=req.budget,
                mode=req.mode,
                seed=req.seed,
                pinned=tuple(sorted(pins)),
            )
            result = search.run_search(ensemble, patient, cfg)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {"patient_id": req.patient_id, **result.to_json(catalog)}

    return app
