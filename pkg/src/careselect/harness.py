"""Experiment protocol: decile-stratified test sets, sweeps, algorithm comparisons.

Evaluation always reports risk reduction in percentage points: the model's
risk for the observed plan minus its risk for the recommended plan. Patients
are stratified into deciles of initial risk so low and high risk cases are
evenly represented, and every aggregate ships with the raw per-patient rows
it was computed from.
"""
from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field, replace

import numpy as np

from . import catalog as cat
from .catalog import ServiceCatalog, featurize
from .feature_select import EnsembleSpec, build_ensemble
from .glm import predict_risk, roc_auc, roc_curve, stratified_folds
from .propensity import DEFAULT_CLIP, compute_weights, fit_all_propensities
from .scoring import EnsembleModel, score_risk
from .search import SearchConfig, SearchResult, dijkstra_search, run_search

DECILES = 10


class StratificationError(ValueError):
    pass


@dataclass
class TestSet:
    """Stratified evaluation patients: ten per decile of initial risk."""

    patient_ids: list[str]
    decile_of: dict[str, int]
    boundaries: list[float]
    pool: list[dict]  # {"id", "risk", "decile"} for every sampled patient
    excluded_ids: list[str]
    seed: int

    def ids_in_decile(self, decile: int) -> list[str]:
        return [pid for pid in self.patient_ids if self.decile_of[pid] == decile]


def build_test_set(cohort, ensemble: EnsembleModel, seed, pool_size=500,
                   per_decile=10) -> TestSet:
    """Sample a pool, score initial risks, cut deciles, draw evenly from each."""
    if len(cohort) < pool_size:
        raise StratificationError(f"need at least {pool_size} eligible patients, have {len(cohort)}")
    if pool_size % DECILES != 0:
        raise StratificationError("pool size must be divisible by 10")
    rng = np.random.default_rng(seed)
    pool_idx = rng.choice(len(cohort), size=pool_size, replace=False)
    scored = sorted(
        ((score_risk(ensemble, cohort[i], cohort[i].observed_plan), cohort[i].id) for i in pool_idx),
    )
    bin_size = pool_size // DECILES
    pool_rows = []
    decile_of = {}
    chosen: list[str] = []
    boundaries = [scored[0][0]]
    for d in range(DECILES):
        chunk = scored[d * bin_size : (d + 1) * bin_size]
        boundaries.append(chunk[-1][0])
        ids = [pid for _, pid in chunk]
        for risk, pid in chunk:
            pool_rows.append({"id": pid, "risk": risk, "decile": d + 1})
            decile_of[pid] = d + 1
        pick = rng.choice(len(ids), size=per_decile, replace=False)
        chosen.extend(ids[j] for j in sorted(pick))
    return TestSet(
        patient_ids=chosen,
        decile_of={pid: decile_of[pid] for pid in chosen},
        boundaries=boundaries,
        pool=pool_rows,
        excluded_ids=sorted(pid for _, pid in scored),
        seed=int(seed),
    )


def testset_to_json(ts: TestSet) -> dict:
    return {
        "seed": ts.seed,
        "patient_ids": ts.patient_ids,
        "decile_of": ts.decile_of,
        "boundaries": ts.boundaries,
        "pool": ts.pool,
        "excluded_ids": ts.excluded_ids,
    }


def testset_from_json(doc: dict) -> TestSet:
    return TestSet(
        patient_ids=list(doc["patient_ids"]),
        decile_of={str(k): int(v) for k, v in doc["decile_of"].items()},
        boundaries=[float(b) for b in doc["boundaries"]],
        pool=[{"id": str(r["id"]), "risk": float(r["risk"]), "decile": int(r["decile"])} for r in doc["pool"]],
        excluded_ids=list(doc["excluded_ids"]),
        seed=int(doc["seed"]),
    )


@dataclass
class ExperimentReport:
    """Raw per-run rows plus the aggregation methods used to print tables."""

    rows: list[dict] = field(default_factory=list)
    config_names: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, config: str, repeat: int, patient_id: str, decile: int,
            result: SearchResult):
        self.rows.append(
            {
                "config": config,
                "repeat": repeat,
                "patient_id": patient_id,
                "decile": decile,
                "initial_risk": result.initial_risk,
                "result_risk": result.risk,
                "reduction": result.risk_reduction,
                "simulations": result.simulations,
                "evaluations": result.evaluations,
                "elapsed_seconds": result.elapsed_seconds,
            }
        )
        if config not in self.config_names:
            self.config_names.append(config)

    def _rows_for(self, config):
        return [r for r in self.rows if r["config"] == config]

    def decile_means(self, config) -> dict[int, float]:
        means = {}
        for d in range(1, DECILES + 1):
            vals = [r["reduction"] for r in self._rows_for(config) if r["decile"] == d]
            if vals:
                means[d] = statistics.fmean(vals)
        return means

    def overall(self, config):
        """Mean reduction with spread across repeats (sample sd; 0 for one repeat)."""
        per_repeat = {}
        for r in self._rows_for(config):
            per_repeat.setdefault(r["repeat"], []).append(r["reduction"])
        repeat_means = [statistics.fmean(v) for _, v in sorted(per_repeat.items())]
        mean = statistics.fmean(repeat_means)
        spread = statistics.stdev(repeat_means) if len(repeat_means) > 1 else 0.0
        return mean, spread

    def simulation_rate(self, config) -> float:
        rows = self._rows_for(config)
        sims = sum(r["simulations"] for r in rows)
        secs = sum(r["elapsed_seconds"] for r in rows)
        return sims / secs if secs > 0 else 0.0

    def to_markdown(self) -> str:
        header = "| Configuration | " + " | ".join(str(d) for d in range(1, DECILES + 1)) + " | All |"
        sep = "|" + "---|" * (DECILES + 2)
        lines = [header, sep]
        for config in self.config_names:
            means = self.decile_means(config)
            overall, spread = self.overall(config)
            cells = [f"{means.get(d, float('nan')):.2f}" for d in range(1, DECILES + 1)]
            lines.append(
                f"| {config} | " + " | ".join(cells) + f" | {overall:.2f} ± {spread:.3f} |"
            )
        return "\n".join(lines)

    def write_rows_csv(self, path):
        fields = [
            "config", "repeat", "patient_id", "decile", "initial_risk",
            "result_risk", "reduction", "simulations", "evaluations", "elapsed_seconds",
        ]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(self.rows)


def run_sweep(ensemble: EnsembleModel, cohort_by_id: dict, test_set: TestSet,
              configs, repeats=5, base_seed=1000) -> ExperimentReport:
    """configs: iterable of (name, SearchConfig); each is run repeats times.

    A zero-budget config means no recommendation is made: the patient keeps
    the observed plan and the recorded reduction is exactly zero.
    """
    report = ExperimentReport(metadata={"repeats": repeats, "base_seed": base_seed,
                                        "spread": "sample sd of per-repeat means"})
    for name, cfg in configs:
        for rep in range(repeats):
            run_cfg = replace(cfg, seed=base_seed + rep)
            for pid in test_set.patient_ids:
                patient = cohort_by_id[pid]
                if run_cfg.budget_sims == 0:
                    risk = score_risk(ensemble, patient, patient.observed_plan)
                    result = SearchResult(
                        plan=patient.observed_plan, risk=risk, initial_risk=risk,
                        risk_reduction=0.0, simulations=0, mode=run_cfg.mode,
                        seed=run_cfg.seed, plan_size_limit=run_cfg.plan_size,
                    )
                else:
                    result = run_search(ensemble, patient, run_cfg)
                report.add(name, rep, pid, test_set.decile_of[pid], result)
    return report


def compare_algorithms(ensemble: EnsembleModel, cohort_by_id: dict, test_set: TestSet,
                       plan_size=8, budget=2000, repeats=1, base_seed=1000) -> ExperimentReport:
    """Tree search and Dijkstra under equal model-evaluation budgets."""
    mcts_cfg = SearchConfig(plan_size=plan_size, budget_sims=budget, mode="ph_and_time")
    report = run_sweep(ensemble, cohort_by_id, test_set, [("MCTS", mcts_cfg)],
                       repeats=repeats, base_seed=base_seed)
    for rep in range(repeats):
        for pid in test_set.patient_ids:
            result = dijkstra_search(ensemble, cohort_by_id[pid], plan_size,
                                     eval_limit=budget, seed=base_seed + rep)
            report.add("Dijkstra", rep, pid, test_set.decile_of[pid], result)
    return report


def train_model(cohort, catalog: ServiceCatalog, names, spec: EnsembleSpec,
                clip=DEFAULT_CLIP) -> tuple:
    """Full training pass: propensity weights, then the pruned ensemble."""
    models = fit_all_propensities(cohort, catalog, names)
    weights = compute_weights(cohort, models, names, clip)
    ensemble = build_ensemble(spec, cohort, weights, catalog, names)
    return weights, ensemble


def evaluate_model(cohort, catalog: ServiceCatalog, names, spec: EnsembleSpec,
                   clip=DEFAULT_CLIP, k=10, seed=0) -> dict:
    """K-fold cross-validated AUC of the full pipeline, plus ROC points.

    Each fold retrains propensities and the ensemble on its training split.
    Returns fold-level ensemble AUCs, pooled member AUCs and a pooled ROC.
    """
    labels = np.array([p.observed_outcome for p in cohort])
    fold_aucs = []
    member_aucs = []
    pooled_scores = np.zeros(len(cohort))
    pooled_mask = np.zeros(len(cohort), dtype=bool)
    for fold in stratified_folds(labels, k, seed):
        test = set(fold)
        train_cohort = [p for i, p in enumerate(cohort) if i not in test]
        test_idx = sorted(test)
        test_cohort = [cohort[i] for i in test_idx]
        if len(set(p.observed_outcome for p in test_cohort)) < 2:
            continue
        _, ensemble = train_model(train_cohort, catalog, names, spec, clip)
        scores = [score_risk(ensemble, p, p.observed_plan) for p in test_cohort]
        y = [p.observed_outcome for p in test_cohort]
        fold_aucs.append(roc_auc(scores, y))
        for m in ensemble.members:
            member_scores = [
                predict_risk(m, featurize(p, p.observed_plan, ensemble.predictors))
                for p in test_cohort
            ]
            member_aucs.append(roc_auc(member_scores, y))
        for pos, i in enumerate(test_idx):
            pooled_scores[i] = scores[pos]
            pooled_mask[i] = True
    roc_points = roc_curve(pooled_scores[pooled_mask], labels[pooled_mask])
    return {
        "fold_aucs": fold_aucs,
        "auc_mean": statistics.fmean(fold_aucs),
        "auc_sd": statistics.stdev(fold_aucs) if len(fold_aucs) > 1 else 0.0,
        "member_aucs": member_aucs,
        "member_auc_mean": statistics.fmean(member_aucs) if member_aucs else float("nan"),
        "member_auc_sd": statistics.stdev(member_aucs) if len(member_aucs) > 1 else 0.0,
        "roc_points": roc_points,
        "folds": k,
        "seed": seed,
    }


def case_report(patient, result: SearchResult, catalog: ServiceCatalog) -> dict:
    """Side-by-side record for one patient: conditions, both plans, both risks.

    Interpretation of the case is left to the reader; this only lays out the
    comparison.
    """
    conditions = sorted(
        name for name, value in patient.characteristics.items()
        if name != "age" and value != 0
    )
    return {
        "patient_id": patient.id,
        "conditions": conditions,
        "recommended_plan": catalog.codes_of_plan(result.plan),
        "observed_plan": catalog.codes_of_plan(patient.observed_plan),
        "recommended_risk": result.risk,
        "observed_risk": result.initial_risk,
        "risk_reduction": result.risk_reduction,
    }


def save_test_set(ts: TestSet, path):
    cat.save_json(testset_to_json(ts), path)


def load_test_set(path) -> TestSet:
    return testset_from_json(cat.load_json(path))
