"""Synthetic cohorts with a known outcome model and injected selection bias.

Real post-acute survey microdata is restricted, so experiments run on
generated cohorts: characteristics are drawn i.i.d., services are assigned
with probabilities that depend on characteristics (the selection bias that
propensity weighting must undo), and outcomes are drawn from a sparse
interaction model whose coefficients are known exactly. Everything is
seeded and round-trips through JSON bit-exactly.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import catalog as cat
from .catalog import (
    LOS_KEY,
    SERVICE_CHARACTERISTIC,
    SERVICE_SERVICE,
    PatientRecord,
    Service,
    ServiceCatalog,
    SchemaError,
    default_catalog,
    enumerate_predictors,
)
from .glm import LINEAR_CLAMP, LogisticModel
from .scoring import EnsembleModel

TRUTH_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class CohortSpec:
    """Knobs for one synthetic cohort."""

    n_patients: int = 5000
    n_services: int = 12
    n_characteristics: int = 20
    plan_size_mean: float = 8.0
    bias_strength: float = 1.0
    outcome_rate: float = 0.3
    ss_density: float = 0.15
    sc_density: float = 0.08
    coef_location: float = -0.5
    coef_scale: float = 0.6
    los_coef: float = 0.01
    rate_concentration: float = 2.0  # larger values pull service usage rates together
    seed: int = 0

    def __post_init__(self):
        if self.n_patients < 1:
            raise ValueError("n_patients must be at least 1")
        if self.plan_size_mean > self.n_services:
            raise ValueError("mean plan size cannot exceed the service count")
        if self.los_coef < 0:
            raise ValueError("los_coef must be nonnegative")


@dataclass(frozen=True)
class CharacteristicSpec:
    name: str
    kind: str  # "uniform" or "bernoulli"
    params: tuple  # (low, high) or (p,)

    def mean(self) -> float:
        if self.kind == "uniform":
            return 0.5 * (self.params[0] + self.params[1])
        return self.params[0]

    def sd(self) -> float:
        if self.kind == "uniform":
            return (self.params[1] - self.params[0]) / math.sqrt(12.0)
        p = self.params[0]
        return math.sqrt(p * (1.0 - p))


@dataclass(frozen=True)
class AssignmentModel:
    """Logistic usage model for one service over standardized characteristics."""

    service: int
    intercept: float
    weights: dict[str, float]


@dataclass(frozen=True)
class GroundTruth:
    """The generating process: outcome model, assignment models, schemas."""

    services: tuple[Service, ...]
    characteristics: tuple[CharacteristicSpec, ...]
    outcome_intercept: float
    outcome_coefs: dict[int, float]  # keyed by canonical predictor universe id
    los_coef: float
    assignment: tuple[AssignmentModel, ...]
    los_mu0: float
    los_risk_shift: float
    los_sigma: float
    seed: int
    spec: CohortSpec
    _ss_terms: tuple = field(default=(), repr=False, compare=False)
    _sc_terms: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        universe = enumerate_predictors(self.catalog(), [c.name for c in self.characteristics])
        char_pos = {c.name: i for i, c in enumerate(self.characteristics)}
        ss, sc = [], []
        for pid, coef in sorted(self.outcome_coefs.items()):
            p = universe[pid]
            if p.kind == SERVICE_SERVICE:
                ss.append((p.left, p.right, coef))
            else:
                sc.append((p.left, char_pos[p.right], p.right, coef))
        object.__setattr__(self, "_ss_terms", tuple(ss))
        object.__setattr__(self, "_sc_terms", tuple(sc))

    def catalog(self) -> ServiceCatalog:
        return ServiceCatalog(self.services)

    def characteristic_names(self) -> list[str]:
        return [c.name for c in self.characteristics]


def _bisect_intercept(objective, target, lo=-25.0, hi=25.0, iters=80):
    # objective must be monotone increasing in its argument
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if objective(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -LINEAR_CLAMP, LINEAR_CLAMP)))


def generate_ground_truth(spec: CohortSpec) -> GroundTruth:
    """Draw a sparse mixed-sign truth; deterministic for a given spec."""
    rng = np.random.default_rng([spec.seed, 1])
    catalog = default_catalog(spec.n_services)

    chars = [CharacteristicSpec("age", "uniform", (20.0, 95.0))]
    for i in range(spec.n_characteristics - 1):
        prevalence = float(np.round(0.02 + 0.55 * rng.beta(1.3, 4.0), 6))
        chars.append(CharacteristicSpec(f"cond_{i:02d}", "bernoulli", (prevalence,)))
    chars = tuple(chars[: spec.n_characteristics])
    names = [c.name for c in chars]

    universe = enumerate_predictors(catalog, names)
    ss_ids = [p.id for p in universe if p.kind == SERVICE_SERVICE]
    sc_ids = [p.id for p in universe if p.kind == SERVICE_CHARACTERISTIC]
    n_ss = int(round(spec.ss_density * len(ss_ids)))
    n_sc = int(round(spec.sc_density * len(sc_ids)))
    chosen_ss = sorted(rng.choice(ss_ids, size=n_ss, replace=False)) if n_ss else []
    chosen_sc = sorted(rng.choice(sc_ids, size=n_sc, replace=False)) if n_sc else []

    sd_by_name = {c.name: c.sd() for c in chars}
    coefs: dict[int, float] = {}
    for pid in chosen_ss:
        coefs[int(pid)] = float(rng.normal(spec.coef_location, spec.coef_scale))
    for pid in chosen_sc:
        p = universe[pid]
        # scale by the characteristic spread so effects are comparable across kinds
        coefs[int(pid)] = float(rng.normal(spec.coef_location, spec.coef_scale) / max(sd_by_name[p.right], 1e-9))

    # Per-service target usage rates summing to the requested mean plan size.
    raw = rng.gamma(spec.rate_concentration, 1.0, size=spec.n_services)
    rates = raw / raw.sum() * spec.plan_size_mean
    rates = np.clip(rates, 1e-3, 0.95)

    n_dep = min(4, spec.n_characteristics)
    assignment = []
    cal = _calibration_characteristics(chars, np.random.default_rng([spec.seed, 2]), 4096)
    cal_std = _standardize(cal, chars)
    for s in range(spec.n_services):
        dep = sorted(rng.choice(spec.n_characteristics, size=n_dep, replace=False))
        weights = {names[j]: float(rng.normal(0.0, 1.0) * spec.bias_strength) for j in dep}
        wvec = np.zeros(spec.n_characteristics)
        for j in dep:
            wvec[j] = weights[names[j]]
        drift = cal_std @ wvec
        intercept = _bisect_intercept(lambda c: float(np.mean(_sigmoid(c + drift))), rates[s])
        assignment.append(AssignmentModel(s, float(intercept), weights))
    assignment = tuple(assignment)

    los_mu0, los_risk_shift, los_sigma = math.log(20.0), 1.2, 0.45

    # Calibrate the outcome intercept on a simulated draw of the whole process.
    cal_rng = np.random.default_rng([spec.seed, 2, 1])
    plans = _draw_plans(cal_std, assignment, names, cal_rng)
    interactions = _interaction_logits(cal, plans, chars, coefs, universe)
    los_noise = cal_rng.normal(0.0, los_sigma, size=len(cal))

    def outcome_mean(b0):
        base = _sigmoid(b0 + interactions)
        los = np.exp(los_mu0 + los_risk_shift * (base - spec.outcome_rate) + los_noise)
        return float(np.mean(_sigmoid(b0 + interactions + spec.los_coef * los)))

    intercept = _bisect_intercept(outcome_mean, spec.outcome_rate)

    return GroundTruth(
        services=catalog.services,
        characteristics=chars,
        outcome_intercept=float(intercept),
        outcome_coefs=coefs,
        los_coef=spec.los_coef,
        assignment=assignment,
        los_mu0=los_mu0,
        los_risk_shift=los_risk_shift,
        los_sigma=los_sigma,
        seed=spec.seed,
        spec=spec,
    )


def _calibration_characteristics(chars, rng, m):
    cols = []
    for c in chars:
        if c.kind == "uniform":
            cols.append(rng.uniform(c.params[0], c.params[1], size=m))
        else:
            cols.append((rng.random(m) < c.params[0]).astype(float))
    return np.column_stack(cols)


def _standardize(X, chars):
    means = np.array([c.mean() for c in chars])
    sds = np.array([max(c.sd(), 1e-9) for c in chars])
    return (X - means) / sds


def _draw_plans(X_std, assignment, names, rng):
    n = X_std.shape[0]
    name_pos = {nm: i for i, nm in enumerate(names)}
    member = np.zeros((n, len(assignment)), dtype=bool)
    for a in assignment:
        logit = np.full(n, a.intercept)
        for nm, wgt in a.weights.items():
            logit += wgt * X_std[:, name_pos[nm]]
        member[:, a.service] = rng.random(n) < _sigmoid(logit)
    return member


def _interaction_logits(X, member, chars, coefs, universe):
    n = X.shape[0]
    char_pos = {c.name: i for i, c in enumerate(chars)}
    z = np.zeros(n)
    for pid, coef in sorted(coefs.items()):
        p = universe[pid]
        if p.kind == SERVICE_SERVICE:
            z += coef * (member[:, p.left] & member[:, p.right])
        else:
            z += coef * member[:, p.left] * X[:, char_pos[p.right]]
    return z


def sample_cohort(truth: GroundTruth, spec: CohortSpec | None = None) -> list[PatientRecord]:
    """Draw patient records from the truth; a cohort spec can override size and seed."""
    if spec is None:
        spec = truth.spec
    if (spec.n_services, spec.n_characteristics) != (
        truth.spec.n_services,
        truth.spec.n_characteristics,
    ):
        raise ValueError("cohort spec dimensions do not match the ground truth")
    rng = np.random.default_rng([spec.seed, 3])
    n = spec.n_patients
    chars = truth.characteristics
    names = truth.characteristic_names()

    X = _calibration_characteristics(chars, rng, n)
    X_std = _standardize(X, chars)
    member = _draw_plans(X_std, truth.assignment, names, rng)

    universe = enumerate_predictors(truth.catalog(), names)
    z_main = truth.outcome_intercept + _interaction_logits(X, member, chars, truth.outcome_coefs, universe)
    base_risk = _sigmoid(z_main)
    los = np.exp(
        truth.los_mu0
        + truth.los_risk_shift * (base_risk - truth.spec.outcome_rate)
        + rng.normal(0.0, truth.los_sigma, size=n)
    )
    risk = _sigmoid(z_main + truth.los_coef * los)
    outcome = (rng.random(n) < risk).astype(int)

    width = max(4, len(str(n - 1)))
    cohort = []
    for i in range(n):
        cohort.append(
            PatientRecord(
                id=f"p{i:0{width}d}",
                characteristics={nm: float(X[i, j]) for j, nm in enumerate(names)},
                los=float(los[i]),
                observed_plan=frozenset(int(s) for s in np.flatnonzero(member[i])),
                observed_outcome=int(outcome[i]),
            )
        )
    return cohort


def true_risk(truth: GroundTruth, patient: PatientRecord, plan) -> float:
    """Risk of the outcome under the generating model, for any candidate plan."""
    z = truth.outcome_intercept + truth.los_coef * patient.los
    for a, b, coef in truth._ss_terms:
        if a in plan and b in plan:
            z += coef
    for s, _, name, coef in truth._sc_terms:
        if s in plan:
            z += coef * patient.characteristic(name)
    z = max(-LINEAR_CLAMP, min(LINEAR_CLAMP, z))
    return 1.0 / (1.0 + math.exp(-z))


def truth_to_ensemble(truth: GroundTruth) -> EnsembleModel:
    """Wrap the generating outcome model as a one-member scoring ensemble."""
    universe = enumerate_predictors(truth.catalog(), truth.characteristic_names())
    dense = []
    coefs = {}
    for pid, coef in sorted(truth.outcome_coefs.items()):
        p = universe[pid]
        right = p.right
        dense.append(cat.Predictor(len(dense), p.kind, p.left, right))
        coefs[len(dense) - 1] = coef
    coefs[LOS_KEY] = truth.los_coef
    member = LogisticModel(intercept=truth.outcome_intercept, coefficients=coefs)
    metadata = {
        "source": "ground_truth",
        "seed": truth.seed,
        "n_services": truth.spec.n_services,
        "services": [{"index": s.index, "code": s.code, "category": s.category} for s in truth.services],
    }
    return EnsembleModel((member,), tuple(dense), metadata)


# ---------------------------------------------------------------------------
# Persistence

def truth_to_json(truth: GroundTruth) -> dict:
    return {
        "version": TRUTH_SCHEMA_VERSION,
        "seed": truth.seed,
        "spec": asdict(truth.spec),
        "services": [{"index": s.index, "code": s.code, "category": s.category} for s in truth.services],
        "characteristics": [
            {"name": c.name, "kind": c.kind, "params": list(c.params)} for c in truth.characteristics
        ],
        "outcome": {
            "intercept": truth.outcome_intercept,
            "coefs": {str(k): v for k, v in sorted(truth.outcome_coefs.items())},
            "los_coef": truth.los_coef,
        },
        "assignment": [
            {"service": a.service, "intercept": a.intercept, "weights": a.weights}
            for a in truth.assignment
        ],
        "los": {"mu0": truth.los_mu0, "risk_shift": truth.los_risk_shift, "sigma": truth.los_sigma},
    }


def truth_from_json(doc: dict) -> GroundTruth:
    if doc.get("version") != TRUTH_SCHEMA_VERSION:
        raise SchemaError(f"unsupported truth schema version {doc.get('version')!r}")
    spec = CohortSpec(**doc["spec"])
    return GroundTruth(
        services=tuple(
            Service(int(e["index"]), str(e["code"]), str(e["category"])) for e in doc["services"]
        ),
        characteristics=tuple(
            CharacteristicSpec(str(e["name"]), str(e["kind"]), tuple(float(v) for v in e["params"]))
            for e in doc["characteristics"]
        ),
        outcome_intercept=float(doc["outcome"]["intercept"]),
        outcome_coefs={int(k): float(v) for k, v in doc["outcome"]["coefs"].items()},
        los_coef=float(doc["outcome"]["los_coef"]),
        assignment=tuple(
            AssignmentModel(int(e["service"]), float(e["intercept"]), {str(k): float(v) for k, v in e["weights"].items()})
            for e in doc["assignment"]
        ),
        los_mu0=float(doc["los"]["mu0"]),
        los_risk_shift=float(doc["los"]["risk_shift"]),
        los_sigma=float(doc["los"]["sigma"]),
        seed=int(doc["seed"]),
        spec=spec,
    )


def save_truth(truth: GroundTruth, path):
    cat.save_json(truth_to_json(truth), path)


def load_truth(path) -> GroundTruth:
    return truth_from_json(cat.load_json(path))


def export_cohort(cohort, catalog: ServiceCatalog, path):
    cat.save_json(cat.cohort_to_json(cohort, catalog), path)


def import_cohort(path, catalog: ServiceCatalog) -> list[PatientRecord]:
    return cat.cohort_from_json(cat.load_json(path), catalog)
