"""The ensemble risk model as a pure, serializable utility function.

An ensemble averages the risks of its member logistic models. Search maximizes
the mirrored score (reward = 1 - risk), so a reward of 1 means no predicted
risk of emergent care. Models are stored as JSON; floats survive the round
trip bit-exactly because they are serialized with shortest-repr precision.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .catalog import (
    LOS_KEY,
    SERVICE_CHARACTERISTIC,
    SERVICE_SERVICE,
    PatientRecord,
    Predictor,
    Service,
    ServiceCatalog,
    featurize,
)
from .glm import LINEAR_CLAMP, LogisticModel, predict_risk

MODEL_SCHEMA_VERSION = 1


class ModelFormatError(ValueError):
    """Model file is structurally invalid or from an unsupported schema version."""


@dataclass(frozen=True)
class EnsembleModel:
    """Averaged set of logistic models over a shared predictor dictionary."""

    members: tuple[LogisticModel, ...]
    predictors: tuple[Predictor, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.members:
            raise ModelFormatError("ensemble needs at least one member model")
        for i, p in enumerate(self.predictors):
            if p.id != i:
                raise ModelFormatError(f"predictor ids must be dense, got {p.id} at slot {i}")
        valid = set(range(len(self.predictors))) | {LOS_KEY}
        for i, member in enumerate(self.members):
            unknown = set(member.coefficients) - valid
            if unknown:
                raise ModelFormatError(f"member {i} references unknown predictor ids {sorted(map(str, unknown))}")

    @property
    def n_services(self) -> int:
        if "n_services" in self.metadata:
            return int(self.metadata["n_services"])
        top = 0
        for p in self.predictors:
            top = max(top, p.left, p.right if p.kind == SERVICE_SERVICE else p.left)
        return top + 1

    def total_coefficients(self) -> int:
        return sum(len(m.coefficients) for m in self.members)


def score_risk(ensemble: EnsembleModel, patient: PatientRecord, plan) -> float:
    """Mean member risk for this patient under the candidate plan."""
    x = featurize(patient, plan, ensemble.predictors)
    return sum(predict_risk(m, x) for m in ensemble.members) / len(ensemble.members)


def reward(ensemble: EnsembleModel, patient: PatientRecord, plan) -> float:
    """Mirrored risk; 1 means no predicted risk of emergent care."""
    return 1.0 - score_risk(ensemble, patient, plan)


class PlanScorer:
    """Per-patient scorer precomputed for tight search loops.

    Characteristic interactions collapse to one additive term per service,
    so scoring a plan costs O(plan size + active service pairs) per member.
    Agrees with score_risk to float tolerance; reported results should still
    go through score_risk so every exposed number shares one code path.
    """

    def __init__(self, ensemble: EnsembleModel, patient: PatientRecord):
        self.ensemble = ensemble
        self.patient = patient
        n_members = len(ensemble.members)
        base = []
        for m in ensemble.members:
            z = m.intercept + m.coefficients.get(LOS_KEY, 0.0) * patient.los
            base.append(z)
        svc_add: dict[int, list[float]] = {}
        pair_terms: dict[tuple[int, int], list[float]] = {}
        for k, m in enumerate(ensemble.members):
            for key, coef in m.coefficients.items():
                if key == LOS_KEY:
                    continue
                p = ensemble.predictors[key]
                if p.kind == SERVICE_CHARACTERISTIC:
                    term = coef * patient.characteristic(p.right)
                    svc_add.setdefault(p.left, [0.0] * n_members)[k] += term
                else:
                    pair_terms.setdefault((p.left, p.right), [0.0] * n_members)[k] += coef
        self._n_members = n_members
        self._base = base
        self._svc_add = {s: tuple(v) for s, v in svc_add.items()}
        self._pairs = tuple((a, b, tuple(v)) for (a, b), v in sorted(pair_terms.items()))

    def risk(self, plan) -> float:
        z = list(self._base)
        n = self._n_members
        for s in plan:
            add = self._svc_add.get(s)
            if add is not None:
                for k in range(n):
                    z[k] += add[k]
        for a, b, coefs in self._pairs:
            if a in plan and b in plan:
                for k in range(n):
                    z[k] += coefs[k]
        total = 0.0
        for zk in z:
            if zk > LINEAR_CLAMP:
                zk = LINEAR_CLAMP
            elif zk < -LINEAR_CLAMP:
                zk = -LINEAR_CLAMP
            total += 1.0 / (1.0 + math.exp(-zk))
        return total / n

    def reward(self, plan) -> float:
        return 1.0 - self.risk(plan)


# ---------------------------------------------------------------------------
# Persistence
#
# Coefficient maps keep one canonical order (predictor ids ascending, LOS
# last) on both sides of the round trip, so reloaded models sum their linear
# predictors in the same float order and scores match to the last bit.

def _coef_order(key) -> tuple:
    return (1, 0) if key == LOS_KEY else (0, key)


def canonical_coefficients(coefs: dict) -> dict:
    return {k: coefs[k] for k in sorted(coefs, key=_coef_order)}


def ensemble_to_json(ensemble: EnsembleModel) -> dict:
    return {
        "version": MODEL_SCHEMA_VERSION,
        "members": [
            {
                "intercept": m.intercept,
                "coefs": {
                    str(k): v for k, v in canonical_coefficients(m.coefficients).items()
                },
            }
            for m in ensemble.members
        ],
        "predictors": {
            str(p.id): {"kind": p.kind, "left": p.left, "right": p.right}
            for p in ensemble.predictors
        },
        "metadata": ensemble.metadata,
    }


def ensemble_from_json(doc: dict) -> EnsembleModel:
    if not isinstance(doc, dict) or doc.get("version") != MODEL_SCHEMA_VERSION:
        raise ModelFormatError(
            f"unsupported model schema version {doc.get('version')!r}, expected {MODEL_SCHEMA_VERSION}"
        )
    try:
        predictors = tuple(
            Predictor(
                id=int(pid),
                kind=str(spec["kind"]),
                left=int(spec["left"]),
                right=int(spec["right"]) if spec["kind"] == SERVICE_SERVICE else str(spec["right"]),
            )
            for pid, spec in sorted(doc["predictors"].items(), key=lambda kv: int(kv[0]))
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed predictor dictionary: {exc}") from exc
    members = []
    for i, entry in enumerate(doc.get("members", [])):
        try:
            coefs = {}
            for k, v in entry["coefs"].items():
                coefs[LOS_KEY if k == LOS_KEY else int(k)] = float(v)
            members.append(
                LogisticModel(
                    intercept=float(entry["intercept"]),
                    coefficients=canonical_coefficients(coefs),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed member {i}: {exc}") from exc
    return EnsembleModel(tuple(members), predictors, dict(doc.get("metadata", {})))


def save_model(ensemble: EnsembleModel, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ensemble_to_json(ensemble), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> EnsembleModel:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return ensemble_from_json(doc)


def measure_throughput(ensemble: EnsembleModel, patient: PatientRecord,
                       plan, n_evaluations=2000) -> float:
    """Plan evaluations per second on this host; informational only."""
    import time

    scorer = PlanScorer(ensemble, patient)
    plan = list(plan)
    start = time.perf_counter()
    for _ in range(n_evaluations):
        scorer.risk(plan)
    elapsed = time.perf_counter() - start
    return n_evaluations / elapsed if elapsed > 0 else float("inf")


def catalog_of(ensemble: EnsembleModel) -> ServiceCatalog | None:
    """Rebuild the service catalog embedded in model metadata, if present."""
    entries = ensemble.metadata.get("services")
    if not entries:
        return None
    return ServiceCatalog(
        tuple(Service(int(e["index"]), str(e["code"]), str(e["category"])) for e in entries)
    )
