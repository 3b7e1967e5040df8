"""Per-service propensity models and stabilized inverse-probability weights.

Observed service usage depends on patient characteristics, so naive fits
inherit that selection bias. Each record gets one weight: the product over
services of (marginal usage rate or its complement) divided by (the fitted
propensity or its complement), every factor clipped to the configured bounds
and the final weights normalized to mean one.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .catalog import ServiceCatalog
from .glm import LogisticModel, fit_weighted_logistic, sigmoid

log = logging.getLogger(__name__)

DEFAULT_CLIP = (0.05, 20.0)
# Family-wise significance level for keeping characteristics in usage models.
PRUNE_ALPHA = 0.05


class PropensityError(ValueError):
    pass


@dataclass
class CohortWeights:
    """One positive weight per patient id, with the bounds used to build it."""

    weights: dict[str, float]
    clip: tuple[float, float]
    stabilized: bool = True
    degenerate_services: tuple[int, ...] = ()

    def vector(self, cohort) -> np.ndarray:
        return np.array([self.weights[p.id] for p in cohort])


@dataclass
class PropensityModel:
    service: int
    model: LogisticModel | None  # None when the service is degenerate
    marginal_rate: float


def characteristic_matrix(cohort, names) -> np.ndarray:
    return np.array([[p.characteristic(nm) for nm in names] for p in cohort])


def fit_propensity(cohort, service: int, names, alpha=PRUNE_ALPHA) -> PropensityModel:
    """Logistic model of service usage given characteristics.

    Characteristics are backward-eliminated at a Bonferroni-corrected level
    (alpha divided by the candidate count), keeping the usage model
    parsimonious: absent real selection effects the fit collapses to
    intercept-only, whose predicted propensity is the marginal rate exactly,
    so the weight factor is exactly one. A fit that separates is kept as is;
    it is still the most predictive monotone fit and its extreme factors hit
    the clip downstream. A service everyone or no one uses cannot be modeled;
    it is flagged and contributes a unit factor to every record's weight.
    """
    usage = np.array([1.0 if service in p.observed_plan else 0.0 for p in cohort])
    rate = float(usage.mean())
    if rate in (0.0, 1.0):
        log.warning("service %d is degenerate (usage rate %.0f); weight factor is 1", service, rate)
        return PropensityModel(service, None, rate)
    X = characteristic_matrix(cohort, names)
    keep = [nm for j, nm in enumerate(names) if X[:, j].std() > 0]
    threshold = alpha / max(1, len(keep))
    cols = {nm: j for j, nm in enumerate(names)}
    while True:
        model, diag = fit_weighted_logistic(
            X[:, [cols[nm] for nm in keep]], usage, keys=list(keep)
        )
        if diag.separated or not keep:
            return PropensityModel(service, model, rate)
        worst = max(keep, key=lambda nm: diag.p_values[nm])
        if diag.p_values[worst] < threshold:
            return PropensityModel(service, model, rate)
        keep.remove(worst)


def fit_all_propensities(cohort, catalog: ServiceCatalog, names, alpha=PRUNE_ALPHA) -> list[PropensityModel]:
    """One usage model per service, controlling alpha across the whole set."""
    per_service = alpha / max(1, len(catalog))
    return [fit_propensity(cohort, s, names, per_service) for s in range(len(catalog))]


def predict_propensities(pm: PropensityModel, X: np.ndarray, names) -> np.ndarray:
    col = {nm: j for j, nm in enumerate(names)}
    z = np.full(X.shape[0], pm.model.intercept)
    for nm, coef in pm.model.coefficients.items():
        z += coef * X[:, col[nm]]
    return sigmoid(z)


def stabilized_factor(rate: float, propensity: float, used: bool, clip) -> float:
    """One service's weight factor for one record, clipped to the bounds."""
    lo, hi = clip
    if not math.isfinite(propensity):
        raise PropensityError("non-finite propensity")
    p = min(max(propensity, 1e-12), 1.0 - 1e-12)
    factor = rate / p if used else (1.0 - rate) / (1.0 - p)
    return min(hi, max(lo, factor))


def compute_weights(cohort, models, names, clip=DEFAULT_CLIP) -> CohortWeights:
    """Stabilized inverse-probability weight per record, normalized to mean 1."""
    lo, hi = clip
    if not (0 < lo < hi):
        raise PropensityError("clip bounds must satisfy 0 < lo < hi")
    X = characteristic_matrix(cohort, names)
    n = len(cohort)
    weights = np.ones(n)
    degenerate = []
    for pm in models:
        if pm.model is None:
            degenerate.append(pm.service)
            continue
        props = predict_propensities(pm, X, names)
        if not np.all(np.isfinite(props)):
            raise PropensityError(f"non-finite propensity for service {pm.service}")
        used = np.array([pm.service in p.observed_plan for p in cohort])
        factors = np.where(
            used,
            pm.marginal_rate / np.clip(props, 1e-12, 1 - 1e-12),
            (1.0 - pm.marginal_rate) / np.clip(1.0 - props, 1e-12, 1 - 1e-12),
        )
        weights *= np.clip(factors, lo, hi)
    weights /= weights.mean()
    return CohortWeights(
        weights={p.id: float(w) for p, w in zip(cohort, weights)},
        clip=(lo, hi),
        stabilized=True,
        degenerate_services=tuple(degenerate),
    )


def standardized_differences(cohort, names, service: int, record_weights=None):
    """Per-characteristic standardized mean difference between users and non-users."""
    X = characteristic_matrix(cohort, names)
    used = np.array([service in p.observed_plan for p in cohort])
    if used.all() or not used.any():
        return None
    w = np.ones(len(cohort)) if record_weights is None else np.asarray(record_weights)
    sd = X.std(axis=0, ddof=1)
    sd[sd == 0] = 1.0
    mean_u = np.average(X[used], axis=0, weights=w[used])
    mean_n = np.average(X[~used], axis=0, weights=w[~used])
    return (mean_u - mean_n) / sd


def balance_report(cohort, names, weights: CohortWeights):
    """Mean |standardized difference| per service, before and after weighting."""
    wvec = weights.vector(cohort)
    rows = []
    n_services = max(max(p.observed_plan, default=0) for p in cohort) + 1
    for s in range(n_services):
        raw = standardized_differences(cohort, names, s)
        if raw is None:
            continue
        adj = standardized_differences(cohort, names, s, wvec)
        rows.append(
            {
                "service": s,
                "unweighted": float(np.mean(np.abs(raw))),
                "weighted": float(np.mean(np.abs(adj))),
            }
        )
    return rows
