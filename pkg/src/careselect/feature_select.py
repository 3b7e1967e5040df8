"""Ensemble construction by screening, random grouping and significance pruning.

Candidate interactions are screened one at a time, the survivors are shuffled
into groups, each group is fit as one weighted logistic model and pruned by
backward elimination, and the survivors are regrouped into fewer, larger
groups. Group count shrinks as long as predictors keep being pruned; the
final groups become the ensemble members. The length-of-stay slot is forced
into every group and never pruned.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .catalog import (
    LOS_KEY,
    SERVICE_SERVICE,
    Predictor,
    ServiceCatalog,
    enumerate_predictors,
)
from .glm import FitError, LogisticModel, fit_weighted_logistic
from .scoring import EnsembleModel, canonical_coefficients

log = logging.getLogger(__name__)


class EmptyEnsembleError(RuntimeError):
    """No member model could be fit; every group failed outright."""


@dataclass(frozen=True)
class EnsembleSpec:
    """Stop criterion and starting group geometry for ensemble construction."""

    target_models: int = 15
    features_per_group: float = 50.0
    alpha: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.target_models < 1:
            raise ValueError("target_models must be at least 1")
        if self.features_per_group < 1:
            raise ValueError("features_per_group must be at least 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0,1)")


@dataclass
class SelectionState:
    iteration: int
    remaining: int
    group_count: int
    features_per_group: float
    pruned: int


class DesignData:
    """Cached design columns for one cohort: plan membership, characteristics, LOS."""

    def __init__(self, cohort, catalog: ServiceCatalog, names):
        self.names = list(names)
        self.catalog = catalog
        n = len(cohort)
        self.member = np.zeros((n, len(catalog)), dtype=bool)
        for i, p in enumerate(cohort):
            for s in p.observed_plan:
                self.member[i, s] = True
        self.chars = np.array([[p.characteristic(nm) for nm in self.names] for p in cohort])
        self.los = np.array([p.los for p in cohort])
        self.y = np.array([float(p.observed_outcome) for p in cohort])
        self._char_pos = {nm: j for j, nm in enumerate(self.names)}
        self.universe = enumerate_predictors(catalog, self.names)

    def column(self, predictor: Predictor) -> np.ndarray:
        if predictor.kind == SERVICE_SERVICE:
            return (self.member[:, predictor.left] & self.member[:, predictor.right]).astype(float)
        return self.member[:, predictor.left] * self.chars[:, self._char_pos[predictor.right]]

    def column_for_key(self, key) -> np.ndarray:
        if key == LOS_KEY:
            return self.los
        return self.column(self.universe[key])

    def matrix(self, keys) -> np.ndarray:
        return np.column_stack([self.column_for_key(k) for k in keys])


def screen_predictors(data: DesignData, weights, alpha=0.05) -> list[int]:
    """Ids of candidates individually significant in a univariate weighted fit.

    Constant columns and fits that separate are discarded as non-estimable.
    """
    kept = []
    for p in data.universe:
        col = data.column(p)
        if col.min() == col.max():
            continue
        try:
            _, diag = fit_weighted_logistic(col[:, None], data.y, weights, keys=[p.id])
        except FitError:
            continue
        if diag.separated or not diag.p_values:
            continue
        if diag.p_values[p.id] < alpha:
            kept.append(p.id)
    return kept


def shuffle_into_groups(predictor_ids, n_groups: int, seed, forced=(LOS_KEY,)):
    """Seeded near-equal partition (sizes differ by at most 1), forced keys in every group."""
    if n_groups < 1:
        raise ValueError("need at least one group")
    ids = sorted(predictor_ids)
    rng = np.random.default_rng(seed)
    rng.shuffle(ids)
    base, extra = divmod(len(ids), n_groups)
    groups = []
    start = 0
    for g in range(n_groups):
        size = base + (1 if g < extra else 0)
        groups.append(list(ids[start : start + size]) + list(forced))
        start += size
    return groups


def prune_group(group, data: DesignData, weights, alpha=0.05, forced=(LOS_KEY,)):
    """Backward elimination within one group's multivariate weighted fit.

    Non-estimable predictors (constant columns, separated coefficients) are
    removed first; then the least significant predictor with p >= alpha is
    removed and the model refit until every survivor is significant. Forced
    keys are never removed. Returns (survivor ids, model, diagnostics); a
    group whose every fit fails yields an empty survivor set and no model.
    """
    forced = list(forced)
    keys = [k for k in group if k not in forced]
    keys = [k for k in keys if data.column_for_key(k).std() > 0]
    while True:
        fit_keys = keys + forced
        try:
            model, diag = fit_weighted_logistic(data.matrix(fit_keys), data.y, weights, keys=fit_keys)
        except (FitError, np.linalg.LinAlgError) as exc:
            if keys:
                log.warning("group fit failed (%s); dropping predictor %s", exc, keys[-1])
                keys = keys[:-1]
                continue
            log.warning("group fit failed with no removable predictors: %s", exc)
            return [], None, None
        if diag.separated:
            bad = [k for k in diag.separated_keys if k not in forced]
            if bad:
                keys = [k for k in keys if k not in bad]
                continue
            log.warning("separation on forced key(s) %s; group discarded", diag.separated_keys)
            return [], None, None
        insignificant = [(diag.p_values[k], k) for k in keys if diag.p_values[k] >= alpha]
        if not insignificant:
            return sorted(keys), model, diag
        drop = max(insignificant, key=lambda pk: (pk[0], -_key_order(pk[1])))[1]
        keys = [k for k in keys if k != drop]


def _key_order(key):
    return key if isinstance(key, int) else -1


def next_group_count(remaining: int, features_per_group: float, group_count: int,
                     pruned: int, target: int):
    """Group-count recurrence: per-group capacity grows by the pruned share."""
    f_next = features_per_group + pruned / group_count
    n_next = max(target, math.ceil(remaining / f_next)) if remaining else target
    return max(1, n_next), f_next


def build_ensemble(spec: EnsembleSpec, cohort, weights, catalog: ServiceCatalog, names,
                   screened=None) -> EnsembleModel:
    """Run the shuffle/fit/prune loop down to the target member count."""
    data = DesignData(cohort, catalog, names)
    w = np.asarray(weights, dtype=float) if not hasattr(weights, "vector") else weights.vector(cohort)
    if screened is None:
        screened = screen_predictors(data, w, spec.alpha)
    remaining = sorted(screened)
    f = float(spec.features_per_group)
    n = max(spec.target_models, math.ceil(len(remaining) / f)) if remaining else spec.target_models
    trace = []
    iteration = 0
    while True:
        iteration += 1
        groups = shuffle_into_groups(remaining, n, seed=[spec.seed, iteration])
        results = [prune_group(g, data, w, spec.alpha) for g in groups]
        survivors = sorted(k for keys, _, _ in results for k in keys)
        pruned = len(remaining) - len(survivors)
        trace.append(
            {
                "iteration": iteration,
                "groups": n,
                "features_per_group": f,
                "pruned": pruned,
                "remaining": len(survivors),
            }
        )
        remaining = survivors
        if n <= spec.target_models or pruned == 0:
            members = [(keys, model) for keys, model, _ in results if model is not None]
            break
        n, f = next_group_count(len(remaining), f, n, pruned, spec.target_models)
    if not members:
        raise EmptyEnsembleError("empty ensemble: no group produced a model")
    return _assemble(members, data, catalog, spec, trace)


def _assemble(members, data: DesignData, catalog, spec, trace) -> EnsembleModel:
    used_ids = sorted({k for keys, _ in members for k in keys})
    dense_of = {uid: i for i, uid in enumerate(used_ids)}
    predictors = tuple(
        Predictor(dense_of[uid], data.universe[uid].kind, data.universe[uid].left, data.universe[uid].right)
        for uid in used_ids
    )
    dense_members = []
    for _, model in members:
        coefs = {}
        for key, val in model.coefficients.items():
            coefs[LOS_KEY if key == LOS_KEY else dense_of[key]] = val
        dense_members.append(LogisticModel(model.intercept, canonical_coefficients(coefs)))
    metadata = {
        "seed": spec.seed,
        "alpha": spec.alpha,
        "target_models": spec.target_models,
        "initial_features_per_group": spec.features_per_group,
        "trace": trace,
        "n_services": len(catalog),
        "services": [
            {"index": s.index, "code": s.code, "category": s.category} for s in catalog.services
        ],
        "characteristics": list(data.names),
        "member_predictor_counts": [len(keys) for keys, _ in members],
    }
    return EnsembleModel(tuple(dense_members), predictors, metadata)
