"""Weighted logistic regression: IRLS fitting, Wald tests, prediction, ROC/AUC.

The fitting engine under predictor screening, group pruning, ensemble members
and propensity models. Weights enter the binomial likelihood as observation
weights, so scaling all weights leaves coefficients unchanged while shrinking
standard errors.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .catalog import LOS_KEY

log = logging.getLogger(__name__)

# Linear predictors are clamped before the sigmoid so risks stay in open (0,1).
LINEAR_CLAMP = 35.0
# |coefficient| beyond this during iteration marks the fit as separated.
SEPARATION_LIMIT = 15.0
RIDGE = 1e-8
SCORE_TOL = 1e-8
LOGLIK_RELTOL = 1e-10
MAX_ITER = 100


class FitError(ValueError):
    """Inputs cannot produce a logistic fit (one-class labels, non-finite data)."""


@dataclass(frozen=True)
class LogisticModel:
    """Intercept plus a coefficient per predictor id (or the LOS slot)."""

    intercept: float
    coefficients: dict

    def linear_predictor(self, x: np.ndarray) -> float:
        z = self.intercept
        n_interactions = len(x) - 1
        for key, coef in self.coefficients.items():
            slot = n_interactions if key == LOS_KEY else key
            z += coef * x[slot]
        return z


@dataclass
class FitDiagnostics:
    converged: bool
    iterations: int
    std_errors: dict = field(default_factory=dict)
    p_values: dict = field(default_factory=dict)
    separated: bool = False
    separated_keys: tuple = ()
    log_likelihood: float = math.nan


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -LINEAR_CLAMP, LINEAR_CLAMP)))


def log_likelihood(beta, X, y, w):
    """Weighted binomial log-likelihood at coefficient vector beta."""
    z = np.clip(X @ beta, -LINEAR_CLAMP, LINEAR_CLAMP)
    return float(np.sum(w * (y * z - np.logaddexp(0.0, z))))


def log_likelihood_gradient(beta, X, y, w):
    mu = sigmoid(X @ beta)
    return X.T @ (w * (y - mu))


def fit_weighted_logistic(X, y, w=None, keys=None, max_iter=MAX_ITER):
    """Fit a weighted logistic model by iteratively reweighted least squares.

    X must not contain an intercept column; one is prepended internally.
    `keys` names the columns of X (predictor ids or LOS_KEY) and defaults to
    positional indices. A tiny ridge keeps the normal equations conditioned,
    so convergence is declared on the ridge-adjusted score equations.

    Returns (LogisticModel, FitDiagnostics). Separation (a coefficient running
    past SEPARATION_LIMIT) stops the fit and flags the offending columns so
    callers can discard those predictors.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if w is None:
        w = np.ones(n)
    else:
        w = np.asarray(w, dtype=float)
    if not (len(y) == n and len(w) == n):
        raise FitError("X, y and w must have matching row counts")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise FitError("non-finite values in fit inputs")
    if np.any(w <= 0):
        raise FitError("weights must be positive")
    if y.min() == y.max():
        raise FitError("labels are all one class")
    if keys is None:
        keys = list(range(p))

    Xd = np.hstack([np.ones((n, 1)), X])
    beta = np.zeros(p + 1)
    ll = log_likelihood(beta, Xd, y, w)
    converged = False
    separated_cols = ()
    iterations = 0

    for iterations in range(1, max_iter + 1):
        mu = sigmoid(Xd @ beta)
        grad = Xd.T @ (w * (y - mu)) - RIDGE * beta
        if np.max(np.abs(grad)) <= SCORE_TOL:
            converged = True
            break
        irls_w = w * mu * (1.0 - mu)
        H = Xd.T @ (irls_w[:, None] * Xd) + RIDGE * np.eye(p + 1)
        step = np.linalg.solve(H, grad)

        # Halve the step while it fails to improve the penalized likelihood.
        new_beta = beta + step
        new_ll = log_likelihood(new_beta, Xd, y, w) - 0.5 * RIDGE * float(new_beta @ new_beta)
        ll_pen = ll - 0.5 * RIDGE * float(beta @ beta)
        halvings = 0
        while new_ll < ll_pen and halvings < 12:
            step *= 0.5
            new_beta = beta + step
            new_ll = log_likelihood(new_beta, Xd, y, w) - 0.5 * RIDGE * float(new_beta @ new_beta)
            halvings += 1
        beta = new_beta
        new_ll_raw = log_likelihood(beta, Xd, y, w)

        big = np.abs(beta[1:]) > SEPARATION_LIMIT
        if np.any(big):
            separated_cols = tuple(int(j) for j in np.flatnonzero(big))
            break
        if abs(new_ll_raw - ll) <= LOGLIK_RELTOL * (abs(ll) + 1.0):
            converged = True
            ll = new_ll_raw
            break
        ll = new_ll_raw

    model = LogisticModel(
        intercept=float(beta[0]),
        coefficients={keys[j]: float(beta[j + 1]) for j in range(p)},
    )
    diag = FitDiagnostics(
        converged=converged and not separated_cols,
        iterations=iterations,
        separated=bool(separated_cols),
        separated_keys=tuple(keys[j] for j in separated_cols),
        log_likelihood=log_likelihood(beta, Xd, y, w),
    )
    if not separated_cols:
        mu = sigmoid(Xd @ beta)
        irls_w = w * mu * (1.0 - mu)
        H = Xd.T @ (irls_w[:, None] * Xd) + RIDGE * np.eye(p + 1)
        cov = np.linalg.inv(H)
        se = np.sqrt(np.maximum(np.diag(cov), 0.0))
        diag.std_errors = {keys[j]: float(se[j + 1]) for j in range(p)}
        diag.std_errors["(intercept)"] = float(se[0])
        diag.p_values = {
            keys[j]: _two_sided_p(beta[j + 1], se[j + 1]) for j in range(p)
        }
    return model, diag


def _two_sided_p(coef, se):
    if se <= 0 or not math.isfinite(se):
        return 1.0
    return math.erfc(abs(coef / se) / math.sqrt(2.0))


def wald_p_value(model: LogisticModel, diag: FitDiagnostics, key) -> float:
    """Two-sided normal p-value for one coefficient of a converged fit."""
    if key in diag.separated_keys:
        raise FitError(f"coefficient for {key!r} is separated; p-value undefined")
    if key not in diag.std_errors:
        raise FitError(f"no fitted coefficient for {key!r}")
    return _two_sided_p(model.coefficients[key], diag.std_errors[key])


def predict_risk(model: LogisticModel, x: np.ndarray) -> float:
    """Sigmoid of the clamped linear predictor; always in open (0,1)."""
    z = model.linear_predictor(x)
    z = max(-LINEAR_CLAMP, min(LINEAR_CLAMP, z))
    return 1.0 / (1.0 + math.exp(-z))


def roc_auc(scores, labels) -> float:
    """Rank-based AUC (Mann-Whitney statistic), counting ties as one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise FitError("AUC needs both classes")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    rank = 1
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (rank + rank + (j - i))
        rank += j - i + 1
        i = j + 1
    rank_sum_pos = float(np.sum(ranks[labels == 1]))
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_curve(scores, labels):
    """(false positive rate, true positive rate) pairs at every threshold."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    order = np.argsort(-scores, kind="mergesort")
    labels = labels[order]
    scores = scores[order]
    n_pos = int(np.sum(labels == 1))
    n_neg = len(labels) - n_pos
    points = [(0.0, 0.0)]
    tp = fp = 0
    for i in range(len(labels)):
        if labels[i] == 1:
            tp += 1
        else:
            fp += 1
        if i + 1 == len(labels) or scores[i + 1] != scores[i]:
            points.append((fp / n_neg, tp / n_pos))
    return points


def stratified_folds(labels, k, seed):
    """Seeded label-stratified partition into k folds of row indices."""
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    labels = np.asarray(labels)
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        for pos, row in enumerate(idx):
            folds[pos % k].append(int(row))
    return [sorted(f) for f in folds]


def k_fold_cv(fit_and_score, labels, k=10, seed=0):
    """Per-fold AUC for a fit procedure, skipping folds with one class.

    `fit_and_score(train_idx, test_idx)` returns held-out scores for test_idx.
    """
    labels = np.asarray(labels)
    aucs = []
    for fold_idx, fold in enumerate(stratified_folds(labels, k, seed)):
        test = np.asarray(fold)
        if len(np.unique(labels[test])) < 2:
            log.warning("fold %d has a single class; skipped", fold_idx)
            continue
        train = np.setdiff1d(np.arange(len(labels)), test)
        scores = fit_and_score(train, test)
        aucs.append(roc_auc(scores, labels[test]))
    return aucs
