"""Incremental base learners.

Both learners are immutable value types: every update returns a new state and
leaves its argument untouched. History is never stored, only sufficient
statistics.

* :class:`NaiveBayesState` -- Gaussian naive Bayes with Welford/Chan
  accumulators, used as the expert for the classification ensembles.
* :class:`RplsState` -- recursive partial least squares with an exponential
  forgetting factor, used as the SABLE expert.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

VAR_FLOOR = 1e-9


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _as_2d(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D input matrix, got shape {X.shape}")
    return X


# ---------------------------------------------------------------------------
# Gaussian naive Bayes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NaiveBayesState:
    """Per-class counts and running feature moments.

    ``m2`` holds the sum of squared deviations from the class mean, so the
    (population) variance is ``m2 / count``.
    """

    counts: np.ndarray  # (J,) int
    means: np.ndarray  # (J, M)
    m2: np.ndarray  # (J, M)
    var_floor: float = VAR_FLOOR

    @classmethod
    def empty(cls, n_classes, n_features, var_floor=VAR_FLOOR):
        return cls(
            counts=_frozen(np.zeros(n_classes), dtype=np.int64),
            means=_frozen(np.zeros((n_classes, n_features))),
            m2=_frozen(np.zeros((n_classes, n_features))),
            var_floor=var_floor,
        )

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def n_features(self):
        return self.means.shape[1]

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def is_cold(self):
        return self.total == 0

    @property
    def priors(self):
        total = self.total
        if total == 0:
            return np.full(self.n_classes, 1.0 / self.n_classes)
        return self.counts / total

    @property
    def variances(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            var = np.where(self.counts[:, None] > 0, self.m2 / np.maximum(self.counts[:, None], 1), 0.0)
        return var

    def same_as(self, other):
        """Exact (bitwise) equality of the accumulators."""
        return (
            np.array_equal(self.counts, other.counts)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.m2, other.m2)
            and self.var_floor == other.var_floor
        )


def nb_update(state, X, y):
    """Fold a labeled batch into the accumulators (Chan et al. pairwise merge)."""
    X = _as_2d(X)
    y = np.asarray(y, dtype=np.int64).ravel()
    if X.shape[1] != state.n_features:
        raise DimensionError(f"expected {state.n_features} features, got {X.shape[1]}")
    if X.shape[0] != y.shape[0]:
        raise DimensionError("inputs and targets differ in length")
    if y.size and (y.min() < 0 or y.max() >= state.n_classes):
        raise DimensionError(f"class ids must lie in 0..{state.n_classes - 1}")

    counts = state.counts.copy()
    means = state.means.copy()
    m2 = state.m2.copy()
    for c in np.unique(y):
        rows = X[y == c]
        nb = rows.shape[0]
        mean_b = rows.mean(axis=0)
        m2_b = ((rows - mean_b) ** 2).sum(axis=0)
        na = counts[c]
        n = na + nb
        delta = mean_b - means[c]
        means[c] = means[c] + delta * (nb / n)
        m2[c] = m2[c] + m2_b + delta**2 * (na * nb / n)
        counts[c] = n
    return NaiveBayesState(
        counts=_frozen(counts, dtype=np.int64),
        means=_frozen(means),
        m2=_frozen(m2),
        var_floor=state.var_floor,
    )


def nb_fit(X, y, n_classes, var_floor=VAR_FLOOR):
    X = _as_2d(X)
    return nb_update(NaiveBayesState.empty(n_classes, X.shape[1], var_floor), X, y)


def nb_log_scores(state, X):
    """Joint log-scores ``log p(c) + sum_m log N(x_m | mu_cm, var_cm)``, shape (n, J).

    Classes never observed score ``-inf``.
    """
    X = _as_2d(X)
    if X.shape[1] != state.n_features:
        raise DimensionError(f"expected {state.n_features} features, got {X.shape[1]}")
    var = np.maximum(state.variances, state.var_floor)  # (J, M)
    seen = state.counts > 0
    with np.errstate(divide="ignore"):
        log_prior = np.log(state.priors)
    diff = X[:, None, :] - state.means[None, :, :]  # (n, J, M)
    ll = -0.5 * (np.log(2 * np.pi * var)[None] + diff**2 / var[None]).sum(axis=2)
    scores = ll + log_prior[None, :]
    scores[:, ~seen] = -np.inf
    return scores


def nb_predict(state, X):
    """Most probable class per row; ties go to the lowest class id.

    A cold state predicts class 0 everywhere.
    """
    X = _as_2d(X)
    if state.is_cold:
        if X.shape[1] != state.n_features:
            raise DimensionError(f"expected {state.n_features} features, got {X.shape[1]}")
        return np.zeros(X.shape[0], dtype=np.int64)
    return np.argmax(nb_log_scores(state, X), axis=1).astype(np.int64)


# ---------------------------------------------------------------------------
# Recursive PLS
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RplsState:
    """Exponentially weighted moment statistics plus the PLS1 solution they imply.

    The statistics are ``weight = sum w``, ``sum_x = sum w x``, ``sum_y``,
    ``sxx = sum w x x^T`` and ``sxy = sum w x y``. Forgetting multiplies all of
    them by ``lam`` once per update call before the new batch is added with
    unit weight.
    """

    n_components: int
    weight: float
    rows_seen: int
    sum_x: np.ndarray
    sum_y: float
    sxx: np.ndarray
    sxy: np.ndarray
    coef: np.ndarray
    intercept: float

    @classmethod
    def empty(cls, n_features, n_components):
        if n_components < 1:
            raise ValueError("n_components must be >= 1")
        z = np.zeros(n_features)
        return cls(
            n_components=int(n_components),
            weight=0.0,
            rows_seen=0,
            sum_x=_frozen(z),
            sum_y=0.0,
            sxx=_frozen(np.zeros((n_features, n_features))),
            sxy=_frozen(z),
            coef=_frozen(z),
            intercept=0.0,
        )

    @property
    def n_features(self):
        return self.sum_x.shape[0]

    @property
    def is_cold(self):
        return self.rows_seen == 0

    @property
    def x_mean(self):
        return self.sum_x / self.weight if self.weight > 0 else np.zeros(self.n_features)

    @property
    def y_mean(self):
        return self.sum_y / self.weight if self.weight > 0 else 0.0

    @property
    def effective_components(self):
        return min(self.n_components, self.n_features, self.rows_seen)

    def same_as(self, other):
        return (
            self.n_components == other.n_components
            and self.weight == other.weight
            and self.rows_seen == other.rows_seen
            and self.sum_y == other.sum_y
            and np.array_equal(self.sum_x, other.sum_x)
            and np.array_equal(self.sxx, other.sxx)
            and np.array_equal(self.sxy, other.sxy)
        )


def pls1_from_moments(cxx, cxy, n_components, tol=1e-12):
    """PLS1 regression vector from centered (co)variance moments.

    Kernel form of NIPALS: deflation acts on ``X^T y`` only, so the data
    matrix is never needed. Iteration stops early once the remaining
    cross-covariance or the score variance vanishes (rank deficiency).
    """
    m = cxy.shape[0]
    xty = cxy.astype(float).copy()
    start = np.linalg.norm(xty)
    R = []
    P = []
    Q = []
    if start <= 0 or not np.isfinite(start):
        return np.zeros(m)
    scale = max(np.abs(np.diag(cxx)).max(), 1e-300)
    for _ in range(n_components):
        norm = np.linalg.norm(xty)
        if norm <= tol * start:
            break
        w = xty / norm
        r = w.copy()
        for rj, pj in zip(R, P):
            r -= (pj @ w) * rj
        tt = r @ cxx @ r
        if tt <= tol * scale:
            break
        p = cxx @ r / tt
        q = (r @ xty) / tt
        xty = xty - p * q * tt
        R.append(r)
        P.append(p)
        Q.append(q)
    if not R:
        return np.zeros(m)
    return np.column_stack(R) @ np.asarray(Q)


def rpls_update(state, X, y, lam=1.0):
    """Scale the history by ``lam`` and add the batch; refit the PLS1 model."""
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"forgetting factor must be in (0, 1], got {lam}")
    X = _as_2d(X)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[1] != state.n_features:
        raise DimensionError(f"expected {state.n_features} features, got {X.shape[1]}")
    if X.shape[0] != y.shape[0]:
        raise DimensionError("inputs and targets differ in length")
    if X.shape[0] == 0:
        return state

    weight = lam * state.weight + X.shape[0]
    sum_x = lam * state.sum_x + X.sum(axis=0)
    sum_y = lam * state.sum_y + float(y.sum())
    sxx = lam * state.sxx + X.T @ X
    sxy = lam * state.sxy + X.T @ y
    rows_seen = state.rows_seen + X.shape[0]

    x_mean = sum_x / weight
    y_mean = sum_y / weight
    cxx = sxx / weight - np.outer(x_mean, x_mean)
    cxx = 0.5 * (cxx + cxx.T)
    cxy = sxy / weight - x_mean * y_mean
    L = min(state.n_components, state.n_features, rows_seen)
    coef = pls1_from_moments(cxx, cxy, L)
    intercept = float(y_mean - x_mean @ coef)
    return RplsState(
        n_components=state.n_components,
        weight=float(weight),
        rows_seen=rows_seen,
        sum_x=_frozen(sum_x),
        sum_y=float(sum_y),
        sxx=_frozen(sxx),
        sxy=_frozen(sxy),
        coef=_frozen(coef),
        intercept=intercept,
    )


def rpls_fit(X, y, n_components):
    X = _as_2d(X)
    return rpls_update(RplsState.empty(X.shape[1], n_components), X, y, 1.0)


def rpls_predict(state, X):
    """Affine prediction ``X @ coef + intercept``; a cold state predicts zeros."""
    X = _as_2d(X)
    if X.shape[1] != state.n_features:
        raise DimensionError(f"expected {state.n_features} features, got {X.shape[1]}")
    if state.is_cold:
        return np.zeros(X.shape[0])
    return X @ state.coef + state.intercept
