"""SABLE: an ensemble of local RPLS experts weighted by Parzen descriptors.

Each expert owns one descriptor per input feature: a density over
(standardized feature value, standardized output) accumulated from its
training rows, each row weighted by how well the expert predicted it. At
prediction time an expert's weight for a row is the normalized product of
its descriptors read at (feature value, the expert's own prediction).

Mechanisms: ``SAM0`` no-op, ``SAM1`` batch learning, ``SAM2`` batch learning
with forgetting, ``SAM3`` descriptor update, ``SAM4`` new expert + pruning.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy import stats
from scipy.special import logsumexp, ndtr

from .errors import ConfigError, DimensionError, MechanismError
from .framework import Algorithm
from .learners import RplsState, rpls_fit, rpls_predict, rpls_update
from .metrics import REGRESSION

log = logging.getLogger(__name__)

LIKELIHOOD_FLOOR = 1e-12


@dataclass(frozen=True)
class Grid:
    """Square grid of ``resolution`` x ``resolution`` cells over [-bound, bound]^2."""

    bound: float = 4.0
    resolution: int = 50

    @cached_property
    def edges(self):
        return np.linspace(-self.bound, self.bound, self.resolution + 1)

    @cached_property
    def centers(self):
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    @property
    def step(self):
        return 2 * self.bound / self.resolution

    @property
    def cell_area(self):
        return self.step**2

    def cell_weights(self, values, sigma):
        """Cell-averaged 1-D Gaussian density, shape (len(values), resolution)."""
        z = (self.edges[None, :] - np.asarray(values, dtype=float)[:, None]) / sigma
        return np.diff(ndtr(z), axis=1) / self.step

    def read(self, field, u, v):
        """Bilinear read of ``field[u_cell, v_cell]``; clamps outside the centers."""
        c = self.centers
        pos_u = np.clip((np.asarray(u, dtype=float) - c[0]) / self.step, 0, self.resolution - 1)
        pos_v = np.clip((np.asarray(v, dtype=float) - c[0]) / self.step, 0, self.resolution - 1)
        iu = np.minimum(np.floor(pos_u).astype(int), self.resolution - 2)
        iv = np.minimum(np.floor(pos_v).astype(int), self.resolution - 2)
        fu = pos_u - iu
        fv = pos_v - iv
        return (
            field[iu, iv] * (1 - fu) * (1 - fv)
            + field[iu + 1, iv] * fu * (1 - fv)
            + field[iu, iv + 1] * (1 - fu) * fv
            + field[iu + 1, iv + 1] * fu * fv
        )


@dataclass(frozen=True, eq=False)
class Descriptor:
    """Per-feature density grids, shape (M, R, R), indexed [feature, x cell, y cell].

    ``mass`` is the (effective) number of training rows the density averages.
    """

    density: np.ndarray
    mass: float

    def __post_init__(self):
        self.density.setflags(write=False)

    @property
    def n_features(self):
        return self.density.shape[0]

    def __add__(self, other):
        _check_geometry(self, other)
        return Descriptor(self.density + other.density, self.mass + other.mass)


def _check_geometry(a, b):
    if a.density.shape != b.density.shape:
        raise DimensionError(f"descriptor grids differ: {a.density.shape} vs {b.density.shape}")


def merge_descriptors(old, new, delta0, delta1):
    """Cellwise ``delta0 * old + delta1 * new``."""
    _check_geometry(old, new)
    return Descriptor(
        delta0 * old.density + delta1 * new.density, delta0 * old.mass + delta1 * new.mass
    )


def _accumulate(old, new):
    # descriptor of the union of the old and new training rows
    _check_geometry(old, new)
    total = old.mass + new.mass
    if total <= 0:
        return new
    return Descriptor((old.mass * old.density + new.mass * new.density) / total, total)


@dataclass(frozen=True)
class Scaler:
    """Standardization frozen from the first batch."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    @classmethod
    def fit(cls, X, y):
        xs = X.std(axis=0)
        ys = float(np.std(y))
        return cls(
            X.mean(axis=0), np.where(xs > 0, xs, 1.0), float(np.mean(y)), ys if ys > 0 else 1.0
        )

    def x(self, X):
        return (X - self.x_mean) / self.x_std

    def y(self, y):
        return (np.asarray(y) - self.y_mean) / self.y_std


def build_descriptor(rpls, X, y, scaler, sigma, grid=Grid()):
    """Parzen descriptor of one expert on a labeled sample.

    Row ``j`` contributes an isotropic Gaussian of width ``sigma`` centered at
    (x_j^m, y_j) and scaled by ``exp(-(yhat_j - y_j)^2)``; the sum is divided by
    the number of rows. Work is done in standardized units.
    """
    if sigma <= 0:
        raise ConfigError(f"kernel width must be positive, got {sigma}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    zx = scaler.x(X)
    zy = scaler.y(y)
    zhat = scaler.y(rpls_predict(rpls, X))
    w = np.exp(-((zhat - zy) ** 2))
    ky = grid.cell_weights(zy, sigma) * w[:, None]  # (n, R)
    n = X.shape[0]
    density = np.stack(
        [grid.cell_weights(zx[:, m], sigma).T @ ky / n for m in range(X.shape[1])]
    )
    return Descriptor(density, float(n))


@dataclass(frozen=True, eq=False)
class SableExpert:
    rpls: RplsState
    descriptor: Descriptor
    age: int


@dataclass(frozen=True, eq=False)
class SableEnsemble:
    experts: tuple
    scaler: Scaler
    created: int = 1

    @property
    def n_features(self):
        return self.experts[0].rpls.n_features

    def expert_predictions(self, X):
        return np.column_stack([rpls_predict(e.rpls, X) for e in self.experts])


def expert_weights(ensemble, X, grid=Grid()):
    """Posterior weights v_i per row, shape (n, I), plus raw expert predictions."""
    preds = ensemble.expert_predictions(X)  # (n, I)
    zx = ensemble.scaler.x(X)
    zhat = ensemble.scaler.y(preds)
    loglik = np.zeros_like(preds)
    for i, e in enumerate(ensemble.experts):
        for m in range(zx.shape[1]):
            val = grid.read(e.descriptor.density[m], zx[:, m], zhat[:, i])
            loglik[:, i] += np.log(np.maximum(val, LIKELIHOOD_FLOOR))
    v = np.exp(loglik - logsumexp(loglik, axis=1, keepdims=True))
    return v, preds


def sable_predict(ensemble, X, grid=Grid()):
    """Weighted sum of expert predictions; returns ``(predictions, weights)``."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] != ensemble.n_features:
        raise DimensionError(f"expected {ensemble.n_features} features, got {X.shape[1]}")
    v, preds = expert_weights(ensemble, X, grid)
    return (v * preds).sum(axis=1), v


def partition_by_best_expert(ensemble, X, y):
    """Row indices per expert: each row goes to the expert with least absolute error."""
    err = np.abs(ensemble.expert_predictions(X) - np.asarray(y, dtype=float)[:, None])
    owner = np.argmin(err, axis=1)
    return [np.flatnonzero(owner == i) for i in range(len(ensemble.experts))]


def ttest_pvalue(a, b, welch=False):
    """Two-sample t-test p-value with the zero-variance cases made explicit."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    spread = a.var(ddof=1) + b.var(ddof=1)
    if spread == 0 or not np.isfinite(spread):
        return 1.0 if np.mean(a) == np.mean(b) else 0.0
    p = stats.ttest_ind(a, b, equal_var=not welch).pvalue
    return float(p) if np.isfinite(p) else 1.0


def prune_and_merge_experts(experts, X, alpha=0.05, welch=False):
    """Remove redundant experts until no pair's t-test p-value exceeds ``alpha``.

    The older expert of the most similar pair is dropped and its descriptor
    is added into the survivor's.
    """
    experts = list(experts)
    X = np.asarray(X, dtype=float)
    if len(experts) < 2:
        return tuple(experts)
    if X.shape[0] < 2:
        log.warning("pruning skipped: batch has %d row(s)", X.shape[0])
        return tuple(experts)
    while len(experts) > 1:
        preds = [rpls_predict(e.rpls, X) for e in experts]
        best = None
        best_p = -1.0
        for i in range(len(experts)):
            for j in range(i + 1, len(experts)):
                p = ttest_pvalue(preds[i], preds[j], welch)
                if p > best_p:
                    best, best_p = (i, j), p
        if best_p <= alpha:
            break
        i, j = best
        old, keep = (i, j) if experts[i].age <= experts[j].age else (j, i)
        survivor = experts[keep]
        experts[keep] = replace(survivor, descriptor=survivor.descriptor + experts[old].descriptor)
        del experts[old]
    return tuple(experts)


class Sable(Algorithm):
    """SABLE bound to its hyperparameters.

    ``sigma`` kernel width, ``lam`` forgetting factor for SAM2, ``delta0`` /
    ``delta1`` descriptor merge weights, ``n_components`` RPLS latent count,
    ``alpha`` pruning significance level.
    """

    name = "sable"
    task = REGRESSION
    mechanisms = ("SAM0", "SAM1", "SAM2", "SAM3", "SAM4")
    noop = "SAM0"
    joint = ("SAM2", "SAM4")

    def __init__(self, sigma=1.0, lam=0.5, delta0=0.0, delta1=1.0, n_components=3,
                 alpha=0.05, grid=None, welch=False):
        if sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {sigma}")
        if not 0 < lam <= 1:
            raise ConfigError(f"lambda must be in (0, 1], got {lam}")
        if delta0 < 0 or delta1 < 0 or delta0 + delta1 != 1:
            raise ConfigError(f"delta0 + delta1 must equal 1, got {delta0} + {delta1}")
        if not 0 < alpha < 1:
            raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
        if n_components < 1:
            raise ConfigError("n_components must be >= 1")
        self.sigma = float(sigma)
        self.lam = float(lam)
        self.delta0 = float(delta0)
        self.delta1 = float(delta1)
        self.n_components = int(n_components)
        self.alpha = float(alpha)
        self.grid = grid or Grid()
        self.welch = welch

    def __repr__(self):
        return (f"Sable(sigma={self.sigma}, lam={self.lam}, delta0={self.delta0}, "
                f"delta1={self.delta1}, n_components={self.n_components})")

    def new_expert(self, X, y, scaler, age):
        rpls = rpls_fit(X, y, self.n_components)
        return SableExpert(rpls, build_descriptor(rpls, X, y, scaler, self.sigma, self.grid), age)

    def create(self, batch):
        scaler = Scaler.fit(batch.inputs, batch.targets.astype(float))
        expert = self.new_expert(batch.inputs, batch.targets, scaler, 0)
        return SableEnsemble((expert,), scaler, 1)

    def n_features(self, payload):
        return payload.n_features

    def predict(self, payload, X):
        return sable_predict(payload, X, self.grid)[0]

    def _describe(self, ens, rpls, X, y):
        return build_descriptor(rpls, X, y, ens.scaler, self.sigma, self.grid)

    def _learn(self, ens, X, y, lam):
        experts = list(ens.experts)
        for i, rows in enumerate(partition_by_best_expert(ens, X, y)):
            if rows.size == 0:
                continue
            e = experts[i]
            rpls = rpls_update(e.rpls, X[rows], y[rows], lam)
            fresh = self._describe(ens, rpls, X[rows], y[rows])
            old = Descriptor(e.descriptor.density, lam * e.descriptor.mass)
            experts[i] = SableExpert(rpls, _accumulate(old, fresh), e.age)
        return replace(ens, experts=tuple(experts))

    def _refresh(self, ens, experts, X, y, delta0, delta1):
        return tuple(
            replace(e, descriptor=merge_descriptors(
                e.descriptor, self._describe(ens, e.rpls, X, y), delta0, delta1))
            for e in experts
        )

    def apply(self, payload, mechanism, batch, lam=None, delta0=None, delta1=None):
        ens = payload
        X = batch.inputs
        y = batch.targets.astype(float)
        if X.shape[1] != ens.n_features:
            raise DimensionError(f"expected {ens.n_features} features, got {X.shape[1]}")
        d0 = self.delta0 if delta0 is None else delta0
        d1 = self.delta1 if delta1 is None else delta1
        if mechanism == "SAM0":
            return ens
        if mechanism == "SAM1":
            return self._learn(ens, X, y, 1.0)
        if mechanism == "SAM2":
            return self._learn(ens, X, y, self.lam if lam is None else lam)
        if mechanism == "SAM3":
            return replace(ens, experts=self._refresh(ens, ens.experts, X, y, d0, d1))
        if mechanism == "SAM4":
            pool = ens.experts + (self.new_expert(X, y, ens.scaler, ens.created),)
            survivors = prune_and_merge_experts(pool, X, self.alpha, self.welch)
            return SableEnsemble(
                self._refresh(ens, survivors, X, y, d0, d1), ens.scaler, ens.created + 1
            )
        raise MechanismError(f"unknown SABLE mechanism {mechanism!r}")
