"""Batch Dynamic Weighted Majority.

A global ensemble of naive Bayes experts combined by weighted plurality vote.

Mechanisms::

    DAM0  no-op
    DAM1  update every expert with the batch
    DAM2  w_i <- w_i * exp(accuracy_i), normalize, drop experts below eta
    DAM3  add an expert trained on the batch with weight 1
    DAM4  DAM2 then DAM1
    DAM5  DAM1 then DAM3
    DAM6  DAM2 then DAM3
    DAM7  DAM2 then DAM1 then DAM3
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, MechanismError
from .framework import Algorithm
from .learners import VAR_FLOOR, _frozen, nb_fit, nb_predict, nb_update
from .metrics import CLASSIFICATION

COMPOSITES = {
    "DAM4": ("DAM2", "DAM1"),
    "DAM5": ("DAM1", "DAM3"),
    "DAM6": ("DAM2", "DAM3"),
    "DAM7": ("DAM2", "DAM1", "DAM3"),
}


@dataclass(frozen=True, eq=False)
class DwmEnsemble:
    experts: tuple
    weights: np.ndarray
    class_counts: np.ndarray

    @property
    def n_classes(self):
        return self.class_counts.shape[0]

    @property
    def n_features(self):
        return self.experts[0].n_features

    def same_as(self, other):
        return (
            len(self.experts) == len(other.experts)
            and all(a.same_as(b) for a, b in zip(self.experts, other.experts))
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.class_counts, other.class_counts)
        )


def vote_matrix(ensemble, X):
    """Summed weights per label, z[row, j] = sum_i w_i [expert i predicts j]."""
    z = np.zeros((X.shape[0], ensemble.n_classes))
    rows = np.arange(X.shape[0])
    for expert, w in zip(ensemble.experts, ensemble.weights):
        np.add.at(z, (rows, nb_predict(expert, X)), w)
    return z


def dwm_predict(ensemble, X):
    return np.argmax(vote_matrix(ensemble, np.asarray(X, dtype=float)), axis=1).astype(np.int64)


def expert_accuracies(ensemble, X, y):
    return np.array([np.mean(nb_predict(e, X) == y) for e in ensemble.experts])


def update_experts(ensemble, X, y):
    return replace(ensemble, experts=tuple(nb_update(e, X, y) for e in ensemble.experts))


def reweight_and_prune(ensemble, X, y, eta):
    acc = expert_accuracies(ensemble, X, y)
    w = ensemble.weights * np.exp(acc)
    w = w / w.sum()
    keep = np.flatnonzero(w >= eta)
    if keep.size == 0:
        keep = np.array([int(np.argmax(w))])
    w = w[keep]
    w = w / w.sum()
    return replace(
        ensemble, experts=tuple(ensemble.experts[i] for i in keep), weights=_frozen(w)
    )


def add_expert(ensemble, X, y, var_floor=VAR_FLOOR):
    expert = nb_fit(X, y, ensemble.n_classes, var_floor)
    return replace(
        ensemble,
        experts=ensemble.experts + (expert,),
        weights=_frozen(np.append(ensemble.weights, 1.0)),
    )


def majority_baseline_accuracy(class_counts, y):
    """Accuracy on ``y`` of always predicting the most frequent class seen so far."""
    if class_counts.sum() == 0:
        return 0.0
    return float(np.mean(y == int(np.argmax(class_counts))))


class BatchDWM(Algorithm):
    name = "bdwm"
    task = CLASSIFICATION
    mechanisms = tuple(f"DAM{i}" for i in range(8))
    noop = "DAM0"
    joint = ("DAM7",)

    def __init__(self, n_classes, eta=0.01, var_floor=VAR_FLOOR):
        if n_classes < 2:
            raise ConfigError("bDWM needs at least two classes")
        if not 0 < eta < 1:
            raise ConfigError(f"eta must be in (0, 1), got {eta}")
        self.n_classes = int(n_classes)
        self.eta = float(eta)
        self.var_floor = var_floor

    def __repr__(self):
        return f"BatchDWM(n_classes={self.n_classes}, eta={self.eta})"

    def create(self, batch):
        expert = nb_fit(batch.inputs, batch.targets, self.n_classes, self.var_floor)
        return DwmEnsemble(
            (expert,), _frozen([1.0]), _frozen(np.zeros(self.n_classes), dtype=np.int64)
        )

    def n_features(self, payload):
        return payload.n_features

    def predict(self, payload, X):
        return dwm_predict(payload, X)

    def observe(self, payload, batch):
        counts = payload.class_counts + np.bincount(batch.targets.astype(np.int64),
                                                    minlength=self.n_classes)
        return replace(payload, class_counts=_frozen(counts, dtype=np.int64))

    def _basic(self, ens, mechanism, X, y, eta):
        if mechanism == "DAM1":
            return update_experts(ens, X, y)
        if mechanism == "DAM2":
            return reweight_and_prune(ens, X, y, eta)
        if mechanism == "DAM3":
            return add_expert(ens, X, y, self.var_floor)
        raise MechanismError(f"unknown bDWM mechanism {mechanism!r}")

    def apply(self, payload, mechanism, batch, eta=None):
        eta = self.eta if eta is None else eta
        X = batch.inputs
        y = batch.targets.astype(np.int64)
        if mechanism == "DAM0":
            return payload
        for step in COMPOSITES.get(mechanism, (mechanism,)):
            payload = self._basic(payload, step, X, y, eta)
        return payload

    def custom_step(self, payload, batch):
        """DAM1, DAM2, and DAM3 only when the ensemble lost to the majority baseline."""
        X = batch.inputs
        y = batch.targets.astype(np.int64)
        accuracy = float(np.mean(dwm_predict(payload, X) == y))
        baseline = majority_baseline_accuracy(payload.class_counts, y)
        ens = update_experts(payload, X, y)
        ens = reweight_and_prune(ens, X, y, self.eta)
        if accuracy < baseline:
            return add_expert(ens, X, y, self.var_floor), "DAM1>DAM2>DAM3"
        return ens, "DAM1>DAM2"
