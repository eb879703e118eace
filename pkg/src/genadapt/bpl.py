"""Batch Paired Learner: a stable learner that predicts and a reactive one
trained on the latest batch only.

``PAM1`` updates the stable learner, ``PAM2`` replaces it with the reactive
learner. Both retrain the reactive learner on the batch afterwards. ``PAM0``
is the framework's no-op.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, MechanismError
from .framework import Algorithm
from .learners import VAR_FLOOR, NaiveBayesState, nb_fit, nb_predict, nb_update
from .metrics import CLASSIFICATION


@dataclass(frozen=True, eq=False)
class PairedLearnerState:
    stable: NaiveBayesState
    reactive: NaiveBayesState
    counter: int = 0

    @property
    def n_features(self):
        return self.stable.n_features

    def same_as(self, other):
        return (
            self.stable.same_as(other.stable)
            and self.reactive.same_as(other.reactive)
            and self.counter == other.counter
        )


class BatchPairedLearner(Algorithm):
    """``theta`` is the change-counter threshold of the custom strategy
    (``math.inf`` disables switching). ``reset_counter`` zeroes the counter on
    batches where the stable learner is at least as accurate."""

    name = "bpl"
    task = CLASSIFICATION
    mechanisms = ("PAM0", "PAM1", "PAM2")
    noop = "PAM0"
    selectable = ("PAM1", "PAM2")

    def __init__(self, n_classes, theta=0, reset_counter=False, var_floor=VAR_FLOOR):
        if n_classes < 2:
            raise ConfigError("bPL needs at least two classes")
        if theta < 0:
            raise ConfigError(f"theta must be >= 0, got {theta}")
        self.n_classes = int(n_classes)
        self.theta = theta if math.isinf(theta) else int(theta)
        self.reset_counter = reset_counter
        self.var_floor = var_floor

    def __repr__(self):
        return f"BatchPairedLearner(n_classes={self.n_classes}, theta={self.theta})"

    def _fresh(self, X, y):
        return nb_fit(X, y, self.n_classes, self.var_floor)

    def create(self, batch):
        learner = self._fresh(batch.inputs, batch.targets)
        return PairedLearnerState(learner, learner, 0)

    def n_features(self, payload):
        return payload.n_features

    def predict(self, payload, X):
        return nb_predict(payload.stable, X)

    def apply(self, payload, mechanism, batch):
        X = batch.inputs
        y = batch.targets.astype(np.int64)
        if mechanism == "PAM0":
            return payload
        if mechanism == "PAM1":
            stable = nb_update(payload.stable, X, y)
        elif mechanism == "PAM2":
            if payload.reactive.is_cold:
                raise MechanismError("PAM2 needs a trained reactive learner")
            stable = payload.reactive
        else:
            raise MechanismError(f"unknown bPL mechanism {mechanism!r}")
        return replace(payload, stable=stable, reactive=self._fresh(X, y))

    def accuracies(self, payload, batch):
        """Accuracy of the stable and the reactive learner on ``batch``."""
        y = batch.targets.astype(np.int64)
        return (
            float(np.mean(nb_predict(payload.stable, batch.inputs) == y)),
            float(np.mean(nb_predict(payload.reactive, batch.inputs) == y)),
        )

    def custom_step(self, payload, batch):
        u_stable, u_reactive = self.accuracies(payload, batch)
        counter = payload.counter
        if u_stable < u_reactive:
            counter += 1
        elif self.reset_counter:
            counter = 0
        if counter > self.theta:
            return replace(self.apply(payload, "PAM2", batch), counter=0), "PAM2"
        return replace(self.apply(payload, "PAM1", batch), counter=counter), "PAM1"
