"""Predictor states, adaptive mechanisms and generic adaptation strategies.

A model evolves batch by batch. The state used to predict batch ``k`` is the
a-priori state; after the labels of batch ``k`` arrive one adaptive mechanism
(AM) is deployed on it, and the result is propagated as the a-priori state of
batch ``k + 1``. Every algorithm exposes a finite AM set that contains exactly
one no-op.

Strategies decide which AM to deploy:

* fixed sequences (``Sequence<h>``) and ``Joint`` always deploy the same AM(s);
* ``Custom`` delegates to the algorithm's hand-written policy;
* ``XVSelect`` picks the AM with the lowest q-fold cross-validated loss on
  the current batch;
* ``Oracle`` picks the AM with the lowest loss on the *next* batch
  (benchmark only);
* retrospective correction (RC) can be attached to any of them. It rebuilds
  the current state by replaying the best AM sequence over the last ``r``
  batches before the strategy adapts.
"""
from __future__ import annotations

import itertools
import logging
import re
import time
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Optional

import numpy as np

from .errors import ConfigError, DimensionError, MechanismError
from .metrics import CLASSIFICATION, REGRESSION, score_batch

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LabeledBatch:
    """One batch of inputs and targets.

    ``holdout`` optionally carries a separate test sample drawn from the same
    distribution; when present it is used for scoring instead of the batch
    itself and is never used for adaptation.
    """

    inputs: np.ndarray
    targets: np.ndarray
    index: int = 0
    holdout: Optional["LabeledBatch"] = None

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.asarray(self.targets).ravel()
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DimensionError(f"inputs {X.shape} do not match {y.shape[0]} targets")
        if X.shape[0] < 1:
            raise DimensionError("a batch needs at least one row")
        if not np.all(np.isfinite(X)):
            raise ValueError("batch inputs must be finite")
        X.setflags(write=False)
        y = y.copy()
        y.setflags(write=False)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def n_features(self):
        return self.inputs.shape[1]

    def subset(self, rows):
        return LabeledBatch(self.inputs[rows], self.targets[rows], self.index)

    def scoring_set(self):
        return self.holdout if self.holdout is not None else self


@dataclass(frozen=True)
class AdaptiveMechanism:
    """An AM identifier with optional parameter overrides."""

    id: str
    params: tuple = ()

    @classmethod
    def of(cls, id, **params):
        return cls(id, tuple(sorted(params.items())))

    @property
    def kwargs(self):
        return dict(self.params)

    def __str__(self):
        return self.id


class Algorithm:
    """Interface an adaptive algorithm implements to plug into the strategies.

    Payloads must be immutable values: ``apply`` returns a new payload and
    never mutates its input.
    """

    name = "algorithm"
    task = REGRESSION
    mechanisms: tuple = ()
    noop: str = ""
    joint: tuple = ()
    # default candidate set for selection strategies
    selectable: tuple = ()

    def create(self, batch):
        raise NotImplementedError

    def predict(self, payload, X):
        raise NotImplementedError

    def apply(self, payload, mechanism, batch, **params):
        raise NotImplementedError

    def n_features(self, payload):
        raise NotImplementedError

    def custom_step(self, payload, batch):
        raise ConfigError(f"{self.name} has no custom adaptation strategy")

    def observe(self, payload, batch):
        """Bookkeeping run once per consumed batch, regardless of the AM."""
        return payload

    def default_mechanisms(self):
        ids = self.selectable or self.mechanisms
        return [AdaptiveMechanism(i) for i in ids]


@dataclass(frozen=True, eq=False)
class PredictorState:
    """A snapshot of an adaptive model: algorithm, immutable payload, lineage."""

    algorithm: Algorithm
    payload: Any = None
    lineage: tuple = ()

    @property
    def task_kind(self):
        return self.algorithm.task

    @property
    def cold_start(self):
        return self.payload is None

    def with_payload(self, payload, step=None):
        lineage = self.lineage if step is None else self.lineage + (step,)
        return PredictorState(self.algorithm, payload, lineage)


def initial_state(algorithm, batch=None):
    """Untrained state, or a state created from ``batch`` by the algorithm."""
    state = PredictorState(algorithm)
    if batch is None:
        return state
    return state.with_payload(algorithm.create(batch), "create")


def predict_batch(state, inputs):
    """Predict with the a-priori state. Cold states return the task default."""
    X = np.asarray(inputs, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if state.cold_start:
        log.debug("cold-start prediction for %d rows", X.shape[0])
        if state.task_kind == CLASSIFICATION:
            return np.zeros(X.shape[0], dtype=np.int64)
        return np.zeros(X.shape[0])
    m = state.algorithm.n_features(state.payload)
    if X.shape[1] != m:
        raise DimensionError(f"model trained on {m} features, got {X.shape[1]}")
    return state.algorithm.predict(state.payload, X)


def _mechanism_id(am):
    return am.id if isinstance(am, AdaptiveMechanism) else str(am)


def deploy_am(state, am, batch):
    """Return ``state`` adapted by ``am`` on ``batch``; ``state`` is untouched."""
    algo = state.algorithm
    am = am if isinstance(am, AdaptiveMechanism) else AdaptiveMechanism(str(am))
    if am.id not in algo.mechanisms:
        raise MechanismError(f"{am.id!r} is not a mechanism of {algo.name}")
    if state.cold_start:
        raise MechanismError("cannot adapt an untrained state")
    if am.id == algo.noop:
        return state.with_payload(state.payload, am.id)
    return state.with_payload(algo.apply(state.payload, am.id, batch, **am.kwargs), am.id)


def observe(state, batch):
    return state.with_payload(state.algorithm.observe(state.payload, batch))


def loss_on(state, batch):
    return score_batch(predict_batch(state, batch.inputs), batch.targets, state.task_kind)


class Selection(NamedTuple):
    mechanism: str
    state: PredictorState
    losses: tuple


class Correction(NamedTuple):
    sequence: tuple
    state: PredictorState
    losses: tuple


def _argmin_first(values):
    # lowest index among exact minima
    best = 0
    for i, v in enumerate(values):
        if v < values[best]:
            best = i
    return best


def _check_ams(ams):
    ams = list(ams)
    if not ams:
        raise ConfigError("the adaptive mechanism list is empty")
    return [a if isinstance(a, AdaptiveMechanism) else AdaptiveMechanism(str(a)) for a in ams]


def oracle_select(state, ams, current, next_batch):
    """Deploy the AM whose adapted state scores best on the next batch.

    The next batch is judged on its scoring set, i.e. its holdout when it has
    one, which is exactly what the prequential loss will measure.
    """
    ams = _check_ams(ams)
    candidates = [deploy_am(state, am, current) for am in ams]
    target = next_batch.scoring_set()
    losses = tuple(loss_on(c, target) for c in candidates)
    best = _argmin_first(losses)
    return Selection(ams[best].id, candidates[best], losses)


def fold_indices(n, q):
    """Round-robin fold membership: row ``i`` belongs to fold ``i % q``."""
    return np.arange(n) % q


def cross_validated_losses(state, ams, batch, q):
    """Mean held-out loss per AM; each fold adapts on the other q-1 folds."""
    if q < 2:
        raise ConfigError(f"q must be >= 2, got {q}")
    if batch.n < q:
        warnings.warn(
            f"batch of {batch.n} rows is smaller than q={q}; using leave-one-out",
            stacklevel=3,
        )
        q = batch.n
    if q < 2:
        raise ConfigError("cross-validation needs at least 2 rows")
    folds = fold_indices(batch.n, q)
    splits = [(np.flatnonzero(folds != f), np.flatnonzero(folds == f)) for f in range(q)]
    out = []
    for am in ams:
        total = 0.0
        for train, test in splits:
            adapted = deploy_am(state, am, batch.subset(train))
            total += loss_on(adapted, batch.subset(test))
        out.append(total / q)
    return tuple(out)


def xv_select(state, ams, batch, q=10):
    """Cross-validatory selection; the winner is then deployed on the full batch."""
    ams = _check_ams(ams)
    losses = cross_validated_losses(state, ams, batch, q)
    best = _argmin_first(losses)
    return Selection(ams[best].id, deploy_am(state, ams[best], batch), losses)


@dataclass(frozen=True, eq=False)
class Snapshot:
    """Propagation state before adapting on ``batch`` and what was deployed."""

    state: PredictorState
    batch: LabeledBatch
    deployed: str


def replay(state, sequence, batches):
    for am, b in zip(sequence, batches):
        state = observe(deploy_am(state, am, b), b)
    return state


def retrospective_correct(snapshots, ams, batch, r=1, current=None):
    """Rebuild the current state from the best AM sequence over the last ``r`` batches.

    ``snapshots`` are the most recent adaptation steps, oldest first. All
    ``H**r`` sequences are replayed from the oldest stored pre-state and scored
    (plain loss) on ``batch``. Ties go to the lexicographically smallest
    index sequence.
    """
    ams = _check_ams(ams)
    snapshots = list(snapshots)
    if r < 1:
        raise ConfigError(f"r must be >= 1, got {r}")
    if len(snapshots) < r:
        if current is None:
            raise ConfigError("not enough history for the correction and no current state")
        return Correction((), current, ())
    window = snapshots[-r:]
    start = window[0].state
    batches = [s.batch for s in window]
    seqs = list(itertools.product(range(len(ams)), repeat=r))
    states = []
    losses = []
    for seq in seqs:
        rebuilt = replay(start, [ams[i] for i in seq], batches)
        states.append(rebuilt)
        losses.append(loss_on(rebuilt, batch))
    best = _argmin_first(losses)
    return Correction(tuple(ams[i].id for i in seqs[best]), states[best], tuple(losses))


_NAME = re.compile(r"^(Sequence(\d+)|Joint|Custom|XVSelect|Oracle)(RC|\+RC)?$")


@dataclass(frozen=True)
class StrategySpec:
    """Which strategy to run and its parameters.

    ``kind`` is one of ``sequence``, ``joint``, ``custom``, ``xvselect``,
    ``oracle``. For ``sequence`` the AM is ``algorithm.mechanisms[h]``.
    """

    kind: str
    h: Optional[int] = None
    q: int = 10
    r: int = 1
    rc: bool = False
    predict_uncorrected: bool = False

    KINDS = ("sequence", "joint", "custom", "xvselect", "oracle")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown strategy kind {self.kind!r}")
        if self.kind == "sequence" and (self.h is None or self.h < 0):
            raise ConfigError("a sequence strategy needs a mechanism index h >= 0")
        if self.q < 2:
            raise ConfigError(f"q must be >= 2, got {self.q}")
        if self.r < 1:
            raise ConfigError(f"r must be >= 1, got {self.r}")

    @property
    def benchmark_only(self):
        return self.kind == "oracle"

    @property
    def name(self):
        base = {
            "sequence": f"Sequence{self.h}",
            "joint": "Joint",
            "custom": "Custom",
            "xvselect": "XVSelect",
            "oracle": "Oracle",
        }[self.kind]
        if not self.rc:
            return base
        return "XVSelectRC" if self.kind == "xvselect" else base + "+RC"

    @classmethod
    def parse(cls, name, q=10, r=1, predict_uncorrected=False):
        m = _NAME.match(name.strip())
        if not m:
            raise ConfigError(f"unrecognised strategy name {name!r}")
        head, h, rc = m.groups()
        if rc == "RC" and head != "XVSelect":
            raise ConfigError(f"unrecognised strategy name {name!r}")
        if h is not None:
            kind = "sequence"
        else:
            kind = head.lower()
        return cls(kind, None if h is None else int(h), q, r, rc is not None, predict_uncorrected)


@dataclass
class StepRecord:
    """Log line for one scored batch."""

    batch_index: int
    loss: float
    mechanism: Optional[str]
    correction: tuple = ()
    seconds: float = 0.0
    losses: tuple = field(default=(), repr=False)


def _sequence_mechanism(algo, h):
    if h >= len(algo.mechanisms):
        raise ConfigError(f"{algo.name} has no mechanism with index {h}")
    return algo.mechanisms[h]


def adapt(state, batch, spec, ams, lookahead=None):
    """One adaptation step under ``spec``. Returns ``(label, new_state)``.

    ``label`` is ``None`` when nothing could be selected (Oracle without a
    next batch); the state is then returned unchanged.
    """
    algo = state.algorithm
    if spec.kind == "sequence":
        mech = _sequence_mechanism(algo, spec.h)
        return mech, deploy_am(state, mech, batch)
    if spec.kind == "joint":
        if not algo.joint:
            raise ConfigError(f"{algo.name} defines no joint deployment")
        for mech in algo.joint:
            state = deploy_am(state, mech, batch)
        return ">".join(algo.joint), state
    if spec.kind == "custom":
        payload, label = algo.custom_step(state.payload, batch)
        return label, state.with_payload(payload, label)
    if spec.kind == "xvselect":
        sel = xv_select(state, ams, batch, spec.q)
        return sel.mechanism, sel.state
    if spec.kind == "oracle":
        if lookahead is None:
            return None, state
        sel = oracle_select(state, ams, batch, lookahead)
        return sel.mechanism, sel.state
    raise ConfigError(f"unknown strategy kind {spec.kind!r}")


def run_strategy(initial, stream, spec, ams=None):
    """Prequential run: predict each batch, record its loss, then adapt on it.

    The first batch creates the model when ``initial`` is untrained and is
    never scored. With RC enabled the corrected state feeds both the next
    adaptation and, unless ``spec.predict_uncorrected`` is set, the next
    prediction.
    """
    stream = list(stream)
    if len(stream) < 2:
        raise ConfigError("a run needs at least two batches")
    algo = initial.algorithm
    if spec.kind == "sequence":
        _sequence_mechanism(algo, spec.h)
    ams = _check_ams(ams if ams is not None else algo.default_mechanisms())
    state = initial
    if state.cold_start:
        state = observe(initial_state(algo, stream[0]), stream[0])
    pred_state = state
    ring = deque(maxlen=spec.r)
    records = []
    for k in range(1, len(stream)):
        batch = stream[k]
        t0 = time.perf_counter()
        target = batch.scoring_set()
        loss = score_batch(predict_batch(pred_state, target.inputs), target.targets, algo.task)

        uncorrected = prop = state
        correction = ()
        if spec.rc and len(ring) >= spec.r:
            corr = retrospective_correct(ring, ams, batch, spec.r, current=state)
            prop = corr.state
            correction = corr.sequence

        lookahead = stream[k + 1] if k + 1 < len(stream) else None
        label, adapted = adapt(prop, batch, spec, ams, lookahead)
        if label is None:
            log.info("%s: no selection for final batch %d", spec.name, batch.index)
        ring.append(Snapshot(prop, batch, label))
        state = observe(adapted, batch)

        if spec.predict_uncorrected and correction:
            _, alt = adapt(uncorrected, batch, spec, ams, lookahead)
            pred_state = observe(alt, batch)
        else:
            pred_state = state
        records.append(
            StepRecord(batch.index, loss, label, correction, time.perf_counter() - t0)
        )
    return records

