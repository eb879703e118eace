"""Synthetic drifting classification streams, batching and CSV ingestion.

Geometry of the synthetic families (all 2-D):

``hyperplane``
    Uniform points on the unit square, labelled by a line through the centre
    (2 classes) or by four 90 degree sectors around the centre (4 classes).
    A rotation drift of magnitude ``m`` turns the boundary by ``m * 180``
    degrees.

``gaussian``
    One unit-variance Gaussian cluster per class. The ``overlap`` of two
    neighbouring clusters is their overlapping probability mass
    ``2 * Phi(-d / 2)`` for mean distance ``d``; with equal priors the Bayes
    error of the pair is half of it. Drift kinds:

    * ``switching`` rotates the class means about their centroid by
      ``m * 180`` degrees, so ``m = 1`` exchanges opposite classes;
    * ``passing`` moves two clusters towards each other along parallel lines
      and past each other, ``m = 1`` being a full pass. The overlap pair
      gives the overlap at the start and at the closest approach;
    * ``move`` translates every mean by ``m`` times the neighbour distance
      along the first axis.

    For ``switching`` and ``move`` an overlap pair ``(lo, hi)`` is
    interpolated linearly over the stream.

Drift magnitudes accumulate. Every training row gets ``test_multiplier``
independent test rows drawn from the concept active at that row.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError, IoError, ParseError
from .framework import LabeledBatch

FAMILIES = ("hyperplane", "gaussian")
KINDS = {"hyperplane": ("rotation",), "gaussian": ("switching", "passing", "move")}
MIN_OVERLAP = 1e-6


@dataclass(frozen=True)
class Drift:
    index: int
    magnitude: float
    kind: str


@dataclass(frozen=True)
class StreamSpec:
    family: str
    n: int
    n_classes: int
    drifts: tuple = ()
    noise: float = 0.0
    overlap: tuple = (0.0, 0.0)
    name: str = ""

    def __post_init__(self):
        if isinstance(self.overlap, (int, float)):
            object.__setattr__(self, "overlap", (float(self.overlap), float(self.overlap)))
        object.__setattr__(self, "drifts", tuple(self.drifts))
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(problems))

    def problems(self):
        out = []
        if self.family not in FAMILIES:
            out.append(f"unknown family {self.family!r}")
            return out
        if self.n < 2:
            out.append("n must be >= 2")
        if self.family == "hyperplane" and self.n_classes not in (2, 4):
            out.append(f"hyperplane streams support 2 or 4 classes, got {self.n_classes}")
        if self.family == "gaussian" and self.n_classes not in (2, 4):
            out.append(f"gaussian streams support 2 or 4 classes, got {self.n_classes}")
        if not 0 <= self.noise < 1:
            out.append(f"noise rate must be in [0, 1), got {self.noise}")
        last = -1
        for d in self.drifts:
            if d.kind not in KINDS[self.family]:
                out.append(f"drift kind {d.kind!r} is invalid for {self.family}")
            if d.kind == "passing" and self.n_classes != 2:
                out.append("passing drift needs exactly 2 classes")
            if not 0 < d.magnitude <= 1:
                out.append(f"drift magnitude must be in (0, 1], got {d.magnitude}")
            if d.index <= last or d.index >= self.n or d.index < 0:
                out.append(f"drift indices must be strictly increasing and < n, got {d.index}")
            last = d.index
        lo, hi = self.overlap
        if not (0 <= lo < 1 and 0 <= hi < 1):
            out.append(f"overlap must be in [0, 1), got {self.overlap}")
        return out

    @classmethod
    def evenly(cls, family, n, n_classes, count, magnitude, kind, **kw):
        """``count`` equal drifts splitting the stream into equal segments."""
        drifts = tuple(Drift(n * (i + 1) // (count + 1), magnitude, kind) for i in range(count))
        return cls(family, n, n_classes, drifts, **kw)

    def to_dict(self):
        return {
            "name": self.name,
            "family": self.family,
            "n": self.n,
            "n_classes": self.n_classes,
            "noise": self.noise,
            "overlap": list(self.overlap),
            "drifts": [[d.index, d.magnitude, d.kind] for d in self.drifts],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            family=d["family"],
            n=int(d["n"]),
            n_classes=int(d["n_classes"]),
            drifts=tuple(Drift(int(i), float(m), str(k)) for i, m, k in d.get("drifts", ())),
            noise=float(d.get("noise", 0.0)),
            overlap=_overlap(d.get("overlap", 0.0)),
            name=str(d.get("name", "")),
        )


def _overlap(v):
    if isinstance(v, (list, tuple)):
        return tuple(float(x) for x in v)
    return float(v)


def _suite():
    H, G = "hyperplane", "gaussian"
    rows = [
        (H, 600, 2, 2, 0.5, "rotation", 0.0, 0.0),
        (H, 600, 2, 2, 0.5, "rotation", 0.1, 0.0),
        (H, 600, 2, 9, 0.1111, "rotation", 0.0, 0.0),
        (H, 600, 2, 9, 0.1111, "rotation", 0.1, 0.0),
        (H, 640, 2, 15, 0.0667, "rotation", 0.0, 0.0),
        (H, 640, 2, 15, 0.0667, "rotation", 0.1, 0.0),
        (H, 1500, 4, 2, 0.5, "rotation", 0.0, 0.0),
        (H, 1500, 4, 2, 0.5, "rotation", 0.1, 0.0),
        (G, 1155, 2, 4, 0.5, "switching", 0.0, (0.0, 0.5)),
        (G, 1155, 2, 10, 0.2, "switching", 0.0, (0.0, 0.5)),
        (G, 1155, 2, 20, 0.1, "switching", 0.0, (0.0, 0.5)),
        (G, 2805, 2, 4, 0.4987, "passing", 0.0, (0.0021, 0.4997)),
        (G, 2805, 2, 6, 0.2734, "passing", 0.0, (0.0021, 0.4997)),
        (G, 2805, 2, 32, 0.0987, "passing", 0.0, (0.0021, 0.4997)),
    ]
    for n, c, lo_hi in ((945, 2, (0.0004, 0.1039)), (1890, 4, (0.00013, 0.1024))):
        for count, mag in ((4, 0.5205), (8, 0.2763), (20, 0.1125)):
            for ovl in lo_hi:
                rows.append((G, n, c, count, mag, "move", 0.0, ovl))
    return tuple(
        StreamSpec.evenly(f, n, c, count, mag, kind, noise=noise, overlap=ovl, name=f"synth{i:02d}")
        for i, (f, n, c, count, mag, kind, noise, ovl) in enumerate(rows, start=1)
    )


#: The 26 synthetic classification datasets, in table order.
SYNTHETIC_SUITE = _suite()


@dataclass(frozen=True, eq=False)
class GeneratedStream:
    """Training rows with per-row concept ids and the matching test rows.

    Test rows ``[j * t, (j + 1) * t)`` belong to training row ``j``.
    """

    inputs: np.ndarray
    targets: np.ndarray
    concepts: np.ndarray
    test_inputs: np.ndarray
    test_targets: np.ndarray
    test_multiplier: int
    spec: StreamSpec = None
    seed: int = 0

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def drift_indices(self):
        return [int(i) for i in np.flatnonzero(np.diff(self.concepts)) + 1]

    def batches(self, n, q=10):
        """Consecutive batches of ``n`` rows with their test rows as holdouts."""
        t = self.test_multiplier
        out = []
        for b, (start, stop) in enumerate(batch_bounds(self.n, n, q)):
            holdout = None
            if t > 0:
                holdout = LabeledBatch(
                    self.test_inputs[start * t:stop * t], self.test_targets[start * t:stop * t], b
                )
            out.append(LabeledBatch(self.inputs[start:stop], self.targets[start:stop], b, holdout))
        return out

    def batch_concepts(self, n, q=10):
        return [int(self.concepts[start]) for start, _ in batch_bounds(self.n, n, q)]


def _concepts_and_progress(spec):
    idx = np.arange(spec.n)
    concepts = np.zeros(spec.n, dtype=np.int64)
    progress = np.zeros(spec.n)
    for d in spec.drifts:
        concepts[idx >= d.index] += 1
        progress[idx >= d.index] += d.magnitude
    return concepts, progress


def _hyperplane_labels(X, angle, n_classes):
    dx = X[:, 0] - 0.5
    dy = X[:, 1] - 0.5
    if n_classes == 2:
        return (dx * np.cos(angle) + dy * np.sin(angle) >= 0).astype(np.int64)
    theta = np.mod(np.arctan2(dy, dx) - angle, 2 * np.pi)
    return np.minimum((theta // (np.pi / 2)).astype(np.int64), 3)


def gen_hyperplane_stream(spec, seed=0, test_multiplier=100):
    if spec.family != "hyperplane":
        raise ConfigError(f"expected a hyperplane spec, got {spec.family!r}")
    rng = np.random.default_rng(seed)
    concepts, progress = _concepts_and_progress(spec)
    angle0 = rng.uniform(0, 2 * np.pi)
    angles = angle0 + np.pi * progress
    X = rng.uniform(0, 1, size=(spec.n, 2))
    y = _hyperplane_labels(X, angles, spec.n_classes)
    t = int(test_multiplier)
    TX = rng.uniform(0, 1, size=(spec.n * t, 2))
    Ty = _hyperplane_labels(TX, np.repeat(angles, t), spec.n_classes)
    stream = GeneratedStream(X, y, concepts, TX, Ty, t, spec, seed)
    return _with_noise(stream, spec, seed)


def separation_for_overlap(overlap):
    """Mean distance of two unit-variance Gaussians sharing ``overlap`` of their mass."""
    return -2.0 * ndtri(max(overlap, MIN_OVERLAP) / 2.0)


def _base_layout(n_classes):
    if n_classes == 2:
        return np.array([[-0.5, 0.0], [0.5, 0.0]])
    return np.array([[0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5], [0.5, -0.5]])


def _triangle(p):
    # 0 -> 1 over one full pass, then back
    p = np.mod(p, 2.0)
    return np.where(p <= 1.0, p, 2.0 - p)


def gaussian_means(spec, progress):
    """Class means per row, shape (n, C, 2)."""
    n = progress.shape[0]
    lo, hi = spec.overlap
    kind = spec.drifts[0].kind if spec.drifts else "move"
    layout = _base_layout(spec.n_classes)
    if kind == "passing":
        start = separation_for_overlap(lo)
        offset = separation_for_overlap(hi)
        half = 0.5 * math.sqrt(max(start**2 - offset**2, 0.0))
        x = half * (1 - 2 * _triangle(progress))
        means = np.empty((n, 2, 2))
        means[:, 0, 0] = -x
        means[:, 0, 1] = -offset / 2
        means[:, 1, 0] = x
        means[:, 1, 1] = offset / 2
        return means
    frac = np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)
    sep = separation_for_overlap(lo) + (separation_for_overlap(hi) - separation_for_overlap(lo)) * frac
    base = layout[None, :, :] * sep[:, None, None]
    if kind == "switching":
        a = np.pi * progress
        c, s = np.cos(a), np.sin(a)
        rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)  # (n, 2, 2)
        return np.einsum("nij,ncj->nci", rot, base)
    shift = np.zeros((n, 1, 2))
    shift[:, 0, 0] = progress * sep
    return base + shift


def _draw_gaussian(rng, means):
    n, C, _ = means.shape
    y = rng.integers(0, C, size=n)
    X = means[np.arange(n), y] + rng.standard_normal((n, 2))
    return X, y.astype(np.int64)


def gen_gaussian_stream(spec, seed=0, test_multiplier=100):
    if spec.family != "gaussian":
        raise ConfigError(f"expected a gaussian spec, got {spec.family!r}")
    kinds = {d.kind for d in spec.drifts}
    if len(kinds) > 1:
        raise ConfigError(f"mixed drift kinds in one gaussian stream: {sorted(kinds)}")
    rng = np.random.default_rng(seed)
    concepts, progress = _concepts_and_progress(spec)
    means = gaussian_means(spec, progress)
    X, y = _draw_gaussian(rng, means)
    t = int(test_multiplier)
    TX, Ty = _draw_gaussian(rng, np.repeat(means, t, axis=0))
    stream = GeneratedStream(X, y, concepts, TX, Ty, t, spec, seed)
    return _with_noise(stream, spec, seed)


def _with_noise(stream, spec, seed):
    if spec.noise <= 0:
        return stream
    noise_seed = np.random.SeedSequence([int(seed), 0x6E6F]).generate_state(1)[0]
    return inject_label_noise(stream, spec.noise, int(noise_seed))


def generate(spec, seed=0, test_multiplier=100):
    if spec.family == "hyperplane":
        return gen_hyperplane_stream(spec, seed, test_multiplier)
    if spec.family == "gaussian":
        return gen_gaussian_stream(spec, seed, test_multiplier)
    raise ConfigError(f"unknown family {spec.family!r}")


def inject_label_noise(stream, rate, seed=0, n_classes=None):
    """Replace each training label, with probability ``rate``, by a uniform random label."""
    if not 0 <= rate < 1:
        raise ConfigError(f"noise rate must be in [0, 1), got {rate}")
    if rate == 0:
        return stream
    if n_classes is None:
        n_classes = stream.spec.n_classes if stream.spec is not None else int(stream.targets.max()) + 1
    rng = np.random.default_rng(seed)
    hit = rng.random(stream.n) < rate
    fresh = rng.integers(0, n_classes, size=stream.n)
    y = np.where(hit, fresh, stream.targets).astype(np.int64)
    return replace(stream, targets=y)


def batch_bounds(n_rows, n, q=10):
    """(start, stop) row ranges; a short tail is kept only if it has >= max(2, q) rows."""
    if n < 1:
        raise ConfigError(f"batch size must be >= 1, got {n}")
    bounds = [(s, min(s + n, n_rows)) for s in range(0, n_rows, n)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < max(2, q) and bounds[-1][1] - bounds[-1][0] < n:
        tail = bounds.pop()
        bounds[-1] = (bounds[-1][0], tail[1])
    if len(bounds) < 2:
        raise ConfigError(f"{n_rows} rows in batches of {n} give fewer than 2 batches")
    return bounds


def batchify(inputs, targets, n, q=10):
    X = np.asarray(inputs, dtype=float)
    y = np.asarray(targets)
    return [
        LabeledBatch(X[s:e], y[s:e], b) for b, (s, e) in enumerate(batch_bounds(X.shape[0], n, q))
    ]


@dataclass(eq=False)
class TabularData:
    inputs: np.ndarray
    targets: np.ndarray
    task: str
    feature_names: list
    classes: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    @property
    def n_classes(self):
        return len(self.classes)


def load_csv_stream(path, task, target=None, strict=False):
    """Read a headed CSV; the target is the last column unless named.

    Classification labels become dense ids in order of first appearance.
    Malformed rows are skipped and reported in ``diagnostics`` (or raised
    when ``strict``).
    """
    path = Path(path)
    if task not in ("classification", "regression"):
        raise ConfigError(f"unknown task {task!r}")
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        if target is not None and target not in header:
            raise ConfigError(f"{path} has no column {target!r}")
        t = len(header) - 1 if target is None else header.index(target)
        features = [h for i, h in enumerate(header) if i != t]
        rows, ys, diagnostics = [], [], []
        labels = {}
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                if len(rec) != len(header):
                    raise ParseError(f"expected {len(header)} fields, got {len(rec)}", line)
                vals = []
                for i, cell in enumerate(rec):
                    if i == t:
                        continue
                    try:
                        v = float(cell)
                    except ValueError:
                        raise ParseError(f"non-numeric feature {header[i]!r}: {cell!r}", line) from None
                    if not math.isfinite(v):
                        raise ParseError(f"non-finite feature {header[i]!r}", line)
                    vals.append(v)
                raw = rec[t].strip()
                if task == "regression":
                    try:
                        yv = float(raw)
                    except ValueError:
                        raise ParseError(f"non-numeric target {raw!r}", line) from None
                else:
                    if raw == "":
                        raise ParseError("empty class label", line)
                    yv = labels.setdefault(raw, len(labels))
            except ParseError as exc:
                if strict:
                    raise
                diagnostics.append(exc)
                continue
            rows.append(vals)
            ys.append(yv)
    if not rows:
        raise ConfigError(f"{path} contains no data rows")
    X = np.asarray(rows, dtype=float)
    y = np.asarray(ys, dtype=np.int64 if task == "classification" else float)
    return TabularData(X, y, task, features, list(labels), diagnostics)


def _fmt(v):
    return repr(float(v))


def write_stream_csv(stream, path, test_path=None):
    """Training rows to ``path`` (x1, x2, ..., target); optional test rows likewise."""
    def dump(p, X, y):
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{i + 1}" for i in range(X.shape[1])] + ["target"])
            for row, label in zip(X, y):
                w.writerow([_fmt(v) for v in row] + [int(label)])

    dump(path, stream.inputs, stream.targets)
    if test_path is not None:
        dump(test_path, stream.test_inputs, stream.test_targets)
