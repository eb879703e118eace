"""Experiment configuration and the (dataset x strategy x batch size) grid runner.

A configuration is a TOML file::

    algorithm = "bdwm"              # sable | bdwm | bpl
    strategies = ["Sequence0", "XVSelect", "Oracle"]   # or "all"
    batch_sizes = [10, 20, 50]
    seed = 1
    out = "results"
    test_multiplier = 100           # synthetic test rows per training row
    suite = "synthetic"             # optional: add all 26 synthetic datasets

    [params]                        # q, r, eta, theta, sigma, lam, delta0,
    q = 10                          # delta1, n_components, alpha
    eta = 0.01

    [[datasets]]
    id = "hyp1"
    synthetic = 1                   # row of the synthetic table

    [[datasets]]
    id = "mine"                     # inline StreamSpec fields
    family = "hyperplane"
    n = 600
    n_classes = 2
    drifts = [[200, 0.5, "rotation"], [400, 0.5, "rotation"]]

    [[datasets]]
    id = "elec2"
    csv = "data/elec2.csv"          # relative to the config file
    task = "classification"
"""
from __future__ import annotations

import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .bdwm import BatchDWM
from .bpl import BatchPairedLearner
from .errors import ConfigError, IoError
from .evaluation import RunRecord
from .framework import LabeledBatch, StrategySpec, initial_state, run_strategy
from .metrics import CLASSIFICATION, REGRESSION
from .sable import Sable
from .streams import (
    SYNTHETIC_SUITE,
    StreamSpec,
    batch_bounds,
    batchify,
    generate,
    load_csv_stream,
    write_stream_csv,
)

log = logging.getLogger(__name__)

ALGORITHMS = ("sable", "bdwm", "bpl")
PARAM_DEFAULTS = {
    "q": 10,
    "r": 1,
    "eta": 0.01,
    "theta": 0,
    "sigma": 1.0,
    "lam": 0.5,
    "delta0": 0.0,
    "delta1": 1.0,
    "n_components": 3,
    "alpha": 0.05,
    "predict_uncorrected": False,
    "reset_counter": False,
}
MANIFEST_SCHEMA = "genadapt.manifest/1"


def make_algorithm(name, params, n_classes=None):
    p = {**PARAM_DEFAULTS, **params}
    if name == "sable":
        return Sable(p["sigma"], p["lam"], p["delta0"], p["delta1"], p["n_components"], p["alpha"])
    if name == "bdwm":
        return BatchDWM(n_classes, p["eta"])
    if name == "bpl":
        theta = p["theta"]
        theta = math.inf if theta in ("inf", "infinity") else theta
        return BatchPairedLearner(n_classes, theta, p["reset_counter"])
    raise ConfigError(f"unknown algorithm {name!r}")


def expand_strategies(algorithm, names):
    """``"all"``: every fixed sequence and the custom/joint strategy, each with
    and without correction, then XVSelect, XVSelectRC and Oracle."""
    if names != "all":
        return list(names)
    algo = {"sable": Sable, "bdwm": BatchDWM, "bpl": BatchPairedLearner}[algorithm]
    pool = algo.selectable or algo.mechanisms
    base = [f"Sequence{algo.mechanisms.index(m)}" for m in algo.mechanisms
            if m in pool or m == algo.noop and algorithm != "bpl"]
    base.append("Joint" if algorithm == "sable" else "Custom")
    return base + [b + "+RC" for b in base] + ["XVSelect", "XVSelectRC", "Oracle"]


@dataclass
class ExperimentConfig:
    algorithm: str
    strategies: list
    batch_sizes: list
    datasets: list
    params: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "results"
    test_multiplier: int = 100
    base_dir: str = "."

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(raw, base_dir=str(path.parent))

    @classmethod
    def from_dict(cls, raw, base_dir="."):
        raw = dict(raw)
        errors = []
        algorithm = raw.get("algorithm")
        if algorithm not in ALGORITHMS:
            errors.append(f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
        datasets = [dict(d) for d in raw.get("datasets", [])]
        if raw.get("suite") == "synthetic":
            datasets += [{"id": s.name, "synthetic": i} for i, s in
                         enumerate(SYNTHETIC_SUITE, start=1)]
        elif raw.get("suite") is not None:
            errors.append(f"unknown suite {raw.get('suite')!r}")
        strategies = raw.get("strategies", "all")
        if algorithm in ALGORITHMS:
            strategies = expand_strategies(algorithm, strategies)
        known = set(PARAM_DEFAULTS)
        params = dict(raw.get("params", {}))
        for k in params:
            if k not in known:
                errors.append(f"unknown parameter {k!r}")
        cfg = cls(
            algorithm=algorithm,
            strategies=list(strategies),
            batch_sizes=[int(n) for n in raw.get("batch_sizes", [20])],
            datasets=datasets,
            params=params,
            seed=int(raw.get("seed", 0)),
            out=str(raw.get("out", "results")),
            test_multiplier=int(raw.get("test_multiplier", 100)),
            base_dir=base_dir,
        )
        errors += cfg.problems()
        if errors:
            errors = list(dict.fromkeys(errors))
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
        return cfg

    @property
    def p(self):
        return {**PARAM_DEFAULTS, **self.params}

    def problems(self):
        """Every validation error at once."""
        errs = []
        p = self.p
        if not self.datasets:
            errs.append("no datasets configured")
        seen = {}
        for pos, d in enumerate(self.datasets):
            did = d.get("id")
            if not did:
                errs.append(f"dataset #{pos + 1} has no id")
                continue
            if did in seen:
                errs.append(f"duplicate dataset id {did!r} (entries #{seen[did] + 1} and #{pos + 1})")
            seen.setdefault(did, pos)
            errs += [f"dataset {did!r}: {e}" for e in self._dataset_problems(d)]
        if not self.batch_sizes or any(n < 1 for n in self.batch_sizes):
            errs.append("batch_sizes must be positive integers")
        if int(p["q"]) < 2:
            errs.append(f"q must be >= 2, got {p['q']}")
        if int(p["r"]) < 1:
            errs.append(f"r must be >= 1, got {p['r']}")
        if abs(float(p["delta0"]) + float(p["delta1"]) - 1.0) > 1e-12:
            errs.append(f"delta0 + delta1 must equal 1, got {p['delta0']} + {p['delta1']}")
        if self.test_multiplier < 0:
            errs.append("test_multiplier must be >= 0")
        if self.algorithm in ALGORITHMS:
            for name in self.strategies:
                try:
                    spec = StrategySpec.parse(name, max(int(p["q"]), 2), max(int(p["r"]), 1))
                except ConfigError as exc:
                    errs.append(str(exc))
                    continue
                if spec.kind == "custom" and self.algorithm == "sable":
                    errs.append("sable has no custom strategy")
                if spec.kind == "joint" and self.algorithm == "bpl":
                    errs.append("bpl has no joint deployment")
                if spec.kind == "sequence":
                    n_mech = {"sable": 5, "bdwm": 8, "bpl": 3}[self.algorithm]
                    if spec.h >= n_mech:
                        errs.append(f"{name}: {self.algorithm} has no mechanism {spec.h}")
            if len(set(self.strategies)) != len(self.strategies):
                errs.append("duplicate strategy names")
        return errs

    def _dataset_problems(self, d):
        task = self.task_of(d)
        errs = []
        if "synthetic" in d:
            k = d["synthetic"]
            if not isinstance(k, int) or not 1 <= k <= len(SYNTHETIC_SUITE):
                errs.append(f"synthetic must be 1..{len(SYNTHETIC_SUITE)}, got {k!r}")
        elif "csv" in d:
            if d.get("task") not in (CLASSIFICATION, REGRESSION):
                errs.append("csv datasets need task = 'classification' or 'regression'")
            for key in ("csv", "test_csv"):
                if key in d and not self.resolve(d[key]).is_file():
                    errs.append(f"{key} file not found: {self.resolve(d[key])}")
        elif "family" in d:
            try:
                self.inline_spec(d)
            except (ConfigError, KeyError, TypeError, ValueError) as exc:
                errs.append(f"bad inline spec: {exc}")
        else:
            errs.append("needs one of 'synthetic', 'csv' or 'family'")
        if self.algorithm == "sable" and task == CLASSIFICATION:
            errs.append("sable needs a regression dataset")
        if self.algorithm in ("bdwm", "bpl") and task == REGRESSION:
            errs.append(f"{self.algorithm} needs a classification dataset")
        return errs

    @staticmethod
    def task_of(d):
        if "csv" in d:
            return d.get("task")
        return CLASSIFICATION

    @staticmethod
    def inline_spec(d):
        fields = {k: v for k, v in d.items() if k not in ("id",)}
        fields.setdefault("name", d["id"])
        return StreamSpec.from_dict(fields)

    @property
    def out_dir(self):
        return self.resolve(self.out)

    def resolve(self, p):
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def dataset_seed(self, position):
        return int(np.random.SeedSequence([self.seed, position]).generate_state(1)[0])

    def spec_for(self, d):
        if "synthetic" in d:
            return SYNTHETIC_SUITE[d["synthetic"] - 1]
        if "family" in d:
            return self.inline_spec(d)
        return None

    def to_dict(self):
        return {
            "algorithm": self.algorithm,
            "strategies": self.strategies,
            "batch_sizes": self.batch_sizes,
            "datasets": self.datasets,
            "params": self.params,
            "seed": self.seed,
            "out": self.out,
            "test_multiplier": self.test_multiplier,
            "base_dir": self.base_dir,
        }


def load_batches(cfg, dataset, n):
    """Batches (with holdouts when available) and the class count for one dataset."""
    pos = next(i for i, d in enumerate(cfg.datasets) if d["id"] == dataset["id"])
    q = int(cfg.p["q"])
    spec = cfg.spec_for(dataset)
    if spec is not None:
        stream = generate(spec, cfg.dataset_seed(pos), cfg.test_multiplier)
        return stream.batches(n, q), spec.n_classes
    data = load_csv_stream(cfg.resolve(dataset["csv"]), dataset["task"], target=dataset.get("target"))
    for diag in data.diagnostics:
        log.warning("%s: skipped %s", dataset["id"], diag)
    n_classes = data.n_classes or None
    if "test_csv" not in dataset:
        return batchify(data.inputs, data.targets, n, q), n_classes
    test = load_csv_stream(cfg.resolve(dataset["test_csv"]), dataset["task"], target=dataset.get("target"))
    if data.task == CLASSIFICATION:
        # align label ids with the training file
        remap = {c: i for i, c in enumerate(data.classes)}
        extra = [c for c in test.classes if c not in remap]
        for c in extra:
            remap[c] = len(remap)
        test.targets = np.array([remap[test.classes[t]] for t in test.targets])
        n_classes = len(remap)
    t, rem = divmod(test.inputs.shape[0], data.inputs.shape[0])
    if rem or t < 1:
        raise ConfigError(f"{dataset['id']}: test rows are not a multiple of training rows")
    out = []
    for b, (s, e) in enumerate(batch_bounds(data.inputs.shape[0], n, q)):
        hold = LabeledBatch(test.inputs[s * t:e * t], test.targets[s * t:e * t], b)
        out.append(LabeledBatch(data.inputs[s:e], data.targets[s:e], b, hold))
    return out, n_classes


def cell_filename(dataset, strategy, n):
    return f"{dataset}__{strategy}__n{n}.json"


def run_cell(cfg, dataset, strategy, n):
    p = cfg.p
    batches, n_classes = load_batches(cfg, dataset, n)
    algo = make_algorithm(cfg.algorithm, cfg.params, n_classes)
    spec = StrategySpec.parse(strategy, int(p["q"]), int(p["r"]), bool(p["predict_uncorrected"]))
    t0 = time.perf_counter()
    steps = run_strategy(initial_state(algo), batches, spec)
    return RunRecord.from_steps(
        dataset["id"], spec.name, cfg.algorithm, n, algo.task, steps,
        wall_time=time.perf_counter() - t0, benchmark_only=spec.benchmark_only,
    )


def _cell_job(cfg_dict, dataset, strategy, n):
    cfg = ExperimentConfig(**cfg_dict)
    return run_cell(cfg, dataset, strategy, n)


def grid_cells(cfg):
    return [(d, s, n) for d in cfg.datasets for n in cfg.batch_sizes for s in cfg.strategies]


def run_grid(cfg, out_dir=None, resume=False, jobs=1, progress="stderr"):
    """Run every grid cell, one record file per cell. Returns ``(done, failed)``.

    Progress lines go to ``progress`` (standard error by default, ``None`` for silence).
    """
    if progress == "stderr":
        progress = sys.stderr
    out = Path(out_dir or cfg.out_dir) / "records"
    out.mkdir(parents=True, exist_ok=True)
    todo = []
    skipped = 0
    for d, s, n in grid_cells(cfg):
        path = out / cell_filename(d["id"], s, n)
        if resume and path.exists():
            try:
                RunRecord.from_json(path.read_text(encoding="utf-8"))
                skipped += 1
                continue
            except (ValueError, ConfigError, TypeError):
                pass
        todo.append((d, s, n))
    total = len(todo)
    failed = {}
    done = 0

    def finish(key, rec=None, err=None):
        nonlocal done
        d, s, n = key
        name = cell_filename(d["id"], s, n)
        if err is not None:
            failed[name] = f"{type(err).__name__}: {err}"
            status = "FAILED " + failed[name]
        else:
            (out / name).write_text(rec.to_json() + "\n", encoding="utf-8")
            status = f"score={rec.score:.4f} ({rec.wall_time:.1f}s)"
            done += 1
        if progress is not None:
            print(f"[{done + len(failed)}/{total}] {d['id']} {s} n={n}: {status}",
                  file=progress, flush=True)

    if jobs > 1 and total > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_cell_job, cfg.to_dict(), *key): key for key in todo}
            for fut in as_completed(futures):
                key = futures[fut]
                try:
                    finish(key, fut.result())
                except Exception as exc:  # isolate per-cell failures
                    finish(key, err=exc)
    else:
        for key in todo:
            try:
                rec = run_cell(cfg, *key)
            except Exception as exc:
                finish(key, err=exc)
            else:
                finish(key, rec)
    summary = {
        "schema": "genadapt.grid/1",
        "cells": len(grid_cells(cfg)),
        "completed": done,
        "skipped": skipped,
        "failed": dict(sorted(failed.items())),
    }
    (out / "_grid.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n",
                                    encoding="utf-8")
    return done, failed


def generate_datasets(cfg, out_dir=None):
    """Write each synthetic/inline dataset as CSV (plus test CSV) and a manifest."""
    out = Path(out_dir or cfg.out_dir) / "data"
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"schema": MANIFEST_SCHEMA, "seed": cfg.seed,
                "test_multiplier": cfg.test_multiplier, "datasets": []}
    written = []
    for pos, d in enumerate(cfg.datasets):
        spec = cfg.spec_for(d)
        if spec is None:
            continue
        seed = cfg.dataset_seed(pos)
        stream = generate(spec, seed, cfg.test_multiplier)
        train = out / f"{d['id']}.csv"
        test = out / f"{d['id']}.test.csv" if cfg.test_multiplier > 0 else None
        write_stream_csv(stream, train, test)
        written.append(train)
        manifest["datasets"].append({
            "id": d["id"],
            "seed": seed,
            "spec": spec.to_dict(),
            "rows": stream.n,
            "test_rows": int(stream.test_inputs.shape[0]),
            "drift_indices": stream.drift_indices,
            "files": [train.name] + ([test.name] if test else []),
        })
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return written, manifest
