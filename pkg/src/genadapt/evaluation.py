"""Run records, score tables, Friedman/Nemenyi rank statistics and reports."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import ConfigError, IoError
from .metrics import CLASSIFICATION

SCHEMA = "genadapt.record/1"
REPORT_SCHEMA = "genadapt.report/1"
NORMALIZATION = "loss divided by the per-dataset maximum over compared strategies"

# Studentized range statistic divided by sqrt(2), infinite degrees of freedom,
# for k = 2..10 compared methods.
NEMENYI_Q = {
    0.05: (1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164),
    0.10: (1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920),
}


@dataclass
class RunRecord:
    """Outcome of one (dataset, strategy, batch size) grid cell."""

    dataset: str
    strategy: str
    algorithm: str
    batch_size: int
    task: str
    losses: list
    mechanisms: list
    corrections: list = field(default_factory=list)
    wall_time: float = 0.0
    benchmark_only: bool = False
    schema: str = SCHEMA

    @property
    def mean_loss(self):
        return float(np.mean(self.losses))

    @property
    def score(self):
        """Mean accuracy for classification, mean MAE for regression."""
        return 1.0 - self.mean_loss if self.task == CLASSIFICATION else self.mean_loss

    @classmethod
    def from_steps(cls, dataset, strategy, algorithm, batch_size, task, steps,
                   wall_time=0.0, benchmark_only=False):
        return cls(
            dataset=dataset,
            strategy=strategy,
            algorithm=algorithm,
            batch_size=int(batch_size),
            task=task,
            losses=[float(s.loss) for s in steps],
            mechanisms=[s.mechanism for s in steps],
            corrections=[list(s.correction) for s in steps],
            wall_time=float(wall_time),
            benchmark_only=benchmark_only,
        )

    def to_json(self):
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        if d.get("schema") != SCHEMA:
            raise ConfigError(f"unsupported record schema {d.get('schema')!r}")
        return cls(**d)


def normalize_scores(losses):
    """Divide each loss by the largest; all-zero losses stay zero."""
    losses = np.asarray(losses, dtype=float)
    if losses.size == 0:
        raise ConfigError("nothing to normalize")
    top = losses.max()
    if top <= 0:
        return np.zeros_like(losses)
    return losses / top


def rank_rows(losses):
    """Rank strategies within each dataset row; rank 1 = lowest loss, ties averaged."""
    losses = np.asarray(losses, dtype=float)
    return np.vstack([stats.rankdata(row, method="average") for row in losses])


@dataclass
class FriedmanResult:
    statistic: float
    pvalue: float
    ranks: np.ndarray  # (N, k)

    @property
    def mean_ranks(self):
        return self.ranks.mean(axis=0)


def friedman_test(losses):
    """Friedman chi-square over an (N datasets x k strategies) loss matrix."""
    losses = np.asarray(losses, dtype=float)
    if losses.ndim != 2 or losses.shape[1] < 2:
        raise ConfigError("the Friedman test needs at least 2 strategies")
    if losses.shape[0] < 2:
        raise ConfigError("the Friedman test needs at least 2 datasets")
    N, k = losses.shape
    ranks = rank_rows(losses)
    R = ranks.mean(axis=0)
    chi2 = 12.0 * N / (k * (k + 1)) * (np.sum(R**2) - k * (k + 1) ** 2 / 4.0)
    chi2 = max(float(chi2), 0.0)
    return FriedmanResult(chi2, float(stats.chi2.sf(chi2, k - 1)), ranks)


def nemenyi_critical_difference(k, n_datasets, alpha=0.05):
    """Critical mean-rank difference ``q_alpha * sqrt(k (k + 1) / (6 N))``."""
    if alpha not in NEMENYI_Q:
        raise ConfigError(f"alpha must be one of {sorted(NEMENYI_Q)}, got {alpha}")
    if not 2 <= k <= 10:
        raise ConfigError(f"Nemenyi table covers 2..10 strategies, got {k}")
    if n_datasets < 1:
        raise ConfigError("need at least one dataset")
    return NEMENYI_Q[alpha][k - 2] * math.sqrt(k * (k + 1) / (6.0 * n_datasets))


_ORDER = re.compile(r"^Sequence(\d+)")


def strategy_sort_key(name):
    m = _ORDER.match(name)
    base = name.replace("+RC", "").replace("XVSelectRC", "XVSelect")
    rc = name.endswith("RC")
    if m:
        return (0, int(m.group(1)), rc, name)
    rank = {"Joint": 1, "Custom": 2, "XVSelect": 3, "Oracle": 4}.get(base, 5)
    return (rank, 0, rc, name)


@dataclass
class RankTable:
    batch_size: int
    task: str
    datasets: list
    strategies: list
    scores: np.ndarray  # (N, k) mean score per cell
    losses: np.ndarray  # (N, k) mean loss per cell
    compared: list  # strategies entering the rank statistics
    ranks: np.ndarray = None
    friedman: float = float("nan")
    pvalue: float = float("nan")
    cd: float = float("nan")

    @property
    def mean_ranks(self):
        return self.ranks.mean(axis=0)


def build_rank_table(records, batch_size, alpha=0.05, include_benchmarks=False):
    recs = [r for r in records if r.batch_size == batch_size]
    tasks = {r.task for r in recs}
    if len(tasks) > 1:
        raise ConfigError(f"mixed tasks in one report: {sorted(tasks)}")
    task = tasks.pop()
    datasets = sorted({r.dataset for r in recs})
    strategies = sorted({r.strategy for r in recs}, key=strategy_sort_key)
    cell = {(r.dataset, r.strategy): r for r in recs}
    scores = np.full((len(datasets), len(strategies)), np.nan)
    losses = np.full_like(scores, np.nan)
    for i, d in enumerate(datasets):
        for j, s in enumerate(strategies):
            if (d, s) in cell:
                scores[i, j] = cell[(d, s)].score
                losses[i, j] = cell[(d, s)].mean_loss
    bench = {r.strategy for r in recs if r.benchmark_only}
    compared = [s for s in strategies if include_benchmarks or s not in bench]
    table = RankTable(batch_size, task, datasets, strategies, scores, losses, compared)
    cols = [strategies.index(s) for s in compared]
    sub = losses[:, cols]
    complete = ~np.isnan(sub).any(axis=1)
    if sub.size:
        table.ranks = rank_rows(sub[complete]) if complete.any() else np.empty((0, len(cols)))
    if len(cols) >= 2 and complete.sum() >= 2:
        fr = friedman_test(sub[complete])
        table.friedman, table.pvalue = fr.statistic, fr.pvalue
        if 2 <= len(cols) <= 10:
            table.cd = nemenyi_critical_difference(len(cols), int(complete.sum()), alpha)
    return table


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"


def _csv_text(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def render_report(records, alpha=0.05):
    """Report contents in memory: ``{filename: text}`` plus the rank tables."""
    records = list(records)
    if not records:
        raise ConfigError("no run records to report")
    files = {}
    tables = []
    summary = {"schema": REPORT_SCHEMA, "normalization": NORMALIZATION, "alpha": alpha,
               "batch_sizes": {}}
    for n in sorted({r.batch_size for r in records}):
        t = build_rank_table(records, n, alpha)
        tables.append(t)
        files[f"scores_n{n}.csv"] = _csv_text(
            [["dataset"] + t.strategies]
            + [[d] + [_fmt(v) for v in row] for d, row in zip(t.datasets, t.scores)]
        )
        norm = np.vstack([
            normalize_scores(np.nan_to_num(row, nan=0.0)) for row in t.losses
        ]) if t.losses.size else t.losses
        files[f"normalized_n{n}.csv"] = _csv_text(
            [["dataset"] + t.strategies]
            + [[d] + [_fmt(v) for v in row] for d, row in zip(t.datasets, norm)]
        )
        rank_rows_out = [["strategy", "mean_rank", "mean_score"]]
        if t.ranks is not None and t.ranks.size:
            cols = [t.strategies.index(s) for s in t.compared]
            for s, r, j in zip(t.compared, t.mean_ranks, cols):
                rank_rows_out.append([s, _fmt(float(r)), _fmt(float(np.nanmean(t.scores[:, j])))])
        files[f"ranks_n{n}.csv"] = _csv_text(rank_rows_out)
        summary["batch_sizes"][str(n)] = {
            "task": t.task,
            "datasets": len(t.datasets),
            "compared": t.compared,
            "ranked_datasets": 0 if t.ranks is None else int(t.ranks.shape[0]),
            "friedman_statistic": None if math.isnan(t.friedman) else round(t.friedman, 9),
            "friedman_pvalue": None if math.isnan(t.pvalue) else round(t.pvalue, 9),
            "critical_difference": None if math.isnan(t.cd) else round(t.cd, 9),
        }
    files["summary.json"] = json.dumps(summary, indent=1, sort_keys=True) + "\n"
    return files, tables


def write_report(records, out_dir, alpha=0.05, figures=True):
    """Write score/rank CSVs, a JSON summary and one rank diagram per batch size.

    Everything is rendered before the first file is written, so a failure
    leaves no partial report behind.
    """
    files, tables = render_report(records, alpha)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            tmp = out / (name + ".tmp")
            tmp.write_text(text, encoding="utf-8")
            os.replace(tmp, out / name)
    except OSError as exc:
        raise IoError(f"cannot write report to {out}: {exc}") from exc
    written = [out / name for name in files]
    if figures:
        from .plotting import rank_diagram

        for t in tables:
            if t.ranks is None or not t.ranks.size:
                continue
            path = out / f"ranks_n{t.batch_size}.svg"
            rank_diagram(t.compared, t.mean_ranks, t.cd, path, title=f"n = {t.batch_size}")
            written.append(path)
    return written, tables


def load_records(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise IoError(f"{directory} is not a directory")
    paths = sorted(directory.glob("*.json"))
    records = []
    for p in paths:
        if p.name.startswith("_"):
            continue
        records.append(RunRecord.from_json(p.read_text(encoding="utf-8")))
    if not records:
        raise IoError(f"no run records in {directory}")
    return records
