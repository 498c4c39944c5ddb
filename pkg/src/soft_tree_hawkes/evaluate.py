"""Forecast metrics, baselines and the sweep harness.

Count forecasts tile a test window with frames of the chosen horizon; each
frame is predicted from the true history up to its start (teacher forcing)
and compared cell by cell with the observed counts.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .domain import EventSequence
from .ingest import split
from .intensity import Model
from .learn import (Objective, TrainingError, init_model, log_likelihood, train,
                    train_parallel_horizons)
from .quadrature import (CapturedMassWarning, CountGrid, GridSpec, QuadratureSpec,
                         actual_count_grid, expected_count_grid, predict_next)

log = logging.getLogger(__name__)

SWEEP_VARIABLES = ("horizon", "window", "depth", "mode")


def rmse_counts(predicted: Sequence[CountGrid], actual: Sequence[CountGrid]) -> float:
    if len(predicted) != len(actual) or not predicted:
        raise ValueError("need matching, nonempty frame lists")
    sq = []
    for p, a in zip(predicted, actual):
        if p.grid.shape != a.grid.shape or p.spec != a.spec:
            raise ValueError("count grids have different geometry")
        sq.append((p.grid - a.grid) ** 2)
    return float(np.sqrt(np.mean(sq)))


def mean_baseline(train_grids: Sequence[CountGrid]) -> np.ndarray:
    """Per-cell mean count over the training frames."""
    if not train_grids:
        raise ValueError("need at least one training frame")
    return np.mean([g.grid for g in train_grids], axis=0)


def frame_starts(t0: float, t1: float, length: float) -> np.ndarray:
    n = int(math.floor((t1 - t0) / length + 1e-9))
    return t0 + length * np.arange(n)


def actual_frames(seq: EventSequence, t0: float, t1: float, length: float, grid: GridSpec) -> list[CountGrid]:
    return [actual_count_grid(seq, s, length, grid) for s in frame_starts(t0, t1, length)]


def forecast_frames(model: Model, seq: EventSequence, t0: float, t1: float, length: float, grid: GridSpec,
                    quad: QuadratureSpec) -> list[CountGrid]:
    return [expected_count_grid(model, s, length, seq, grid, quad) for s in frame_starts(t0, t1, length)]


class CountScores(NamedTuple):
    rmse: float
    baseline_rmse: float
    avg_cell_count: float
    avg_frame_count: float
    n_frames: int


def count_scores(model: Model, seq: EventSequence, train_window: tuple[float, float],
                 test_window: tuple[float, float], length: float, grid: GridSpec,
                 quad: QuadratureSpec) -> CountScores:
    """Model and mean-baseline RMSE for one horizon over the test window.

    ``seq`` holds every event (so forecasts see the full true history).
    """
    truth = actual_frames(seq, *test_window, length, grid)
    if not truth:
        raise ValueError("test window shorter than the horizon")
    pred = forecast_frames(model, seq, *test_window, length, grid, quad)
    base = mean_baseline(actual_frames(seq, *train_window, length, grid))
    base_frames = [CountGrid(base, grid, f.horizon) for f in truth]
    counts = np.array([f.grid for f in truth])
    return CountScores(rmse_counts(pred, truth), rmse_counts(base_frames, truth),
                       float(counts.mean()), float(counts.sum(axis=(1, 2)).mean()), len(truth))


class NextEventLosses(NamedTuple):
    mse_t: float
    mse_l: float
    low_mass: int  # predictions whose captured mass fell below 0.99


def next_event_losses(model: Model, test: EventSequence, quad: QuadratureSpec,
                      context: EventSequence | None = None) -> NextEventLosses:
    """Teacher-forced squared errors of the conditional-mean next-event estimates."""
    if len(test) == 0:
        raise ValueError("empty test sequence")
    full = _concat(context, test)
    offset = len(full) - len(test)
    err_t, err_l, low = [], [], 0
    for i in range(len(test)):
        j = offset + i
        if j == 0:
            continue
        t_prev = float(full.times[j - 1])
        hist = full.slice(0, j, t_start=full.t_start, t_end=t_prev)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CapturedMassWarning)
            p = predict_next(model, t_prev, hist, quad, region=full.region, warn=False)
        low += p.mass < 0.99
        err_t.append((p.t - full.times[j]) ** 2)
        err_l.append((p.x - full.locs[j, 0]) ** 2 + (p.y - full.locs[j, 1]) ** 2)
    if low:
        warnings.warn(f"{low} predictions captured < 0.99 of the next-event mass", CapturedMassWarning)
    return NextEventLosses(float(np.mean(err_t)), float(np.mean(err_l)), low)


def baseline_next_event_losses(train: EventSequence, test: EventSequence,
                               context: EventSequence | None = None) -> dict[str, tuple[float, float]]:
    """Squared errors of two reference predictors.

    ``persistence``: last event's location, last observed gap repeated.
    ``global_mean``: mean training location, mean training gap.
    """
    full = _concat(context, test)
    offset = len(full) - len(test)
    gap = float(np.mean(np.diff(train.times))) if len(train) > 1 else 0.0
    center = train.locs.mean(axis=0)
    out = {"persistence": ([], []), "global_mean": ([], [])}
    for i in range(len(test)):
        j = offset + i
        if j < 2:
            continue
        t, l = full.times[j], full.locs[j]
        t_prev, l_prev = full.times[j - 1], full.locs[j - 1]
        last_gap = t_prev - full.times[j - 2]
        for name, (pt, pl) in {"persistence": (t_prev + last_gap, l_prev),
                               "global_mean": (t_prev + gap, center)}.items():
            out[name][0].append((pt - t) ** 2)
            out[name][1].append(float(np.sum((pl - l) ** 2)))
    return {k: (float(np.mean(a)), float(np.mean(b))) for k, (a, b) in out.items()}


def _concat(context: EventSequence | None, seq: EventSequence) -> EventSequence:
    if context is None or len(context) == 0:
        return seq
    keep = context.times <= (seq.times[0] if len(seq) else seq.t_start)
    return EventSequence(np.concatenate([context.times[keep], seq.times]),
                         np.concatenate([context.locs[keep], seq.locs]), seq.region,
                         t_start=min(context.t_start, seq.t_start), t_end=seq.t_end)


@dataclass
class ExperimentConfig:
    """One sweep: a variable, its values, seeds and everything held fixed.

    ``dataset`` maps a seed to the full event sequence for that replicate.
    Horizons are in units of ``horizon_unit`` model time; ``eval_horizons``
    are the horizons scored when the swept variable is not the horizon.
    """

    sweep: str
    values: list
    seeds: list[int]
    dataset: Callable[[int], EventSequence]
    grid_shape: tuple[int, int] = (4, 4)
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)
    objective: Objective = field(default_factory=Objective)
    depth: int = 1
    nu: float = 4.0
    horizon_unit: float = 1.0
    eval_horizons: list = field(default_factory=lambda: [1])
    train_horizons: list = field(default_factory=lambda: [1, 2, 4, 8])
    fractions: tuple[float, float] = (0.7, 0.15)
    next_event: bool = False
    workers: int = 1
    checkpoint_cache: dict | None = None

    def __post_init__(self):
        if self.sweep not in SWEEP_VARIABLES:
            raise ValueError(f"sweep variable must be one of {SWEEP_VARIABLES}")
        if not self.values:
            raise ValueError("empty value list")
        if not self.seeds:
            raise ValueError("need at least one seed")


@dataclass
class MetricReport:
    sweep: str
    value: object
    seed: int
    horizon: float
    rmse: float = math.nan
    baseline_rmse: float = math.nan
    avg_cell_count: float = math.nan
    avg_frame_count: float = math.nan
    nll: float = math.nan
    mse_t: float = math.nan
    mse_l: float = math.nan
    runtime: float = math.nan
    status: str = "ok"


def _fit(cfg: ExperimentConfig, value, seed: int, train_seq, val_seq):
    depth = value if cfg.sweep == "depth" else cfg.depth
    nu = value * cfg.horizon_unit if cfg.sweep == "window" else cfg.nu
    key = (cfg.sweep, repr(value), seed)
    if cfg.checkpoint_cache is not None and key in cfg.checkpoint_cache:
        return cfg.checkpoint_cache[key]
    rng = np.random.default_rng([seed, 1])
    model = init_model(depth, train_seq, nu, rng)
    if cfg.sweep == "mode":
        hz = [h * cfg.horizon_unit for h in cfg.train_horizons]
        if value == "parallel":
            res = train_parallel_horizons(model, train_seq, val_seq, hz, cfg.objective, rng)
        else:
            res = train(model, train_seq, val_seq, cfg.objective, rng, horizon=max(hz))
    else:
        res = train(model, train_seq, val_seq, cfg.objective, rng)
    if cfg.checkpoint_cache is not None:
        cfg.checkpoint_cache[key] = res.model
    return res.model


def _row(cfg: ExperimentConfig, value, seed: int) -> list[MetricReport]:
    start = time.perf_counter()
    seq = cfg.dataset(seed)
    train_seq, val_seq, test_seq = split(seq, *cfg.fractions)
    horizons = [value] if cfg.sweep == "horizon" else list(cfg.eval_horizons)
    try:
        model = _fit(cfg, value, seed, train_seq, val_seq)
    except (TrainingError, FloatingPointError, ValueError) as exc:
        log.warning("row %s=%s seed %d failed: %s", cfg.sweep, value, seed, exc)
        return [MetricReport(cfg.sweep, value, seed, h, status=f"failed: {exc}") for h in horizons]
    grid = GridSpec(seq.region, *cfg.grid_shape)
    context = _concat(train_seq, val_seq)
    nll = -log_likelihood(model, test_seq, cfg.quad, context=context) / len(test_seq)
    mse_t = mse_l = math.nan
    if cfg.next_event:
        mse_t, mse_l, _ = next_event_losses(model, test_seq, cfg.quad, context=context)
    rows = []
    for h in horizons:
        sc = count_scores(model, seq, (train_seq.t_start, train_seq.t_end),
                          (test_seq.t_start, test_seq.t_end), h * cfg.horizon_unit, grid, cfg.quad)
        rows.append(MetricReport(cfg.sweep, value, seed, h, sc.rmse, sc.baseline_rmse, sc.avg_cell_count,
                                 sc.avg_frame_count, nll, mse_t, mse_l, time.perf_counter() - start))
    return rows


def run_sweep(cfg: ExperimentConfig) -> list[MetricReport]:
    """Train and score every (value, seed) pair; rows come back in (value, seed, horizon) order."""
    jobs = [(v, s) for v in cfg.values for s in cfg.seeds]
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(lambda job: _row(cfg, *job), jobs))
    else:
        results = [_row(cfg, *job) for job in jobs]
    return [r for rows in results for r in rows]


def median_by(reports: Sequence[MetricReport], metric: str, horizon=None) -> dict:
    """Median of ``metric`` over seeds for each swept value (failed rows skipped)."""
    out: dict = {}
    for r in reports:
        if r.status != "ok" or (horizon is not None and r.horizon != horizon):
            continue
        out.setdefault(r.value, []).append(getattr(r, metric))
    return {k: float(np.median(v)) for k, v in out.items()}


def write_reports(reports: Sequence[MetricReport], csv_path=None, json_path=None, long_path=None,
                  include_runtime: bool = False) -> None:
    """Write the table as CSV, JSON and long-format CSV.

    Runtimes are left out by default so reports are byte-identical across reruns.
    """
    rows = [asdict(r) for r in reports]
    if not include_runtime:
        for r in rows:
            r.pop("runtime")
    fields = [f for f in MetricReport.__dataclass_fields__ if include_runtime or f != "runtime"]
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    if json_path:
        with open(json_path, "w") as fh:
            clean = [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()} for r in rows]
            json.dump(clean, fh, indent=2, default=str)
            fh.write("\n")
    if long_path:
        with open(long_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sweep_var", "value", "seed", "metric", "score"])
            for r in reports:
                for metric in ("rmse", "baseline_rmse", "nll", "mse_t", "mse_l"):
                    w.writerow([r.sweep, r.value, r.seed, f"{metric}@h{r.horizon}", repr(getattr(r, metric))])
