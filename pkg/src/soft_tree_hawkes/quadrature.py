"""Midpoint-rule compensators, next-event densities and count forecasts.

Time is integrated on a uniform grid of ``n_t`` cells per unit time, refined
at every point where the intensity jumps (event times and the instants an
event leaves the history window) so the rule stays second order on each
smooth piece. Space uses the cell centres of an ``n_x`` x ``n_y`` grid.
Cumulative compensators are built by sorting the time cells and
accumulating forward once.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .domain import EventSequence, SpatialRegion
from .intensity import History, Model, _raw, as_history, softplus
from .tree import scores

_CHUNK = 2 ** 22  # max (time x space) evaluations held at once


@dataclass(frozen=True)
class QuadratureSpec:
    n_t: int = 64
    n_x: int = 64
    n_y: int = 64
    t_max: float = 10.0

    def __post_init__(self):
        if min(self.n_t, self.n_x, self.n_y) < 2:
            raise ValueError("quadrature counts must be >= 2")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")


@dataclass(frozen=True)
class GridSpec:
    region: SpatialRegion
    n_x: int
    n_y: int

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise ValueError("grid needs at least one cell per axis")

    @property
    def cell_area(self) -> float:
        return self.region.area / (self.n_x * self.n_y)

    def cell_index(self, locs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        r = self.region
        locs = np.atleast_2d(locs)
        ix = np.floor((locs[:, 0] - r.x_lo) / (r.x_hi - r.x_lo) * self.n_x).astype(int)
        iy = np.floor((locs[:, 1] - r.y_lo) / (r.y_hi - r.y_lo) * self.n_y).astype(int)
        return np.clip(ix, 0, self.n_x - 1), np.clip(iy, 0, self.n_y - 1)


@dataclass(frozen=True, eq=False)
class CountGrid:
    grid: np.ndarray  # (n_x, n_y)
    spec: GridSpec
    horizon: tuple[float, float]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x_index", "y_index", "count"])
            for i in range(self.spec.n_x):
                for j in range(self.spec.n_y):
                    w.writerow([i, j, repr(float(self.grid[i, j]))])

    @staticmethod
    def read_csv(path, spec: GridSpec, horizon=(0.0, 0.0)) -> "CountGrid":
        grid = np.zeros((spec.n_x, spec.n_y))
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                grid[int(row["x_index"]), int(row["y_index"])] = float(row["count"])
        return CountGrid(grid, spec, tuple(horizon))


class Prediction(NamedTuple):
    t: float
    x: float
    y: float
    mass: float  # probability captured on [t_prev, t_prev + t_max]


class CapturedMassWarning(UserWarning):
    pass


def spatial_points(region: SpatialRegion, n_x: int, n_y: int) -> tuple[np.ndarray, float]:
    """Cell centres (row-major in x then y) and the cell area."""
    xs = region.x_lo + (np.arange(n_x) + 0.5) * (region.x_hi - region.x_lo) / n_x
    ys = region.y_lo + (np.arange(n_y) + 0.5) * (region.y_hi - region.y_lo) / n_y
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()]), region.area / (n_x * n_y)


def _space(model: Model, region: SpatialRegion, quad: QuadratureSpec):
    """Spatial samples; a single-leaf tree is constant in space so one point is exact."""
    if model.tree.depth == 0:
        pts = np.array([region.center])
        return pts, np.ones((1, 1)), region.area
    pts, dA = spatial_points(region, quad.n_x, quad.n_y)
    return pts, scores(model.tree, pts), dA


def time_edges(t0: float, t1: float, n_t: int, breaks=()) -> np.ndarray:
    n = max(1, int(math.ceil(n_t * (t1 - t0) - 1e-9)))
    edges = np.linspace(t0, t1, n + 1)
    breaks = np.asarray(breaks, dtype=float)
    breaks = breaks[(breaks > t0) & (breaks < t1)]
    if len(breaks):
        edges = np.unique(np.concatenate([edges, breaks]))
    return edges


def _breaks(model: Model, h: History) -> np.ndarray:
    return np.concatenate([h.times, h.times + model.nu])


def _raw_chunked(model: Model, tq: np.ndarray, h: History, cutoff=None) -> np.ndarray:
    out = np.empty((len(tq), model.K))
    step = 8192
    cut = None if cutoff is None else np.broadcast_to(np.asarray(cutoff, dtype=float), tq.shape)
    for a in range(0, len(tq), step):
        out[a:a + step] = _raw(model, tq[a:a + step], h, None if cut is None else cut[a:a + step]).lam
    return out


def _space_values(lam: np.ndarray, rho_grid: np.ndarray, reduce=True, dA=1.0):
    """softplus(rho_s . lam_q) for all pairs; summed over space (times dA) when ``reduce``."""
    step = max(1, _CHUNK // max(1, len(rho_grid)))
    if reduce:
        out = np.empty(len(lam))
        for a in range(0, len(lam), step):
            out[a:a + step] = softplus(lam[a:a + step] @ rho_grid.T).sum(axis=1) * dA
        return out
    return softplus(lam @ rho_grid.T)


def spatial_integrals(model: Model, tq, hist, region: SpatialRegion, quad: QuadratureSpec, cutoff=None) -> np.ndarray:
    """Integral over the region of lambda(t, .) at each time in ``tq``."""
    h = as_history(model, hist)
    _, rho_grid, dA = _space(model, region, quad)
    return _space_values(_raw_chunked(model, np.asarray(tq, dtype=float), h, cutoff), rho_grid, dA=dA)


def cumulative_compensator(model: Model, t0: float, t1: float, hist, quad: QuadratureSpec,
                           region: SpatialRegion | None = None, cutoff=None, extra_breaks=()):
    """Compensator from t0 to every grid edge in one forward sweep.

    Returns ``(edges, cum)`` with ``cum[i]`` the integral over [t0, edges[i]] x region.
    ``cutoff`` may be a scalar or a function mapping times to history cutoffs;
    any discontinuities it introduces belong in ``extra_breaks``.
    """
    if t1 < t0:
        raise ValueError("t1 < t0")
    region = region or hist.region
    h = as_history(model, hist)
    edges = time_edges(t0, t1, quad.n_t, np.concatenate([_breaks(model, h), np.asarray(extra_breaks, dtype=float)]))
    if t1 == t0:
        return edges[:1], np.zeros(1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    if callable(cutoff):
        cutoff = cutoff(mids)
    lam_l = spatial_integrals(model, mids, h, region, quad, cutoff)
    return edges, np.concatenate([[0.0], np.cumsum(lam_l * np.diff(edges))])


def compensator(model: Model, t0: float, t1: float, hist: EventSequence, quad: QuadratureSpec,
                region: SpatialRegion | None = None, cutoff=None, extra_breaks=()) -> float:
    """Midpoint estimate of the integral of lambda over [t0, t1] x region."""
    if t1 < t0:
        raise ValueError("t1 < t0")
    if t1 == t0:
        return 0.0
    return float(cumulative_compensator(model, t0, t1, hist, quad, region, cutoff, extra_breaks)[1][-1])


def _conditioning(model: Model, hist, t_prev: float) -> History:
    h = as_history(model, hist)
    n = np.searchsorted(h.times, t_prev, side="right")
    return History(h.times[:n], h.locs[:n], h.rho[:n])


def joint_density(model: Model, t: float, l, t_prev: float, hist, quad: QuadratureSpec,
                  region: SpatialRegion | None = None) -> float:
    """Density of the next event at (t, l) given events up to ``t_prev``."""
    if t < t_prev:
        raise ValueError("t precedes the last event")
    region = region or hist.region
    h = _conditioning(model, hist, t_prev)
    lam = _raw(model, np.array([t]), h).lam[0]
    inten = float(softplus(scores(model.tree, np.asarray(l, dtype=float)) @ lam))
    return inten * math.exp(-compensator(model, t_prev, t, h, quad, region))


def marginal_time_density(model: Model, t: float, t_prev: float, hist, quad: QuadratureSpec,
                          region: SpatialRegion | None = None) -> float:
    if t < t_prev:
        raise ValueError("t precedes the last event")
    region = region or hist.region
    h = _conditioning(model, hist, t_prev)
    lam_l = spatial_integrals(model, np.array([t]), h, region, quad)[0]
    return float(lam_l * math.exp(-compensator(model, t_prev, t, h, quad, region)))


class _NextEventGrid(NamedTuple):
    edges: np.ndarray
    pts: np.ndarray
    dA: float
    values: np.ndarray  # (M, S) intensity at (mid, point)
    inc: np.ndarray  # (M,) compensator increment of each time cell
    prob: np.ndarray  # (M,) probability that the next event falls in each time cell


def _cell_factor(inc: np.ndarray) -> np.ndarray:
    """(1 - exp(-inc)) / inc, continuous at 0."""
    safe = np.where(inc > 0, inc, 1.0)
    return np.where(inc > 1e-12, -np.expm1(-safe) / safe, 1.0 - 0.5 * inc)


def _next_event_grid(model: Model, t_prev: float, h: History, region: SpatialRegion,
                     quad: QuadratureSpec) -> _NextEventGrid:
    # intensity is held at its midpoint value over each cell; under that
    # piecewise-constant law the cell probabilities are exact, so the captured
    # mass only reflects the t_max truncation
    edges = time_edges(t_prev, t_prev + quad.t_max, quad.n_t, _breaks(model, h))
    mids = 0.5 * (edges[1:] + edges[:-1])
    pts, rho_grid, dA = _space(model, region, quad)
    values = _space_values(_raw_chunked(model, mids, h), rho_grid, reduce=False)
    inc = values.sum(axis=1) * dA * np.diff(edges)
    surv_start = np.exp(-(np.cumsum(inc) - inc))
    return _NextEventGrid(edges, pts, dA, values, inc, surv_start * inc * _cell_factor(inc))


def _mean_offset(inc: np.ndarray, width: np.ndarray) -> np.ndarray:
    """Mean of an exponential with total mass ``inc`` over a cell, truncated to the cell."""
    small = inc < 1e-6
    safe = np.where(small, 1.0, inc)
    exact = width * (1.0 / safe - 1.0 / np.expm1(safe))
    return np.where(small, width * (0.5 - inc / 12.0), exact)


def marginal_location_density(model: Model, l, t_prev: float, hist, quad: QuadratureSpec,
                              region: SpatialRegion | None = None) -> float:
    """Density of the next event's location, integrated over [t_prev, t_prev + t_max]."""
    region = region or hist.region
    h = _conditioning(model, hist, t_prev)
    edges = time_edges(t_prev, t_prev + quad.t_max, quad.n_t, _breaks(model, h))
    mids = 0.5 * (edges[1:] + edges[:-1])
    widths = np.diff(edges)
    lam = _raw_chunked(model, mids, h)
    _, rho_grid, dA = _space(model, region, quad)
    inc = _space_values(lam, rho_grid, dA=dA) * widths
    surv_start = np.exp(-(np.cumsum(inc) - inc))
    at_l = softplus(lam @ scores(model.tree, np.asarray(l, dtype=float).reshape(1, 2)).T)[:, 0]
    return float(np.sum(at_l * surv_start * widths * _cell_factor(inc)))


def predict_next(model: Model, t_prev: float, hist, quad: QuadratureSpec,
                 region: SpatialRegion | None = None, warn: bool = True) -> Prediction:
    """Conditional means of the next event's time and location.

    The densities are truncated to [t_prev, t_prev + t_max] and renormalized
    by the captured mass, which is returned alongside the estimate.
    """
    region = region or hist.region
    h = _conditioning(model, hist, t_prev)
    g = _next_event_grid(model, t_prev, h, region, quad)
    mass = float(g.prob.sum())
    if not mass > 0:
        raise ValueError("no next-event mass inside the prediction horizon")
    t_cell = g.edges[:-1] + _mean_offset(g.inc, np.diff(g.edges))
    row = g.values.sum(axis=1)
    share = g.values / np.where(row > 0, row, 1.0)[:, None]  # location law within each time cell
    per_cell = g.prob @ share
    t_hat = float(g.prob @ t_cell) / mass
    x_hat, y_hat = (per_cell @ g.pts) / mass
    if warn and mass < 0.99:
        warnings.warn(f"captured mass {mass:.4f} < 0.99; increase t_max", CapturedMassWarning, stacklevel=2)
    return Prediction(t_hat, float(x_hat), float(y_hat), mass)


def expected_count_grid(model: Model, t_start: float, horizon_len: float, hist, grid: GridSpec,
                        quad: QuadratureSpec) -> CountGrid:
    """Expected counts per grid cell over [t_start, t_start + horizon_len], history frozen at t_start."""
    if not horizon_len > 0:
        raise ValueError("horizon length must be positive")
    region = hist.region if isinstance(hist, EventSequence) else grid.region
    if region != grid.region:
        raise ValueError("count grid does not cover the model region")
    h = as_history(model, hist)
    n = np.searchsorted(h.times, t_start, side="left")
    h = History(h.times[:n], h.locs[:n], h.rho[:n])
    sx = max(1, math.ceil(quad.n_x / grid.n_x))
    sy = max(1, math.ceil(quad.n_y / grid.n_y))
    pts, dA = spatial_points(region, grid.n_x * sx, grid.n_y * sy)
    edges = time_edges(t_start, t_start + horizon_len, quad.n_t, _breaks(model, h))
    mids = 0.5 * (edges[1:] + edges[:-1])
    lam = _raw_chunked(model, mids, h)
    widths = np.diff(edges)
    if model.tree.depth == 0:
        total = float(softplus(lam[:, 0]) @ widths)
        counts = np.full((grid.n_x, grid.n_y), total * grid.cell_area)
    else:
        rho_grid = scores(model.tree, pts)
        per_pt = np.zeros(len(pts))
        step = max(1, _CHUNK // len(pts))
        for a in range(0, len(mids), step):
            per_pt += widths[a:a + step] @ softplus(lam[a:a + step] @ rho_grid.T)
        counts = (per_pt * dA).reshape(grid.n_x, sx, grid.n_y, sy).sum(axis=(1, 3))
    return CountGrid(counts, grid, (t_start, t_start + horizon_len))


def actual_count_grid(seq: EventSequence, t_start: float, horizon_len: float, grid: GridSpec) -> CountGrid:
    """Observed counts per cell for events in [t_start, t_start + horizon_len)."""
    lo = np.searchsorted(seq.times, t_start, side="left")
    hi = np.searchsorted(seq.times, t_start + horizon_len, side="left")
    ix, iy = grid.cell_index(seq.locs[lo:hi])
    counts = np.zeros((grid.n_x, grid.n_y))
    np.add.at(counts, (ix, iy), 1.0)
    return CountGrid(counts, grid, (t_start, t_start + horizon_len))
