"""Ogata thinning for the soft-tree intensity models.

Locations are drawn from the normalized spatial intensity through an
inverse CDF over a ``resolution`` x ``resolution`` cell grid, then jittered
uniformly inside the chosen cell.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import EventSequence, SpatialRegion
from .intensity import Model, Poisson, SelfCorrecting, softplus
from .quadrature import spatial_points
from .tree import scores


class ThinningError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    region: SpatialRegion
    t_end: float
    seed: int = 0
    resolution: int = 128
    max_events: int | None = None  # guard against explosive (supercritical) parameters

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.max_events is not None and self.max_events < 1:
            raise ValueError("max_events must be positive")


def _window_events(model: Model, times: np.ndarray, t: float) -> slice:
    """Events in [t - nu, t] (the event at t, if any, counts from now on)."""
    lo = np.searchsorted(times, t - model.nu, side="left")
    hi = np.searchsorted(times, t, side="right")
    return slice(lo, hi)


def dominating_rate(model: Model, t: float, times: np.ndarray, rho: np.ndarray, region: SpatialRegion,
                    step: float = 1.0) -> tuple[float, float]:
    """Upper bound on the regional integral of lambda from t until the returned expiry time.

    For Hawkes models negative interaction terms are dropped and positive
    ones only decay, so the bound at t holds until the next event.
    """
    kind = model.kind
    if isinstance(kind, Poisson):
        return float(softplus(kind.rate)) * region.area, math.inf
    win = _window_events(model, times, t)
    if isinstance(kind, SelfCorrecting):
        end = t + step
        n_end = np.count_nonzero((times[win] >= end - model.nu))
        return float(softplus(kind.mu * end - kind.alpha * n_end)) * region.area, end
    gamma = kind.gamma
    c = rho[win] @ kind.Gamma  # (W, K): contribution of each event to each subregion
    decay = np.exp(-gamma[None, :] * (t - times[win])[:, None])
    upper = kind.mu + np.sum(np.maximum(c, 0.0) * decay, axis=0)
    return float(softplus(upper.max())) * region.area, math.inf


def _raw_at(model: Model, s: float, times: np.ndarray, rho: np.ndarray) -> np.ndarray:
    kind = model.kind
    K = model.K
    if isinstance(kind, Poisson):
        return np.full(K, kind.rate)
    lo = np.searchsorted(times, s - model.nu, side="left")
    hi = np.searchsorted(times, s, side="left")
    if isinstance(kind, SelfCorrecting):
        return np.full(K, kind.mu * s - kind.alpha * (hi - lo))
    decay = np.exp(-kind.gamma[None, :] * (s - times[lo:hi])[:, None])
    return kind.mu + np.sum(decay * (rho[lo:hi] @ kind.Gamma), axis=0)


def thin_simulate(model: Model, cfg: SimConfig, rng: np.random.Generator | None = None,
                  audit: list | None = None) -> EventSequence:
    """Simulate events on [0, t_end] x region.

    ``audit``, when given, collects every acceptance ratio.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    region = cfg.region
    pts, dA = spatial_points(region, cfg.resolution, cfg.resolution)
    rho_grid = scores(model.tree, pts)
    cell_w = (region.x_hi - region.x_lo) / cfg.resolution
    cell_h = (region.y_hi - region.y_lo) / cfg.resolution
    cap = 64
    times = np.empty(cap)
    locs = np.empty((cap, 2))
    rho = np.empty((cap, model.K))
    n = 0
    t = 0.0
    while True:
        bound, expiry = dominating_rate(model, t, times[:n], rho[:n], region)
        if bound <= 0:
            break
        s = t + rng.exponential(1.0 / bound)
        if s > expiry:
            t = expiry
            continue
        if s > cfg.t_end:
            break
        t = s
        profile = softplus(rho_grid @ _raw_at(model, s, times[:n], rho[:n]))
        ratio = float(profile.sum() * dA) / bound
        if audit is not None:
            audit.append(ratio)
        if ratio > 1.0 + 1e-9:
            raise ThinningError(f"acceptance ratio {ratio} exceeds 1 at t={s}")
        if rng.random() >= ratio:
            continue
        cdf = np.cumsum(profile)
        cell = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(pts) - 1)
        jitter = rng.random(2) - 0.5
        loc = pts[cell] + jitter * (cell_w, cell_h)
        loc = np.clip(loc, (region.x_lo, region.y_lo), (region.x_hi, region.y_hi))
        if cfg.max_events is not None and n >= cfg.max_events:
            raise ThinningError(f"more than {cfg.max_events} events by t={s}; the process may be explosive")
        if n == cap:
            cap *= 2
            times = np.resize(times, cap)
            locs = np.resize(locs, (cap, 2))
            rho = np.resize(rho, (cap, model.K))
        times[n] = s
        locs[n] = loc
        rho[n] = scores(model.tree, loc)
        n += 1
    return EventSequence(times[:n].copy(), locs[:n].copy(), region, t_start=0.0, t_end=cfg.t_end)
