"""Likelihood training: weighted objective, negative points, ADAM and the fit loop.

The objective is ``sum_i log lambda(t_i, l_i) - alpha * compensator``; with
``alpha = 1`` it is the exact point-process log-likelihood. Training uses a
stochastic estimate normalized per event: a mini-batch average of log
intensities minus ``alpha / n`` times a Monte Carlo compensator built from
``J`` negative points resampled every iteration.

Horizon-aware objectives freeze each point's history at the start of the
length-``h`` block containing it, which is how count forecasts are made.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domain import EventSequence, SpatialRegion
from .intensity import (HawkesParams, History, Model, _raw, intensity_vjp, softplus,
                        softplus_inv)
from .quadrature import QuadratureSpec, compensator
from .tree import DecisionTree, scores

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Objective:
    alpha: float = 1.0
    n_negatives: int = 1024
    ll_tol: float | None = None  # stop once the mean per-event train log-likelihood reaches this
    max_iters: int = 5000
    batch_size: int = 64
    lr: float = 1e-2
    patience: int = 10

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.n_negatives < 1 or self.batch_size < 1 or self.max_iters < 0:
            raise ValueError("n_negatives, batch_size must be >= 1")
        if not self.lr >= 0:
            raise ValueError("learning rate must be nonnegative")


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict, **kw) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, **kw)


def adam_step(state: AdamState, params: dict, grads: dict, lr: float) -> dict:
    """One bias-corrected ADAM ascent step; mutates ``state`` and returns new params."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    out = {}
    for k, p in params.items():
        g = grads[k]
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        out[k] = p + lr * (state.m[k] / bc1) / (np.sqrt(state.v[k] / bc2) + state.eps)
    return out


def block_cutoff(t, t0: float, horizon: float | None, phase: float = 0.0):
    """History cutoff for a point at time t: the start of its horizon block, or t itself."""
    t = np.asarray(t, dtype=float)
    if horizon is None:
        return t
    return t0 + phase + horizon * np.floor((t - t0 - phase) / horizon)


def _history(model: Model, times, locs) -> History:
    return History(np.asarray(times), np.asarray(locs), scores(model.tree, locs) if len(times) else np.zeros((0, model.K)))


def _with_context(seq: EventSequence, context: EventSequence | None):
    if context is None or len(context) == 0:
        return seq.times, seq.locs, 0
    keep = context.times < (seq.times[0] if len(seq) else seq.t_start)
    times = np.concatenate([context.times[keep], seq.times])
    locs = np.concatenate([context.locs[keep], seq.locs])
    return times, locs, int(keep.sum())


def log_likelihood(model: Model, seq: EventSequence, quad: QuadratureSpec, alpha: float = 1.0,
                   context: EventSequence | None = None, horizon: float | None = None) -> float:
    """Deterministic weighted log-likelihood of ``seq`` over its observation window.

    ``context`` supplies earlier events that condition the intensity without
    being scored (e.g. the training events preceding a validation split).
    """
    if len(seq) == 0:
        raise ValueError("empty sequence")
    times, locs, offset = _with_context(seq, context)
    h = _history(model, times, locs)
    t0, T = seq.t_start, seq.t_end
    cut_ev = block_cutoff(seq.times, t0, horizon)
    lam = _raw(model, seq.times, h, cut_ev).lam
    rho = h.rho[offset:]
    positive = float(np.sum(np.log(softplus(np.einsum("qk,qk->q", rho, lam)))))
    if horizon is None:
        comp = compensator(model, t0, T, h, quad, seq.region)
    else:
        blocks = t0 + horizon * np.arange(1, math.ceil((T - t0) / horizon) + 1)
        comp = compensator(model, t0, T, h, quad, seq.region,
                           cutoff=lambda m: block_cutoff(m, t0, horizon), extra_breaks=blocks)
    return positive - alpha * comp


def sample_negative_points(region: SpatialRegion, t0: float, T: float, J: int, rng: np.random.Generator) -> np.ndarray:
    """J uniform space-time points, one per equal time stratum; shape (J, 3) as (t, x, y)."""
    if J < 1:
        raise ValueError("J must be >= 1")
    u = rng.random((J, 3))
    t = t0 + (np.arange(J) + u[:, 0]) * (T - t0) / J
    x = region.x_lo + u[:, 1] * (region.x_hi - region.x_lo)
    y = region.y_lo + u[:, 2] * (region.y_hi - region.y_lo)
    return np.column_stack([t, x, y])


def stochastic_compensator(model: Model, negatives: np.ndarray, hist: History, volume: float,
                           cutoff=None) -> float:
    lam = _raw(model, negatives[:, 0], hist, cutoff).lam
    z = np.einsum("qk,qk->q", scores(model.tree, negatives[:, 1:]), lam)
    return float(volume / len(negatives) * softplus(z).sum())


def stochastic_objective(model: Model, seq: EventSequence, batch: np.ndarray, negatives: np.ndarray,
                         alpha: float, horizons: Sequence[float | None] = (None,), phase: float = 0.0) -> float:
    """Per-event estimate: mean batch log-intensity minus alpha/n times the negative-point compensator."""
    h = _history(model, seq.times, seq.locs)
    n = len(seq)
    vol = seq.duration * seq.region.area
    total = 0.0
    for hz in horizons:
        lam = _raw(model, seq.times[batch], h, block_cutoff(seq.times[batch], seq.t_start, hz, phase)).lam
        z = np.einsum("qk,qk->q", h.rho[batch], lam)
        total += np.mean(np.log(softplus(z)))
        total -= alpha / n * stochastic_compensator(
            model, negatives, h, vol, block_cutoff(negatives[:, 0], seq.t_start, hz, phase))
    return float(total)


def gradients(model: Model, seq: EventSequence, batch: np.ndarray, negatives: np.ndarray, alpha: float,
              horizons: Sequence[float | None] = (None,), phase: float = 0.0) -> dict[str, np.ndarray]:
    """Exact gradient of :func:`stochastic_objective`."""
    batch = np.asarray(batch, dtype=int)
    h = _history(model, seq.times, seq.locs)
    n = len(seq)
    vol = seq.duration * seq.region.area
    total = {k: np.zeros_like(v) for k, v in model.params().items()}
    for hz in horizons:
        cut_b = block_cutoff(seq.times[batch], seq.t_start, hz, phase)
        lam = _raw(model, seq.times[batch], h, cut_b).lam
        inten = softplus(np.einsum("qk,qk->q", h.rho[batch], lam))
        g_pos = intensity_vjp(model, seq.times[batch], seq.locs[batch], h, 1.0 / (len(batch) * inten), cut_b)
        cut_n = block_cutoff(negatives[:, 0], seq.t_start, hz, phase)
        g_neg = intensity_vjp(model, negatives[:, 0], negatives[:, 1:], h,
                              -alpha * vol / (n * len(negatives)), cut_n)
        for k in total:
            total[k] += g_pos[k] + g_neg[k]
    return total


def init_model(depth: int, seq: EventSequence, nu: float, rng: np.random.Generator) -> Model:
    """Random starting point scaled to the data's average rate."""
    K = 2 ** depth
    tree = DecisionTree.random(depth, rng, seq.locs)
    area = seq.region.area
    rate = max(len(seq), 1) / max(seq.duration, 1e-12) / area
    mu = softplus_inv(0.5 * rate * rng.uniform(0.5, 1.5, K))
    gamma = (5.0 / nu) * rng.uniform(0.5, 2.0, K)
    Gamma = rng.uniform(0.0, 0.6, (K, K)) * gamma[None, :] / area
    return Model(tree, HawkesParams.from_decay(mu, gamma, Gamma), nu)


@dataclass
class TraceRow:
    epoch: int
    train_ll: float
    val_ll: float
    grad_norm: float


@dataclass
class TrainResult:
    model: Model
    trace: list[TraceRow] = field(default_factory=list)
    best_epoch: int = -1
    best_val_ll: float = -math.inf
    iterations: int = 0


def _grad_norm(g: dict) -> float:
    return float(math.sqrt(sum(float(np.sum(v * v)) for v in g.values())))


def _finite(g: dict) -> bool:
    return all(np.all(np.isfinite(v)) for v in g.values())


def _fit(model: Model, train: EventSequence, val: EventSequence, obj: Objective, rng: np.random.Generator,
         quad: QuadratureSpec, horizons: Sequence[float | None]) -> TrainResult:
    if not isinstance(model.kind, HawkesParams):
        raise TypeError("training is defined for Hawkes models")
    if len(train) == 0 or len(val) == 0:
        raise ValueError("train and validation sequences must be nonempty")
    if val.times[0] < train.times[-1]:
        raise ValueError("validation events must follow the training events")
    n = len(train)

    def evaluate(m: Model) -> tuple[float, float]:
        tr = sum(log_likelihood(m, train, quad, 1.0, horizon=hz) for hz in horizons) / n
        va = sum(log_likelihood(m, val, quad, 1.0, context=train, horizon=hz) for hz in horizons) / len(val)
        return tr, va

    params = model.params()
    state = AdamState.zeros_like(params)
    result = TrainResult(model)
    it = 0
    epoch = 0
    stale = 0
    while True:
        norms = []
        perm = rng.permutation(n)
        for a in range(0, n, obj.batch_size):
            if it >= obj.max_iters:
                break
            current = model.with_params(params)
            negs = sample_negative_points(train.region, train.t_start, train.t_end, obj.n_negatives, rng)
            phase = float(rng.random())
            hz_phase = [phase * hz if hz is not None else 0.0 for hz in horizons]
            g = {k: np.zeros_like(v) for k, v in params.items()}
            for hz, ph in zip(horizons, hz_phase):
                gh = gradients(current, train, perm[a:a + obj.batch_size], negs, obj.alpha, (hz,), ph)
                for k in g:
                    g[k] += gh[k]
            if not _finite(g):
                raise TrainingError(f"non-finite gradient at iteration {it}: {g}")
            norms.append(_grad_norm(g))
            params = adam_step(state, params, g, obj.lr)
            it += 1
        if not norms:
            break
        current = model.with_params(params)
        tr, va = evaluate(current)
        result.trace.append(TraceRow(epoch, tr, va, float(np.mean(norms))))
        log.debug("epoch %d train_ll %.6f val_ll %.6f", epoch, tr, va)
        if not (math.isfinite(tr) and math.isfinite(va)):
            raise TrainingError(f"non-finite objective at epoch {epoch}: train {tr}, val {va}")
        if va > result.best_val_ll:
            result.best_val_ll, result.best_epoch, result.model = va, epoch, current
            stale = 0
        else:
            stale += 1
        epoch += 1
        if obj.ll_tol is not None and tr >= obj.ll_tol:
            break
        if stale >= obj.patience or it >= obj.max_iters:
            break
    result.iterations = it
    return result


EVAL_QUAD = QuadratureSpec(n_t=16, n_x=16, n_y=16, t_max=10.0)


def train(model: Model, train_seq: EventSequence, val_seq: EventSequence, objective: Objective,
          rng: np.random.Generator, quad: QuadratureSpec = EVAL_QUAD, horizon: float | None = None) -> TrainResult:
    """ADAM ascent on the stochastic objective; keeps the best-validation checkpoint.

    ``horizon`` switches to the block-frozen objective used for count
    forecasting at that horizon (separate training mode).
    """
    return _fit(model, train_seq, val_seq, objective, rng, quad, (horizon,))


def train_parallel_horizons(model: Model, train_seq: EventSequence, val_seq: EventSequence,
                            horizons: Sequence[float], objective: Objective, rng: np.random.Generator,
                            quad: QuadratureSpec = EVAL_QUAD) -> TrainResult:
    """Optimize the sum of the block-frozen objectives of every horizon at once."""
    if len(horizons) < 1:
        raise ValueError("need at least one horizon")
    return _fit(model, train_seq, val_seq, objective, rng, quad, tuple(horizons))


def select_hyperparameters(candidates: Sequence[tuple], train_seq: EventSequence, val_seq: EventSequence,
                           seed: int, quad: QuadratureSpec = EVAL_QUAD):
    """Fit each ``(model, objective)`` candidate; return the one with the highest validation log-likelihood.

    Validation is scored with alpha = 1 so candidates with different alpha compare fairly.
    """
    best = None
    for i, (model, obj) in enumerate(candidates):
        res = train(model, train_seq, val_seq, obj, np.random.default_rng([seed, i]), quad)
        if best is None or res.best_val_ll > best[1].best_val_ll:
            best = (i, res)
    return best
