"""Conditional intensities mixed over soft-tree subregions.

For query time t and location l the model evaluates a K-vector of raw
subregion intensities ``lam_raw(t)`` from the events in the half-open window
``[t - nu, t)`` and returns ``softplus(rho(l) . lam_raw(t))``.

Everything here is vectorized over query points. History is passed as plain
arrays (``times`` sorted, ``locs``); a query only sees events strictly before
``min(t, cutoff)``, which lets callers freeze history at a forecast origin.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Union

import numpy as np
from scipy.special import expit

from .domain import Event, EventSequence
from .tree import DecisionTree, scores, tree_vjp

PARAM_NAMES = ("mu", "gamma_raw", "Gamma", "w", "b")


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


@dataclass(frozen=True, eq=False)
class HawkesParams:
    """Per-subregion background ``mu``, decay ``softplus(gamma_raw)`` and interaction ``Gamma``.

    ``Gamma[i, k]`` scales how an event scored into subregion i excites subregion k.
    """

    mu: np.ndarray
    gamma_raw: np.ndarray
    Gamma: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        gr = np.array(self.gamma_raw, dtype=float).reshape(-1)
        G = np.array(self.Gamma, dtype=float).reshape(len(mu), len(mu))
        if len(gr) != len(mu):
            raise ValueError("mu and gamma_raw differ in length")
        for a in (mu, gr, G):
            if not np.all(np.isfinite(a)):
                raise ValueError("non-finite Hawkes parameters")
            a.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "gamma_raw", gr)
        object.__setattr__(self, "Gamma", G)

    @classmethod
    def from_decay(cls, mu, gamma, Gamma) -> "HawkesParams":
        return cls(mu, softplus_inv(gamma), Gamma)

    @property
    def gamma(self) -> np.ndarray:
        return softplus(self.gamma_raw)

    @property
    def K(self) -> int:
        return len(self.mu)


@dataclass(frozen=True)
class Poisson:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("Poisson rate must be positive")


@dataclass(frozen=True)
class SelfCorrecting:
    mu: float
    alpha: float

    def __post_init__(self):
        if not (self.mu > 0 and self.alpha > 0):
            raise ValueError("self-correcting mu and alpha must be positive")


IntensityKind = Union[HawkesParams, Poisson, SelfCorrecting]


@dataclass(frozen=True, eq=False)
class Model:
    tree: DecisionTree
    kind: IntensityKind
    nu: float

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("history window nu must be positive")
        if isinstance(self.kind, HawkesParams) and self.kind.K != self.tree.n_leaves:
            raise ValueError(f"{self.kind.K} subregion processes for a tree with {self.tree.n_leaves} leaves")

    @property
    def K(self) -> int:
        return self.tree.n_leaves

    def params(self) -> dict[str, np.ndarray]:
        """Trainable parameters of a Hawkes model as fresh writable arrays."""
        if not isinstance(self.kind, HawkesParams):
            raise TypeError("only Hawkes models expose trainable parameters")
        h = self.kind
        return {"mu": h.mu.copy(), "gamma_raw": h.gamma_raw.copy(), "Gamma": h.Gamma.copy(),
                "w": self.tree.w.copy(), "b": self.tree.b.copy()}

    def with_params(self, p: dict[str, np.ndarray]) -> "Model":
        tree = DecisionTree(self.tree.depth, p["w"], p["b"])
        return replace(self, tree=tree, kind=HawkesParams(p["mu"], p["gamma_raw"], p["Gamma"]))


class _Window(NamedTuple):
    idx: np.ndarray  # (Q, W) event indices, 0 where masked
    mask: np.ndarray  # (Q, W)
    dt: np.ndarray  # (Q, W) t_q - t_j, 0 where masked


def _window(times: np.ndarray, tq: np.ndarray, nu: float, cutoff=None) -> _Window:
    upper = tq if cutoff is None else np.minimum(tq, cutoff)
    lo = np.searchsorted(times, tq - nu, side="left")
    hi = np.maximum(np.searchsorted(times, upper, side="left"), lo)
    width = int((hi - lo).max(initial=0))
    idx = lo[:, None] + np.arange(width)[None, :]
    mask = idx < hi[:, None]
    idx = np.where(mask, idx, 0)
    dt = np.where(mask, tq[:, None] - times[idx] if len(times) else 0.0, 0.0)
    return _Window(idx, mask, dt)


class History(NamedTuple):
    """Sorted event arrays plus cached tree scores at the event locations."""

    times: np.ndarray
    locs: np.ndarray
    rho: np.ndarray

    @classmethod
    def build(cls, model: Model, times, locs) -> "History":
        times = np.asarray(times, dtype=float).reshape(-1)
        locs = np.asarray(locs, dtype=float).reshape(-1, 2)
        rho = scores(model.tree, locs) if len(locs) else np.zeros((0, model.K))
        return cls(times, locs, rho)


def as_history(model: Model, hist) -> History:
    if isinstance(hist, History):
        return hist
    if isinstance(hist, EventSequence):
        return History.build(model, hist.times, hist.locs)
    arr = np.array([tuple(e) for e in hist], dtype=float).reshape(-1, 3)
    order = np.argsort(arr[:, 0], kind="stable")
    return History.build(model, arr[order, 0], arr[order, 1:])


class _Raw(NamedTuple):
    lam: np.ndarray  # (Q, K)
    win: _Window
    decay: np.ndarray | None  # (Q, W, K)
    excite: np.ndarray | None  # (Q, K, K) A[q, k, i]


def _raw(model: Model, tq: np.ndarray, hist: History, cutoff=None, keep=False) -> _Raw:
    tq = np.asarray(tq, dtype=float).reshape(-1)
    win = _window(hist.times, tq, model.nu, cutoff)
    kind = model.kind
    K = model.K
    if isinstance(kind, Poisson):
        return _Raw(np.full((len(tq), K), kind.rate), win, None, None)
    if isinstance(kind, SelfCorrecting):
        n = win.mask.sum(axis=1)
        lam = (kind.mu * tq - kind.alpha * n)[:, None] * np.ones(K)
        return _Raw(lam, win, None, None)
    gamma = kind.gamma
    decay = np.exp(-gamma[None, None, :] * win.dt[:, :, None]) * win.mask[:, :, None]
    if len(hist.times):
        excite = np.matmul(decay.transpose(0, 2, 1), hist.rho[win.idx])
    else:
        excite = np.zeros((len(tq), K, K))
    lam = kind.mu[None, :] + (excite * kind.Gamma.T[None]).sum(axis=2)
    return _Raw(lam, win, decay if keep else None, excite if keep else None)


def raw_intensities(model: Model, tq, hist, cutoff=None) -> np.ndarray:
    """Raw subregion intensities at times ``tq``; shape (Q, K)."""
    return _raw(model, tq, as_history(model, hist), cutoff).lam


def raw_subregion_intensities(model: Model, t: float, hist) -> np.ndarray:
    """K-vector of raw intensities at a single time; every history event must precede t."""
    h = as_history(model, hist)
    if len(h.times) and np.max(h.times) >= t:
        raise ValueError("history contains events at or after the evaluation time")
    return raw_intensities(model, np.array([t]), h)[0]


def intensities(model: Model, tq, lq, hist, cutoff=None) -> np.ndarray:
    """Softplus-mixed intensity at paired query points (tq[i], lq[i])."""
    h = as_history(model, hist)
    lam = raw_intensities(model, tq, h, cutoff)
    rho = scores(model.tree, np.asarray(lq, dtype=float).reshape(-1, 2))
    return softplus(np.einsum("qk,qk->q", rho, lam))


def intensity_at(model: Model, t: float, l, hist) -> float:
    lam = raw_subregion_intensities(model, t, hist)
    return float(softplus(scores(model.tree, np.asarray(l, dtype=float)) @ lam))


def intensity_vjp(model: Model, tq, lq, hist, cotangent, cutoff=None) -> dict[str, np.ndarray]:
    """Gradient of ``sum_q cotangent[q] * lambda(tq[q], lq[q])`` w.r.t. every parameter.

    Covers the tree parameters both through the query scores and through the
    scores of the history events that feed the interaction term.
    """
    if not isinstance(model.kind, HawkesParams):
        raise TypeError("parameter gradients are defined for Hawkes models")
    h = as_history(model, hist)
    tq = np.asarray(tq, dtype=float).reshape(-1)
    lq = np.asarray(lq, dtype=float).reshape(-1, 2)
    cot = np.broadcast_to(np.asarray(cotangent, dtype=float), tq.shape)
    kind = model.kind
    raw = _raw(model, tq, h, cutoff, keep=True)
    rho_q = scores(model.tree, lq)
    z = np.einsum("qk,qk->q", rho_q, raw.lam)
    s = cot * expit(z)  # cotangent on the mixed pre-softplus value
    u = s[:, None] * rho_q  # cotangent on lam_raw, (Q, K)

    g_mu = u.sum(axis=0)
    g_Gamma = (u[:, :, None] * raw.excite).sum(axis=0).T
    win = raw.win
    gw, gb = tree_vjp(model.tree, lq, s[:, None] * raw.lam)
    if len(h.times) and win.mask.any():
        # excitation of subregion k by each window event, and its gamma_k derivative
        per_event = np.matmul(h.rho[win.idx], kind.Gamma)  # (Q, W, K)
        ud = u[:, None, :] * raw.decay
        g_gamma = -np.einsum("qw,qwk->k", win.dt, ud * per_event) * expit(kind.gamma_raw)
        contrib = np.matmul(ud, kind.Gamma.T)  # cotangent on each window event's scores
        flat = win.idx[win.mask]
        vals = contrib[win.mask]
        g_rho = np.stack([np.bincount(flat, vals[:, i], minlength=len(h.times)) for i in range(model.K)], axis=1)
        used = np.unique(flat)
        hw, hb = tree_vjp(model.tree, h.locs[used], g_rho[used])
        gw = gw + hw
        gb = gb + hb
    else:
        g_gamma = np.zeros(model.K)
    return {"mu": g_mu, "gamma_raw": g_gamma, "Gamma": g_Gamma, "w": gw, "b": gb}


def intensity_param_gradients(model: Model, t: float, l, hist) -> dict[str, np.ndarray]:
    """Exact partials of lambda(t, l | hist) w.r.t. (mu, gamma_raw, Gamma, w, b)."""
    h = as_history(model, hist)
    if len(h.times) and np.max(h.times) >= t:
        raise ValueError("history contains events at or after the evaluation time")
    return intensity_vjp(model, np.array([t]), np.asarray(l, dtype=float).reshape(1, 2), h, 1.0)


def hawkes_model(tree: DecisionTree, mu, gamma, Gamma, nu: float) -> Model:
    """Convenience constructor taking the decay rates directly."""
    return Model(tree, HawkesParams.from_decay(mu, gamma, Gamma), nu)


def single_region_tree() -> DecisionTree:
    return DecisionTree(0, np.zeros((0, 2)), np.zeros(0))


__all__ = [
    "Event", "HawkesParams", "Poisson", "SelfCorrecting", "Model", "History",
    "softplus", "softplus_inv", "raw_intensities", "raw_subregion_intensities",
    "intensities", "intensity_at", "intensity_vjp", "intensity_param_gradients",
    "hawkes_model", "single_region_tree", "as_history",
]
