"""Soft binary decision tree over 2-D locations.

Nodes are stored breadth-first: node ``r`` has children ``2r + 1`` (left)
and ``2r + 2`` (right). Leaf ``k`` is reached by reading the bits of ``k``
from the most significant end, 0 meaning "left". A node's decision is
``sigmoid(w . l - b)``; the left child receives that score and the right
child its complement.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit


@dataclass(frozen=True, eq=False)
class DecisionTree:
    depth: int
    w: np.ndarray  # (R, 2)
    b: np.ndarray  # (R,)

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be nonnegative")
        w = np.array(self.w, dtype=float).reshape(-1, 2)
        b = np.array(self.b, dtype=float).reshape(-1)
        if len(w) != self.n_nodes or len(b) != self.n_nodes:
            raise ValueError(f"depth {self.depth} tree needs {self.n_nodes} nodes, got {len(w)}/{len(b)}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite tree parameters")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)

    @property
    def n_nodes(self) -> int:
        return 2 ** self.depth - 1

    @property
    def n_leaves(self) -> int:
        return 2 ** self.depth

    @classmethod
    def random(cls, depth: int, rng: np.random.Generator, locs: np.ndarray | None = None,
               sharpness: float = 2.0) -> "DecisionTree":
        """Random hyperplanes through the median of ``locs``.

        Weights are scaled so the node activation has standard deviation
        ``sharpness`` over ``locs``, which keeps the initial splits equally soft
        whatever the coordinate units are. Without ``locs`` the raw uniform
        draws in [-1, 1] are used.
        """
        r = 2 ** depth - 1
        w = rng.uniform(-1.0, 1.0, size=(r, 2))
        if locs is None or len(locs) == 0:
            return cls(depth, w, np.zeros(r))
        locs = np.asarray(locs, dtype=float)
        spread = np.std(locs @ w.T, axis=0)
        w = w * np.where(spread > 0, sharpness / np.where(spread > 0, spread, 1.0), 1.0)[:, None]
        b = w @ np.median(locs, axis=0) + 0.1 * sharpness * rng.standard_normal(r)
        return cls(depth, w, b)


@lru_cache(maxsize=None)
def path_masks(depth: int) -> tuple[np.ndarray, np.ndarray]:
    """(left, right) indicator matrices of shape (K, R): node r on the path to leaf k."""
    k_leaves, r_nodes = 2 ** depth, 2 ** depth - 1
    left = np.zeros((k_leaves, r_nodes))
    right = np.zeros((k_leaves, r_nodes))
    for k in range(k_leaves):
        node = 0
        for level in range(depth):
            bit = (k >> (depth - 1 - level)) & 1
            (right if bit else left)[k, node] = 1.0
            node = 2 * node + 1 + bit
    left.setflags(write=False)
    right.setflags(write=False)
    return left, right


def node_sigmoids(tree: DecisionTree, locs: np.ndarray) -> np.ndarray:
    locs = np.atleast_2d(np.asarray(locs, dtype=float))
    return expit(locs @ tree.w.T - tree.b)


def scores(tree: DecisionTree, locs: np.ndarray) -> np.ndarray:
    """Subregion score vectors; shape (K,) for one location or (N, K) for many."""
    locs = np.asarray(locs, dtype=float)
    single = locs.ndim == 1
    locs = np.atleast_2d(locs)
    sig = node_sigmoids(tree, locs)
    rho = np.ones((len(locs), 1))
    for level in range(tree.depth):
        s = sig[:, 2 ** level - 1: 2 ** (level + 1) - 1]
        rho = np.stack([rho * s, rho * (1.0 - s)], axis=2).reshape(len(locs), -1)
    return rho[0] if single else rho


def hard_assign(tree: DecisionTree, locs: np.ndarray):
    """Index of the highest-scoring leaf; ties go to the lowest index."""
    return np.argmax(scores(tree, locs), axis=-1)


def sign_rule_leaf(tree: DecisionTree, locs: np.ndarray) -> np.ndarray:
    """Leaf reached by hard sign decisions (positive -> left)."""
    locs = np.atleast_2d(np.asarray(locs, dtype=float))
    act = locs @ tree.w.T - tree.b
    node = np.zeros(len(locs), dtype=int)
    leaf = np.zeros(len(locs), dtype=int)
    for _ in range(tree.depth):
        bit = (act[np.arange(len(locs)), node] < 0).astype(int)
        leaf = 2 * leaf + bit
        node = 2 * node + 1 + bit
    return leaf


def _activation_partials(tree: DecisionTree, locs: np.ndarray):
    """d rho_k / d a_r with a_r = w_r . l - b_r, shape (N, K, R); also rho."""
    sig = node_sigmoids(tree, locs)
    rho = scores(tree, locs) if tree.depth else np.ones((len(locs), 1))
    left, right = path_masks(tree.depth)
    factor = left[None] * (1.0 - sig[:, None, :]) - right[None] * sig[:, None, :]
    return rho[:, :, None] * factor, rho


def score_jacobian(tree: DecisionTree, loc) -> tuple[np.ndarray, np.ndarray]:
    """Partials of every score at one location.

    Returns ``(dw, db)`` with ``dw[k, r] = d rho_k / d w_r`` (shape (K, R, 2))
    and ``db[k, r] = d rho_k / d b_r`` (shape (K, R)).
    """
    loc = np.asarray(loc, dtype=float).reshape(1, 2)
    da, _ = _activation_partials(tree, loc)
    da = da[0]
    return da[:, :, None] * loc[0], -da


def tree_vjp(tree: DecisionTree, locs: np.ndarray, cotangent: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``sum(cotangent * scores(locs))`` w.r.t. (w, b)."""
    locs = np.atleast_2d(np.asarray(locs, dtype=float))
    if tree.depth == 0 or len(locs) == 0:
        return np.zeros_like(tree.w), np.zeros_like(tree.b)
    da, _ = _activation_partials(tree, locs)
    ga = np.einsum("nk,nkr->nr", cotangent, da)
    return ga.T @ locs, -ga.sum(axis=0)
