"""Regression tree for characterizing who carries the benefit scores.

A small CART-style tree regressed on the per-subject benefit
probabilities splits the cohort into groups with similar scores, which
reads as a clinical description of who is likely to survive long enough
for a lagged treatment effect to matter.

Splitting is exhaustive: every feature and every midpoint between
consecutive distinct values is scored by the reduction in the sum of
squares, and the best reduction wins.  Ties go to the lowest feature
index, then the lowest threshold.  Rows with feature value strictly
below the threshold go left; equal values go right.  A split is
accepted only when both children keep ``min_leaf`` rows and the
reduction is at least ``cp`` times the root sum of squares.

Gains are compared in exact rational arithmetic.  Two distinct features
often induce the same row partition, and with float accumulation the
summation order then decides the winner instead of the declared
tie-break, so the fitted tree would depend on column order.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import DataError

__all__ = [
    "TreeConfig",
    "TreeNode",
    "RegressionTree",
    "fit_regression_tree",
    "summarize_leaves",
]


@dataclass(frozen=True)
class TreeConfig:
    min_leaf: int = 20
    max_depth: int = 4
    cp: float = 0.01

    def __post_init__(self):
        if self.min_leaf < 1:
            raise DataError("min_leaf must be >= 1")
        if self.max_depth < 0:
            raise DataError("max_depth must be >= 0")
        if self.cp < 0:
            raise DataError("cp must be >= 0")


@dataclass
class TreeNode:
    """Internal node (feature/threshold set) or leaf (indices set)."""

    mean: float
    n: int
    feature: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    indices: Optional[np.ndarray] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass
class RegressionTree:
    root: TreeNode
    root_ss: float
    n: int
    feature_names: tuple[str, ...]
    config: TreeConfig

    def predict_one(self, x) -> float:
        x = np.asarray(x, dtype=float).ravel()
        node = self.root
        while not node.is_leaf:
            node = node.left if x[node.feature] < node.threshold else node.right
        return node.mean

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        return np.array([self.predict_one(row) for row in x])

    def leaves(self) -> list[TreeNode]:
        out = []

        def walk(node):
            if node.is_leaf:
                out.append(node)
            else:
                walk(node.left)
                walk(node.right)

        walk(self.root)
        return out

    def to_dict(self) -> dict:
        def encode(node):
            if node.is_leaf:
                return {"mean": node.mean, "n": node.n}
            return {
                "feature": self.feature_names[node.feature],
                "feature_index": node.feature,
                "threshold": node.threshold,
                "left": encode(node.left),
                "right": encode(node.right),
            }

        return {
            "n": self.n,
            "root_ss": self.root_ss,
            "config": {
                "min_leaf": self.config.min_leaf,
                "max_depth": self.config.max_depth,
                "cp": self.config.cp,
            },
            "tree": encode(self.root),
        }


def _node_ss(y) -> float:
    return float(np.sum((y - y.mean()) ** 2)) if y.size else 0.0


def _best_split(x, y_frac, idx, min_leaf):
    """Best (gain, feature, threshold) over all candidate splits.

    Gains are prefix sums over each feature's sort order, accumulated as
    exact rationals; candidates exist only between consecutive distinct
    values.  The returned gain is the exact sum-of-squares reduction.
    """
    best = None
    n = idx.size
    vals = [y_frac[i] for i in idx]
    total = sum(vals, Fraction(0))
    parent_score = total * total / n
    for j in range(x.shape[1]):
        xs = x[idx, j]
        order = np.argsort(xs, kind="stable")
        xs_sorted = xs[order]
        left_sum = Fraction(0)
        for k in range(1, n):
            left_sum += vals[order[k - 1]]
            if xs_sorted[k - 1] >= xs_sorted[k]:
                continue
            if k < min_leaf or n - k < min_leaf:
                continue
            right_sum = total - left_sum
            gain = (
                left_sum * left_sum / k
                + right_sum * right_sum / (n - k)
                - parent_score
            )
            if best is None or gain > best[0]:
                thr = 0.5 * (xs_sorted[k - 1] + xs_sorted[k])
                best = (gain, j, float(thr))
    return best


def fit_regression_tree(
    features,
    response,
    cfg: TreeConfig | None = None,
    feature_names: tuple[str, ...] | None = None,
) -> RegressionTree:
    """Grow the tree greedily; each node's split search is exhaustive."""
    cfg = cfg or TreeConfig()
    x = np.asarray(features, dtype=float)
    y = np.asarray(response, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise DataError("features must be (n, d) and response (n,)")
    if x.shape[0] == 0:
        raise DataError("empty training set")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DataError("features and response must be finite")
    if feature_names is None:
        feature_names = tuple(f"x{j + 1}" for j in range(x.shape[1]))
    if len(feature_names) != x.shape[1]:
        raise DataError("feature_names length does not match feature count")
    root_ss = _node_ss(y)
    y_frac = [Fraction(v) for v in y.tolist()]
    total = sum(y_frac, Fraction(0))
    # exact counterpart of root_ss, so the cp rule never flips on an ulp
    root_ss_exact = sum((v * v for v in y_frac), Fraction(0)) - total * total / y.size
    min_gain = Fraction(cfg.cp) * root_ss_exact

    def grow(idx, depth):
        node = TreeNode(mean=float(y[idx].mean()), n=idx.size, indices=idx)
        if depth >= cfg.max_depth or idx.size < 2 * cfg.min_leaf:
            return node
        found = _best_split(x, y_frac, idx, cfg.min_leaf)
        if found is None:
            return node
        gain, j, thr = found
        if gain <= 0 or gain < min_gain:
            return node
        mask = x[idx, j] < thr
        node.feature = j
        node.threshold = thr
        node.indices = None
        node.left = grow(idx[mask], depth + 1)
        node.right = grow(idx[~mask], depth + 1)
        return node

    root = grow(np.arange(x.shape[0]), 0)
    return RegressionTree(root, root_ss, x.shape[0], tuple(feature_names), cfg)


def summarize_leaves(tree: RegressionTree, response, event=None) -> list[dict]:
    """Per-leaf table ordered by leaf mean, lowest first.

    Quartiles use linear interpolation between order statistics (the
    numpy default).  Leaves are labeled A, B, ... in mean order.
    """
    y = np.asarray(response, dtype=float)
    flags = None if event is None else np.asarray(event, dtype=int)
    rows = []
    for leaf in sorted(tree.leaves(), key=lambda nd: nd.mean):
        vals = y[leaf.indices]
        q = np.percentile(vals, (0, 25, 50, 75, 100))
        row = {
            "label": chr(ord("A") + len(rows)),
            "n": int(leaf.n),
            "mean": float(leaf.mean),
            "min": float(q[0]),
            "q1": float(q[1]),
            "median": float(q[2]),
            "q3": float(q[3]),
            "max": float(q[4]),
        }
        if flags is not None:
            row["events"] = int(flags[leaf.indices].sum())
        rows.append(row)
    return rows
