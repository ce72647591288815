"""Weighted CART regression trees and the AdaBoost.R2 ensemble.

The ensemble supports a frozen-instance mask: frozen rows participate in
tree fitting and in the weighted error, but their sample weights are never
touched by the boosting reweighting. This is the inner loop of the two-stage
instance-transfer procedure, where source-domain rows stay frozen.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .core import RampTransferError

MODEL_FORMAT_VERSION = 1

# Beta clamp when a round achieves zero adjusted error; keeps ln(1/beta)
# finite while giving the perfect round dominant median weight.
_BETA_FLOOR = 1e-10
_BETA_CEIL = 1.0 - 1e-10


class AllWeightsZero(RampTransferError):
    pass


class NoUnfrozenInstances(RampTransferError):
    pass


@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: Optional["_Node"] = None
    right: Optional["_Node"] = None
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"value": self.value}
        return {"feature": self.feature, "threshold": self.threshold,
                "left": self.left.to_dict(), "right": self.right.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "_Node":
        if "value" in doc:
            return cls(value=float(doc["value"]))
        return cls(feature=int(doc["feature"]),
                   threshold=float(doc["threshold"]),
                   left=cls.from_dict(doc["left"]),
                   right=cls.from_dict(doc["right"]))


@dataclass
class RegressionTree:
    """Binary CART tree; leaves predict the weighted mean of their rows."""

    root: _Node
    max_depth: int
    min_leaf_weight: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(X.shape[0])
        self._predict_into(self.root, X, np.arange(X.shape[0]), out)
        return out

    def _predict_into(self, node, X, indices, out):
        if node.is_leaf:
            out[indices] = node.value
            return
        go_left = X[indices, node.feature] <= node.threshold
        self._predict_into(node.left, X, indices[go_left], out)
        self._predict_into(node.right, X, indices[~go_left], out)

    def to_dict(self) -> dict:
        return {"max_depth": self.max_depth,
                "min_leaf_weight": self.min_leaf_weight,
                "root": self.root.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "RegressionTree":
        return cls(root=_Node.from_dict(doc["root"]),
                   max_depth=int(doc["max_depth"]),
                   min_leaf_weight=float(doc["min_leaf_weight"]))


def _best_split(X, y, w, min_leaf_weight):
    """Deterministic best weighted-variance-reduction split, or None.

    Scanning features in index order and thresholds in ascending order with a
    strictly-greater gain comparison breaks ties toward the lowest feature
    index and the smallest threshold.
    """
    total_w = w.sum()
    total_wy = (w * y).sum()
    total_wyy = (w * y * y).sum()
    parent_sse = total_wyy - total_wy ** 2 / total_w
    best = None
    best_gain = 1e-12
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        ws = w[order]
        wys = ws * y[order]
        cw = np.cumsum(ws)
        cwy = np.cumsum(wys)
        cwyy = np.cumsum(wys * y[order])
        # candidate split after position i-1 (left = first i rows)
        boundary = xs[:-1] < xs[1:]
        if not boundary.any():
            continue
        i = np.nonzero(boundary)[0] + 1
        lw, rw = cw[i - 1], total_w - cw[i - 1]
        valid = (lw >= min_leaf_weight) & (rw >= min_leaf_weight)
        if not valid.any():
            continue
        i = i[valid]
        lw, rw = lw[valid], rw[valid]
        lwy = cwy[i - 1]
        lwyy = cwyy[i - 1]
        left_sse = lwyy - lwy ** 2 / lw
        right_sse = (total_wyy - lwyy) - (total_wy - lwy) ** 2 / rw
        gains = parent_sse - left_sse - right_sse
        k = int(np.argmax(gains))
        if gains[k] > best_gain:
            best_gain = float(gains[k])
            threshold = (xs[i[k] - 1] + xs[i[k]]) / 2.0
            best = (j, float(threshold))
    return best


def _build(X, y, w, depth, max_depth, min_leaf_weight):
    node = _Node(value=float((w * y).sum() / w.sum()))
    if depth >= max_depth or len(y) < 2:
        return node
    split = _best_split(X, y, w, min_leaf_weight)
    if split is None:
        return node
    j, threshold = split
    go_left = X[:, j] <= threshold
    node.feature = j
    node.threshold = threshold
    node.left = _build(X[go_left], y[go_left], w[go_left],
                       depth + 1, max_depth, min_leaf_weight)
    node.right = _build(X[~go_left], y[~go_left], w[~go_left],
                        depth + 1, max_depth, min_leaf_weight)
    return node


def tree_fit(X: np.ndarray, y: np.ndarray, weights: np.ndarray,
             max_depth: int = 5,
             min_leaf_weight: Optional[float] = None) -> RegressionTree:
    """Fit a weighted CART regression tree.

    Weights are normalized internally to total mass 1, so ``min_leaf_weight``
    is a mass fraction; the default 2/n forbids leaves lighter than two
    average rows. Zero-weight rows are dropped up front and cannot influence
    split placement.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    if (w < 0).any():
        raise ValueError("weights must be nonnegative")
    if w.sum() <= 0:
        raise AllWeightsZero("at least one positive weight required")
    keep = w > 0
    X, y, w = X[keep], y[keep], w[keep]
    w = w / w.sum()
    if min_leaf_weight is None:
        min_leaf_weight = 2.0 / len(y)
    root = _build(X, y, w, 0, max_depth, min_leaf_weight)
    return RegressionTree(root=root, max_depth=max_depth,
                          min_leaf_weight=min_leaf_weight)


def adjusted_errors(predictions: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Linear-loss adjusted errors: residuals scaled by the largest residual."""
    predictions = np.asarray(predictions, dtype=float)
    y = np.asarray(y, dtype=float)
    if predictions.shape != y.shape:
        raise ValueError("predictions and targets must have the same length")
    residuals = np.abs(predictions - y)
    denom = residuals.max() if len(residuals) else 0.0
    if denom == 0.0:
        return np.zeros_like(residuals)
    return residuals / denom


@dataclass
class R2Ensemble:
    """AdaBoost.R2 ensemble: trees plus their beta weights (all in (0,1))."""

    trees: list[RegressionTree]
    betas: list[float]

    def __post_init__(self):
        if not self.trees:
            raise ValueError("ensemble must be non-empty")
        if len(self.trees) != len(self.betas):
            raise ValueError("trees and betas must align")

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Weighted median of tree predictions under weights ln(1/beta)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        preds = np.column_stack([t.predict(X) for t in self.trees])
        return weighted_median(preds, np.log(1.0 / np.asarray(self.betas)))

    def to_dict(self) -> dict:
        return {"format_version": MODEL_FORMAT_VERSION,
                "trees": [t.to_dict() for t in self.trees],
                "betas": list(self.betas)}

    @classmethod
    def from_dict(cls, doc: dict) -> "R2Ensemble":
        return cls(trees=[RegressionTree.from_dict(t) for t in doc["trees"]],
                   betas=[float(b) for b in doc["betas"]])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "R2Ensemble":
        return cls.from_dict(json.loads(text))


def weighted_median(predictions: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-row smallest prediction whose cumulative weight reaches half the
    total, taken over predictions sorted ascending."""
    predictions = np.atleast_2d(predictions)
    order = np.argsort(predictions, axis=1, kind="stable")
    sorted_preds = np.take_along_axis(predictions, order, axis=1)
    cum = np.cumsum(weights[order], axis=1)
    half = cum[:, -1] / 2.0
    chosen = np.argmax(cum >= half[:, None], axis=1)
    return sorted_preds[np.arange(len(predictions)), chosen]


def ensemble_predict(ensemble: R2Ensemble,
                     X: np.ndarray) -> Union[float, np.ndarray]:
    out = ensemble.predict(X)
    return float(out[0]) if np.asarray(X).ndim == 1 else out


def adaboost_r2_fit(X: np.ndarray, y: np.ndarray,
                    init_weights: np.ndarray,
                    frozen: Optional[np.ndarray] = None,
                    n_estimators: int = 50,
                    max_depth: int = 5,
                    min_leaf_weight: Optional[float] = None
                    ) -> tuple[R2Ensemble, np.ndarray]:
    """Run AdaBoost.R2 without ever touching frozen rows' weights.

    Each round fits a tree on all rows under the current weights, computes
    the weighted adjusted error eps over all rows, stops when eps >= 0.5
    (discarding that tree unless it is the first), and multiplies only the
    unfrozen weights by beta**(1 - e), rescaling them so their total mass is
    preserved. Returns the ensemble and the final weight vector.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    w = np.array(init_weights, dtype=float, copy=True)
    if frozen is None:
        frozen = np.zeros(len(y), dtype=bool)
    else:
        frozen = np.asarray(frozen, dtype=bool)
    unfrozen = ~frozen
    if not unfrozen.any():
        raise NoUnfrozenInstances("at least one unfrozen instance required")

    trees: list[RegressionTree] = []
    betas: list[float] = []
    for k in range(n_estimators):
        tree = tree_fit(X, y, w, max_depth=max_depth,
                        min_leaf_weight=min_leaf_weight)
        e = adjusted_errors(tree.predict(X), y)
        eps = float((w * e).sum() / w.sum())
        if eps >= 0.5:
            if k == 0:
                # Sole estimator: keep it with beta clamped into (0,1).
                trees.append(tree)
                betas.append(_BETA_CEIL)
            break
        if eps == 0.0:
            trees.append(tree)
            betas.append(_BETA_FLOOR)
            break
        beta = eps / (1.0 - eps)
        trees.append(tree)
        betas.append(beta)
        pre_mass = w[unfrozen].sum()
        w[unfrozen] *= beta ** (1.0 - e[unfrozen])
        post_mass = w[unfrozen].sum()
        w[unfrozen] *= pre_mass / post_mass
    return R2Ensemble(trees=trees, betas=betas), w


class WeightedTreeRegressor(BaseEstimator, RegressorMixin):
    """Estimator wrapper around the weighted CART tree."""

    def __init__(self, max_depth: int = 5,
                 min_leaf_weight: Optional[float] = None):
        self.max_depth = max_depth
        self.min_leaf_weight = min_leaf_weight

    def fit(self, X, y, sample_weight=None):
        y = np.asarray(y, dtype=float)
        if sample_weight is None:
            sample_weight = np.ones(len(y))
        self.tree_ = tree_fit(X, y, sample_weight, max_depth=self.max_depth,
                              min_leaf_weight=self.min_leaf_weight)
        return self

    def predict(self, X):
        return self.tree_.predict(X)


class AdaBoostR2(BaseEstimator, RegressorMixin):
    """Estimator wrapper around ``adaboost_r2_fit``."""

    def __init__(self, n_estimators: int = 50, max_depth: int = 5,
                 min_leaf_weight: Optional[float] = None):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_leaf_weight = min_leaf_weight

    def fit(self, X, y, sample_weight=None, frozen=None):
        y = np.asarray(y, dtype=float)
        if sample_weight is None:
            sample_weight = np.full(len(y), 1.0 / len(y))
        self.ensemble_, self.sample_weight_ = adaboost_r2_fit(
            X, y, sample_weight, frozen=frozen,
            n_estimators=self.n_estimators, max_depth=self.max_depth,
            min_leaf_weight=self.min_leaf_weight)
        return self

    def predict(self, X):
        return self.ensemble_.predict(X)
