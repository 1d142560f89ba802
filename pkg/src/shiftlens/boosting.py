"""Gradient-boosted trees for binary targets, second-order (Newton) updates.

Each round fits a regression tree to the logistic-loss gradients and
hessians. Split quality is the standard regularized gain

    0.5 * (GL^2/(HL+lam) + GR^2/(HR+lam) - (GL+GR)^2/(HL+HR+lam))

with splits rejected unless the gain is strictly positive and both
children carry at least ``min_child_hessian`` hessian mass. Leaf values
are -G/(H+lam) scaled by the learning rate. Missing values follow a
per-split learned direction (the routing whose gain is higher; right on
ties). Ties across splits resolve to the lowest feature index, then the
lowest threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .kernels import best_split_logistic
from .treebase import build_orders, partition_orders, seq_sum, split_mask

__all__ = ["GBTConfig", "GBTree", "GBTModel", "train_gbt", "sigmoid", "log_loss"]

_MARGIN_CLIP = 30.0  # keeps sigmoid output strictly inside (0, 1) in float64


def sigmoid(margin: np.ndarray) -> np.ndarray:
    m = np.clip(margin, -_MARGIN_CLIP, _MARGIN_CLIP)
    return 1.0 / (1.0 + np.exp(-m))


def log_loss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, 1e-15, 1.0 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


@dataclass(frozen=True)
class GBTConfig:
    n_rounds: int = 200
    max_depth: int = 6
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    min_child_hessian: float = 1.0
    holdout_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_rounds < 1:
            raise ValidationError("n_rounds must be >= 1")
        if self.max_depth < 1:
            raise ValidationError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValidationError("learning_rate must be in (0, 1]")
        if self.reg_lambda < 0.0:
            raise ValidationError("reg_lambda must be >= 0")
        if self.min_child_hessian < 0.0:
            raise ValidationError("min_child_hessian must be >= 0")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValidationError("holdout_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "n_rounds": self.n_rounds,
            "max_depth": self.max_depth,
            "learning_rate": self.learning_rate,
            "reg_lambda": self.reg_lambda,
            "min_child_hessian": self.min_child_hessian,
            "holdout_fraction": self.holdout_fraction,
            "seed": self.seed,
        }


class GBTree:
    """One regression tree stored as parallel node arrays.

    ``feature[i] == -1`` marks a leaf; only leaves carry values.
    """

    __slots__ = ("feature", "threshold", "missing_left", "left", "right", "value", "gain")

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.missing_left: list[bool] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.gain: list[float] = []

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.missing_left.append(False)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.gain.append(0.0)
        return len(self.feature) - 1

    def finalize(self) -> None:
        self.feature = np.asarray(self.feature, dtype=np.int32)
        self.threshold = np.asarray(self.threshold, dtype=np.float64)
        self.missing_left = np.asarray(self.missing_left, dtype=bool)
        self.left = np.asarray(self.left, dtype=np.int32)
        self.right = np.asarray(self.right, dtype=np.int32)
        self.value = np.asarray(self.value, dtype=np.float64)
        self.gain = np.asarray(self.gain, dtype=np.float64)

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        idx = np.zeros(n, dtype=np.int32)
        rows = np.arange(n)
        while True:
            feats = self.feature[idx]
            split = feats >= 0
            if not split.any():
                break
            safe_feats = np.where(split, feats, 0)
            vals = X[rows, safe_feats]
            nan = np.isnan(vals)
            with np.errstate(invalid="ignore"):
                go_left = vals <= self.threshold[idx]
            go_left = np.where(nan, self.missing_left[idx], go_left)
            nxt = np.where(go_left, self.left[idx], self.right[idx])
            idx = np.where(split, nxt, idx)
        return self.value[idx]


def _grow_tree(X, g, h, root_order, config) -> tuple[GBTree, np.ndarray, dict[int, float]]:
    """Returns (tree, per-row leaf value, feature -> summed gain)."""
    n = X.shape[0]
    tree = GBTree()
    contrib = np.zeros(n, dtype=np.float64)
    gains: dict[int, float] = {}
    lookup = np.zeros(n, dtype=bool)
    rows0 = np.arange(n, dtype=np.int64)

    stack = [(tree.add_node(), rows0, root_order, 0)]
    while stack:
        node, rows, order, depth = stack.pop()
        G = seq_sum(g, rows)
        H = seq_sum(h, rows)
        feat = -1
        if depth < config.max_depth and len(rows) >= 2:
            feat, thr, miss_left, gain = best_split_logistic(
                X, order, g, h, config.reg_lambda, config.min_child_hessian
            )
        if feat < 0:
            value = -G / (H + config.reg_lambda) * config.learning_rate
            tree.value[node] = value
            contrib[rows] = value
            continue
        tree.feature[node] = feat
        tree.threshold[node] = thr
        tree.missing_left[node] = bool(miss_left)
        tree.gain[node] = gain
        gains[feat] = gains.get(feat, 0.0) + gain
        go_left = split_mask(X, rows, feat, thr, bool(miss_left))
        lookup[rows] = go_left
        order_l, order_r = partition_orders(order, lookup)
        left_id = tree.add_node()
        right_id = tree.add_node()
        tree.left[node] = left_id
        tree.right[node] = right_id
        stack.append((right_id, rows[~go_left], order_r, depth + 1))
        stack.append((left_id, rows[go_left], order_l, depth + 1))
    tree.finalize()
    return tree, contrib, gains


def _stratified_split(y: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic stratified holdout; classes with a single row stay in train."""
    rng = np.random.default_rng(seed)
    hold: list[np.ndarray] = []
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        k = int(round(fraction * len(idx)))
        if len(idx) - k < 1:
            k = len(idx) - 1
        if k <= 0:
            continue
        perm = rng.permutation(len(idx))
        hold.append(idx[perm[:k]])
    holdout = np.sort(np.concatenate(hold)) if hold else np.empty(0, dtype=np.int64)
    mask = np.ones(len(y), dtype=bool)
    mask[holdout] = False
    return np.flatnonzero(mask), holdout


@dataclass
class GBTModel:
    feature_names: list[str]
    config: GBTConfig
    base_score: float
    trees: list[GBTree]
    train_losses: list[float]
    holdout_accuracy: float | None
    holdout_size: int
    gain_importance: dict[str, float] = field(default_factory=dict)

    def _check_matrix(self, X: np.ndarray, feature_names: list[str] | None) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise ValidationError(
                f"matrix has {X.shape[1] if X.ndim == 2 else '?'} columns, "
                f"model expects {len(self.feature_names)}"
            )
        if feature_names is not None and list(feature_names) != self.feature_names:
            raise ValidationError("feature names do not match the trained model")
        return X

    def predict_margin(self, X: np.ndarray, feature_names: list[str] | None = None) -> np.ndarray:
        X = self._check_matrix(X, feature_names)
        out = np.full(X.shape[0], self.base_score, dtype=np.float64)
        for tree in self.trees:
            out += tree.predict_value(X)
        return out

    def predict_proba(self, X: np.ndarray, feature_names: list[str] | None = None) -> np.ndarray:
        """P(y=1) per row, strictly inside (0, 1)."""
        return sigmoid(self.predict_margin(X, feature_names))

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "feature_names": self.feature_names,
            "config": self.config.to_dict(),
            "base_score": repr(self.base_score),
            "train_losses": [repr(v) for v in self.train_losses],
            "holdout_accuracy": None if self.holdout_accuracy is None else repr(self.holdout_accuracy),
            "holdout_size": self.holdout_size,
            "gain_importance": {k: repr(v) for k, v in self.gain_importance.items()},
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": [repr(v) for v in t.threshold.tolist()],
                    "missing_left": [int(b) for b in t.missing_left.tolist()],
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": [repr(v) for v in t.value.tolist()],
                    "gain": [repr(v) for v in t.gain.tolist()],
                }
                for t in self.trees
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "GBTModel":
        if d.get("format_version") != 1:
            raise ValidationError("unsupported model format")
        trees = []
        for td in d["trees"]:
            t = GBTree()
            t.feature = td["feature"]
            t.threshold = [float(v) for v in td["threshold"]]
            t.missing_left = [bool(b) for b in td["missing_left"]]
            t.left = td["left"]
            t.right = td["right"]
            t.value = [float(v) for v in td["value"]]
            t.gain = [float(v) for v in td["gain"]]
            t.finalize()
            trees.append(t)
        return cls(
            feature_names=list(d["feature_names"]),
            config=GBTConfig(**d["config"]),
            base_score=float(d["base_score"]),
            trees=trees,
            train_losses=[float(v) for v in d["train_losses"]],
            holdout_accuracy=None if d["holdout_accuracy"] is None else float(d["holdout_accuracy"]),
            holdout_size=int(d["holdout_size"]),
            gain_importance={k: float(v) for k, v in d["gain_importance"].items()},
        )

    @classmethod
    def from_json(cls, s: str) -> "GBTModel":
        return cls.from_dict(json.loads(s))


def train_gbt(X: np.ndarray, y: np.ndarray, config: GBTConfig,
              feature_names: list[str]) -> GBTModel:
    """Fit a boosted model; reported accuracy comes from a stratified holdout.

    Requires both classes present. ``train_losses`` holds the full-train
    logistic loss before boosting and after each round.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2:
        raise ValidationError("X must be 2-D")
    if y.shape != (X.shape[0],):
        raise ValidationError("y length must match X rows")
    if not np.isin(y, (0, 1)).all():
        raise ValidationError("y must be binary 0/1")
    if len(feature_names) != X.shape[1]:
        raise ValidationError("feature_names length must match X columns")
    y = y.astype(np.float64)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValidationError("training requires both classes present in y")

    train_idx, hold_idx = _stratified_split(y, config.holdout_fraction, config.seed)
    Xt = np.ascontiguousarray(X[train_idx])
    yt = y[train_idx]

    mean = float(yt.mean())
    base_score = math.log(mean / (1.0 - mean))
    margins = np.full(len(yt), base_score, dtype=np.float64)
    root_order = build_orders(Xt)

    trees: list[GBTree] = []
    losses = [log_loss(yt, sigmoid(margins))]
    importance: dict[int, float] = {}
    for _ in range(config.n_rounds):
        p = sigmoid(margins)
        g = p - yt
        h = p * (1.0 - p)
        tree, contrib, gains = _grow_tree(Xt, g, h, root_order, config)
        margins += contrib
        for f, v in gains.items():
            importance[f] = importance.get(f, 0.0) + v
        trees.append(tree)
        losses.append(log_loss(yt, sigmoid(margins)))

    model = GBTModel(
        feature_names=list(feature_names),
        config=config,
        base_score=base_score,
        trees=trees,
        train_losses=losses,
        holdout_accuracy=None,
        holdout_size=len(hold_idx),
        gain_importance={feature_names[f]: v for f, v in sorted(importance.items())},
    )
    if len(hold_idx):
        ph = model.predict_proba(X[hold_idx])
        model.holdout_accuracy = float(np.mean((ph > 0.5) == (y[hold_idx] == 1.0)))
    return model
