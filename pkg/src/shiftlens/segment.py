"""Weighted segmentation tree and the trade-off search over its weighting.

Rows are reweighted by w = p_shift / (p_shift + alpha * p_noise + 1e-9):
rows likely explained by noise lose influence as alpha grows. A shallow
class-weighted Gini tree is fit per alpha; each tree is scored by

    signal mass:  sum over leaves of (leaf weight mass) * (weighted mean p_shift)
    noise purity: 1 - |corr over leaves of (mean p_shift, mean p_noise)|

and the knee of the resulting trade-off frontier picks alpha. The final
segment is assembled greedily from class-1 leaves in descending mean
p_shift until the covered p_shift mass reaches a tau fraction of the
total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .kernels import best_split_gini
from .treebase import build_orders, partition_orders, seq_sum, split_mask

__all__ = [
    "WEIGHT_EPSILON",
    "compute_weights",
    "RuleCondition",
    "TreeLeaf",
    "WeightedTree",
    "fit_weighted_tree",
    "m_signal",
    "m_noise",
    "knee_point",
    "ParetoPoint",
    "weighted_tree_search",
    "Segment",
    "mass_greedy",
    "segment_mask_from_rules",
]

WEIGHT_EPSILON = 1e-9


def compute_weights(p_shift: np.ndarray, p_noise: np.ndarray, alpha: float) -> np.ndarray:
    """Per-row influence w_i = p_shift / (p_shift + alpha * p_noise + 1e-9).

    Always in [0, 1); 0 exactly when p_shift is 0; nonincreasing in alpha.
    """
    pc = np.asarray(p_shift, dtype=np.float64)
    pn = np.asarray(p_noise, dtype=np.float64)
    if pc.shape != pn.shape or pc.ndim != 1:
        raise ValidationError("probability vectors must be equal-length 1-D arrays")
    if not (np.isfinite(pc).all() and np.isfinite(pn).all()):
        raise ValidationError("probabilities must be finite")
    if (pc < 0).any() or (pc > 1).any() or (pn < 0).any() or (pn > 1).any():
        raise ValidationError("probabilities must lie in [0, 1]")
    if not (math.isfinite(alpha) and alpha > 0):
        raise ValidationError(f"alpha must be positive and finite, got {alpha}")
    return pc / (pc + alpha * pn + WEIGHT_EPSILON)


@dataclass(frozen=True)
class RuleCondition:
    """One decision along a root-to-leaf path, on an encoded feature column."""

    column: str
    op: str  # "<=" (went left) | ">" (went right)
    threshold: float
    missing_here: bool  # NaN rows are routed to this side

    def matches(self, values: np.ndarray) -> np.ndarray:
        nan = np.isnan(values)
        with np.errstate(invalid="ignore"):
            side = values <= self.threshold if self.op == "<=" else values > self.threshold
        return np.where(nan, self.missing_here, side)

    def to_dict(self) -> dict:
        return {
            "column": self.column,
            "op": self.op,
            "threshold": repr(self.threshold),
            "missing_here": self.missing_here,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RuleCondition":
        return cls(d["column"], d["op"], float(d["threshold"]), bool(d["missing_here"]))


@dataclass
class TreeLeaf:
    leaf_id: int  # creation (preorder) index, used as the final tie-break
    rows: np.ndarray
    class_label: int
    weight_mass: float
    mass_0: float  # effective class-0 mass (weight * class_weight)
    mass_1: float
    pc_mean: float | None
    pn_mean: float | None
    conditions: tuple[RuleCondition, ...]


class WeightedTree:
    """Depth-limited binary tree fit with per-row and per-class weights."""

    def __init__(self, feature_names: list[str], n_rows: int, max_depth: int,
                 class_weights: tuple[float, float]):
        self.feature_names = list(feature_names)
        self.n_rows = n_rows
        self.max_depth = max_depth
        self.class_weights = class_weights
        self.leaves: list[TreeLeaf] = []
        # parallel node arrays, feature -1 = leaf
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.missing_left: list[bool] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.leaf_ref: list[int] = []  # index into self.leaves, -1 for internal

    def predict_class(self, X: np.ndarray) -> np.ndarray:
        labels = np.zeros(X.shape[0], dtype=np.uint8)
        for leaf in self.leaves:
            mask = np.ones(X.shape[0], dtype=bool)
            for cond in leaf.conditions:
                mask &= cond.matches(X[:, self.feature_names.index(cond.column)])
            labels[mask] = leaf.class_label
        return labels

    def depth(self) -> int:
        return max((len(leaf.conditions) for leaf in self.leaves), default=0)


def fit_weighted_tree(
    X: np.ndarray,
    y: np.ndarray,
    sample_weights: np.ndarray,
    feature_names: list[str],
    max_depth: int = 5,
    class_weights: dict[int, float] | None = None,
    min_leaf_weight: float = 0.0,
    p_shift: np.ndarray | None = None,
    p_noise: np.ndarray | None = None,
) -> WeightedTree:
    """Grow a Gini tree where row i counts sample_weights[i] * class_weight[y_i].

    Splits must strictly decrease the weighted impurity. Leaf classes are
    the argmax of effective mass (ties -> 0). When p_shift/p_noise are
    given, each leaf also records their sample-weight-weighted means.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    w = np.asarray(sample_weights, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("X must be 2-D")
    n, p = X.shape
    if y.shape != (n,) or not np.isin(y, (0, 1)).all():
        raise ValidationError("y must be a binary 0/1 vector matching X rows")
    if w.shape != (n,):
        raise ValidationError("sample_weights length must match X rows")
    if not np.isfinite(w).all() or (w < 0).any():
        raise ValidationError("sample_weights must be finite and non-negative")
    if not (w > 0).any():
        raise ValidationError("all sample weights are zero")
    if len(feature_names) != p:
        raise ValidationError("feature_names length must match X columns")
    if max_depth < 0:
        raise ValidationError("max_depth must be >= 0")
    cw = {0: 1.0, 1: 10.0} if class_weights is None else {int(k): float(v) for k, v in class_weights.items()}
    if set(cw) != {0, 1} or min(cw.values()) < 0:
        raise ValidationError("class_weights must map classes 0 and 1 to non-negative weights")

    y01 = y.astype(np.float64)
    w0 = np.where(y01 == 0.0, w * cw[0], 0.0)
    w1 = np.where(y01 == 1.0, w * cw[1], 0.0)

    tree = WeightedTree(feature_names, n, max_depth, (cw[0], cw[1]))
    lookup = np.zeros(n, dtype=bool)
    root_order = build_orders(X)
    rows0 = np.arange(n, dtype=np.int64)

    def add_node() -> int:
        tree.feature.append(-1)
        tree.threshold.append(0.0)
        tree.missing_left.append(False)
        tree.left.append(-1)
        tree.right.append(-1)
        tree.leaf_ref.append(-1)
        return len(tree.feature) - 1

    stack = [(add_node(), rows0, root_order, 0, ())]
    while stack:
        node, rows, order, depth, conds = stack.pop()
        feat = -1
        if depth < max_depth and len(rows) >= 2:
            feat, thr, miss_left, _dec = best_split_gini(X, order, w0, w1, min_leaf_weight)
        if feat < 0:
            mass0 = seq_sum(w0, rows)
            mass1 = seq_sum(w1, rows)
            wmass = seq_sum(w, rows)
            pc_mean = pn_mean = None
            if p_shift is not None:
                pc_mean = seq_sum(w * np.asarray(p_shift, dtype=np.float64), rows)
                pc_mean = pc_mean / wmass if wmass > 0 else 0.0
            if p_noise is not None:
                pn_mean = seq_sum(w * np.asarray(p_noise, dtype=np.float64), rows)
                pn_mean = pn_mean / wmass if wmass > 0 else 0.0
            leaf = TreeLeaf(
                leaf_id=len(tree.leaves),
                rows=rows,
                class_label=1 if mass1 > mass0 else 0,
                weight_mass=wmass,
                mass_0=mass0,
                mass_1=mass1,
                pc_mean=pc_mean,
                pn_mean=pn_mean,
                conditions=conds,
            )
            tree.leaf_ref[node] = leaf.leaf_id
            tree.leaves.append(leaf)
            continue
        tree.feature[node] = feat
        tree.threshold[node] = thr
        tree.missing_left[node] = bool(miss_left)
        go_left = split_mask(X, rows, feat, thr, bool(miss_left))
        lookup[rows] = go_left
        order_l, order_r = partition_orders(order, lookup)
        left_id = add_node()
        right_id = add_node()
        tree.left[node] = left_id
        tree.right[node] = right_id
        name = feature_names[feat]
        cond_l = RuleCondition(name, "<=", thr, bool(miss_left))
        cond_r = RuleCondition(name, ">", thr, not bool(miss_left))
        stack.append((right_id, rows[~go_left], order_r, depth + 1, conds + (cond_r,)))
        stack.append((left_id, rows[go_left], order_l, depth + 1, conds + (cond_l,)))
    return tree


def _require_prob_stats(tree: WeightedTree) -> None:
    if any(leaf.pc_mean is None or leaf.pn_mean is None for leaf in tree.leaves):
        raise ValidationError("tree was fit without probability statistics")


def m_signal(tree: WeightedTree) -> float:
    """Sum over all leaves of weight mass times weighted mean p_shift."""
    _require_prob_stats(tree)
    return float(sum(leaf.weight_mass * leaf.pc_mean for leaf in tree.leaves))


def m_noise(tree: WeightedTree, weighted: bool = False) -> float:
    """1 - |correlation across leaves of (mean p_shift, mean p_noise)|.

    Fewer than two leaves, or zero variance on either axis, yields 1.0
    (no measurable coupling). ``weighted=True`` uses leaf weight mass as
    the correlation weight.
    """
    _require_prob_stats(tree)
    if len(tree.leaves) < 2:
        return 1.0
    a = np.array([leaf.pc_mean for leaf in tree.leaves], dtype=np.float64)
    b = np.array([leaf.pn_mean for leaf in tree.leaves], dtype=np.float64)
    if weighted:
        wts = np.array([leaf.weight_mass for leaf in tree.leaves], dtype=np.float64)
        total = wts.sum()
        if total <= 0:
            return 1.0
        wts = wts / total
        ma = float((wts * a).sum())
        mb = float((wts * b).sum())
        va = float((wts * (a - ma) ** 2).sum())
        vb = float((wts * (b - mb) ** 2).sum())
        if va <= 0.0 or vb <= 0.0:
            return 1.0
        cov = float((wts * (a - ma) * (b - mb)).sum())
        corr = cov / math.sqrt(va * vb)
    else:
        if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
            return 1.0
        corr = float(np.corrcoef(a, b)[0, 1])
    if not math.isfinite(corr):
        return 1.0
    return 1.0 - min(1.0, abs(corr))


# -- knee selection ----------------------------------------------------------

def knee_point(xs, ys, alphas) -> int:
    """Index of the knee of a maximize-maximize frontier.

    Dominated points are discarded; survivors are min-max normalized; the
    knee is the point farthest (perpendicular) from the chord joining the
    extreme survivors. Distance ties within 1e-9 relative resolve to the
    smallest alpha. Invariant under positive affine rescaling of either
    axis.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    al = np.asarray(alphas, dtype=np.float64)
    if not (len(xs) == len(ys) == len(al)) or len(xs) == 0:
        raise ValidationError("knee_point needs equal-length non-empty inputs")
    if not (np.isfinite(xs).all() and np.isfinite(ys).all() and np.isfinite(al).all()):
        raise ValidationError("knee_point inputs must be finite")

    n = len(xs)
    nondom = []
    for i in range(n):
        dominated = False
        for j in range(n):
            if i == j:
                continue
            if xs[j] >= xs[i] and ys[j] >= ys[i] and (xs[j] > xs[i] or ys[j] > ys[i]):
                dominated = True
                break
        if not dominated:
            nondom.append(i)
    if len(nondom) == 1:
        return nondom[0]

    sub_x = xs[nondom]
    sub_y = ys[nondom]
    rx = sub_x.max() - sub_x.min()
    ry = sub_y.max() - sub_y.min()
    nx = (sub_x - sub_x.min()) / rx if rx > 0 else np.zeros(len(nondom))
    ny = (sub_y - sub_y.min()) / ry if ry > 0 else np.zeros(len(nondom))

    ix_s = int(np.argmax(nx))  # max-signal extreme
    ix_n = int(np.argmax(ny))  # max-noise-purity extreme
    x1, y1 = nx[ix_n], ny[ix_n]
    x2, y2 = nx[ix_s], ny[ix_s]
    seg = math.hypot(x2 - x1, y2 - y1)
    if seg == 0.0:
        dist = np.zeros(len(nondom))
    else:
        dist = np.abs((y2 - y1) * nx - (x2 - x1) * ny + x2 * y1 - y2 * x1) / seg

    dmax = float(dist.max())
    tol = 1e-9 * max(1.0, abs(dmax))
    best = None
    for k, i in enumerate(nondom):
        if dist[k] >= dmax - tol:
            if best is None or al[i] < al[best]:
                best = i
    return best


@dataclass
class ParetoPoint:
    alpha: float
    signal_mass: float
    noise_purity: float
    tree: WeightedTree = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "signal_mass": repr(self.signal_mass),
            "noise_purity": repr(self.noise_purity),
            "n_leaves": len(self.tree.leaves),
        }


def weighted_tree_search(
    X: np.ndarray,
    y: np.ndarray,
    p_shift: np.ndarray,
    p_noise: np.ndarray,
    feature_names: list[str],
    alphas=(2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0),
    max_depth: int = 5,
    class_weights: dict[int, float] | None = None,
    min_leaf_weight: float = 0.0,
    weighted_leaf_corr: bool = False,
) -> tuple[ParetoPoint, list[ParetoPoint]]:
    """Fit one weighted tree per alpha and pick the knee of the frontier."""
    if len(alphas) == 0:
        raise ValidationError("alpha grid must be non-empty")
    points = []
    for alpha in alphas:
        w = compute_weights(p_shift, p_noise, float(alpha))
        tree = fit_weighted_tree(
            X, y, w, feature_names,
            max_depth=max_depth, class_weights=class_weights,
            min_leaf_weight=min_leaf_weight, p_shift=p_shift, p_noise=p_noise,
        )
        points.append(
            ParetoPoint(
                alpha=float(alpha),
                signal_mass=m_signal(tree),
                noise_purity=m_noise(tree, weighted=weighted_leaf_corr),
                tree=tree,
            )
        )
    idx = knee_point(
        [pt.signal_mass for pt in points],
        [pt.noise_purity for pt in points],
        [pt.alpha for pt in points],
    )
    return points[idx], points


# -- segment extraction --------------------------------------------------------

@dataclass
class Segment:
    mask: np.ndarray
    leaf_ids: list[int]
    rules: list[tuple[RuleCondition, ...]]
    covered_mass: float
    target_mass: float
    tau: float
    empty: bool

    @property
    def size(self) -> int:
        return int(self.mask.sum())


def mass_greedy(tree: WeightedTree, p_shift: np.ndarray, tau: float) -> Segment:
    """Accumulate class-1 leaves by descending mean p_shift until the
    covered p_shift mass reaches tau of the total.

    Sort ties: larger weight mass first, then smaller leaf id. If class-1
    leaves run out before the target, the segment is whatever they cover;
    no class-1 leaves at all yields an explicitly empty segment.
    """
    _require_prob_stats(tree)
    pc = np.asarray(p_shift, dtype=np.float64)
    if pc.shape != (tree.n_rows,):
        raise ValidationError("p_shift length must match the tree's row count")
    if not 0.0 < tau <= 1.0:
        raise ValidationError(f"tau must be in (0, 1], got {tau}")

    candidates = [leaf for leaf in tree.leaves if leaf.class_label == 1]
    candidates.sort(key=lambda leaf: (-leaf.pc_mean, -leaf.weight_mass, leaf.leaf_id))

    target = tau * float(pc.sum())
    mask = np.zeros(tree.n_rows, dtype=bool)
    covered = 0.0
    chosen: list[TreeLeaf] = []
    for leaf in candidates:
        if covered >= target:
            break
        mask[leaf.rows] = True
        covered += float(pc[leaf.rows].sum())
        chosen.append(leaf)

    return Segment(
        mask=mask,
        leaf_ids=[leaf.leaf_id for leaf in chosen],
        rules=[leaf.conditions for leaf in chosen],
        covered_mass=covered,
        target_mass=target,
        tau=tau,
        empty=len(chosen) == 0,
    )


def segment_mask_from_rules(rules, X: np.ndarray, feature_names: list[str]) -> np.ndarray:
    """Re-apply exported leaf rules to an encoded matrix.

    The union of the per-leaf condition conjunctions must reproduce the
    training-time segment mask exactly.
    """
    pos = {name: i for i, name in enumerate(feature_names)}
    out = np.zeros(X.shape[0], dtype=bool)
    for conds in rules:
        m = np.ones(X.shape[0], dtype=bool)
        for cond in conds:
            if cond.column not in pos:
                raise ValidationError(f"rule references unknown column {cond.column!r}")
            m &= cond.matches(X[:, pos[cond.column]])
        out |= m
    return out
