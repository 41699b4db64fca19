"""Cost-sensitive classification: data-space expansion and weighted CART regimes.

Each subject with cost row (C^0, ..., C^{K-1}) is replicated K times with label
k and *benefit* weight ``max_s C^s - C^k``.  For any rule g,

    sum_k w^k I(g != k) = sum_k w^k - w^g = const + C^g,

so minimising weighted misclassification of the expanded data minimises the
total cost of the assigned arms.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .contrast import CostMatrix

FORMAT_TAG = "recl-tree/1"


@dataclass(frozen=True)
class ExpandedExample:
    covariates: tuple[float, ...]
    label: int
    weight: float


@dataclass(frozen=True)
class ExpandedData:
    """Expanded classification problem stored column-wise (n*K rows, subject-major)."""

    X: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    k: int

    def __len__(self):
        return len(self.labels)

    def __iter__(self) -> Iterator[ExpandedExample]:
        for x, lab, w in zip(self.X, self.labels, self.weights):
            yield ExpandedExample(tuple(map(float, x)), int(lab), float(w))

    def misclassification(self, predicted: np.ndarray) -> float:
        """Weighted misclassification of per-row predictions."""
        return float(np.sum(self.weights * (np.asarray(predicted) != self.labels)))


def benefit_weights(costs: np.ndarray) -> np.ndarray:
    costs = np.atleast_2d(np.asarray(costs, dtype=float))
    return costs.max(axis=1, keepdims=True) - costs


def expand(cm: CostMatrix | np.ndarray, X) -> ExpandedData:
    costs = cm.costs if isinstance(cm, CostMatrix) else np.atleast_2d(np.asarray(cm, float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, k = costs.shape
    if X.shape[0] != n:
        raise ValueError(f"cost matrix has {n} rows but X has {X.shape[0]}")
    W = benefit_weights(costs)
    return ExpandedData(
        X=np.repeat(X, k, axis=0),
        labels=np.tile(np.arange(k), n),
        weights=W.ravel(),
        k=k,
    )


# --------------------------------------------------------------------------- tree


@dataclass
class Node:
    action: int
    distribution: tuple[float, ...]
    weight_share: float
    population_share: float
    feature: int | None = None
    threshold: float | None = None
    left: "Node | None" = None
    right: "Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def to_dict(self) -> dict:
        d = {
            "action": self.action,
            "distribution": list(self.distribution),
            "weight_share": self.weight_share,
            "population_share": self.population_share,
        }
        if not self.is_leaf:
            d.update(
                feature=self.feature,
                threshold=self.threshold,
                left=self.left.to_dict(),
                right=self.right.to_dict(),
            )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        node = cls(
            action=int(d["action"]),
            distribution=tuple(float(v) for v in d["distribution"]),
            weight_share=float(d["weight_share"]),
            population_share=float(d["population_share"]),
        )
        if "feature" in d:
            node.feature = int(d["feature"])
            node.threshold = float(d["threshold"])
            node.left = cls.from_dict(d["left"])
            node.right = cls.from_dict(d["right"])
        return node


@dataclass
class TreeRegime:
    """Binary threshold tree: ``x[feature] <= threshold`` goes left."""

    root: Node
    p: int
    k: int
    meta: dict = field(default_factory=dict)

    @property
    def depth(self) -> int:
        def d(node):
            return 0 if node.is_leaf else 1 + max(d(node.left), d(node.right))

        return d(self.root)

    def nodes(self) -> Iterator[Node]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack += [node.right, node.left]

    def assign(self, x) -> int:
        node = self.root
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.action

    def assign_many(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(X.shape[0], dtype=int)

        def walk(node, idx):
            if node.is_leaf:
                out[idx] = node.action
                return
            go_left = X[idx, node.feature] <= node.threshold
            walk(node.left, idx[go_left])
            walk(node.right, idx[~go_left])

        walk(self.root, np.arange(X.shape[0]))
        return out

    def to_dict(self) -> dict:
        return {"format": FORMAT_TAG, "p": self.p, "k": self.k, "meta": self.meta, "root": self.root.to_dict()}

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def parse(cls, text: str) -> "TreeRegime":
        d = json.loads(text)
        if d.get("format") != FORMAT_TAG:
            raise ValueError(f"unsupported regime format {d.get('format')!r}")
        tree = cls(Node.from_dict(d["root"]), p=int(d["p"]), k=int(d["k"]), meta=d.get("meta", {}))
        for node in tree.nodes():
            if not node.is_leaf and not (0 <= node.feature < tree.p and np.isfinite(node.threshold)):
                raise ValueError("invalid split in regime file")
        return tree


def assign(tree: TreeRegime, x) -> int:
    return tree.assign(np.asarray(x, dtype=float))


def constant_regime(action: int, p: int, k: int, **meta) -> TreeRegime:
    dist = tuple(float(j == action) for j in range(k))
    return TreeRegime(Node(action, dist, 1.0, 1.0), p=p, k=k, meta=dict(meta))


_TIE_TOL = 1e-12


def _gini_mass(class_w: np.ndarray) -> np.ndarray:
    """W * Gini(W_c) = W - sum_c W_c^2 / W along the last axis (0 for W = 0)."""
    total = class_w.sum(axis=-1)
    sq = np.square(class_w).sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(total > 0, total - sq / np.where(total > 0, total, 1.0), 0.0)


@dataclass(frozen=True)
class TreeConfig:
    max_depth: int = 3
    min_leaf_weight: float = 0.0
    min_split_gain: float = 1e-12
    min_leaf_rows: int = 1


def fit_weighted_tree(data: ExpandedData, config: TreeConfig | None = None, **meta) -> TreeRegime:
    """Greedy weighted-Gini CART on expanded data.

    Candidate thresholds are midpoints between consecutive distinct feature
    values.  The split gain is the decrease in weight-times-Gini, normalised
    by the root weight, and must exceed ``min_split_gain``.  Ties in gain keep
    the smallest feature index, then the smallest threshold.
    """
    config = config or TreeConfig()
    max_depth = config.max_depth
    min_leaf_weight = config.min_leaf_weight
    min_split_gain = config.min_split_gain
    min_leaf_rows = config.min_leaf_rows
    X = np.atleast_2d(np.asarray(data.X, dtype=float))
    k = data.k
    onehot = np.zeros((len(data), k))
    onehot[np.arange(len(data)), data.labels] = data.weights
    total_w = onehot.sum()
    n_rows = len(data)
    scale = total_w if total_w > 0 else 1.0

    def make_node(idx):
        cw = onehot[idx].sum(axis=0)
        w = cw.sum()
        dist = tuple((cw / w).tolist()) if w > 0 else tuple([1.0 / k] * k)
        return Node(
            action=int(np.argmax(cw)),
            distribution=dist,
            weight_share=float(w / total_w) if total_w > 0 else 0.0,
            population_share=len(idx) / n_rows if n_rows else 0.0,
        )

    def best_split(idx):
        cw_node = onehot[idx]
        parent = _gini_mass(cw_node.sum(axis=0))
        best = (-np.inf, None, None)
        for j in range(X.shape[1]):
            order = np.argsort(X[idx, j], kind="stable")
            xs = X[idx, j][order]
            cum = np.cumsum(cw_node[order], axis=0)
            boundary = np.flatnonzero(xs[1:] > xs[:-1])
            if boundary.size == 0:
                continue
            left = cum[boundary]
            right = cum[-1] - left
            n_left = boundary + 1
            ok = (n_left >= min_leaf_rows) & (len(idx) - n_left >= min_leaf_rows)
            ok &= (left.sum(axis=1) >= min_leaf_weight) & (right.sum(axis=1) >= min_leaf_weight)
            gain = (parent - _gini_mass(left) - _gini_mass(right)) / scale
            gain = np.where(ok, gain, -np.inf)
            top = gain.max()
            # gains equal up to summation rounding are ties: keep the earliest
            if np.isfinite(top) and top > best[0] + _TIE_TOL:
                b = boundary[int(np.argmax(gain >= top - _TIE_TOL))]
                best = (top, j, 0.5 * (xs[b] + xs[b + 1]))
        if best[0] <= min_split_gain:
            return best[0], None, None
        return best

    def grow(idx, depth):
        node = make_node(idx)
        if depth >= max_depth or len(idx) < 2 or total_w <= 0:
            return node
        _, j, thr = best_split(idx)
        if j is None:
            return node
        go_left = X[idx, j] <= thr
        node.feature, node.threshold = j, float(thr)
        node.left = grow(idx[go_left], depth + 1)
        node.right = grow(idx[~go_left], depth + 1)
        return node

    root = grow(np.arange(n_rows), 0)
    return TreeRegime(root, p=X.shape[1], k=k, meta=dict(meta))


def regime_cost(cm: CostMatrix | np.ndarray, actions) -> float:
    """Total cost sum_i C^{g(X_i)}_i of an assignment."""
    costs = cm.costs if isinstance(cm, CostMatrix) else np.asarray(cm, float)
    actions = np.asarray(actions, dtype=int)
    return float(costs[np.arange(costs.shape[0]), actions].sum())


def render_tree(
    tree: TreeRegime,
    labels: Sequence[str] | None = None,
    action_names: Sequence[str] | None = None,
) -> str:
    """Indented text rendering; every box shows the recommended action, the
    weighted share of action 1 (full distribution when K > 2) and the node's
    share of the population."""
    labels = list(labels) if labels is not None else [f"x{j + 1}" for j in range(tree.p)]
    action_names = list(action_names) if action_names is not None else [str(a) for a in range(tree.k)]
    if len(labels) != tree.p:
        raise ValueError(f"expected {tree.p} covariate labels, got {len(labels)}")
    if len(action_names) != tree.k:
        raise ValueError(f"expected {tree.k} action names, got {len(action_names)}")

    lines = []
    header = f"# {FORMAT_TAG}"
    if tree.meta:
        header += " " + " ".join(f"{k}={v}" for k, v in sorted(tree.meta.items()))
    lines.append(header)

    def box(node, indent):
        pad = "    " * indent
        if tree.k == 2:
            prob = f"P({action_names[1]}) = {node.distribution[1]:.2f}"
        else:
            prob = "dist = (" + ", ".join(f"{v:.2f}" for v in node.distribution) + ")"
        lines.append(f"{pad}[ action {action_names[node.action]} | {prob} | share {node.population_share:.2f} ]")
        if not node.is_leaf:
            name = labels[node.feature]
            lines.append(f"{pad}  if {name} <= {node.threshold:g}:")
            box(node.left, indent + 1)
            lines.append(f"{pad}  else ({name} > {node.threshold:g}):")
            box(node.right, indent + 1)

    box(tree.root, 0)
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------- brute force


class InstanceTooLarge(ValueError):
    pass


def _structures(splits, depth):
    """All tree shapes of depth <= depth: None for a leaf, else (split, left, right)."""
    if depth == 0:
        return [None]
    sub = _structures(splits, depth - 1)
    return [None] + [(s, l, r) for s in splits for l in sub for r in sub]


def _leaf_index(shape, X):
    """Leaf number for every row, leaves numbered left to right."""
    out = np.zeros(X.shape[0], dtype=int)

    def walk(sh, idx, first):
        if sh is None:
            out[idx] = first
            return first + 1
        (j, thr), left, right = sh
        go = X[idx, j] <= thr
        nxt = walk(left, idx[go], first)
        return walk(right, idx[~go], nxt)

    n_leaves = walk(shape, np.arange(X.shape[0]), 0)
    return out, n_leaves


def _shape_to_tree(shape, labels, p, k, X):
    n = X.shape[0]
    it = iter(labels)

    def build(sh, idx):
        share = len(idx) / n if n else 0.0
        if sh is None:
            a = int(next(it))
            return Node(a, tuple(float(j == a) for j in range(k)), share, share)
        (j, thr), left, right = sh
        go = X[idx, j] <= thr
        lnode = build(left, idx[go])
        rnode = build(right, idx[~go])
        return Node(lnode.action, lnode.distribution, share, share, j, float(thr), lnode, rnode)

    return TreeRegime(build(shape, np.arange(n)), p=p, k=k, meta={"source": "brute-force"})


def enumerate_regimes(X, splits, depth: int, k: int):
    """Yield (shape, leaf_labels, per-row assignment) over the whole regime space."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    for shape in _structures(list(splits), depth):
        leaf, n_leaves = _leaf_index(shape, X)
        for labels in itertools.product(range(k), repeat=n_leaves):
            yield shape, labels, np.asarray(labels, dtype=int)[leaf]


def check_tractable(n, k, n_splits, depth):
    if n > 12 or k > 3 or n_splits > 6 or depth > 2:
        raise InstanceTooLarge(
            f"brute force limited to n<=12, K<=3, <=6 splits, depth<=2 (got n={n}, K={k}, "
            f"splits={n_splits}, depth={depth})"
        )


def brute_force_regime(cm: CostMatrix | np.ndarray, X, splits, depth: int = 2) -> dict:
    """Exhaustive minimiser of sum_i C^{g(X_i)} over all threshold trees of
    depth <= ``depth`` built from the candidate ``splits`` [(feature, threshold)]."""
    costs = cm.costs if isinstance(cm, CostMatrix) else np.atleast_2d(np.asarray(cm, float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, k = costs.shape
    splits = [(int(j), float(t)) for j, t in splits]
    check_tractable(n, k, len(splits), depth)
    best = None
    for shape in _structures(splits, depth):
        leaf, n_leaves = _leaf_index(shape, X)
        leaf_cost = np.zeros((n_leaves, k))
        np.add.at(leaf_cost, leaf, costs)
        labelings = np.array(list(itertools.product(range(k), repeat=n_leaves)))
        objective = leaf_cost[np.arange(n_leaves), labelings].sum(axis=1)
        pos = int(np.argmin(objective))
        if best is None or objective[pos] < best[0]:
            best = (float(objective[pos]), shape, labelings[pos])
    objective, shape, labels = best
    return {"regime": _shape_to_tree(shape, labels, X.shape[1], k, X), "objective": objective}
