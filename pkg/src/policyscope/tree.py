"""CART induction with Friedman-MSE / Gini splits and cost-complexity pruning.

Trees are stored as flat node arrays in depth-first, left-first order, so
node 0 is the root and leaves appear left to right.  A leaf's *path id* is
its rank in that order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import kernels

LEAF = -1
# Candidate splits whose score is within this relative distance of the best
# one count as tied; ties go to the smaller feature index, then threshold.
SPLIT_TIE_RTOL = 1e-10
# A split must remove more than this fraction of the node's total impurity.
MIN_IMPROVEMENT_RTOL = 1e-12

CRITERIA = ("friedman_mse", "gini")


@dataclass(frozen=True)
class TreeConfig:
    criterion: str = "friedman_mse"
    max_depth: int = 3
    min_leaf_fraction: float = 0.10
    ccp_alpha: float = 0.003

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}, got {self.criterion!r}")
        if int(self.max_depth) != self.max_depth or self.max_depth < 1:
            raise ValueError(f"max_depth must be a positive integer, got {self.max_depth!r}")
        if not 0.0 <= self.min_leaf_fraction <= 0.5:
            raise ValueError(f"min_leaf_fraction must lie in [0, 0.5], got {self.min_leaf_fraction!r}")
        if not self.ccp_alpha >= 0.0:
            raise ValueError(f"ccp_alpha must be >= 0, got {self.ccp_alpha!r}")

    def replace(self, **kw) -> "TreeConfig":
        return TreeConfig(**{**self.__dict__, **kw})


# Interpreter defaults for the pendulum setting.
SURROGATE_CONFIG = TreeConfig("friedman_mse", max_depth=3, min_leaf_fraction=0.10, ccp_alpha=0.003)
CLASSIFIER_CONFIG = TreeConfig("gini", max_depth=3, min_leaf_fraction=0.01, ccp_alpha=0.01)


def min_leaf_count(fraction: float, n: int) -> int:
    # round() guards against 0.1 * 30 == 3.0000000000000004
    return max(1, math.ceil(round(fraction * n, 9)))


@dataclass(frozen=True)
class Predicate:
    """``x[feature] <= threshold`` (op ``"<="``) or ``x[feature] > threshold``."""

    feature: int
    op: str
    threshold: float

    def __post_init__(self):
        if self.op not in ("<=", ">"):
            raise ValueError(f"op must be '<=' or '>', got {self.op!r}")
        if not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")

    def holds(self, x) -> bool | np.ndarray:
        v = np.asarray(x)[..., self.feature]
        return v <= self.threshold if self.op == "<=" else v > self.threshold


@dataclass
class DecisionTree:
    kind: str  # "regression" | "classification"
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    n_samples: np.ndarray
    impurity: np.ndarray
    value: np.ndarray
    n_features: int
    n_train: int
    classes: np.ndarray | None = None
    class_counts: np.ndarray | None = None
    config: TreeConfig | None = None

    def __post_init__(self):
        is_leaf = self.feature == LEAF
        self.leaf_nodes = np.nonzero(is_leaf)[0]
        self.path_of_node = np.full(len(self.feature), -1, dtype=np.int64)
        self.path_of_node[self.leaf_nodes] = np.arange(len(self.leaf_nodes))

    # -- structure ---------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_paths(self) -> int:
        return len(self.leaf_nodes)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] == LEAF

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if not self.is_leaf(node):
                stack.append((self.left[node], d + 1))
                stack.append((self.right[node], d + 1))
        return best

    def node_keys(self) -> set[str]:
        """Each node named by its route from the root ("", "L", "LR", ...)."""
        keys = set()
        stack = [(0, "")]
        while stack:
            node, key = stack.pop()
            keys.add(key)
            if not self.is_leaf(node):
                stack.append((self.left[node], key + "L"))
                stack.append((self.right[node], key + "R"))
        return keys

    # -- inference ---------------------------------------------------------

    def _check(self, X) -> tuple[np.ndarray, bool]:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {np.shape(X)}")
        return X, single

    def apply(self, X) -> np.ndarray:
        """Leaf node index for each row."""
        X, single = self._check(X)
        out = kernels.apply_tree(X, self.feature, self.threshold, self.left, self.right)
        return out[0] if single else out

    def predict(self, X):
        X, single = self._check(X)
        vals = self.value[kernels.apply_tree(X, self.feature, self.threshold, self.left, self.right)]
        if self.kind == "classification":
            vals = vals.astype(np.int64)
        return vals[0].item() if single else vals

    def path_of(self, X):
        X, single = self._check(X)
        paths = self.path_of_node[kernels.apply_tree(X, self.feature, self.threshold, self.left, self.right)]
        return int(paths[0]) if single else paths

    def enumerate_paths(self) -> list[tuple[int, list[Predicate]]]:
        """Root-to-leaf predicate lists, one per leaf, in path id order."""
        out = []

        def walk(node: int, preds: list[Predicate]):
            if self.is_leaf(node):
                out.append((int(self.path_of_node[node]), preds))
                return
            j, c = int(self.feature[node]), float(self.threshold[node])
            walk(int(self.left[node]), preds + [Predicate(j, "<=", c)])
            walk(int(self.right[node]), preds + [Predicate(j, ">", c)])

        walk(0, [])
        return out

    def leaf_prediction(self, path: int):
        v = self.value[self.leaf_nodes[path]]
        return int(v) if self.kind == "classification" else float(v)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            leaf = self.is_leaf(i)
            node = {
                "id": i,
                "feature": None if leaf else int(self.feature[i]),
                "threshold": None if leaf else float(self.threshold[i]),
                "left": None if leaf else int(self.left[i]),
                "right": None if leaf else int(self.right[i]),
                "prediction": int(self.value[i]) if self.kind == "classification" else float(self.value[i]),
                "n": int(self.n_samples[i]),
                "impurity": float(self.impurity[i]),
            }
            if self.class_counts is not None:
                node["class_counts"] = [int(c) for c in self.class_counts[i]]
            if leaf:
                node["path_id"] = int(self.path_of_node[i])
            nodes.append(node)
        out = {
            "kind": self.kind,
            "n_features": self.n_features,
            "n_train": self.n_train,
            "nodes": nodes,
        }
        if self.classes is not None:
            out["classes"] = [int(c) for c in self.classes]
        if self.config is not None:
            out["config"] = dict(self.config.__dict__)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        nodes = sorted(d["nodes"], key=lambda n: n["id"])
        def col(key, default, dtype):
            return np.array([default if n.get(key) is None else n[key] for n in nodes], dtype=dtype)
        counts = None
        if nodes and "class_counts" in nodes[0]:
            counts = np.array([n["class_counts"] for n in nodes], dtype=np.int64)
        return cls(
            kind=d["kind"],
            feature=col("feature", LEAF, np.int64),
            threshold=col("threshold", 0.0, np.float64),
            left=col("left", LEAF, np.int64),
            right=col("right", LEAF, np.int64),
            n_samples=col("n", 0, np.int64),
            impurity=col("impurity", 0.0, np.float64),
            value=col("prediction", 0.0, np.float64),
            n_features=int(d["n_features"]),
            n_train=int(d["n_train"]),
            classes=None if d.get("classes") is None else np.array(d["classes"], dtype=np.int64),
            class_counts=counts,
            config=TreeConfig(**d["config"]) if d.get("config") else None,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, DecisionTree):
            return NotImplemented
        return self.to_dict() == other.to_dict()


# --------------------------------------------------------------------------
# induction
# --------------------------------------------------------------------------

def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.dot(p, p))


class _Builder:
    """Greedy top-down growth into preorder node lists."""

    def __init__(self, X, y, cfg: TreeConfig, n_classes: int = 0):
        self.X, self.y, self.cfg = X, y, cfg
        self.n_classes = n_classes
        self.min_leaf = min_leaf_count(cfg.min_leaf_fraction, X.shape[0])
        self.nodes: list[dict] = []

    def node_stats(self, rows):
        y = self.y[rows]
        if self.cfg.criterion == "gini":
            counts = np.bincount(y, minlength=self.n_classes)
            # argmax returns the first maximum: the smallest class code wins ties
            return _gini(counts), float(np.argmax(counts)), counts
        mean = float(y.mean())
        if y.min() == y.max():  # rounding in the mean would leave a ~1e-31 impurity
            return 0.0, float(y[0]), None
        return float(np.mean((y - mean) ** 2)), mean, None

    def best_split(self, rows, impurity):
        n = len(rows)
        if n < 2 * self.min_leaf:
            return None
        cand = []  # (score, feature, threshold, left_rows, right_rows) per feature
        for j in range(self.X.shape[1]):
            order = rows[np.argsort(self.X[rows, j], kind="stable")]
            xs = self.X[order, j]
            if self.cfg.criterion == "gini":
                scores = kernels.gini_split_scores(xs, self.y[order], self.n_classes, self.min_leaf)
            else:
                scores = kernels.mse_split_scores(xs, self.y[order], self.min_leaf)
            cand.append((scores, xs, order))
        best = max((s.max() if len(s) else -np.inf) for s, _, _ in cand)
        if not best > MIN_IMPROVEMENT_RTOL * n * impurity:
            return None
        cutoff = best - SPLIT_TIE_RTOL * abs(best)
        for j, (scores, xs, order) in enumerate(cand):
            hits = np.nonzero(scores >= cutoff)[0]
            if len(hits):
                i = int(hits[0])
                a, b = float(xs[i]), float(xs[i + 1])
                thr = (a + b) / 2.0
                if thr >= b:  # adjacent floats
                    thr = a
                return j, thr, np.sort(order[: i + 1]), np.sort(order[i + 1 :])
        return None  # pragma: no cover

    def grow(self, rows, depth: int) -> int:
        idx = len(self.nodes)
        impurity, value, counts = self.node_stats(rows)
        node = {
            "feature": LEAF, "threshold": 0.0, "left": LEAF, "right": LEAF,
            "n": len(rows), "impurity": impurity, "value": value, "counts": counts,
        }
        self.nodes.append(node)
        if depth >= self.cfg.max_depth or impurity <= 0.0:
            return idx
        split = self.best_split(rows, impurity)
        if split is None:
            return idx
        j, thr, lrows, rrows = split
        node["feature"], node["threshold"] = j, thr
        node["left"] = self.grow(lrows, depth + 1)
        node["right"] = self.grow(rrows, depth + 1)
        return idx


def _assemble(nodes, kind, n_features, n_train, classes, cfg) -> DecisionTree:
    return DecisionTree(
        kind=kind,
        feature=np.array([n["feature"] for n in nodes], dtype=np.int64),
        threshold=np.array([n["threshold"] for n in nodes], dtype=np.float64),
        left=np.array([n["left"] for n in nodes], dtype=np.int64),
        right=np.array([n["right"] for n in nodes], dtype=np.int64),
        n_samples=np.array([n["n"] for n in nodes], dtype=np.int64),
        impurity=np.array([n["impurity"] for n in nodes], dtype=np.float64),
        value=np.array([n["value"] for n in nodes], dtype=np.float64),
        n_features=n_features,
        n_train=n_train,
        classes=classes,
        class_counts=None if classes is None else np.array([n["counts"] for n in nodes], dtype=np.int64),
        config=cfg,
    )


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"X must be a non-empty N x d matrix, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("X contains non-finite values")
    return X


def grow_regression(X, y, cfg: TreeConfig) -> DecisionTree:
    """Unpruned regression tree (``cfg.ccp_alpha`` is ignored)."""
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != X.shape[0]:
        raise ValueError("X and y disagree on the number of rows")
    b = _Builder(X, y, cfg.replace(criterion="friedman_mse") if cfg.criterion != "friedman_mse" else cfg)
    b.grow(np.arange(X.shape[0]), 0)
    return _assemble(b.nodes, "regression", X.shape[1], X.shape[0], None, cfg)


def grow_classification(X, y, cfg: TreeConfig) -> DecisionTree:
    """Unpruned classification tree over integer labels."""
    X = _as_matrix(X)
    y = np.asarray(y).ravel()
    if y.shape[0] != X.shape[0]:
        raise ValueError("X and y disagree on the number of rows")
    classes, codes = np.unique(y, return_inverse=True)
    if classes.dtype.kind not in "iu" and not np.all(classes == np.round(classes)):
        raise ValueError("class labels must be integers")
    classes = classes.astype(np.int64)
    b = _Builder(X, codes.astype(np.int64), cfg.replace(criterion="gini") if cfg.criterion != "gini" else cfg,
                 n_classes=len(classes))
    b.grow(np.arange(X.shape[0]), 0)
    tree = _assemble(b.nodes, "classification", X.shape[1], X.shape[0], classes, cfg)
    tree.value = classes[tree.value.astype(np.int64)].astype(np.float64)
    return tree


# --------------------------------------------------------------------------
# minimal cost-complexity pruning
# --------------------------------------------------------------------------

def _subtree_stats(tree: DecisionTree, collapsed: np.ndarray, risk: np.ndarray):
    """(leaf count, summed leaf risk) of every node's current subtree."""
    n = tree.n_nodes
    n_leaves = np.zeros(n, dtype=np.int64)
    sub_risk = np.zeros(n)
    # preorder layout: children always have larger indices than their parent
    for node in range(n - 1, -1, -1):
        if tree.is_leaf(node) or collapsed[node]:
            n_leaves[node] = 1
            sub_risk[node] = risk[node]
        else:
            l, r = tree.left[node], tree.right[node]
            n_leaves[node] = n_leaves[l] + n_leaves[r]
            sub_risk[node] = sub_risk[l] + sub_risk[r]
    return n_leaves, sub_risk


def _reachable(tree: DecisionTree, collapsed: np.ndarray) -> np.ndarray:
    alive = np.zeros(tree.n_nodes, dtype=bool)
    stack = [0]
    while stack:
        node = stack.pop()
        alive[node] = True
        if not (tree.is_leaf(node) or collapsed[node]):
            stack.extend((tree.right[node], tree.left[node]))
    return alive


def weakest_link_sequence(tree: DecisionTree) -> Iterator[tuple[float, int]]:
    """Yield ``(effective_alpha, node)`` in the order weakest-link pruning collapses nodes.

    The effective alpha of an internal node t is
    ``(R(t) - R(T_t)) / (|leaves(T_t)| - 1)`` with
    ``R(t) = impurity(t) * n_t / n_train``.  Ties go to the lowest node index.
    """
    risk = tree.impurity * tree.n_samples / tree.n_train
    collapsed = np.zeros(tree.n_nodes, dtype=bool)
    while True:
        n_leaves, sub_risk = _subtree_stats(tree, collapsed, risk)
        alive = _reachable(tree, collapsed)
        internal = alive & (tree.feature != LEAF) & ~collapsed
        cands = np.nonzero(internal)[0]
        if len(cands) == 0:
            return
        g = (risk[cands] - sub_risk[cands]) / (n_leaves[cands] - 1)
        k = int(np.argmin(g))
        yield float(g[k]), int(cands[k])
        collapsed[cands[k]] = True


def _compact(tree: DecisionTree, collapsed: np.ndarray) -> DecisionTree:
    order: list[int] = []

    def walk(node):
        order.append(node)
        if not (tree.is_leaf(node) or collapsed[node]):
            walk(tree.left[node])
            walk(tree.right[node])

    walk(0)
    remap = {old: new for new, old in enumerate(order)}
    idx = np.array(order)
    leafy = np.array([tree.is_leaf(o) or collapsed[o] for o in order])
    feature = np.where(leafy, LEAF, tree.feature[idx])
    left = np.array([LEAF if lf else remap[int(tree.left[o])] for o, lf in zip(order, leafy)], dtype=np.int64)
    right = np.array([LEAF if lf else remap[int(tree.right[o])] for o, lf in zip(order, leafy)], dtype=np.int64)
    return DecisionTree(
        kind=tree.kind,
        feature=feature.astype(np.int64),
        threshold=np.where(leafy, 0.0, tree.threshold[idx]),
        left=left,
        right=right,
        n_samples=tree.n_samples[idx].copy(),
        impurity=tree.impurity[idx].copy(),
        value=tree.value[idx].copy(),
        n_features=tree.n_features,
        n_train=tree.n_train,
        classes=tree.classes,
        class_counts=None if tree.class_counts is None else tree.class_counts[idx].copy(),
        config=tree.config,
    )


def prune(tree: DecisionTree, ccp_alpha: float) -> DecisionTree:
    """Collapse weakest links until every remaining link has alpha > ``ccp_alpha``."""
    if ccp_alpha < 0:
        raise ValueError("ccp_alpha must be >= 0")
    collapsed = np.zeros(tree.n_nodes, dtype=bool)
    if ccp_alpha > 0:
        for g, node in weakest_link_sequence(tree):
            if g > ccp_alpha:
                break
            collapsed[node] = True
    out = _compact(tree, collapsed)
    if tree.config is not None:
        out.config = tree.config.replace(ccp_alpha=ccp_alpha)
    return out


# --------------------------------------------------------------------------
# public fitting API
# --------------------------------------------------------------------------

def fit_regression(X, y, cfg: TreeConfig = SURROGATE_CONFIG) -> DecisionTree:
    if cfg.criterion != "friedman_mse":
        raise ValueError("fit_regression needs criterion='friedman_mse'")
    return prune(grow_regression(X, y, cfg), cfg.ccp_alpha)


def fit_classification(X, y, cfg: TreeConfig = CLASSIFIER_CONFIG) -> DecisionTree:
    if cfg.criterion != "gini":
        raise ValueError("fit_classification needs criterion='gini'")
    return prune(grow_classification(X, y, cfg), cfg.ccp_alpha)


def predict(tree: DecisionTree, x):
    return tree.predict(x)


def path_of(tree: DecisionTree, x):
    return tree.path_of(x)


def enumerate_paths(tree: DecisionTree) -> list[tuple[int, list[Predicate]]]:
    return tree.enumerate_paths()
