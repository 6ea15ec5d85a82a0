"""Binary-logistic gradient boosted trees with histogram splits and
best-first (leaf-wise) growth.

Besides margins and probabilities the model exposes, per sample, the leaf
reached in every tree, and the set of features its splits used; both feed
the distillation step.
"""

from __future__ import annotations

import heapq
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class GBDTConfig:
    num_trees: int = 100
    max_leaves: int = 31
    min_samples_leaf: int = 20
    shrinkage: float = 0.1
    l2_lambda: float = 1.0
    num_bins: int = 255
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1:
            raise ConfigError("num_trees must be >= 1")
        if self.max_leaves < 2:
            raise ConfigError("max_leaves must be >= 2")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be >= 1")
        if not 0 < self.shrinkage <= 1:
            raise ConfigError("shrinkage must lie in (0, 1]")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be >= 0")
        if not 2 <= self.num_bins <= 65536:
            raise ConfigError("num_bins must lie in [2, 65536]")

    @classmethod
    def from_dict(cls, d: dict | None) -> "GBDTConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown GBDT options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Tree:
    """Flat preorder node arrays. Leaves have ``feature == -1``.

    Routing rule, shared by training and inference: ``x[feature] <= threshold``
    goes left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    leaf_id: np.ndarray

    @property
    def num_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Node index reached by each row of X."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def to_dict(self) -> dict:
        nodes = []
        for i in range(len(self.feature)):
            if self.feature[i] < 0:
                nodes.append({"leaf": int(self.leaf_id[i]), "value": float(self.value[i])})
            else:
                nodes.append({
                    "feature": int(self.feature[i]), "threshold": float(self.threshold[i]),
                    "left": int(self.left[i]), "right": int(self.right[i]),
                })
        return {"nodes": nodes}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        n = len(d["nodes"])
        t = _empty_tree(n)
        for i, nd in enumerate(d["nodes"]):
            if "leaf" in nd:
                t.leaf_id[i] = nd["leaf"]
                t.value[i] = nd["value"]
            else:
                t.feature[i] = nd["feature"]
                t.threshold[i] = nd["threshold"]
                t.left[i] = nd["left"]
                t.right[i] = nd["right"]
        return t


def _empty_tree(n: int) -> Tree:
    return Tree(
        feature=np.full(n, -1, dtype=np.int64),
        threshold=np.zeros(n),
        left=np.full(n, -1, dtype=np.int64),
        right=np.full(n, -1, dtype=np.int64),
        value=np.zeros(n),
        leaf_id=np.full(n, -1, dtype=np.int64),
    )


@dataclass
class GBDTModel:
    trees: list[Tree]
    base_score: float
    shrinkage: float
    n_features: int
    feature_gain: np.ndarray
    config: GBDTConfig = field(default_factory=GBDTConfig)

    @property
    def num_trees(self) -> int:
        return len(self.trees)

    @property
    def leaf_counts(self) -> list[int]:
        return [t.num_leaves for t in self.trees]

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DataError(f"row width {X.shape[1]} does not match model width {self.n_features}")
        return X

    def leaf_value_sum(self, X) -> np.ndarray:
        X = self._check(X)
        acc = np.zeros(X.shape[0])
        for tree in self.trees:
            acc += tree.value[tree.apply(X)]
        return acc

    def truncated(self, n_trees: int) -> "GBDTModel":
        return GBDTModel(self.trees[:n_trees], self.base_score, self.shrinkage,
                         self.n_features, self.feature_gain, self.config)

    def to_dict(self) -> dict:
        return {
            "base_score": float(self.base_score),
            "shrinkage": float(self.shrinkage),
            "n_features": int(self.n_features),
            "feature_gain": [float(v) for v in self.feature_gain],
            "config": asdict(self.config),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GBDTModel":
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            base_score=float(d["base_score"]),
            shrinkage=float(d["shrinkage"]),
            n_features=int(d["n_features"]),
            feature_gain=np.asarray(d["feature_gain"], dtype=float),
            config=GBDTConfig.from_dict(d.get("config")),
        )


def predict_margin(model: GBDTModel, X) -> np.ndarray | float:
    single = np.ndim(X) == 1
    out = model.base_score + model.shrinkage * model.leaf_value_sum(X)
    return float(out[0]) if single else out


def predict_proba(model: GBDTModel, X) -> np.ndarray | float:
    m = predict_margin(model, X)
    return float(expit(m)) if np.ndim(m) == 0 else expit(m)


def leaf_indices(model: GBDTModel, X) -> np.ndarray:
    """Leaf id reached in each tree: shape (num_trees,) for a row, (n, num_trees) for a matrix."""
    single = np.ndim(X) == 1
    X = model._check(X)
    out = np.empty((X.shape[0], model.num_trees), dtype=np.int64)
    for t, tree in enumerate(model.trees):
        out[:, t] = tree.leaf_id[tree.apply(X)]
    return out[0] if single else out


def selected_features(model: GBDTModel, top_k: int | None = None) -> list[int]:
    gain = np.asarray(model.feature_gain)
    if top_k is not None and top_k > len(gain):
        raise ConfigError(f"top_k={top_k} exceeds the number of features ({len(gain)})")
    positive = np.flatnonzero(gain > 0)
    if top_k is not None:
        # descending gain, ties to the lower index
        order = sorted(positive, key=lambda i: (-gain[i], i))
        positive = order[:top_k]
    return sorted(int(i) for i in positive)


def logistic_loss(y: np.ndarray, margin: np.ndarray) -> float:
    # log(1 + e^m) - y m, written stably
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


# ---------------------------------------------------------------- training


def _bin_edges(col: np.ndarray, num_bins: int) -> np.ndarray:
    uniq = np.unique(col)
    if uniq.size <= 1:
        return np.empty(0)
    if uniq.size <= num_bins:
        return (uniq[:-1] + uniq[1:]) / 2.0
    qs = np.quantile(col, np.linspace(0.0, 1.0, num_bins + 1)[1:-1], method="inverted_cdf")
    edges = np.unique(qs)
    return edges[edges < uniq[-1]]


class _Binner:
    def __init__(self, X: np.ndarray, num_bins: int):
        self.edges = [_bin_edges(X[:, j], num_bins) for j in range(X.shape[1])]
        self.num_bins = num_bins
        binned = np.empty(X.shape, dtype=np.int32)
        for j, e in enumerate(self.edges):
            # bin b holds edges[b-1] < x <= edges[b]
            binned[:, j] = np.searchsorted(e, X[:, j], side="left")
        self.binned = binned
        self.offset_binned = binned + (np.arange(X.shape[1], dtype=np.int32) * num_bins)[None, :]


@dataclass
class _Leaf:
    rows: np.ndarray
    hist: np.ndarray          # (3, L, nb): grad, hess, count
    depth: int
    gain: float = -np.inf
    feature: int = -1
    bin: int = -1
    children: tuple | None = None
    value: float = 0.0


class _Grower:
    def __init__(self, binner: _Binner, g: np.ndarray, h: np.ndarray, cfg: GBDTConfig):
        self.binner = binner
        self.g, self.h = g, h
        self.cfg = cfg
        self.n_features = binner.binned.shape[1]

    def histogram(self, rows: np.ndarray) -> np.ndarray:
        L, nb = self.n_features, self.binner.num_bins
        flat = self.binner.offset_binned[rows].ravel()
        size = L * nb
        hist = np.empty((3, size))
        hist[0] = np.bincount(flat, weights=np.repeat(self.g[rows], L), minlength=size)
        hist[1] = np.bincount(flat, weights=np.repeat(self.h[rows], L), minlength=size)
        hist[2] = np.bincount(flat, minlength=size)
        return hist.reshape(3, L, nb)

    def find_split(self, leaf: _Leaf) -> None:
        lam = self.cfg.l2_lambda
        msl = self.cfg.min_samples_leaf
        hist = leaf.hist
        G = float(self.g[leaf.rows].sum())
        H = float(self.h[leaf.rows].sum())
        n = leaf.rows.size
        leaf.value = _newton_value(G, H, lam)
        if n < 2 * msl:
            return
        cum = np.cumsum(hist[:, :, :-1], axis=2)
        GL, HL, CL = cum[0], cum[1], cum[2]
        GR, HR, CR = G - GL, H - HL, n - CL
        valid = (CL >= msl) & (CR >= msl)
        if not valid.any():
            return
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = 0.5 * (_score(GL, HL, lam) + _score(GR, HR, lam) - _score(G, H, lam))
        gain = np.where(valid, gain, -np.inf)
        best = int(np.argmax(gain))   # first max: lowest feature, then lowest bin
        f, b = divmod(best, gain.shape[1])
        if np.isfinite(gain[f, b]) and gain[f, b] > 0.0:
            leaf.gain, leaf.feature, leaf.bin = float(gain[f, b]), f, b

    def grow(self) -> tuple[_Leaf, list[tuple[int, float]]]:
        n = self.binner.binned.shape[0]
        root = _Leaf(np.arange(n), self.histogram(np.arange(n)), 0)
        self.find_split(root)
        heap: list = []
        counter = 0
        if root.feature >= 0:
            heapq.heappush(heap, (-root.gain, counter, root))
        n_leaves = 1
        splits: list[tuple[int, float]] = []
        while heap and n_leaves < self.cfg.max_leaves:
            _, _, leaf = heapq.heappop(heap)
            col = self.binner.binned[leaf.rows, leaf.feature]
            mask = col <= leaf.bin
            left_rows, right_rows = leaf.rows[mask], leaf.rows[~mask]
            if left_rows.size <= right_rows.size:
                lh = self.histogram(left_rows)
                rh = leaf.hist - lh
            else:
                rh = self.histogram(right_rows)
                lh = leaf.hist - rh
            left = _Leaf(left_rows, lh, leaf.depth + 1)
            right = _Leaf(right_rows, rh, leaf.depth + 1)
            leaf.children = (left, right)
            leaf.hist = None
            splits.append((leaf.feature, leaf.gain))
            n_leaves += 1
            for child in (left, right):
                self.find_split(child)
                if child.feature >= 0:
                    counter += 1
                    heapq.heappush(heap, (-child.gain, counter, child))
        return root, splits

    def flatten(self, root: _Leaf) -> tuple[Tree, np.ndarray]:
        """Preorder node arrays plus the leaf value of every training row."""
        nodes: list[_Leaf] = []
        stack = [root]
        while stack:
            nd = stack.pop()
            nodes.append(nd)
            if nd.children:
                stack.append(nd.children[1])
                stack.append(nd.children[0])
        index = {id(nd): i for i, nd in enumerate(nodes)}
        tree = _empty_tree(len(nodes))
        row_values = np.zeros(self.binner.binned.shape[0])
        next_leaf = 0
        for i, nd in enumerate(nodes):
            if nd.children:
                tree.feature[i] = nd.feature
                tree.threshold[i] = self.binner.edges[nd.feature][nd.bin]
                tree.left[i] = index[id(nd.children[0])]
                tree.right[i] = index[id(nd.children[1])]
            else:
                tree.leaf_id[i] = next_leaf
                tree.value[i] = nd.value
                row_values[nd.rows] = nd.value
                next_leaf += 1
        return tree, row_values


def _score(G, H, lam):
    return G * G / (H + lam)


def _newton_value(G: float, H: float, lam: float) -> float:
    denom = H + lam
    return -G / denom if denom > 0 else 0.0


def train_gbdt(X, y, config: GBDTConfig | None = None) -> GBDTModel:
    config = config or GBDTConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("X must be a non-empty 2-D matrix")
    if X.shape[0] != y.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise DataError("labels must be 0/1")
    p_bar = y.mean()
    if p_bar in (0.0, 1.0):
        raise DataError("labels contain a single class")

    binner = _Binner(X, config.num_bins)
    base = float(np.log(p_bar / (1.0 - p_bar)))
    leaf_sum = np.zeros(X.shape[0])
    gain = np.zeros(X.shape[1])
    trees = []
    for _ in range(config.num_trees):
        p = expit(base + config.shrinkage * leaf_sum)
        g = p - y
        h = p * (1.0 - p)
        grower = _Grower(binner, g, h, config)
        root, splits = grower.grow()
        tree, row_values = grower.flatten(root)
        for f, gn in splits:
            gain[f] += gn
        trees.append(tree)
        leaf_sum += row_values
    return GBDTModel(trees, base, config.shrinkage, X.shape[1], gain, config)
