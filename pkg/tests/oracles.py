"""Slow, obviously-correct reference implementations used only by the tests.

None of these import the package's own metric, tree or network code.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def auroc_pairs(scores, labels) -> float:
    """Fraction of (positive, negative) pairs ranked correctly, ties = 1/2."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    won = 0.0
    for p, n in itertools.product(pos, neg):
        if p > n:
            won += 1.0
        elif p == n:
            won += 0.5
    return won / (len(pos) * len(neg))


def average_precision(scores, labels) -> float:
    """AP written from the definition: for each distinct threshold t (high to low),
    add (recall(t) - previous recall) * precision(t)."""
    total_pos = sum(1 for y in labels if y == 1)
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 1)
        k = sum(1 for s in scores if s >= t)
        recall = tp / total_pos
        ap += (recall - prev_recall) * (tp / k)
        prev_recall = recall
    return ap


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar f at every entry of x (x is modified and restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def dense_forward(weights, biases, activations, x):
    """Plain per-row loop forward pass."""
    out = []
    for row in np.atleast_2d(x):
        h = list(row)
        for W, b, act in zip(weights, biases, activations):
            z = [sum(W[i][j] * h[j] for j in range(len(h))) + b[i] for i in range(len(b))]
            if act == "relu":
                z = [max(v, 0.0) for v in z]
            elif act == "sigmoid":
                z = [1.0 / (1.0 + math.exp(-v)) for v in z]
            h = z
        out.append(h)
    return np.array(out)


def best_stump(x: np.ndarray, g: np.ndarray, h: np.ndarray, lam: float, min_leaf: int = 1):
    """Exhaustive best single split on one feature by second-order gain.

    Returns (gain, threshold) with threshold the midpoint between the two
    neighbouring distinct values, or (0, None) if no split has positive gain.
    """
    def score(G, H):
        return G * G / (H + lam)

    vals = np.unique(x)
    best = (0.0, None)
    G, H = g.sum(), h.sum()
    for a, b in zip(vals[:-1], vals[1:]):
        left = x <= a
        if left.sum() < min_leaf or (~left).sum() < min_leaf:
            continue
        gain = 0.5 * (score(g[left].sum(), h[left].sum()) + score(g[~left].sum(), h[~left].sum()) - score(G, H))
        if gain > best[0] + 1e-15:
            best = (gain, (a + b) / 2.0)
    return best


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a = a - a.mean()
    b = b - b.mean()
    return float((a @ b) / math.sqrt((a @ a) * (b @ b)))
