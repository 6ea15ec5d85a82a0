"""Leaf-index embeddings learned from a GBDT, used as dense distillation targets.

A sample's leaves across all trees form a concatenated one-hot vector. A
small network maps it to a d_E-dimensional embedding, trained so that a
linear readout of the embedding reproduces the ensemble's probability.
The embedding of each training row then becomes the regression target of
the multi-task network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from . import nn
from .errors import ConfigError, DataError
from .gbdt import GBDTModel, leaf_indices, predict_proba


@dataclass(frozen=True)
class EmbeddingConfig:
    dim: int = 20
    hidden: int = 100
    epochs: int = 100
    lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 128

    def __post_init__(self):
        if self.dim < 1 or self.hidden < 1:
            raise ConfigError("embedding dim and hidden width must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")

    @classmethod
    def from_dict(cls, d: dict | None) -> "EmbeddingConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown embedding options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LeafEmbeddingModel:
    spec: nn.NetSpec
    params: nn.NetParams
    readout_W: np.ndarray
    readout_b: float
    leaf_counts: list[int]
    history: list[float] = field(default_factory=list)   # per-epoch mean minibatch loss
    initial_loss: float = float("nan")
    final_loss: float = float("nan")

    @property
    def dim(self) -> int:
        return self.spec.n_out

    def readout(self, E: np.ndarray) -> np.ndarray:
        return E @ self.readout_W + self.readout_b

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "params": self.params.to_dict(),
            "readout_W": self.readout_W.tolist(),
            "readout_b": float(self.readout_b),
            "leaf_counts": list(self.leaf_counts),
            "history": list(self.history),
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LeafEmbeddingModel":
        return cls(
            nn.NetSpec.from_dict(d["spec"]),
            nn.NetParams.from_dict(d["params"]),
            np.asarray(d["readout_W"], dtype=float),
            float(d["readout_b"]),
            [int(c) for c in d["leaf_counts"]],
            [float(v) for v in d.get("history", [])],
            float(d.get("initial_loss", "nan")),
            float(d.get("final_loss", "nan")),
        )


def _offsets(leaf_counts) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(leaf_counts)[:-1]]).astype(np.int64)


def leaf_onehot(V, leaf_counts) -> np.ndarray:
    V = np.asarray(V, dtype=np.int64)
    counts = np.asarray(leaf_counts, dtype=np.int64)
    if V.shape != counts.shape:
        raise DataError(f"{V.size} leaf ids for {counts.size} trees")
    if (V < 0).any() or (V >= counts).any():
        raise DataError("leaf id out of range for its tree")
    out = np.zeros(int(counts.sum()))
    out[_offsets(counts) + V] = 1.0
    return out


def leaf_onehot_matrix(V: np.ndarray, leaf_counts) -> sp.csr_matrix:
    """Row-wise ``leaf_onehot`` for an (n, num_trees) leaf-id matrix, as CSR."""
    V = np.asarray(V, dtype=np.int64)
    counts = np.asarray(leaf_counts, dtype=np.int64)
    if V.ndim != 2 or V.shape[1] != counts.size:
        raise DataError("leaf id matrix does not match the tree count")
    if (V < 0).any() or (V >= counts).any():
        raise DataError("leaf id out of range for its tree")
    n, T = V.shape
    cols = (V + _offsets(counts)).ravel()
    indptr = np.arange(0, n * T + 1, T)
    return sp.csr_matrix((np.ones(n * T), cols, indptr), shape=(n, int(counts.sum())))


def soft_targets(model: GBDTModel, X) -> np.ndarray:
    return np.atleast_1d(predict_proba(model, X))


def _readout_loss(model: LeafEmbeddingModel, onehots, q) -> float:
    E = nn.forward(model.params, model.spec, onehots)[-1]
    return nn.soft_target_cross_entropy(model.readout(E), q)[0]


def train_leaf_embedding(onehots, q, dim: int = 20, epochs: int = 100, lr: float = 1e-3,
                         seed: int = 0, hidden: int = 100, batch_size: int = 128,
                         weight_decay: float = 0.01, leaf_counts=None) -> LeafEmbeddingModel:
    """Fit Emb (one relu hidden layer) plus a linear readout to soft targets q.

    ``initial_loss``/``final_loss`` are full-data soft-target cross-entropies
    before and after training.
    """
    if sp.issparse(onehots):
        onehots = onehots.tocsr()
    else:
        onehots = np.asarray(onehots, dtype=float)
        if onehots.ndim != 2:
            raise DataError("one-hot input must be a matrix")
    q = np.asarray(q, dtype=float).ravel()
    n, width = onehots.shape
    if n == 0 or width == 0:
        raise DataError("empty embedding training input")
    if q.size != n:
        raise DataError(f"{n} one-hot rows but {q.size} targets")
    if dim < 1:
        raise ConfigError("embedding dim must be >= 1")

    rng = np.random.default_rng(seed)
    spec = nn.NetSpec.mlp([width, hidden, dim], seed=seed)
    params = nn.init_params(spec, rng)
    rW, rb = nn.glorot_layer(rng, dim, 1)
    readout = [rW, rb]
    model = LeafEmbeddingModel(spec, params, readout[0][0], 0.0,
                               list(leaf_counts) if leaf_counts is not None else [width])
    shuffle_rng = np.random.default_rng([seed, 1])
    state = nn.OptimizerState(lr=lr, weight_decay=weight_decay)
    arrays = params.arrays() + readout
    model.initial_loss = _readout_loss(model, onehots, q)
    history = []
    for _ in range(epochs):
        total = 0.0
        for idx in nn.minibatches(n, batch_size, shuffle_rng):
            xb = onehots[idx]
            outs = nn.forward(params, spec, xb)
            E = outs[-1]
            z = E @ readout[0][0] + readout[1][0]
            loss, dz = nn.soft_target_cross_entropy(z, q[idx])
            total += loss * idx.size
            dE = dz[:, None] * readout[0][0][None, :]
            g = nn.grad(params, spec, xb, dE, outputs=outs, input_grad=False)
            g_read = [(dz @ E)[None, :], np.array([dz.sum()])]
            nn.adamw_step(arrays, g.arrays() + g_read, state)
        history.append(total / n)
    model.readout_W = readout[0][0].copy()
    model.readout_b = float(readout[1][0])
    model.history = history
    model.final_loss = _readout_loss(model, onehots, q)
    return model


def embed(model: LeafEmbeddingModel, onehot) -> np.ndarray:
    return nn.forward(model.params, model.spec, onehot)[-1]


def readout_proba(model: LeafEmbeddingModel, onehot) -> np.ndarray:
    return expit(model.readout(embed(model, onehot)))


def distill_loss(output, target) -> float:
    """Mean squared difference over dimensions (and rows, for matrices)."""
    output = np.asarray(output, dtype=float)
    target = np.asarray(target, dtype=float)
    if output.shape != target.shape:
        raise DataError(f"shape mismatch {output.shape} vs {target.shape}")
    return nn.mse(output, target)[0]


@dataclass
class TaskDistillation:
    """Everything distilled from one task's GBDT."""

    gbdt: GBDTModel
    embedding: LeafEmbeddingModel
    targets: np.ndarray  # embeddings of the training rows, (n_train, dim)


def distill_task(gbdt: GBDTModel, X: np.ndarray, config: EmbeddingConfig | None = None,
                 seed: int = 0) -> TaskDistillation:
    config = config or EmbeddingConfig()
    onehots = leaf_onehot_matrix(leaf_indices(gbdt, X), gbdt.leaf_counts)
    q = soft_targets(gbdt, X)
    emb = train_leaf_embedding(
        onehots, q, dim=config.dim, epochs=config.epochs, lr=config.lr, seed=seed,
        hidden=config.hidden, batch_size=config.batch_size,
        weight_decay=config.weight_decay, leaf_counts=gbdt.leaf_counts,
    )
    return TaskDistillation(gbdt, emb, embed(emb, onehots))
