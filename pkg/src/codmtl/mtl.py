"""Shared-trunk multi-task network with per-task tree distillation, plus the
neural baselines it is compared against.

Architecture: one trunk consumes the union of the features the task GBDTs
split on. Each task j has a linear head (logit) and a linear projection of
the trunk output that is regressed onto the task's leaf embedding. The loss
is ``sum_j alpha_j * (beta_j * CE_j + gamma_j * MSE_j)``.

Parameter initialisation draws trunk layers, then one head per task, then
the projections, all from one generator. With gamma = 0 the projections
never influence anything else, so training reproduces the plain shared-trunk
baseline exactly; with a single task that baseline is in turn the one-hidden
layer MLP.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import nn
from .dataset import CategoryEncoder, Cohort, FeatureSchema, FoldSplit, RawTable, encode, impute_zero
from .distill import EmbeddingConfig, LeafEmbeddingModel, TaskDistillation, distill_task
from .errors import ConfigError, DataError, NumericalError
from .gbdt import GBDTConfig, GBDTModel, selected_features, train_gbdt


def derive_seed(base: int, *keys: int) -> int:
    """Independent, reproducible child seed for a (fold, model, task, ...) cell."""
    return int(np.random.SeedSequence([int(base), *map(int, keys)]).generate_state(1)[0])


def _per_task(value, M: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(M, float(arr))
    if arr.shape != (M,):
        raise ConfigError(f"{name} needs one value per task ({M}), got {arr.size}")
    if (arr < 0).any():
        raise ConfigError(f"{name} values must be >= 0")
    return arr


@dataclass(frozen=True)
class MTLConfig:
    alpha: float | tuple[float, ...] = 1.0
    beta: float | tuple[float, ...] = 1.0
    gamma: float | tuple[float, ...] = 1.0
    epochs: int = 100
    lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 128
    hidden: int = 100
    seed: int = 0
    top_k: int | None = 64
    trunk_input: str = "union"      # "union" of tree-selected features, or "all"
    patient_only: bool = False      # restrict trunk input to recipient-role columns

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if isinstance(v, list):
                object.__setattr__(self, name, tuple(v))
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1 or self.hidden < 1:
            raise ConfigError("batch_size and hidden must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.trunk_input not in ("union", "all"):
            raise ConfigError("trunk_input must be 'union' or 'all'")
        if self.top_k is not None and self.top_k < 1:
            raise ConfigError("top_k must be >= 1")

    def weights(self, M: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        a = _per_task(self.alpha, M, "alpha")
        b = _per_task(self.beta, M, "beta")
        g = _per_task(self.gamma, M, "gamma")
        if ((b <= 0) & (g <= 0)).any():
            raise ConfigError("each task needs beta > 0 or gamma > 0")
        return a, b, g

    def replace(self, **kw) -> "MTLConfig":
        d = asdict(self)
        d.update(kw)
        return MTLConfig(**d)

    @classmethod
    def from_dict(cls, d: dict | None) -> "MTLConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown MTL options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainHistory:
    total: list[float] = field(default_factory=list)
    supervised: list[list[float]] = field(default_factory=list)   # per epoch, per task CE
    distill: list[list[float]] = field(default_factory=list)      # per epoch, per task MSE
    initial_total: float = float("nan")

    def __len__(self):
        return len(self.total)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CoDMTLModel:
    feature_index: np.ndarray
    n_features: int
    trunk_spec: nn.NetSpec
    trunk: nn.NetParams
    head_W: np.ndarray            # (M, h)
    head_b: np.ndarray            # (M,)
    proj_W: list[np.ndarray]      # per task (d_E_j, h); empty for the plain baseline
    proj_b: list[np.ndarray]
    task_names: list[str]
    schema: FeatureSchema | None = None
    encoder: CategoryEncoder | None = None

    @property
    def n_tasks(self) -> int:
        return self.head_W.shape[0]

    @property
    def hidden(self) -> int:
        return self.trunk_spec.n_out

    def arrays(self) -> list[np.ndarray]:
        out = self.trunk.arrays() + [self.head_W, self.head_b]
        for W, b in zip(self.proj_W, self.proj_b):
            out += [W, b]
        return out

    def select(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DataError(f"row width {X.shape[1]} does not match model width {self.n_features}")
        return X[:, self.feature_index]

    def trunk_forward(self, Xsel) -> list[np.ndarray]:
        return nn.forward(self.trunk, self.trunk_spec, Xsel)

    def logits(self, X) -> np.ndarray:
        """(n, M) task logits; one trunk evaluation shared by every head."""
        H = self.trunk_forward(self.select(X))[-1]
        return H @ self.head_W.T + self.head_b

    def projections(self, X) -> list[np.ndarray]:
        H = self.trunk_forward(self.select(X))[-1]
        return [H @ W.T + b for W, b in zip(self.proj_W, self.proj_b)]

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.logits(X))

    def to_dict(self) -> dict:
        return {
            "feature_index": [int(i) for i in self.feature_index],
            "n_features": int(self.n_features),
            "trunk_spec": self.trunk_spec.to_dict(),
            "trunk": self.trunk.to_dict(),
            "head_W": self.head_W.tolist(),
            "head_b": self.head_b.tolist(),
            "proj_W": [W.tolist() for W in self.proj_W],
            "proj_b": [b.tolist() for b in self.proj_b],
            "task_names": list(self.task_names),
            "schema": self.schema.to_dict() if self.schema else None,
            "encoder": self.encoder.to_dict() if self.encoder else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoDMTLModel":
        return cls(
            feature_index=np.asarray(d["feature_index"], dtype=np.int64),
            n_features=int(d["n_features"]),
            trunk_spec=nn.NetSpec.from_dict(d["trunk_spec"]),
            trunk=nn.NetParams.from_dict(d["trunk"]),
            head_W=np.asarray(d["head_W"], dtype=float).reshape(-1, d["trunk_spec"]["layer_sizes"][-1]),
            head_b=np.asarray(d["head_b"], dtype=float),
            proj_W=[np.asarray(W, dtype=float) for W in d["proj_W"]],
            proj_b=[np.asarray(b, dtype=float) for b in d["proj_b"]],
            task_names=list(d["task_names"]),
            schema=FeatureSchema.from_dict(d["schema"]) if d.get("schema") else None,
            encoder=CategoryEncoder.from_dict(d["encoder"]) if d.get("encoder") is not None else None,
        )


def _init_model(feature_index, n_features: int, M: int, proj_dims: Sequence[int],
                config: MTLConfig, task_names=None) -> CoDMTLModel:
    feature_index = np.asarray(sorted(set(int(i) for i in feature_index)), dtype=np.int64)
    if feature_index.size == 0:
        raise DataError("empty feature set for the shared trunk")
    if M < 1:
        raise ConfigError("need at least one task")
    rng = np.random.default_rng(config.seed)
    spec = nn.NetSpec.mlp([feature_index.size, config.hidden], seed=config.seed, output="relu")
    trunk = nn.init_params(spec, rng)
    heads = [nn.glorot_layer(rng, config.hidden, 1) for _ in range(M)]
    head_W = np.vstack([W for W, _ in heads])
    head_b = np.concatenate([b for _, b in heads])
    proj = [nn.glorot_layer(rng, config.hidden, d) for d in proj_dims]
    return CoDMTLModel(
        feature_index, n_features, spec, trunk, head_W, head_b,
        [W for W, _ in proj], [b for _, b in proj],
        list(task_names) if task_names else [f"task{j}" for j in range(M)],
    )


def feature_union(task_gbdts: Sequence[GBDTModel], top_k: int | None = None,
                  allowed: Sequence[int] | None = None) -> list[int]:
    union: set[int] = set()
    for g in task_gbdts:
        k = None if top_k is None else min(top_k, g.n_features)
        union.update(selected_features(g, k))
    if allowed is not None:
        union &= set(int(i) for i in allowed)
    return sorted(union)


def build_codmtl(task_gbdts: Sequence[GBDTModel], embeddings: Sequence[LeafEmbeddingModel],
                 config: MTLConfig, top_k: int | None = None, task_names=None,
                 schema: FeatureSchema | None = None) -> CoDMTLModel:
    """Untrained model whose trunk reads the union of tree-selected features.

    ``top_k`` overrides ``config.top_k``. With ``config.trunk_input == "all"``
    the trunk reads every column instead; ``config.patient_only`` keeps only
    recipient-role columns (needs ``schema``).
    """
    if len(task_gbdts) != len(embeddings):
        raise ConfigError(f"{len(task_gbdts)} GBDTs but {len(embeddings)} embedding models")
    if not task_gbdts:
        raise ConfigError("need at least one task")
    L = task_gbdts[0].n_features
    if any(g.n_features != L for g in task_gbdts):
        raise DataError("task GBDTs were trained on different feature spaces")
    allowed = None
    if config.patient_only:
        if schema is None:
            raise ConfigError("patient_only needs the feature schema")
        allowed = schema.indices(role="recipient")
    if config.trunk_input == "all":
        feats = list(range(L)) if allowed is None else sorted(allowed)
    else:
        feats = feature_union(task_gbdts, top_k if top_k is not None else config.top_k, allowed)
    if not feats:
        raise DataError("tree-selected feature union is empty")
    model = _init_model(feats, L, len(task_gbdts), [e.dim for e in embeddings], config, task_names)
    model.schema = schema
    return model


@dataclass
class LossBreakdown:
    total: float
    supervised: np.ndarray   # per task CE
    distill: np.ndarray      # per task MSE (zeros where no target)


def multitask_loss(model: CoDMTLModel, X, Y, targets: Sequence[np.ndarray] | None,
                   config: MTLConfig, with_grad: bool = False):
    """Loss on a batch. Returns ``LossBreakdown`` or ``(LossBreakdown, grads)``.

    ``grads`` is aligned with ``model.arrays()``.
    """
    Xsel = model.select(X)
    Y = np.asarray(Y, dtype=float).reshape(Xsel.shape[0], -1)
    M = model.n_tasks
    if Y.shape[1] != M:
        raise DataError(f"labels have {Y.shape[1]} columns, model has {M} tasks")
    alpha, beta, gamma = config.weights(M)
    has_proj = bool(model.proj_W)
    if has_proj:
        if targets is None or len(targets) != M:
            raise DataError("need one distillation target matrix per task")
        for j, T in enumerate(targets):
            if T.shape != (Xsel.shape[0], model.proj_W[j].shape[0]):
                raise DataError(f"task {j} targets misaligned with the batch")
    elif (gamma > 0).any() and targets is not None:
        raise DataError("model has no distillation projections")

    outs = model.trunk_forward(Xsel)
    H = outs[-1]
    Z = H @ model.head_W.T + model.head_b
    ce = np.zeros(M)
    dZ = np.empty_like(Z)
    for j in range(M):
        ce[j], dz = nn.bce_with_logits(Z[:, j], Y[:, j])
        dZ[:, j] = (alpha[j] * beta[j]) * dz
    mse = np.zeros(M)
    dP = []
    for j in range(M if has_proj else 0):
        P = H @ model.proj_W[j].T + model.proj_b[j]
        mse[j], dp = nn.mse(P, targets[j])
        dP.append((alpha[j] * gamma[j]) * dp)
    total = float(np.sum(alpha * (beta * ce + gamma * mse)))
    br = LossBreakdown(total, ce, mse)
    if not with_grad:
        return br

    dH = dZ @ model.head_W
    for j, dp in enumerate(dP):
        dH = dH + dp @ model.proj_W[j]
    g = nn.grad(model.trunk, model.trunk_spec, Xsel, dH, outputs=outs, input_grad=False)
    grads = g.arrays() + [np.asarray(H.T @ dZ).T, dZ.sum(axis=0)]
    for dp in dP:
        grads += [np.asarray(H.T @ dp).T, dp.sum(axis=0)]
    return br, grads


def _rows_targets(targets, idx):
    return None if targets is None else [T[idx] for T in targets]


def train_codmtl(model: CoDMTLModel, cohort: Cohort, fold: FoldSplit | None,
                 targets: Sequence[np.ndarray] | None, config: MTLConfig):
    """Minibatch AdamW on the multi-task loss over the fold's training rows.

    ``targets[j]`` holds task j's embedding of every training row, in
    ``fold.train_rows`` order. Returns ``(model, TrainHistory)``; history
    entries are full training-set losses at the end of each epoch.
    """
    rows = np.arange(cohort.n_rows) if fold is None else np.asarray(fold.train_rows)
    if rows.size == 0:
        raise DataError("empty training fold")
    X = cohort.X[rows]
    Y = cohort.Y[rows].astype(float)
    if targets is not None:
        targets = [np.asarray(T, dtype=float) for T in targets]
        if any(T.shape[0] != rows.size for T in targets):
            raise DataError("distillation targets do not cover the training rows")
    config.weights(model.n_tasks)
    return _fit_multitask(model, X, Y, targets, config)


def _fit_multitask(model, X, Y, targets, config):
    arrays = model.arrays()
    state = nn.OptimizerState(lr=config.lr, weight_decay=config.weight_decay)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    hist = TrainHistory()
    hist.initial_total = multitask_loss(model, X, Y, targets, config).total
    n = X.shape[0]
    for _ in range(config.epochs):
        for idx in nn.minibatches(n, config.batch_size, shuffle_rng):
            _, grads = multitask_loss(model, X[idx], Y[idx], _rows_targets(targets, idx), config,
                                      with_grad=True)
            nn.adamw_step(arrays, grads, state)
        br = multitask_loss(model, X, Y, targets, config)
        if not np.isfinite(br.total):
            raise NumericalError("non-finite multi-task loss during training")
        hist.total.append(br.total)
        hist.supervised.append(br.supervised.tolist())
        hist.distill.append(br.distill.tolist())
    return model, hist


def forward_task(model: CoDMTLModel, x, j: int) -> np.ndarray | float:
    if not 0 <= j < model.n_tasks:
        raise ConfigError(f"task index {j} out of range for {model.n_tasks} tasks")
    p = model.predict_proba(x)[:, j]
    return float(p[0]) if np.ndim(x) == 1 else p


def predict_raw(model: CoDMTLModel, raw: RawTable) -> np.ndarray:
    if model.schema is None or model.encoder is None:
        raise ConfigError("model carries no schema/encoder for raw-row prediction")
    cohort, _ = encode(raw, model.schema, model.encoder)
    return model.predict_proba(impute_zero(cohort).X)


def predict_all(model: CoDMTLModel, row: dict) -> np.ndarray:
    """Probabilities for every task from one raw row given as ``{column: value}``."""
    if model.schema is None:
        raise ConfigError("model carries no schema for raw-row prediction")
    missing = [c for c in model.schema.names if c not in row]
    if missing:
        raise DataError(f"row lacks schema column(s): {missing}")
    header = model.schema.names
    cells = [None if row[c] is None or str(row[c]) == "" else str(row[c]) for c in header]
    return predict_raw(model, RawTable(header, [cells]))[0]


# ---------------------------------------------------------------- baselines

BASELINES = ("logreg", "mlp_single", "mtl_plain")


@dataclass
class SingleTaskNet:
    kind: str
    spec: nn.NetSpec
    params: nn.NetParams
    feature_index: np.ndarray
    task: int

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        return nn.forward(self.params, self.spec, X[:, self.feature_index])[-1][:, 0]

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.logits(X))


def _fit_single(net: SingleTaskNet, X, y, config: MTLConfig) -> list[float]:
    Xs = X[:, net.feature_index]
    arrays = net.params.arrays()
    state = nn.OptimizerState(lr=config.lr, weight_decay=config.weight_decay)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    history = []
    n = Xs.shape[0]
    for _ in range(config.epochs):
        for idx in nn.minibatches(n, config.batch_size, shuffle_rng):
            xb = Xs[idx]
            outs = nn.forward(net.params, net.spec, xb)
            _, dz = nn.bce_with_logits(outs[-1][:, 0], y[idx])
            g = nn.grad(net.params, net.spec, xb, dz[:, None], outputs=outs, input_grad=False)
            nn.adamw_step(arrays, g.arrays(), state)
        loss = nn.bce_with_logits(nn.forward(net.params, net.spec, Xs)[-1][:, 0], y)[0]
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss training {net.kind}")
        history.append(loss)
    return history


def train_baseline(kind: str, cohort: Cohort, fold: FoldSplit | None, task: int | None,
                   config: MTLConfig, features: Sequence[int] | None = None):
    """Fit a baseline on the fold's training rows; returns ``(model, history)``.

    ``logreg`` and ``mlp_single`` need a task index; ``mtl_plain`` trains all
    tasks (``task`` ignored) with no distillation. ``features`` restricts the
    input columns (default: all).
    """
    if kind not in BASELINES:
        raise ConfigError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
    rows = np.arange(cohort.n_rows) if fold is None else np.asarray(fold.train_rows)
    if rows.size == 0:
        raise DataError("empty training fold")
    X = cohort.X[rows]
    feats = np.arange(cohort.X.shape[1]) if features is None else np.asarray(sorted(features), dtype=np.int64)

    if kind == "mtl_plain":
        model = _init_model(feats, cohort.X.shape[1], cohort.n_tasks, [], config, cohort.task_names)
        model.schema = cohort.schema
        cfg = config.replace(gamma=0.0)
        model, hist = _fit_multitask(model, X, cohort.Y[rows].astype(float), None, cfg)
        return model, hist

    if task is None or not 0 <= task < cohort.n_tasks:
        raise ConfigError(f"{kind} needs a valid task index")
    if kind == "logreg":
        spec = nn.NetSpec.mlp([feats.size, 1], seed=config.seed)
    else:
        spec = nn.NetSpec.mlp([feats.size, config.hidden, 1], seed=config.seed)
    net = SingleTaskNet(kind, spec, nn.init_params(spec), feats, task)
    history = _fit_single(net, X, cohort.Y[rows, task].astype(float), config)
    return net, history


# ---------------------------------------------------------------- pipeline


@dataclass
class CoDMTLBundle:
    """A trained model together with the tree and embedding models it was distilled from."""

    model: CoDMTLModel
    distilled: list[TaskDistillation]
    history: TrainHistory
    gbdt_config: GBDTConfig
    embedding_config: EmbeddingConfig
    mtl_config: MTLConfig

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "gbdts": [d.gbdt.to_dict() for d in self.distilled],
            "embeddings": [d.embedding.to_dict() for d in self.distilled],
            "history": self.history.to_dict(),
            "config": {
                "gbdt": asdict(self.gbdt_config),
                "embedding": asdict(self.embedding_config),
                "mtl": asdict(self.mtl_config),
            },
        }


def fit_codmtl(cohort: Cohort, fold: FoldSplit | None, gbdt_config: GBDTConfig | None = None,
               embedding_config: EmbeddingConfig | None = None,
               mtl_config: MTLConfig | None = None,
               task_gbdts: Sequence[GBDTModel] | None = None) -> CoDMTLBundle:
    """GBDT per task -> leaf embedding per task -> distilled multi-task network.

    Pre-trained ``task_gbdts`` (fit on the same training rows) may be passed
    to avoid refitting.
    """
    gbdt_config = gbdt_config or GBDTConfig()
    embedding_config = embedding_config or EmbeddingConfig()
    mtl_config = mtl_config or MTLConfig()
    rows = np.arange(cohort.n_rows) if fold is None else np.asarray(fold.train_rows)
    X = cohort.X[rows]
    distilled = []
    for j in range(cohort.n_tasks):
        g = task_gbdts[j] if task_gbdts is not None else train_gbdt(X, cohort.Y[rows, j], gbdt_config)
        distilled.append(distill_task(g, X, embedding_config, seed=derive_seed(mtl_config.seed, 7, j)))
    model = build_codmtl([d.gbdt for d in distilled], [d.embedding for d in distilled], mtl_config,
                         task_names=cohort.task_names, schema=cohort.schema)
    model, hist = train_codmtl(model, cohort, fold, [d.targets for d in distilled], mtl_config)
    return CoDMTLBundle(model, distilled, hist, gbdt_config, embedding_config, mtl_config)
