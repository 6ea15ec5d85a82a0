"""Synthetic two-outcome cohorts with controllable imbalance, overlap and signal.

Generative story, per row:

* a standard-normal latent vector ``z`` (one entry per column);
* two shared factors over the shared informative columns: a *frailty*
  score that raises both task risks, and a *balance* score that raises one
  and lowers the other (a trade-off between the two outcomes);
* a private score per task made of threshold steps and pairwise
  interactions on the task's own informative columns;
* risks ``r_1 = c * s * (2 frailty + 0.5 balance + 0.75 private_1)`` and
  ``r_2 = c * s * (2 frailty - 0.5 balance + 0.75 private_2)`` with
  ``c = RISK_SCALE`` so that ``signal_strength = 1`` already gives a clearly
  learnable cohort.

Labels: each row gets one of four groups (neither, task 1 only, task 2
only, both) with Gumbel-perturbed utilities ``0, r_1, r_2, r_1 + r_2``.
Rows are assigned greedily by descending utility under fixed group sizes,
so per-task positive counts and the overlap are exact.

Observed columns are affine transforms of ``z`` (numerical) or quantile
bins of ``z`` with shuffled level names (categorical), and a small fraction
of cells is blanked out as missing.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import Cohort, Column, FeatureSchema, write_table
from .errors import ConfigError

RISK_SCALE = 4.0
FACTOR_WEIGHTS = {"frailty": 2.0, "balance": 0.5, "private": 0.75}


@dataclass(frozen=True)
class SynthConfig:
    n_task1_pos: int = 4160
    n_task2_pos: int = 3627
    n_negative: int = 2000
    n_features: int = 102
    n_informative_shared: int = 16
    n_informative_per_task: int = 8
    signal_strength: float = 1.0
    label_overlap_rate: float = 0.1
    missing_rate: float = 0.03
    categorical_fraction: float = 0.2
    n_donor_features: int = 40
    task_names: tuple[str, str] = ("rejection", "infection")
    seed: int = 42

    def __post_init__(self):
        object.__setattr__(self, "task_names", tuple(self.task_names))
        for name in ("n_task1_pos", "n_task2_pos", "n_negative", "n_features",
                     "n_informative_shared", "n_informative_per_task", "n_donor_features"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.n_features < 1:
            raise ConfigError("n_features must be >= 1")
        if self.n_informative_shared + 2 * self.n_informative_per_task > self.n_features:
            raise ConfigError("informative feature counts exceed n_features")
        if not 0.0 <= self.label_overlap_rate <= 1.0:
            raise ConfigError("label_overlap_rate must lie in [0, 1]")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ConfigError("missing_rate must lie in [0, 1)")
        if not 0.0 <= self.categorical_fraction <= 1.0:
            raise ConfigError("categorical_fraction must lie in [0, 1]")
        if self.signal_strength < 0:
            raise ConfigError("signal_strength must be >= 0")
        if len(self.task_names) != 2 or len(set(self.task_names)) != 2:
            raise ConfigError("need two distinct task names")
        if self.n_rows < 10:
            raise ConfigError(f"cohort would have {self.n_rows} rows; need at least 10")

    @property
    def n_overlap(self) -> int:
        return int(round(self.label_overlap_rate * min(self.n_task1_pos, self.n_task2_pos)))

    @property
    def n_rows(self) -> int:
        return self.n_task1_pos + self.n_task2_pos - self.n_overlap + self.n_negative

    def replace(self, **kw) -> "SynthConfig":
        d = asdict(self)
        d.update(kw)
        return SynthConfig(**d)

    @classmethod
    def from_dict(cls, d: dict | None) -> "SynthConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synth options: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class SynthCohort:
    """Generated data in raw (string cell) form plus the encoded-ready layout."""

    schema: FeatureSchema
    ids: list[str]
    cells: list[list[str | None]]   # feature cells in schema order
    Y: np.ndarray
    task_names: tuple[str, str]
    informative: dict

    def header(self) -> list[str]:
        return ["id"] + self.schema.names + list(self.task_names)

    def rows(self):
        for i, cells in enumerate(self.cells):
            yield [self.ids[i], *cells, *map(str, self.Y[i])]


def reference_schema(config: SynthConfig, rng: np.random.Generator) -> FeatureSchema:
    L = config.n_features
    n_cat = int(round(config.categorical_fraction * L))
    cat = set(rng.choice(L, size=n_cat, replace=False).tolist()) if n_cat else set()
    cols = []
    for j in range(L):
        role = "donor" if j < config.n_donor_features else "recipient"
        kind = "categorical" if j in cat else "numerical"
        prefix = "d" if role == "donor" else "r"
        cols.append(Column(f"{prefix}_{'cat' if kind == 'categorical' else 'num'}_{j:03d}", kind, role))
    return FeatureSchema(tuple(cols))


def _assign_labels(r1, r2, config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    n = r1.size
    c = config.n_overlap
    capacity = np.array([config.n_negative, config.n_task1_pos - c, config.n_task2_pos - c, c])
    utility = np.column_stack([np.zeros(n), r1, r2, r1 + r2]) + rng.gumbel(size=(n, 4))
    order = np.argsort(-utility.ravel(), kind="stable")
    group = np.full(n, -1, dtype=np.int64)
    for flat in order:
        i, g = divmod(int(flat), 4)
        if group[i] < 0 and capacity[g] > 0:
            group[i] = g
            capacity[g] -= 1
    Y = np.zeros((n, 2), dtype=np.int8)
    Y[:, 0] = (group == 1) | (group == 3)
    Y[:, 1] = (group == 2) | (group == 3)
    return Y


def _linear_score(Z: np.ndarray, cols: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if cols.size == 0:
        return np.zeros(Z.shape[0])
    w = rng.choice([-1.0, 1.0], size=cols.size) * rng.uniform(0.5, 1.0, size=cols.size)
    return (Z[:, cols] @ w) / np.sqrt(cols.size)


def _private_effect(Z: np.ndarray, cols: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Threshold steps on each column plus pairwise AND-interactions."""
    steps = (Z[:, cols] > thresholds).astype(float)
    out = steps.sum(axis=1) - (steps.mean(axis=0)).sum()
    for a, b in zip(cols[0::2], cols[1::2]):
        inter = ((Z[:, a] > 0) & (Z[:, b] < 0)).astype(float)
        out += 1.5 * (inter - 0.25)
    return out / np.sqrt(max(len(cols), 1))


def generate(config: SynthConfig | None = None) -> SynthCohort:
    config = config or SynthConfig()
    rng = np.random.default_rng(config.seed)
    n, L = config.n_rows, config.n_features
    schema = reference_schema(config, rng)

    Z = rng.standard_normal((n, L))
    perm = rng.permutation(L)
    S = config.n_informative_shared
    P = config.n_informative_per_task
    shared_cols = np.sort(perm[:S])
    private_cols = [np.sort(perm[S:S + P]), np.sort(perm[S + P:S + 2 * P])]

    half = S // 2
    frailty = _linear_score(Z, shared_cols[:half], rng)
    balance = _linear_score(Z, shared_cols[half:], rng)
    private = []
    for j in range(2):
        thr = rng.uniform(-0.8, 0.8, size=P)
        private.append(_private_effect(Z, private_cols[j], thr))
    w = FACTOR_WEIGHTS
    s = RISK_SCALE * config.signal_strength
    risks = [s * (w["frailty"] * frailty + w["balance"] * balance + w["private"] * private[0]),
             s * (w["frailty"] * frailty - w["balance"] * balance + w["private"] * private[1])]
    Y = _assign_labels(risks[0], risks[1], config, rng)

    loc = rng.uniform(-2.0, 2.0, size=L)
    scale = rng.uniform(0.5, 3.0, size=L)
    levels = rng.integers(2, 9, size=L)
    missing = rng.random((n, L)) < config.missing_rate
    columns: list[list[str | None]] = []
    for j, col in enumerate(schema.columns):
        if col.kind == "categorical":
            k = int(levels[j])
            cuts = np.quantile(Z[:, j], np.linspace(0, 1, k + 1)[1:-1])
            names = np.array([f"L{v}" for v in rng.permutation(k)])
            vals = names[np.searchsorted(cuts, Z[:, j])].tolist()
        else:
            vals = [f"{v:.6g}" for v in loc[j] + scale[j] * Z[:, j]]
        columns.append([None if missing[i, j] else vals[i] for i in range(n)])
    cells = [list(r) for r in zip(*columns)]
    width = len(str(n - 1))
    ids = [f"P{i:0{width}d}" for i in range(n)]
    info = {
        "frailty": shared_cols[:half].tolist(),
        "balance": shared_cols[half:].tolist(),
        "private": [c.tolist() for c in private_cols],
    }
    return SynthCohort(schema, ids, cells, Y, config.task_names, info)


def to_cohort(synth: SynthCohort) -> Cohort:
    """Encode + impute in-process, identical to writing files and loading them."""
    from .dataset import RawTable, encode, impute_zero

    raw = RawTable(synth.schema.names, synth.cells)
    cohort, _ = encode(raw, synth.schema)
    cohort = impute_zero(cohort)
    return Cohort(cohort.X, synth.Y, synth.schema, list(synth.ids), list(synth.task_names))


def write(synth: SynthCohort, out_dir, config: SynthConfig) -> dict:
    """Write data.csv, schema.json and manifest.json; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "data.csv", synth.header(), synth.rows())
    synth.schema.save(out / "schema.json")
    manifest = {
        "seed": config.seed,
        "n_rows": len(synth.ids),
        "positives": {name: int(synth.Y[:, j].sum()) for j, name in enumerate(synth.task_names)},
        "n_both": int((synth.Y.sum(axis=1) == 2).sum()),
        "n_negative": int((synth.Y.sum(axis=1) == 0).sum()),
        "tasks": list(synth.task_names),
        "id_column": "id",
        "informative_columns": synth.informative,
        "config": {**asdict(config), "task_names": list(config.task_names)},
        "files": {"data": "data.csv", "schema": "schema.json"},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
