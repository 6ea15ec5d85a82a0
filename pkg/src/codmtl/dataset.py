"""Tabular ingestion: schema, delimited-text loading, ordinal encoding,
zero imputation and stratified shuffled K-fold partitioning."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, SchemaError

KINDS = ("categorical", "numerical")
ROLES = ("donor", "recipient", "unspecified")
MISSING_TOKENS = frozenset({"", "NA", "NaN", "nan", "null", "None"})


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    role: str = "unspecified"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: kind must be one of {KINDS}, got {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"column {self.name!r}: role must be one of {ROLES}, got {self.role!r}")


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[Column, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if not self.columns:
            raise SchemaError("schema must contain at least one column")
        seen = set()
        for col in self.columns:
            if col.name in seen:
                raise SchemaError(f"duplicate column name {col.name!r}")
            seen.add(col.name)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def __len__(self):
        return len(self.columns)

    def indices(self, role: str | None = None, kind: str | None = None) -> list[int]:
        return [
            i for i, c in enumerate(self.columns)
            if (role is None or c.role == role) and (kind is None or c.kind == kind)
        ]

    def to_dict(self) -> dict:
        return {"columns": [{"name": c.name, "kind": c.kind, "role": c.role} for c in self.columns]}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        try:
            cols = [Column(c["name"], c["kind"], c.get("role", "unspecified")) for c in d["columns"]]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from exc
        return cls(tuple(cols))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        path = Path(path)
        if not path.is_file():
            raise SchemaError(f"schema file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"schema file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)


@dataclass
class RawTable:
    """Cell values as read from disk; ``None`` marks a missing cell."""

    header: list[str]
    rows: list[list[str | None]]

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> list[str | None]:
        try:
            j = self.header.index(name)
        except ValueError:
            raise SchemaError(f"column {name!r} not present in table") from None
        return [r[j] for r in self.rows]

    def take(self, rows: Sequence[int]) -> "RawTable":
        return RawTable(list(self.header), [self.rows[i] for i in rows])


@dataclass
class Cohort:
    X: np.ndarray
    Y: np.ndarray
    schema: FeatureSchema
    ids: list[str]
    task_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=np.int8).reshape(len(self.X), -1)
        if self.X.ndim != 2 or self.X.shape[1] != len(self.schema):
            raise DataError(f"X has shape {self.X.shape}, schema has {len(self.schema)} columns")
        if not (len(self.X) == len(self.Y) == len(self.ids)):
            raise DataError("row counts of X, Y and ids disagree")
        if self.Y.size and not np.isin(self.Y, (0, 1)).all():
            raise DataError("labels must be 0/1")
        if not self.task_names:
            self.task_names = [f"task{j}" for j in range(self.Y.shape[1])]

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.Y.shape[1]

    def has_missing(self) -> bool:
        return bool(np.isnan(self.X).any())

    def subset(self, rows) -> "Cohort":
        rows = np.asarray(rows)
        return Cohort(self.X[rows], self.Y[rows], self.schema, [self.ids[i] for i in rows], list(self.task_names))


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_rows: np.ndarray
    test_rows: np.ndarray


def load_table(path, schema: FeatureSchema, delimiter: str = ",",
               required: Iterable[str] = ()) -> RawTable:
    """Read a delimited file with a header row.

    Every schema column (plus any ``required`` extra column such as ids or
    labels) must appear in the header; additional columns are kept.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        for name in list(schema.names) + list(required):
            if name not in header:
                raise SchemaError(f"{path}: header is missing column {name!r}")
        rows = []
        for line_no, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise DataError(
                    f"{path}: line {line_no} has {len(record)} fields, header has {len(header)}"
                )
            rows.append([None if v.strip() in MISSING_TOKENS else v.strip() for v in record])
    return RawTable(header, rows)


def write_table(path, header: Sequence[str], rows: Iterable[Sequence], delimiter: str = ",") -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else v for v in r])


class CategoryEncoder:
    """Ordinal codes by first appearance, starting at 1; 0 means missing or unseen."""

    def __init__(self, code_maps: dict[str, dict[str, int]] | None = None):
        self.code_maps = {k: dict(v) for k, v in (code_maps or {}).items()}

    def fit(self, raw: RawTable, schema: FeatureSchema) -> "CategoryEncoder":
        for col in schema.columns:
            if col.kind != "categorical":
                continue
            codes: dict[str, int] = {}
            for v in raw.column(col.name):
                if v is not None and v not in codes:
                    codes[v] = len(codes) + 1
            self.code_maps[col.name] = codes
        return self

    def transform(self, raw: RawTable, schema: FeatureSchema) -> np.ndarray:
        X = np.empty((len(raw), len(schema)), dtype=float)
        for j, col in enumerate(schema.columns):
            values = raw.column(col.name)
            if col.kind == "categorical":
                codes = self.code_maps.get(col.name, {})
                X[:, j] = [codes.get(v, 0) if v is not None else 0 for v in values]
            else:
                for i, v in enumerate(values):
                    if v is None:
                        X[i, j] = np.nan
                        continue
                    try:
                        X[i, j] = float(v)
                    except ValueError:
                        raise DataError(
                            f"row {i + 1}, column {col.name!r}: cannot parse {v!r} as a number"
                        ) from None
        return X

    def decode(self, column: str, code: int) -> str | None:
        for value, c in self.code_maps[column].items():
            if c == code:
                return value
        return None

    def to_dict(self) -> dict:
        return {name: list(codes.items()) for name, codes in self.code_maps.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "CategoryEncoder":
        return cls({name: {str(k): int(v) for k, v in pairs} for name, pairs in d.items()})


def encode(raw: RawTable, schema: FeatureSchema,
           encoder: CategoryEncoder | None = None,
           id_column: str | None = None,
           label_columns: Sequence[str] = ()) -> tuple[Cohort, CategoryEncoder]:
    """Encode a raw table; fits a new encoder unless one is given.

    Missing numerical cells come back as NaN (see ``impute_zero``); missing
    or unseen categorical cells are 0.
    """
    if encoder is None:
        encoder = CategoryEncoder().fit(raw, schema)
    X = encoder.transform(raw, schema)
    if id_column is not None:
        ids = [v if v is not None else str(i) for i, v in enumerate(raw.column(id_column))]
    else:
        ids = [str(i) for i in range(len(raw))]
    Y = np.zeros((len(raw), len(label_columns)), dtype=np.int8)
    for j, name in enumerate(label_columns):
        for i, v in enumerate(raw.column(name)):
            if v not in ("0", "1"):
                raise DataError(f"row {i + 1}, label column {name!r}: expected 0 or 1, got {v!r}")
            Y[i, j] = int(v)
    return Cohort(X, Y, schema, ids, list(label_columns)), encoder


def impute_zero(cohort: Cohort) -> Cohort:
    X = np.where(np.isnan(cohort.X), 0.0, cohort.X)
    return Cohort(X, cohort.Y.copy(), cohort.schema, list(cohort.ids), list(cohort.task_names))


def kfold_split(cohort: Cohort, k: int, seed: int) -> list[FoldSplit]:
    """Shuffled K-fold, stratified on the joint label pattern.

    Rows are permuted, grouped by label pattern (stable), and dealt to folds
    round-robin with one running counter, so both per-pattern and total fold
    sizes differ by at most one.
    """
    n = cohort.n_rows
    if k < 2:
        raise DataError(f"K must be at least 2, got {k}")
    if k > n:
        raise DataError(f"K={k} exceeds the number of rows ({n})")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    if cohort.n_tasks:
        weights = 1 << np.arange(cohort.n_tasks, dtype=np.int64)
        pattern = cohort.Y.astype(np.int64) @ weights
    else:
        pattern = np.zeros(n, dtype=np.int64)
    order = perm[np.argsort(pattern[perm], kind="stable")]
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[order] = np.arange(n) % k
    all_rows = np.arange(n)
    return [
        FoldSplit(f, all_rows[fold_of != f], all_rows[fold_of == f])
        for f in range(k)
    ]


def load_cohort(data_path, schema: FeatureSchema, label_columns: Sequence[str],
                id_column: str | None = "id", delimiter: str = ",",
                encoder: CategoryEncoder | None = None) -> tuple[Cohort, CategoryEncoder]:
    """load_table -> encode -> impute_zero in one call."""
    required = list(label_columns) + ([id_column] if id_column else [])
    raw = load_table(data_path, schema, delimiter=delimiter, required=required)
    if len(raw) == 0:
        raise DataError(f"{data_path}: no data rows")
    cohort, encoder = encode(raw, schema, encoder, id_column=id_column, label_columns=label_columns)
    return impute_zero(cohort), encoder
