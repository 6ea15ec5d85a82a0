"""Cross-validated comparison of the five models, and the run configuration.

Every (fold, model, task) cell gets its own seed derived from the run seed,
so folds can be computed in any order or in parallel without changing a
single output byte.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Cohort, FeatureSchema, FoldSplit, kfold_split, load_cohort, write_table
from .distill import EmbeddingConfig
from .errors import ConfigError, DataError
from .gbdt import GBDTConfig, predict_margin, predict_proba, train_gbdt
from .metrics import (auprc, auroc, calibration_curve, calibration_slope_intercept, cv_aggregate,
                      pr_points, roc_points)
from .mtl import MTLConfig, derive_seed, fit_codmtl, train_baseline
from .synth import SynthConfig

MODELS = ("logreg", "gbdt", "mlp_single", "mtl_plain", "codmtl")
_MODEL_KEY = {m: i for i, m in enumerate(MODELS)}
METRICS = ("auroc", "auprc")


@dataclass
class RunConfig:
    data: Path | None = None
    schema: Path | None = None
    tasks: list[str] = field(default_factory=lambda: ["rejection", "infection"])
    id_column: str = "id"
    k: int = 4
    seed: int = 42
    out: Path | None = None
    gbdt: GBDTConfig = field(default_factory=GBDTConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    mtl: MTLConfig = field(default_factory=MTLConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    models: tuple[str, ...] = MODELS

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        if len(set(self.tasks)) != len(self.tasks) or not self.tasks:
            raise ConfigError("task names must be non-empty and unique")
        bad = [m for m in self.models if m not in MODELS]
        if bad:
            raise ConfigError(f"unknown model(s) {bad}; expected a subset of {list(MODELS)}")

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | str = ".") -> "RunConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base = Path(base_dir)

        def path(key):
            v = d.get(key)
            if v is None:
                return None
            p = Path(v)
            return p if p.is_absolute() else base / p

        try:
            return cls(
                data=path("data"),
                schema=path("schema"),
                tasks=list(d.get("tasks", ["rejection", "infection"])),
                id_column=d.get("id_column", "id"),
                k=int(d.get("k", 4)),
                seed=int(d.get("seed", 42)),
                out=path("out"),
                gbdt=GBDTConfig.from_dict(d.get("gbdt")),
                embedding=EmbeddingConfig.from_dict(d.get("embedding")),
                mtl=MTLConfig.from_dict(d.get("mtl")),
                synth=SynthConfig.from_dict(d.get("synth")),
                models=tuple(d.get("models", MODELS)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(d, path.parent)

    def echo(self) -> dict:
        """Config as plain JSON values; paths reduced to file names so reports stay portable."""
        return {
            "data": self.data.name if self.data else None,
            "schema": self.schema.name if self.schema else None,
            "tasks": list(self.tasks),
            "id_column": self.id_column,
            "k": self.k,
            "seed": self.seed,
            "models": list(self.models),
            "gbdt": asdict(self.gbdt),
            "embedding": asdict(self.embedding),
            "mtl": asdict(self.mtl),
        }

    def load_cohort(self):
        if self.schema is None or self.data is None:
            raise ConfigError("config needs both 'data' and 'schema' paths")
        if not self.schema.is_file():
            raise DataError(f"schema file not found: {self.schema}")
        schema = FeatureSchema.load(self.schema)
        return load_cohort(self.data, schema, self.tasks, id_column=self.id_column)


def cell_seed(run_seed: int, fold: int, model: str, task: int = 0) -> int:
    return derive_seed(run_seed, fold, _MODEL_KEY[model], task)


@dataclass
class FoldResult:
    fold: int
    test_rows: np.ndarray
    scores: dict[str, np.ndarray]             # model -> (n_test, M) probabilities
    gbdt_margin: np.ndarray | None = None     # (n_test, M)
    codmtl_logit: np.ndarray | None = None    # (n_test, M)
    seconds: dict[str, float] = field(default_factory=dict)


def run_fold(cohort: Cohort, fold: FoldSplit, cfg: RunConfig) -> FoldResult:
    f = fold.fold_index
    M = cohort.n_tasks
    tr, te = fold.train_rows, fold.test_rows
    Xte = cohort.X[te]
    out = FoldResult(f, te, {})
    need_gbdt = "gbdt" in cfg.models or "codmtl" in cfg.models

    t0 = time.perf_counter()
    gbdts = None
    if need_gbdt:
        gbdts = [train_gbdt(cohort.X[tr], cohort.Y[tr, j], cfg.gbdt) for j in range(M)]
        out.gbdt_margin = np.column_stack([predict_margin(g, Xte) for g in gbdts])
        out.scores["gbdt"] = np.column_stack([predict_proba(g, Xte) for g in gbdts])
    out.seconds["gbdt"] = time.perf_counter() - t0

    for kind in ("logreg", "mlp_single"):
        if kind not in cfg.models:
            continue
        t0 = time.perf_counter()
        cols = []
        for j in range(M):
            mc = cfg.mtl.replace(seed=cell_seed(cfg.seed, f, kind, j))
            net, _ = train_baseline(kind, cohort, fold, j, mc)
            cols.append(net.predict_proba(Xte))
        out.scores[kind] = np.column_stack(cols)
        out.seconds[kind] = time.perf_counter() - t0

    if "mtl_plain" in cfg.models:
        t0 = time.perf_counter()
        mc = cfg.mtl.replace(seed=cell_seed(cfg.seed, f, "mtl_plain"))
        model, _ = train_baseline("mtl_plain", cohort, fold, None, mc)
        out.scores["mtl_plain"] = model.predict_proba(Xte)
        out.seconds["mtl_plain"] = time.perf_counter() - t0

    if "codmtl" in cfg.models:
        t0 = time.perf_counter()
        mc = cfg.mtl.replace(seed=cell_seed(cfg.seed, f, "codmtl"))
        bundle = fit_codmtl(cohort, fold, cfg.gbdt, cfg.embedding, mc, task_gbdts=gbdts)
        out.codmtl_logit = bundle.model.logits(Xte)
        out.scores["codmtl"] = bundle.model.predict_proba(Xte)
        out.seconds["codmtl"] = time.perf_counter() - t0
    return out


def _run_fold_job(args):
    return run_fold(*args)


def _round(x: float) -> float:
    # fixed precision keeps the report stable against last-bit BLAS noise
    return float(f"{x:.12g}")


def run_benchmark(cohort: Cohort, cfg: RunConfig, jobs: int = 1) -> tuple[dict, list[FoldResult], dict]:
    """Returns ``(report, fold results, timings)``."""
    if cohort.n_tasks != len(cfg.tasks):
        raise DataError(f"cohort has {cohort.n_tasks} label columns, config names {len(cfg.tasks)}")
    folds = kfold_split(cohort, cfg.k, cfg.seed)
    t0 = time.perf_counter()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold_job, [(cohort, f, cfg) for f in folds]))
    else:
        results = [run_fold(cohort, f, cfg) for f in folds]
    results.sort(key=lambda r: r.fold)
    report = assemble_report(cohort, cfg, results)
    timings = {
        "total_seconds": time.perf_counter() - t0,
        "per_fold": [{"fold": r.fold, **r.seconds} for r in results],
    }
    return report, results, timings


def assemble_report(cohort: Cohort, cfg: RunConfig, results: list[FoldResult]) -> dict:
    tasks = list(cfg.tasks)
    invalid = {t: [] for t in tasks}
    for r in results:
        for j, t in enumerate(tasks):
            y = cohort.Y[r.test_rows, j]
            if y.min() == y.max():
                invalid[t].append(r.fold)

    models = {}
    for m in cfg.models:
        per_task = {}
        for j, t in enumerate(tasks):
            cell = {}
            for metric, fn in (("auroc", auroc), ("auprc", auprc)):
                vals = [_round(fn(r.scores[m][:, j], cohort.Y[r.test_rows, j]))
                        for r in results if r.fold not in invalid[t]]
                if vals:
                    rep = cv_aggregate(vals, metric, t)
                    cell[metric] = {"values": rep.values, "mean": _round(rep.mean), "std": _round(rep.std)}
                else:
                    cell[metric] = {"values": [], "mean": None, "std": None}
            # calibration on the pooled out-of-fold predictions
            s = np.concatenate([r.scores[m][:, j] for r in results])
            y = np.concatenate([cohort.Y[r.test_rows, j] for r in results])
            curve = calibration_curve(s, y)
            try:
                slope, intercept = calibration_slope_intercept(curve)
            except DataError:
                slope = intercept = None
            cell["calibration"] = {
                "slope": None if slope is None else _round(slope),
                "intercept": None if intercept is None else _round(intercept),
                "nonempty_bins": len(curve),
            }
            per_task[t] = cell
        models[m] = per_task

    report = {
        "config": cfg.echo(),
        "seeds": {
            "split": cfg.seed,
            "cells": {m: [[cell_seed(cfg.seed, r.fold, m, j) for j in range(len(tasks))] for r in results]
                      for m in cfg.models},
        },
        "n_rows": cohort.n_rows,
        "folds": [{"fold": r.fold, "n_test": int(r.test_rows.size)} for r in results],
        "invalid_folds": invalid,
        "models": models,
    }
    if "codmtl" in cfg.models and results and results[0].gbdt_margin is not None:
        fid = {}
        for j, t in enumerate(tasks):
            vals = [_round(np.corrcoef(r.codmtl_logit[:, j], r.gbdt_margin[:, j])[0, 1]) for r in results]
            fid[t] = {"values": vals, "mean": _round(float(np.mean(vals)))}
        report["distillation_fidelity"] = fid
    return report


def render_table(report: dict) -> str:
    """Aligned text table: one row per model, AUROC and AUPRC (mean ± std) per task."""
    tasks = report["config"]["tasks"]
    head = ["Model"] + [f"{t} {m.upper()}" for t in tasks for m in METRICS]
    rows = [head]
    for m, per_task in report["models"].items():
        row = [m]
        for t in tasks:
            for metric in METRICS:
                c = per_task[t][metric]
                row.append("n/a" if c["mean"] is None else f"{c['mean']:.3f} ± {c['std']:.3f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_curves(out_dir, model: str, task: str, fold, scores, labels) -> list[Path]:
    """ROC, PR and calibration CSVs for one (model, task, fold) cell."""
    d = Path(out_dir) / model / task
    d.mkdir(parents=True, exist_ok=True)
    y = np.asarray(labels)
    written = []
    stem = f"fold{fold}" if isinstance(fold, int) else str(fold)
    if y.min() != y.max():
        p = d / f"{stem}_roc.csv"
        write_table(p, ["fpr", "tpr"], ([_fmt(a), _fmt(b)] for a, b in roc_points(scores, y)))
        written.append(p)
    if y.max() == 1:
        p = d / f"{stem}_pr.csv"
        write_table(p, ["recall", "precision"], ([_fmt(a), _fmt(b)] for a, b in pr_points(scores, y)))
        written.append(p)
    curve = calibration_curve(scores, y)
    p = d / f"{stem}_calibration.csv"
    write_table(p, ["mean_predicted", "observed_fraction", "count"],
                ([_fmt(a), _fmt(b), int(c)] for a, b, c in curve.bins))
    written.append(p)
    return written


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def write_benchmark(out_dir, cohort: Cohort, cfg: RunConfig, report: dict,
                    results: list[FoldResult], timings: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "table.txt").write_text(render_table(report))
    (out / "timings.json").write_text(json.dumps(timings, indent=2) + "\n")
    for r in results:
        for m, scores in r.scores.items():
            for j, t in enumerate(cfg.tasks):
                write_curves(out / "curves", m, t, r.fold, scores[:, j], cohort.Y[r.test_rows, j])
