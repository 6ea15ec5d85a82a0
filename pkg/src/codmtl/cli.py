"""Command-line front end: synth, train, benchmark, predict, export-curves.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import synth as synth_mod
from .benchmark import RunConfig, run_benchmark, write_benchmark, write_curves
from .dataset import load_table, encode, impute_zero, write_table
from .errors import CodMTLError, ConfigError, DataError
from .mtl import CoDMTLModel, fit_codmtl

ENV_OUTPUT_DIR = "CODMTL_OUTPUT_DIR"


def _out_dir(args, cfg: RunConfig) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.out is not None:
        return cfg.out
    return Path(os.environ.get(ENV_OUTPUT_DIR, "codmtl_out"))


def _ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory is not writable: {path}")
    return path


def load_run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed, synth=cfg.synth.replace(seed=args.seed))
    if getattr(args, "k", None) is not None:
        cfg = replace(cfg, k=args.k)
    if getattr(args, "top_k", None) is not None:
        cfg = replace(cfg, mtl=cfg.mtl.replace(top_k=args.top_k))
    return cfg


def cmd_synth(args) -> int:
    cfg = load_run_config(args)
    out = _ensure_dir(_out_dir(args, cfg))
    data = synth_mod.generate(cfg.synth)
    manifest = synth_mod.write(data, out, cfg.synth)
    print(f"wrote {manifest['n_rows']} rows to {out / 'data.csv'}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    cohort, encoder = cfg.load_cohort()
    out = _ensure_dir(_out_dir(args, cfg))
    bundle = fit_codmtl(cohort, None, cfg.gbdt, cfg.embedding, cfg.mtl.replace(seed=cfg.seed))
    bundle.model.encoder = encoder
    art = bundle.to_dict()
    history = art.pop("history")
    (out / "model.json").write_text(json.dumps(art) + "\n")
    (out / "history.json").write_text(json.dumps(history, indent=2) + "\n")
    print(f"trained on {cohort.n_rows} rows; artifact {out / 'model.json'}")
    return 0


def load_artifact(path) -> CoDMTLModel:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"model artifact not found: {path}")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a valid model artifact ({exc})") from exc
    return CoDMTLModel.from_dict(d["model"] if "model" in d else d)


def _artifact_path(args, cfg: RunConfig) -> Path:
    return Path(args.model) if args.model else _out_dir(args, cfg) / "model.json"


def _predict_rows(model: CoDMTLModel, data_path, id_column: str, label_columns=()):
    if model.schema is None or model.encoder is None:
        raise DataError("model artifact carries no schema/encoder")
    raw = load_table(data_path, model.schema, required=[id_column, *label_columns])
    cohort, _ = encode(raw, model.schema, model.encoder, id_column=id_column, label_columns=label_columns)
    cohort = impute_zero(cohort)
    return cohort, model.predict_proba(cohort.X)


def cmd_predict(args) -> int:
    cfg = load_run_config(args)
    model = load_artifact(_artifact_path(args, cfg))
    data = Path(args.data) if args.data else cfg.data
    if data is None:
        raise ConfigError("no data file: pass --data or set 'data' in the config")
    cohort, P = _predict_rows(model, data, cfg.id_column)
    out = _ensure_dir(_out_dir(args, cfg))
    path = out / "predictions.csv"
    write_table(path, [cfg.id_column] + list(model.task_names),
                ([i, *(f"{p:.10g}" for p in row)] for i, row in zip(cohort.ids, P)))
    print(f"wrote {len(cohort.ids)} predictions to {path}")
    return 0


def cmd_export_curves(args) -> int:
    cfg = load_run_config(args)
    model = load_artifact(_artifact_path(args, cfg))
    data = Path(args.data) if args.data else cfg.data
    if data is None:
        raise ConfigError("no data file: pass --data or set 'data' in the config")
    cohort, P = _predict_rows(model, data, cfg.id_column, model.task_names)
    out = _ensure_dir(_out_dir(args, cfg) / "curves_export")
    n = 0
    for j, t in enumerate(model.task_names):
        n += len(write_curves(out, "codmtl", t, "all", P[:, j], cohort.Y[:, j]))
    print(f"wrote {n} curve files under {out}")
    return 0


def cmd_benchmark(args) -> int:
    cfg = load_run_config(args)
    cohort, _ = cfg.load_cohort()
    out = _ensure_dir(_out_dir(args, cfg))
    report, results, timings = run_benchmark(cohort, cfg, jobs=max(1, args.jobs))
    write_benchmark(out, cohort, cfg, report, results, timings)
    sys.stdout.write((out / "table.txt").read_text())
    for t, folds in report["invalid_folds"].items():
        if folds:
            print(f"warning: task {t}: folds {folds} have single-class test labels and were skipped",
                  file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="codmtl", description="Tree-distilled multi-task outcome models")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help=f"output directory (default: config 'out', ${ENV_OUTPUT_DIR}, ./codmtl_out)")
        return p

    common(sub.add_parser("synth", help="generate a synthetic cohort")).set_defaults(func=cmd_synth)
    p = common(sub.add_parser("train", help="fit the multi-task model on all rows"))
    p.add_argument("--top-k", type=int, dest="top_k")
    p.set_defaults(func=cmd_train)
    p = common(sub.add_parser("benchmark", help="K-fold comparison of all models"))
    p.add_argument("--k", type=int)
    p.add_argument("--top-k", type=int, dest="top_k")
    p.add_argument("--jobs", type=int, default=1, help="parallel fold workers")
    p.set_defaults(func=cmd_benchmark)
    for name, func, helptext in (("predict", cmd_predict, "per-row task probabilities"),
                                 ("export-curves", cmd_export_curves, "ROC/PR/calibration files")):
        p = common(sub.add_parser(name, help=helptext))
        p.add_argument("--model", help="model artifact (default: <out>/model.json)")
        p.add_argument("--data", help="data file (default: config 'data')")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    np.seterr(over="ignore", under="ignore")
    try:
        return args.func(args)
    except CodMTLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
