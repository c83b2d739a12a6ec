"""Command-line front door: ``srkd train | eval | geometry | sweep``.

Exit codes: 0 success, 1 other runtime failure, 2 configuration error,
3 training divergence, 4 file or format error.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from srkd import evaluation as ev
from srkd import io as sio
from srkd.geometry import GeometryError, geometry_report

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3, 4

log = logging.getLogger("srkd")

# CLI flag -> flat config key
TRAIN_FLAGS = {
    "mode": ("train.mode", str),
    "epochs": ("train.epochs", int),
    "batch_size": ("train.batch_size", int),
    "lr": ("train.learning_rate", float),
    "tau_kd": ("train.tau_kd", float),
    "lambda0": ("train.lambda0", float),
    "beta0": ("train.beta0", float),
    "r": ("train.min_ratio", float),
    "epsilon": ("train.epsilon", float),
    "lambda_feat": ("train.lambda_feat", float),
    "seed": ("train.seed", int),
}

GRID_AXES = {
    "beta0": "train.beta0",
    "epsilon": "train.epsilon",
    "lambda_feat": "train.lambda_feat",
    "mode": "train.mode",
    "r": "train.min_ratio",
    "seed": "train.seed",
}

SUMMARY_COLUMNS = (
    "cell", "status", "mode", "beta0", "min_ratio", "epsilon", "lambda_feat", "seed",
    "f1_macro", "f1_all", "validity_rate", "avg_selection",
    "d_eff", "rank95", "silhouette", "intra_cosine", "inter_cosine", "uniformity", "error",
)


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _config_errors():
    from srkd.train import ConfigError
    return (sio.ConfigFileError, ConfigError, TypeError, ValueError)


def resolve_flat_config(args) -> dict:
    flat = {}
    if getattr(args, "manifest", None):
        try:
            manifest = json.loads(Path(args.manifest).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CLIError(f"cannot read manifest {args.manifest}: {exc}", EXIT_CONFIG) from exc
        for section in ("train", "corpus", "teacher"):
            for k, v in manifest.get(section, {}).items():
                flat[f"{section}.{k}"] = v
    if getattr(args, "config", None):
        flat.update(sio.load_config_file(args.config))
    for flag, (key, _) in TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            flat[key] = value
    return flat


def _build_spec(flat: dict):
    from srkd.experiment import RunSpec
    try:
        return RunSpec.from_flat(flat)
    except _config_errors() as exc:
        raise CLIError(f"config error: {exc}", EXIT_CONFIG) from exc


def cmd_train(args) -> int:
    from srkd.experiment import run
    from srkd.train import DivergenceError, TeacherTrainingError

    try:
        flat = resolve_flat_config(args)
    except sio.ConfigFileError as exc:
        raise CLIError(str(exc), EXIT_CONFIG) from exc
    spec = _build_spec(flat)
    try:
        result = run(spec, args.out_dir)
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except TeacherTrainingError as exc:
        print(f"teacher pretraining failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        raise CLIError(f"io error: {exc}", EXIT_IO) from exc
    print(sio.dumps_exact({"status": result.status, "eval": result.eval, "geometry": result.geometry}))
    return EXIT_OK


def _read_emb(path):
    try:
        return sio.read_embeddings(path)
    except OSError as exc:
        raise CLIError(f"cannot read {path}: {exc}", EXIT_IO) from exc
    except sio.FormatError as exc:
        raise CLIError(f"{path}: {exc}", EXIT_IO) from exc


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CLIError(f"cannot read {path}: {exc}", EXIT_IO) from exc


def evaluate_files(images, labels, prompts, fine_classes=None, chart=None, measures=None) -> ev.EvalReport:
    """EvalReport from embedding arrays, mirroring the in-process toy evaluation."""
    x = np.asarray(images, dtype=np.float64)
    x = x / np.linalg.norm(x, axis=1, keepdims=True)
    k = prompts.shape[0]
    bank = ev.PromptBank(tuple(range(k)), prompts)
    labels = np.asarray(labels, dtype=np.int64)
    preds = ev.zero_shot_classify(x, bank)
    per_class, macro = ev.macro_f1(preds, labels, k)
    extras = {}
    if fine_classes:
        g = list(fine_classes)
        coarse = [c for c in range(k) if c not in g]
        f1_coarse = float(np.mean(per_class[coarse])) if coarse else macro
        mask = np.isin(labels, g)
        sub_bank = ev.PromptBank(tuple(g), bank.embeddings[g])
        fine_preds = ev.zero_shot_classify(x[mask], sub_bank)
        _, f1_fine = ev.macro_f1(fine_preds, np.searchsorted(g, labels[mask]), len(g))
        fa = ev.f1_all(f1_coarse, f1_fine, (len(coarse), len(g)))
        extras = {"f1_coarse": f1_coarse, "f1_fine": f1_fine}
    else:
        fa = macro
    validity = None
    avg = None
    if chart is not None and measures is not None:
        c = ev.PercentileChart(chart["lower"], chart["upper"])
        bin_classes = list(chart.get("classes") or range(len(c.lower)))
        m = np.array([np.nan if v is None else v for v in measures], dtype=np.float64)
        if m.shape[0] != x.shape[0]:
            raise CLIError(f"{m.shape[0]} measures for {x.shape[0]} embeddings", EXIT_IO)
        has = ~np.isnan(m)
        bin_bank = ev.PromptBank(tuple(bin_classes), bank.embeddings[bin_classes])
        bins = ev.zero_shot_classify(x[has], bin_bank)
        validity, _ = ev.validity_rate(bins, m[has], c)
        avg = ev.avg_selection(fa, 100.0 * validity)
    return ev.EvalReport([float(v) for v in per_class], macro, fa, validity, avg, extras)


def cmd_eval(args) -> int:
    values, labels = _read_emb(args.embeddings)
    if labels is None:
        raise CLIError(f"{args.embeddings}: labels required for evaluation", EXIT_IO)
    prompts, _ = _read_emb(args.prompts) if args.prompts else (values, labels)
    if not args.prompts:
        # self-matching: each class prompt is the mean of its own embeddings
        k = int(labels.max()) + 1
        prompts = np.stack([values[labels == c].astype(np.float64).mean(axis=0) for c in range(k)])
    chart = _read_json(args.chart) if args.chart else None
    measures = _read_json(args.measures) if args.measures else None
    fine = None
    if args.fine_classes:
        fine = [int(v) for v in args.fine_classes.split(",")]
    elif chart and chart.get("classes"):
        fine = list(chart["classes"])
    try:
        report = evaluate_files(values, labels, np.asarray(prompts, dtype=np.float64),
                                fine, chart, measures)
    except ev.EvalError as exc:
        raise CLIError(f"evaluation error: {exc}", EXIT_IO) from exc
    print(sio.dumps_exact(report.to_dict()))
    return EXIT_OK


def cmd_geometry(args) -> int:
    values, labels = _read_emb(args.embeddings)
    if labels is None:
        raise CLIError(f"{args.embeddings}: labels required for geometry", EXIT_IO)
    try:
        report = geometry_report(values.astype(np.float64), labels.astype(np.int64), args.t)
    except GeometryError as exc:
        raise CLIError(f"geometry error: {exc}", EXIT_IO) from exc
    print(sio.dumps_exact(report.to_dict()))
    return EXIT_OK


def grid_cells(grid: dict) -> list[dict]:
    """Cartesian product over grid axes in lexicographic axis order."""
    unknown = sorted(set(grid) - set(GRID_AXES))
    if unknown:
        raise sio.ConfigFileError(f"unknown grid axis {unknown[0]!r}")
    axes = sorted(grid)
    values = [grid[a] if isinstance(grid[a], list) else [grid[a]] for a in axes]
    return [dict(zip(axes, combo)) for combo in itertools.product(*values)]


def _cell_name(i: int, cell: dict) -> str:
    parts = "_".join(f"{k}-{v}" for k, v in cell.items())
    return f"cell{i:03d}_{parts}"


def _run_cell(base_flat: dict, cell: dict, out_dir: str) -> dict:
    from srkd.experiment import RunSpec, run
    from srkd.train import DivergenceError

    flat = dict(base_flat)
    for axis, value in cell.items():
        flat[GRID_AXES[axis]] = value
    row = {"status": "failed", "error": ""}
    try:
        spec = RunSpec.from_flat(flat)
        row.update({"mode": spec.train.mode.value, "beta0": spec.train.beta0,
                    "min_ratio": spec.train.min_ratio, "epsilon": spec.train.epsilon,
                    "lambda_feat": spec.train.lambda_feat, "seed": spec.train.seed})
        result = run(spec, out_dir)
        row.update(result.eval)
        row.update(result.geometry)
        row["status"] = "ok"
    except DivergenceError as exc:
        row["error"] = f"diverged at epoch {exc.epoch}"
    except Exception as exc:  # partial-failure policy: record and continue
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _tsv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.6g" % v
    return str(v).replace("\t", " ").replace("\n", " ")


def cmd_sweep(args) -> int:
    try:
        base = sio.load_config_file(args.config) if args.config else {}
        grid = sio.load_config_file(args.grid)
        grid = {k.removeprefix("grid."): v for k, v in grid.items()}
        cells = grid_cells(grid)
    except sio.ConfigFileError as exc:
        raise CLIError(str(exc), EXIT_CONFIG) from exc
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = [_cell_name(i, c) for i, c in enumerate(cells)]
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_run_cell, [base] * len(cells), cells, [str(out / n) for n in names]))
    else:
        rows = [_run_cell(base, c, str(out / n)) for c, n in zip(cells, names)]
    lines = ["\t".join(SUMMARY_COLUMNS)]
    for name, cell, row in zip(names, cells, rows):
        row["cell"] = name
        for axis, value in cell.items():
            row.setdefault("min_ratio" if axis == "r" else axis, value)
        lines.append("\t".join(_tsv_value(row.get(c)) for c in SUMMARY_COLUMNS))
    (out / "summary.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows) - failed}/{len(rows)} cells complete; summary at {out / 'summary.tsv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="srkd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one student and write its artifacts")
    t.add_argument("--config", help="TOML file of dotted keys (train.*, corpus.*, teacher.*)")
    t.add_argument("--manifest", help="rerun from a previous run's manifest.json")
    t.add_argument("--mode")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--tau-kd", dest="tau_kd", type=float)
    t.add_argument("--lambda0", type=float)
    t.add_argument("--beta0", type=float)
    t.add_argument("--r", type=float)
    t.add_argument("--epsilon", type=float)
    t.add_argument("--lambda-feat", dest="lambda_feat", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--out-dir", dest="out_dir", default="runs/latest")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="zero-shot EvalReport from embedding files")
    e.add_argument("embeddings")
    e.add_argument("--prompts", help="per-class prompt embeddings (row k is class k)")
    e.add_argument("--chart", help="percentile chart JSON {lower, upper, classes}")
    e.add_argument("--measures", help="JSON list of true measures per row (null if absent)")
    e.add_argument("--fine-classes", dest="fine_classes", help="comma-separated fine-grained group")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("geometry", help="GeometryReport from an embedding file")
    g.add_argument("embeddings")
    g.add_argument("--t", type=float, default=2.0, help="uniformity temperature")
    g.set_defaults(func=cmd_geometry)

    s = sub.add_parser("sweep", help="run a grid of training configurations")
    s.add_argument("--config", help="base TOML config")
    s.add_argument("--grid", required=True, help="TOML grid over mode, beta0, r, epsilon, lambda_feat, seed")
    s.add_argument("--out-dir", dest="out_dir", default="runs/sweep")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
