"""Command-line interface tying ingestion, simulation, fitting, tuning,
prediction, evaluation, and norm-tensor export into reproducible runs.

Every command writes a ``manifest.json`` beside its outputs recording the
command line, the seed, SHA-256 checksums of inputs and outputs, and the
wall time.  Data artifacts are byte-reproducible given identical inputs and
seed; the wall-time field is the one value that varies between runs.

Exit codes: 0 success, 1 numerical failure (non-convergence under
``--strict``), 2 usage/IO/schema errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from .dataset import Dataset, load_dataset, minmax_rescale, save_dataset
from .model import load_model, save_model
from .solver import FitConfig, fit
from .synth import CaseSpec, generate_case, ise, load_truth, save_truth
from .tensor_ops import read_matrix_csv, read_tensor, write_tensor
from .tuning import (
    DEFAULT_LAMBDA1S,
    DEFAULT_LAMBDA2S,
    DEFAULT_RANKS,
    GridSpec,
    grid_search,
    split_dataset,
    validation_error,
    write_tuning_table,
)

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad flags, unreadable files, or schema mismatches; maps to exit 2."""


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(out_dir, command: str, seed, inputs, outputs,
                   config_path=None, wall_time_s: float = 0.0) -> Path:
    manifest = {
        "command": command,
        "config_path": None if config_path is None else str(config_path),
        "seed": seed,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
        "wall_time_s": wall_time_s,
    }
    path = Path(out_dir) / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def verify_manifest(path) -> list[str]:
    """Recompute every checksum recorded in a manifest; returns mismatches."""
    with open(path) as fh:
        manifest = json.load(fh)
    problems = []
    for section in ("inputs", "outputs"):
        for file_path, digest in manifest.get(section, {}).items():
            if not Path(file_path).exists():
                problems.append(f"{file_path}: missing")
            elif sha256_file(file_path) != digest:
                problems.append(f"{file_path}: checksum mismatch")
    return problems


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------

_FIT_FLAG_FIELDS = [f.name for f in dataclass_fields(FitConfig)]


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    unknown = set(payload) - set(_FIT_FLAG_FIELDS) - {
        "ranks", "lambda1s", "lambda2s", "split_fraction", "workers"
    }
    if unknown:
        raise UsageError(f"config {path} has unknown keys: {sorted(unknown)}")
    return payload


def build_fit_config(args, config: dict) -> FitConfig:
    """Defaults, overridden by the config file, overridden by flags."""
    values = {}
    for name in _FIT_FLAG_FIELDS:
        if name in config:
            values[name] = config[name]
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    try:
        cfg = FitConfig(**values)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad fit configuration: {exc}") from exc
    return cfg


def add_fit_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON file of fit defaults; flags override it")
    parser.add_argument("--rank", dest="rank", type=int, default=None)
    parser.add_argument("--lambda1", dest="lambda1", type=float, default=None)
    parser.add_argument("--lambda2", dest="lambda2", type=float, default=None)
    parser.add_argument("--n-basis", dest="n_basis", type=int, default=None,
                        help="spline basis size K (default 7)")
    parser.add_argument("--spline-order", dest="spline_order", type=int, default=None,
                        help="spline order (default 4, cubic)")
    parser.add_argument("--epsilon", dest="epsilon", type=float, default=None)
    parser.add_argument("--absolute-epsilon", dest="absolute_epsilon",
                        action="store_true", default=None,
                        help="stop on absolute rather than relative objective decrease")
    parser.add_argument("--max-iters", dest="max_iters", type=int, default=None)
    parser.add_argument("--seed", dest="seed", type=int, default=None)
    parser.add_argument("--init", dest="init", choices=["random", "sequential_downsize"],
                        default=None)
    parser.add_argument("--init-size-constant", dest="init_size_constant",
                        type=float, default=None)
    parser.add_argument("--init-ladder-steps", dest="init_ladder_steps",
                        type=int, default=None)
    parser.add_argument("--init-max-iters", dest="init_max_iters", type=int, default=None)
    parser.add_argument("--unpenalized", dest="unpenalized", action="store_true",
                        default=None)
    parser.add_argument("--cache-budget-bytes", dest="cache_budget_bytes",
                        type=int, default=None)


def _parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated number list, got {text!r}") from exc


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from exc


def _require_file(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"no such file: {path}")
    return path


def _load_dataset(path) -> tuple[Dataset, dict]:
    directory = Path(path)
    if not directory.is_dir():
        raise UsageError(f"no such dataset directory: {directory}")
    try:
        return load_dataset(directory)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot load dataset {directory}: {exc}") from exc


def _dataset_files(directory) -> list[Path]:
    directory = Path(directory)
    return [directory / "data.bin", directory / "y.csv", directory / "meta.json"]


def _write_float_csv(path, header: str, values) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for value in np.asarray(values).ravel():
            fh.write(f"{float(value)!r}\n")


def write_pgm(path, matrix: np.ndarray) -> None:
    """8-bit grayscale PGM (P5) scaled so the largest entry maps to 255."""
    mat = np.asarray(matrix, dtype=np.float64)
    if mat.ndim != 2:
        raise UsageError("PGM export needs an order-2 norm tensor")
    peak = float(mat.max())
    scaled = np.zeros_like(mat) if peak <= 0 else mat / peak * 255.0
    data = np.round(scaled).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{mat.shape[1]} {mat.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    started = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    masks = None
    inputs: list[Path] = []
    if args.masks:
        masks = []
        for mask_path in args.masks.split(","):
            mask_path = _require_file(mask_path)
            inputs.append(mask_path)
            masks.append(_read_values_file(mask_path))
        masks = tuple(masks)
    try:
        spec = CaseSpec(
            case=args.case,
            dims=tuple(_parse_ints(args.dims)),
            n=args.n,
            noise_ratio=args.noise_ratio,
            seed=args.seed,
            masks=masks,
        )
        data, truth = generate_case(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    outputs = save_dataset(out, data, seed=args.seed)
    truth_path = out / "truth.json"
    save_truth(truth_path, truth)
    outputs.append(truth_path)
    write_manifest(out, "simulate", args.seed, inputs, outputs,
                   wall_time_s=time.perf_counter() - started)
    return EXIT_OK


def _fit_with_path(train, cfg, lambda1_path, progress=None):
    """Replay an ascending warm-start path ending at cfg.lambda1."""
    from dataclasses import replace

    result = None
    start = None
    for lam in lambda1_path:
        result = fit(train, replace(cfg, lambda1=lam), start=start, progress=progress)
        start = result.model
    return result


def cmd_fit(args) -> int:
    started = time.perf_counter()
    data, _meta = _load_dataset(args.data)
    config = _load_config(args.config)
    cfg = build_fit_config(args, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.validation_fraction is not None:
        try:
            train, valid = split_dataset(data, args.validation_fraction, cfg.seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    else:
        train, valid = data, None

    lambda1_path = [cfg.lambda1]
    if args.lambda1_path:
        path_values = sorted(set(_parse_floats(args.lambda1_path)))
        if not path_values or path_values[-1] != cfg.lambda1:
            raise UsageError("--lambda1-path must be an ascending list ending at --lambda1")
        lambda1_path = path_values

    progress = None
    if args.progress:
        def progress(record):
            sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")

    result = _fit_with_path(train, cfg, lambda1_path, progress=progress)

    model_path = out / "model.json"
    save_model(model_path, result.model)
    trace_path = out / "trace.csv"
    with open(trace_path, "w") as fh:
        fh.write("iter,LG,L,G\n")
        for i, (lg, loss, pen) in enumerate(
            zip(result.objective_trace, result.loss_trace, result.penalty_trace)
        ):
            fh.write(f"{i},{float(lg)!r},{float(loss)!r},{float(pen)!r}\n")
    metrics = {
        "converged": result.converged,
        "iterations": result.iterations,
        "objective": result.objective_trace[-1],
        "train_mse": result.loss_trace[-1] / train.n,
    }
    if valid is not None:
        metrics["validation_error"] = validation_error(result.model, valid)
    metrics_path = out / "metrics.json"
    with open(metrics_path, "w") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=2)
        fh.write("\n")

    write_manifest(
        out, "fit", cfg.seed, _dataset_files(args.data),
        [model_path, trace_path, metrics_path],
        config_path=args.config,
        wall_time_s=time.perf_counter() - started,
    )
    if args.strict and not result.converged:
        sys.stderr.write(
            f"error: solver stopped after {result.iterations} iterations without "
            f"meeting the convergence threshold\n"
        )
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_tune(args) -> int:
    started = time.perf_counter()
    data, _meta = _load_dataset(args.data)
    config = _load_config(args.config)
    cfg = build_fit_config(args, config)
    try:
        grid = GridSpec(
            ranks=tuple(_parse_ints(args.ranks)) if args.ranks else tuple(config.get("ranks", DEFAULT_RANKS)),
            lambda1s=tuple(_parse_floats(args.lambda1s)) if args.lambda1s else tuple(config.get("lambda1s", DEFAULT_LAMBDA1S)),
            lambda2s=tuple(_parse_floats(args.lambda2s)) if args.lambda2s else tuple(config.get("lambda2s", DEFAULT_LAMBDA2S)),
            split_fraction=args.split_fraction if args.split_fraction is not None else float(config.get("split_fraction", 0.2)),
            seed=cfg.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    workers = args.workers if args.workers is not None else int(config.get("workers", 1))
    best, table = grid_search(data, grid, cfg, workers=workers)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table_path = out / "tuning.csv"
    write_tuning_table(table_path, table)
    model_path = out / "model.json"
    save_model(model_path, best.model)
    best_cell = min(table, key=lambda c: (c.validation_error, c.rank, -c.lambda1, -c.lambda2))
    best_path = out / "best_cell.json"
    with open(best_path, "w") as fh:
        json.dump(
            {
                "rank": best_cell.rank,
                "lambda1": best_cell.lambda1,
                "lambda2": best_cell.lambda2,
                "validation_error": best_cell.validation_error,
                "iterations": best_cell.iterations,
                "converged": best_cell.converged,
            },
            fh, sort_keys=True, indent=2,
        )
        fh.write("\n")
    write_manifest(
        out, "tune", cfg.seed, _dataset_files(args.data),
        [table_path, model_path, best_path],
        config_path=args.config,
        wall_time_s=time.perf_counter() - started,
    )
    return EXIT_OK


def cmd_predict(args) -> int:
    started = time.perf_counter()
    model_path = _require_file(args.model)
    try:
        model = load_model(model_path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot load model {model_path}: {exc}") from exc
    data, _meta = _load_dataset(args.data)
    try:
        predictions = model.predict(data.covariates, clamp=args.clamp)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _write_float_csv(out_path, "prediction", predictions)
    write_manifest(
        out_path.parent, "predict", None,
        [model_path, *_dataset_files(args.data)], [out_path],
        wall_time_s=time.perf_counter() - started,
    )
    return EXIT_OK


def cmd_eval_ise(args) -> int:
    started = time.perf_counter()
    model_path = _require_file(args.model)
    truth_path = _require_file(args.truth)
    try:
        model = load_model(model_path)
        truth = load_truth(truth_path)
        result = ise(model, truth, mc_points=args.mc_points, seed=args.seed, clamp=args.clamp)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(str(exc)) from exc
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as fh:
        json.dump(
            {
                "ise": result.estimate,
                "stderr": result.stderr,
                "mc_points": result.mc_points,
                "seed": args.seed,
            },
            fh, sort_keys=True, indent=2,
        )
        fh.write("\n")
    write_manifest(
        out_path.parent, "eval-ise", args.seed,
        [model_path, truth_path], [out_path],
        wall_time_s=time.perf_counter() - started,
    )
    return EXIT_OK


def cmd_norm_tensor(args) -> int:
    started = time.perf_counter()
    model_path = _require_file(args.model)
    try:
        model = load_model(model_path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot load model {model_path}: {exc}") from exc
    norms = model.norm_tensor()
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    outputs = [out_path]
    if out_path.suffix == ".csv":
        if norms.ndim != 2:
            raise UsageError("CSV export needs an order-2 norm tensor; use a .bin path")
        with open(out_path, "w") as fh:
            for row in norms:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    else:
        write_tensor(out_path, norms)
    if args.pgm:
        pgm_path = Path(args.pgm)
        write_pgm(pgm_path, norms)
        outputs.append(pgm_path)
    write_manifest(
        out_path.parent, "norm-tensor", None, [model_path], outputs,
        wall_time_s=time.perf_counter() - started,
    )
    return EXIT_OK


def _read_values_file(path) -> np.ndarray:
    path = Path(path)
    try:
        if path.suffix == ".csv":
            return read_matrix_csv(path)
        return read_tensor(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc


def _read_responses(path) -> np.ndarray:
    path = _require_file(path)
    try:
        with open(path) as fh:
            lines = [line.strip() for line in fh if line.strip()]
        if lines and lines[0] == "y":
            lines = lines[1:]
        return np.array([float(line) for line in lines])
    except ValueError as exc:
        raise UsageError(f"cannot parse responses {path}: {exc}") from exc


def cmd_ingest(args) -> int:
    started = time.perf_counter()
    values_path = _require_file(args.values)
    if values_path.suffix == ".csv" and not args.dims:
        raise UsageError("CSV values hold one flattened sample per row; pass --dims")
    raw = _read_values_file(values_path)
    responses = _read_responses(args.responses)
    inputs = [values_path, Path(args.responses)]

    if args.dims:
        dims = tuple(_parse_ints(args.dims))
        size = int(np.prod(dims))
        if raw.ndim == 2 and raw.shape[1] == size:
            # CSV rows are flattened samples in canonical order
            stacked = raw.reshape((raw.shape[0], *dims[::-1]))
            covariates = stacked.transpose((0, *range(len(dims), 0, -1)))
        elif raw.shape[:-1] == dims:
            covariates = np.moveaxis(raw, -1, 0)
        else:
            raise UsageError(f"values shape {raw.shape} does not match dims {dims}")
    else:
        if raw.ndim < 2:
            raise UsageError("values must stack samples along the trailing mode")
        covariates = np.moveaxis(raw, -1, 0)

    if covariates.shape[0] != responses.shape[0]:
        raise UsageError(
            f"{covariates.shape[0]} samples but {responses.shape[0]} responses"
        )
    if not np.all(np.isfinite(covariates)):
        raise UsageError("covariate values must be finite")

    extrema = None
    if args.apply_extrema:
        meta_path = _require_file(args.apply_extrema)
        with open(meta_path) as fh:
            stored = json.load(fh).get("extrema")
        if stored is None:
            raise UsageError(f"{meta_path} records no extrema to apply")
        extrema = (float(stored[0]), float(stored[1]))
        inputs.append(meta_path)

    scaled, extrema = minmax_rescale(covariates, extrema)
    out = Path(args.out)
    outputs = save_dataset(out, Dataset(scaled, responses), seed=args.seed, extrema=extrema)
    write_manifest(out, "ingest", args.seed, inputs, outputs,
                   wall_time_s=time.perf_counter() - started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="broadcastreg",
        description="Broadcast tensor regression: simulate, fit, tune, predict, "
        "evaluate, and export region-selection norm tensors.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic benchmark dataset")
    p.add_argument("--case", type=int, required=True, choices=[1, 2, 3, 4])
    p.add_argument("--dims", default="64,64", help="covariate shape, e.g. 64,64")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--noise-ratio", type=float, default=0.10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--masks", default=None,
                   help="comma-separated mask files overriding the default regions")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("fit", help="fit one model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--validation-fraction", type=float, default=None,
                   help="hold out this share for a reported validation error")
    p.add_argument("--lambda1-path", default=None,
                   help="ascending lambda1 values to warm-start through, ending at --lambda1")
    p.add_argument("--strict", action="store_true",
                   help="exit 1 when the solver does not converge")
    p.add_argument("--progress", action="store_true",
                   help="stream per-iteration JSON records to stderr")
    add_fit_flags(p)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("tune", help="grid search over (rank, lambda1, lambda2)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ranks", default=None)
    p.add_argument("--lambda1s", default=None)
    p.add_argument("--lambda2s", default=None)
    p.add_argument("--split-fraction", type=float, default=None)
    p.add_argument("--workers", type=int, default=None)
    add_fit_flags(p)
    p.set_defaults(handler=cmd_tune)

    p = sub.add_parser("predict", help="predict responses for a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clamp", action="store_true",
                   help="clip entries into [0, 1] instead of failing")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("eval-ise", help="Monte Carlo integrated squared error vs a truth file")
    p.add_argument("--model", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--mc-points", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clamp", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_eval_ise)

    p = sub.add_parser("norm-tensor", help="export the fitted per-entry effect norms")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True,
                   help=".csv for order-2 tensors, .bin otherwise")
    p.add_argument("--pgm", default=None, help="also write a grayscale heatmap")
    p.set_defaults(handler=cmd_norm_tensor)

    p = sub.add_parser("ingest", help="min-max rescale raw values into a dataset directory")
    p.add_argument("--values", required=True,
                   help="tensor .bin with samples as the trailing mode, or .csv rows")
    p.add_argument("--responses", required=True)
    p.add_argument("--dims", default=None,
                   help="required for CSV rows: the per-sample tensor shape")
    p.add_argument("--apply-extrema", default=None,
                   help="meta.json of a previously ingested training set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_ingest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed a one-line diagnostic
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        return args.handler(args)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
