"""Command-line entry point: generate | train | evaluate | infer | baseline.

Every command reads an optional JSON config file, lets flags override it,
and writes the fully resolved config next to its outputs so runs are
reproducible from the artifacts alone. Exit codes: 0 success, 1 runtime
failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, data as data_mod
from .data import (
    LABEL_NAMES,
    SyntheticConfig,
    chronological_split,
    fit_scaler,
    generate_bivariate,
    load_csv,
    windows_in_range,
    write_csv,
    write_labels,
)
from .errors import ContractViolation, FitError, IngestionError, SchemaError
from .model import Model, ModelConfig, WIDTH_POOL
from .training import DataSplits, TrainConfig, evaluate, train

_USAGE_ERRORS = (ContractViolation, IngestionError, SchemaError, FileNotFoundError)


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_resolved_config(out_dir: Path, command: str, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "resolved_config.json", "w") as fh:
        json.dump({"command": command, **payload}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_file_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        loaded = json.load(fh)
    if not isinstance(loaded, dict):
        raise ContractViolation(f"config file {path} must hold a JSON object")
    return loaded


def _resolve(args, file_config: dict, name: str, default):
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    if name in file_config:
        return file_config[name]
    return default


def _write_metrics(path: Path, rows: list[dict], series_names: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "metric", "method", *series_names])
        for row in rows:
            writer.writerow(
                [row["split"], row["metric"], row["method"]]
                + [_fmt(row[name]) for name in series_names]
            )


def _split_windows(frame, m: int):
    """Normalized windows per chronological split, plus the scaler."""
    train_range, dev_range, test_range = chronological_split(frame.length)
    scaler = fit_scaler(frame, train_range)
    normalized = scaler.apply_frame(frame)
    splits = DataSplits(
        train=windows_in_range(normalized, m, *train_range),
        dev=windows_in_range(normalized, m, *dev_range),
        test=windows_in_range(normalized, m, *test_range),
    )
    return splits, scaler, (train_range, dev_range, test_range)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    file_config = _load_file_config(args.config)
    out_dir = Path(args.out_dir)
    config = SyntheticConfig(
        length=int(_resolve(args, file_config, "length", 10000)),
        seed=int(_resolve(args, file_config, "seed", 0)),
        regen_probability=float(_resolve(args, file_config, "regen_probability", 0.5)),
        regen_blend=float(_resolve(args, file_config, "regen_blend", 0.15)),
    )
    frame, labels = generate_bivariate(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(frame, out_dir / "data.csv")
    write_labels(labels, out_dir / "labels.csv")
    _write_resolved_config(
        out_dir,
        "generate",
        {
            "length": config.length,
            "seed": config.seed,
            "regen_probability": config.regen_probability,
            "regen_blend": config.regen_blend,
        },
    )
    counts = {LABEL_NAMES[k]: int((labels == k).sum()) for k in sorted(LABEL_NAMES)}
    print(f"wrote {frame.length} rows x {frame.width} series to {out_dir / 'data.csv'}")
    for name, count in counts.items():
        print(f"  {name}: {count} rows ({count / frame.length:.1%})")
    return 0


def _model_config_from(args, file_config: dict, d: int, seed: int) -> ModelConfig:
    return ModelConfig(
        D=d,
        m=int(_resolve(args, file_config, "m", 8)),
        enc_hidden=int(_resolve(args, file_config, "enc_hidden", 32)),
        dp_hidden=int(_resolve(args, file_config, "dp_hidden", 32)),
        dec_hidden=int(_resolve(args, file_config, "dec_hidden", 32)),
        seed=seed,
    )


def cmd_train(args) -> int:
    file_config = _load_file_config(args.config)
    out_dir = Path(args.out_dir)
    seed = int(_resolve(args, file_config, "seed", 0))
    frame = load_csv(args.data)

    model_config = _model_config_from(args, file_config, frame.width, seed)
    train_config = TrainConfig(
        epochs=int(_resolve(args, file_config, "epochs", 60)),
        batch_size=int(_resolve(args, file_config, "batch_size", 64)),
        lr=float(_resolve(args, file_config, "lr", 1e-3)),
        early_stop_patience=int(_resolve(args, file_config, "early_stop_patience", 10)),
        seed=seed,
        grad_clip_norm=_resolve(args, file_config, "grad_clip_norm", None),
    )

    splits, scaler, ranges = _split_windows(frame, model_config.m)
    model = Model.create(model_config, frame.names)
    model.scaler = scaler

    _write_resolved_config(
        out_dir,
        "train",
        {
            "data": str(args.data),
            "seed": seed,
            "model": model_config.to_dict(),
            "training": {
                "epochs": train_config.epochs,
                "batch_size": train_config.batch_size,
                "lr": train_config.lr,
                "early_stop_patience": train_config.early_stop_patience,
                "grad_clip_norm": train_config.grad_clip_norm,
            },
            "split_rows": {"train": ranges[0], "dev": ranges[1], "test": ranges[2]},
        },
    )

    model, history = train(model, splits, train_config)
    diverged = bool(history) and not np.isfinite(history[-1].train_loss)

    with open(out_dir / "train_log.jsonl", "w") as fh:
        for record in history:
            fh.write(
                json.dumps(
                    {
                        "epoch": record.epoch,
                        "train_loss": record.train_loss,
                        "dev_loss": record.dev_loss,
                        "wall_time": record.wall_time,
                    }
                )
                + "\n"
            )

    checkpoint = out_dir / "checkpoint.npz"
    model.save(checkpoint)

    rows = []
    for split_name, samples in (("dev", splits.dev), ("test", splits.test)):
        metrics = evaluate(model, samples)
        for metric in ("rmse", "mae"):
            rows.append(
                {
                    "split": split_name,
                    "metric": metric,
                    "method": "tsgraph",
                    **{name: metrics[name][metric] for name in frame.names},
                }
            )
    _write_metrics(out_dir / "metrics.csv", rows, frame.names)

    print(f"checkpoint: {checkpoint}")
    for row in rows:
        values = ", ".join(f"{name}={row[name]:.4f}" for name in frame.names)
        print(f"{row['split']} {row['metric']}: {values}")
    if diverged:
        print("training diverged; last good checkpoint retained", file=sys.stderr)
        return 1
    return 0


def cmd_evaluate(args) -> int:
    out_dir = Path(args.out_dir)
    model = Model.load(args.checkpoint)
    frame = load_csv(args.data)
    model.check_series(frame.names)
    normalized = model.scaler.apply_frame(frame) if model.scaler else frame
    train_range, dev_range, test_range = chronological_split(frame.length)
    ranges = {"train": train_range, "dev": dev_range, "test": test_range}
    if args.split not in ranges:
        raise ContractViolation(f"split must be one of {sorted(ranges)}")
    samples = windows_in_range(normalized, model.config.m, *ranges[args.split])
    metrics = evaluate(model, samples)
    _write_resolved_config(
        out_dir,
        "evaluate",
        {"checkpoint": str(args.checkpoint), "data": str(args.data), "split": args.split},
    )
    rows = [
        {
            "split": args.split,
            "metric": metric,
            "method": "tsgraph",
            **{name: metrics[name][metric] for name in frame.names},
        }
        for metric in ("rmse", "mae")
    ]
    _write_metrics(out_dir / "metrics.csv", rows, frame.names)
    for row in rows:
        values = ", ".join(f"{name}={row[name]:.4f}" for name in frame.names)
        print(f"{row['split']} {row['metric']}: {values}")
    return 0


def cmd_infer(args) -> int:
    out_dir = Path(args.out_dir)
    model = Model.load(args.checkpoint)
    frame = load_csv(args.data)
    model.check_series(frame.names)
    if model.scaler is None:
        raise SchemaError("checkpoint has no normalization metadata")
    normalized = model.scaler.apply_frame(frame)

    m = model.config.m
    start = args.start if args.start is not None else m
    stop = args.stop if args.stop is not None else start + 1
    if start < m or stop > frame.length + 1 or start >= stop:
        raise ContractViolation(
            f"timestamp range [{start}, {stop}) invalid: need {m} history rows "
            f"and at most {frame.length + 1} as end"
        )

    out_dir.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(
        out_dir,
        "infer",
        {
            "checkpoint": str(args.checkpoint),
            "data": str(args.data),
            "start": start,
            "stop": stop,
        },
    )

    forecast_rows = []
    profile_rows = []
    for t in range(start, stop):
        window = normalized.values[t - m : t]
        trace = model.forward(window)
        y = model.scaler.invert(trace.y_hat)
        forecast_rows.append([t, *[_fmt(v) for v in y]])
        graph = analysis.build_graph(trace.betas, model.series_names, timestamp=t)
        (out_dir / f"graph_{t:06d}.json").write_text(
            analysis.export_graph(graph, "json") + "\n"
        )
        (out_dir / f"graph_{t:06d}.dot").write_text(analysis.export_graph(graph, "dot"))
        for d, name in enumerate(model.series_names):
            profile = analysis.aggregate_lags(trace.alphas[d])
            profile_rows.append([t, name, *[_fmt(v) for v in profile]])

    with open(out_dir / "forecasts.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", *model.series_names])
        writer.writerows(forecast_rows)
    with open(out_dir / "lag_profiles.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "series", *[f"lag_{k}" for k in range(m)]])
        writer.writerows(profile_rows)
    print(f"wrote {stop - start} timestamp(s) to {out_dir}")
    return 0


def cmd_baseline(args) -> int:
    out_dir = Path(args.out_dir)
    frame = load_csv(args.data)
    p = args.lag
    train_range, _, test_range = chronological_split(frame.length)
    _write_resolved_config(
        out_dir,
        "baseline",
        {"data": str(args.data), "method": args.method, "lag": p},
    )

    if args.method == "var":
        train_frame = data_mod.TimeSeriesFrame(
            names=list(frame.names), values=frame.values[slice(*train_range)]
        )
        var = analysis.var_fit(train_frame, p)
        start, stop = test_range
        errors = []
        for t in range(start + p, stop):
            predicted = analysis.var_forecast(var, frame.values[t - p : t])
            errors.append(predicted - frame.values[t])
        errors = np.asarray(errors)
        rows = []
        for metric in ("rmse", "mae"):
            row = {"split": "test", "metric": metric, "method": "var"}
            for d, name in enumerate(frame.names):
                if metric == "rmse":
                    row[name] = float(np.sqrt(np.mean(errors[:, d] ** 2)))
                else:
                    row[name] = float(np.mean(np.abs(errors[:, d])))
            rows.append(row)
        _write_metrics(out_dir / "baseline_metrics.csv", rows, frame.names)
        for row in rows:
            values = ", ".join(f"{name}={row[name]:.4f}" for name in frame.names)
            print(f"var {row['metric']}: {values}")
        return 0

    # granger: every ordered candidate -> target pair (or one chosen target)
    targets = [args.target] if args.target else frame.names
    for name in targets:
        if name not in frame.names:
            raise ContractViolation(f"unknown series {name!r}; have {frame.names}")
    table = []
    for target in targets:
        for candidate in frame.names:
            if candidate == target:
                continue
            result = analysis.granger_test(frame, target, candidate, p)
            table.append((target, candidate, result))
    with open(out_dir / "granger.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["target", "candidate", "lag", "f_statistic", "p_value"])
        for target, candidate, result in table:
            writer.writerow(
                [target, candidate, result.lag_order, _fmt(result.f_statistic), _fmt(result.p_value)]
            )
    for target, candidate, result in table:
        print(
            f"{candidate} -> {target}: F={result.f_statistic:.3f} "
            f"p={result.p_value:.3e}"
        )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsgraph",
        description="Train attention RNNs that forecast multivariate time "
        "series while exporting per-timestamp dependency graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--seed", type=int, default=None, help="run seed")
        p.add_argument("--out-dir", default="out", help="output directory")

    p = sub.add_parser("generate", help="write the synthetic labeled series")
    common(p)
    p.add_argument("--length", type=int, default=None)
    p.add_argument("--regen-probability", dest="regen_probability", type=float, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a CSV")
    common(p)
    p.add_argument("--data", required=True, help="input CSV path")
    p.add_argument("--m", type=int, default=None, help="window length")
    width_help = f"GRU width (conventionally tuned from {set(WIDTH_POOL)})"
    p.add_argument("--enc-hidden", dest="enc_hidden", type=int, default=None, help=width_help)
    p.add_argument("--dp-hidden", dest="dp_hidden", type=int, default=None, help=width_help)
    p.add_argument("--dec-hidden", dest="dec_hidden", type=int, default=None, help=width_help)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument(
        "--early-stop-patience", dest="early_stop_patience", type=int, default=None
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="recompute metrics from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", help="train | dev | test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("infer", help="forecasts plus dependency graphs")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--start", type=int, default=None, help="first target timestamp")
    p.add_argument("--stop", type=int, default=None, help="end of range (exclusive)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("baseline", help="VAR forecasts or Granger tests")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=("var", "granger"), required=True)
    p.add_argument("--lag", type=int, default=8)
    p.add_argument("--target", default=None, help="granger: restrict target series")
    p.set_defaults(func=cmd_baseline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - unexpected failures
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
