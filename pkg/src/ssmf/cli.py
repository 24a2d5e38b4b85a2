"""Command-line entry point: ingest, run, forecast, eval, synth.

Every command resolves its settings from defaults, then an optional
key=value config file, then command-line flags (flags win), and writes the
resolved settings next to its outputs so a run can be reproduced exactly.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .engine import EngineConfig, RegimeEngine, run_stream
from .forecasting import (
    ETA_GRID,
    EvalPlan,
    forecast_horizon,
    rolling_eval,
    select_learning_rate,
)
from .mdl import model_cost_matrix, model_cost_regime, model_cost_tensor
from .stream import (
    EventSchema,
    StreamConfig,
    bin_to_frames,
    ingest_events,
    read_frame_cache,
    write_frame_cache,
    write_id_map,
)
from .synth import RegimeSpec, SynthSpec, generate, save_labels


class UsageError(Exception):
    """Bad arguments or configuration; maps to exit code 2."""


def _load_config_file(path) -> dict[str, str]:
    settings: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{line_no}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        settings[key.strip().replace("-", "_")] = value.strip()
    return settings


def _resolve(ns: argparse.Namespace, file_cfg: dict, key: str, default, cast):
    """Flag > config file > default."""
    flag_value = getattr(ns, key, None)
    if flag_value is not None:
        raw = flag_value
    elif key in file_cfg:
        raw = file_cfg[key]
    else:
        return default
    try:
        return cast(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config key {key}={raw!r}: {exc}") from exc


def _cast_opt_int(raw):
    if raw in (None, "", "none"):
        return None
    return int(raw)


def _cast_eta(raw):
    if isinstance(raw, str) and raw.strip().lower() == "auto":
        return "auto"
    return float(raw)


def _write_manifest(out_dir: Path, name: str, settings: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}_config.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(settings, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _say(verbose: bool, message: str) -> None:
    if verbose:
        print(message)


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(ns: argparse.Namespace, file_cfg: dict) -> int:
    out_dir = Path(ns.out_dir)
    settings = {
        "command": "ingest",
        "input": ns.input,
        "row_col": ns.row_col,
        "col_col": ns.col_col,
        "time_col": ns.time_col,
        "count_col": ns.count_col,
        "frequency": ns.frequency,
        "epoch": ns.epoch,
        "season_length": _resolve(ns, file_cfg, "season_length", 0, int),
        "reorder_window": _resolve(ns, file_cfg, "reorder_window", 0, int),
        "out": ns.out or str(out_dir / "frames.bin"),
        "seed": ns.seed,
    }
    if not Path(ns.input).exists():
        raise UsageError(f"input file not found: {ns.input}")
    schema = EventSchema(
        row_col=ns.row_col,
        col_col=ns.col_col,
        time_col=ns.time_col,
        count_col=ns.count_col,
    )
    try:
        result = ingest_events(ns.input, schema, ns.frequency, epoch=ns.epoch)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    m, n = len(result.row_keys), len(result.col_keys)
    if m == 0 or n == 0:
        raise UsageError(f"{ns.input}: no usable events found")
    cfg = StreamConfig(m=m, n=n, s=max(settings["season_length"], 1))
    events = sorted(result.events, key=lambda ev: ev.time)
    frames = list(bin_to_frames(events, cfg, reorder_window=settings["reorder_window"]))

    out_path = Path(settings["out"])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_frame_cache(out_path, frames, m, n, settings["season_length"])
    write_id_map(out_path.with_suffix(out_path.suffix + ".row_ids.csv"), result.row_keys)
    write_id_map(out_path.with_suffix(out_path.suffix + ".col_ids.csv"), result.col_keys)
    settings.update({"m": m, "n": n, "n_frames": len(frames), "n_skipped": result.n_skipped})
    _write_manifest(out_dir, "ingest", settings)
    for line_no, reason in result.skipped:
        print(f"skipped line {line_no}: {reason}", file=sys.stderr)
    print(
        f"ingested {len(result.events)} events into {len(frames)} frames "
        f"({m} x {n}); skipped {result.n_skipped}; wrote {out_path}"
    )
    return 0


def _model_settings(ns: argparse.Namespace, file_cfg: dict) -> dict:
    return {
        "season_length": _resolve(ns, file_cfg, "season_length", None, int),
        "k": _resolve(ns, file_cfg, "k", 15, int),
        "eta": _resolve(ns, file_cfg, "eta", "auto", _cast_eta),
        "extraction_epochs": _resolve(ns, file_cfg, "extraction_epochs", 5, int),
        "selection_cadence": _resolve(ns, file_cfg, "selection_cadence", "every_step", str),
        "max_regimes": _resolve(ns, file_cfg, "max_regimes", None, _cast_opt_int),
        "float_cost_bits": _resolve(ns, file_cfg, "float_cost_bits", 32.0, float),
        "sigma_floor": _resolve(ns, file_cfg, "sigma_floor", 1e-6, float),
        "bin_width": _resolve(ns, file_cfg, "bin_width", 1.0, float),
        "init_seasons": _resolve(ns, file_cfg, "init_seasons", 3, int),
    }


def _build_configs(settings: dict, m: int, n: int) -> tuple[StreamConfig, EngineConfig]:
    eta = settings["eta"]
    try:
        config = StreamConfig(
            m=m,
            n=n,
            s=settings["season_length"],
            k=settings["k"],
            eta=0.2 if eta == "auto" else float(eta),
            float_cost=settings["float_cost_bits"],
            sigma_floor=settings["sigma_floor"],
            bin_width=settings["bin_width"],
        )
        engine_config = EngineConfig(
            extraction_epochs=settings["extraction_epochs"],
            selection_cadence=settings["selection_cadence"],
            max_regimes=settings["max_regimes"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return config, engine_config


def _load_cache(path) -> tuple[list, int, int, int]:
    if not Path(path).exists():
        raise UsageError(f"frame cache not found: {path}")
    try:
        return read_frame_cache(path)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_run(ns: argparse.Namespace, file_cfg: dict) -> int:
    out_dir = Path(ns.out_dir)
    frames, m, n, cache_s = _load_cache(ns.frames)
    settings = _model_settings(ns, file_cfg)
    if settings["season_length"] is None:
        settings["season_length"] = cache_s if cache_s > 0 else None
    if not settings["season_length"]:
        raise UsageError(
            "season length unavailable: pass --season-length or use a cache that records it"
        )
    settings.update({"command": "run", "frames": ns.frames, "seed": ns.seed})
    config, engine_config = _build_configs(settings, m, n)
    if settings["eta"] == "auto":
        eta = select_learning_rate(
            frames,
            config,
            engine_config,
            candidates=ETA_GRID,
            seed=ns.seed,
            init_seasons=settings["init_seasons"],
        )
        settings["eta_selected"] = eta
        config = StreamConfig(
            m=m,
            n=n,
            s=config.s,
            k=config.k,
            eta=eta,
            float_cost=config.float_cost,
            sigma_floor=config.sigma_floor,
            bin_width=config.bin_width,
        )
        _say(ns.verbose, f"selected eta={eta} from {ETA_GRID}")
    engine, trace = run_stream(
        frames, config, engine_config, seed=ns.seed, init_seasons=settings["init_seasons"]
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = out_dir / "checkpoint.bin"
    trace_path = out_dir / "trace.jsonl"
    engine.save(checkpoint)
    trace.to_jsonl(trace_path)
    _write_manifest(out_dir, "run", settings)
    cf = config.float_cost
    summary = {
        "n_frames": len(frames),
        "n_online_steps": len(trace),
        "g": engine.g,
        "t_final": engine.t,
        "model_floats": engine.model_float_count(),
        "queue_floats": engine.queue_float_count(),
        "model_cost_bits": {
            "u": model_cost_matrix(engine.state.U, m, config.k, cf),
            "v": model_cost_matrix(engine.state.V, n, config.k, cf),
            "w_decomposed": sum(
                model_cost_regime(engine.tensor.W[i], config.s, config.k, cf)
                for i in range(engine.g)
            ),
            "w_exact": model_cost_tensor(engine.tensor.W, cf),
        },
    }
    with open(out_dir / "run_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        f"ran {len(trace)} online steps over {len(frames)} frames; g={engine.g}; "
        f"wrote {checkpoint} and {trace_path}"
    )
    return 0


def cmd_forecast(ns: argparse.Namespace, file_cfg: dict) -> int:
    out_dir = Path(ns.out_dir)
    if ns.horizon < 1:
        raise UsageError(f"horizon must be >= 1, got {ns.horizon}")
    if not Path(ns.checkpoint).exists():
        raise UsageError(f"checkpoint not found: {ns.checkpoint}")
    settings = {
        "command": "forecast",
        "checkpoint": ns.checkpoint,
        "horizon": ns.horizon,
        "regime": ns.regime,
        "skip_zeros": bool(ns.skip_zeros),
        "float_cost_bits": _resolve(ns, file_cfg, "float_cost_bits", 32.0, float),
        "sigma_floor": _resolve(ns, file_cfg, "sigma_floor", 1e-6, float),
        "bin_width": _resolve(ns, file_cfg, "bin_width", 1.0, float),
        "out": ns.out or str(out_dir / "forecast.csv"),
        "seed": ns.seed,
    }
    try:
        engine = RegimeEngine.load(
            ns.checkpoint,
            float_cost=settings["float_cost_bits"],
            sigma_floor=settings["sigma_floor"],
            bin_width=settings["bin_width"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if ns.regime is not None and not 1 <= ns.regime <= engine.g:
        raise UsageError(f"regime out of range: z={ns.regime} with g={engine.g}")
    predictions = forecast_horizon(engine, ns.horizon, regime=ns.regime)
    out_path = Path(settings["out"])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    first_t = engine.t + 1
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "row_id", "col_id", "value"])
        for step, matrix in enumerate(predictions):
            t = first_t + step
            for i in range(matrix.shape[0]):
                for j in range(matrix.shape[1]):
                    value = matrix[i, j]
                    if settings["skip_zeros"] and value == 0.0:
                        continue
                    writer.writerow([t, i, j, repr(float(value))])
    _write_manifest(out_dir, "forecast", settings)
    print(f"forecast {ns.horizon} steps from t={engine.t}; wrote {out_path}")
    return 0


def cmd_eval(ns: argparse.Namespace, file_cfg: dict) -> int:
    out_dir = Path(ns.out_dir)
    frames, m, n, cache_s = _load_cache(ns.frames)
    settings = _model_settings(ns, file_cfg)
    if settings["season_length"] is None:
        settings["season_length"] = cache_s if cache_s > 0 else None
    if not settings["season_length"]:
        raise UsageError(
            "season length unavailable: pass --season-length or use a cache that records it"
        )
    methods = ns.method or ["ssmf", "smf"]
    r_train = _resolve(ns, file_cfg, "r_train", None, int)
    r_test = _resolve(ns, file_cfg, "r_test", None, int)
    if r_train is None or r_test is None:
        raise UsageError("--r-train and --r-test are required")
    repeats = _resolve(ns, file_cfg, "repeats", None, _cast_opt_int)
    if repeats is None:
        repeats = max((len(frames) - r_train) // r_test, 0)
    settings.update(
        {
            "command": "eval",
            "frames": ns.frames,
            "methods": methods,
            "r_train": r_train,
            "r_test": r_test,
            "repeats": repeats,
            "rmse_nonzero_only": bool(ns.rmse_nonzero_only),
            "seed": ns.seed,
        }
    )
    config, engine_config = _build_configs(settings, m, n)
    if settings["eta"] == "auto":
        eta = select_learning_rate(
            frames[: r_train],
            config,
            engine_config,
            candidates=ETA_GRID,
            seed=ns.seed,
            init_seasons=settings["init_seasons"],
        )
        settings["eta_selected"] = eta
        config = StreamConfig(
            m=m,
            n=n,
            s=config.s,
            k=config.k,
            eta=eta,
            float_cost=config.float_cost,
            sigma_floor=config.sigma_floor,
            bin_width=config.bin_width,
        )
        _say(ns.verbose, f"selected eta={eta} from {ETA_GRID}")
    try:
        plan = EvalPlan(r_train=r_train, r_test=r_test, repeats=repeats)
        rows = rolling_eval(
            frames,
            plan,
            methods,
            config,
            engine_config,
            seed=ns.seed,
            init_seasons=settings["init_seasons"],
            nonzero_only=bool(ns.rmse_nonzero_only),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "eval.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window", "r_train", "method", "rmse", "wall_clock_ms"])
        for row in rows:
            writer.writerow(
                [row.window, row.r_train, row.method, repr(row.rmse), repr(row.wall_clock_ms)]
            )
    summary = {
        method: {
            "mean_rmse": float(np.mean([r.rmse for r in rows if r.method == method]))
            if any(r.method == method for r in rows)
            else None,
            "windows": sum(1 for r in rows if r.method == method),
        }
        for method in methods
    }
    with open(out_dir / "eval_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out_dir, "eval", settings)
    print(f"evaluated {len(rows)} (window, method) pairs; wrote {csv_path}")
    return 0


def cmd_synth(ns: argparse.Namespace, file_cfg: dict) -> int:
    out_dir = Path(ns.out_dir)
    if not Path(ns.spec).exists():
        raise UsageError(f"synth spec not found: {ns.spec}")
    try:
        raw = json.loads(Path(ns.spec).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot parse synth spec {ns.spec}: {exc}") from exc
    if ns.seed is not None:
        seed = int(ns.seed)
    elif "seed" in file_cfg:
        seed = int(file_cfg["seed"])
    else:
        seed = int(raw.get("seed", 0))
    try:
        regimes = [
            RegimeSpec(
                duration=int(item["duration"]),
                weights=np.asarray(item["weights"], dtype=np.float64)
                if "weights" in item
                else None,
            )
            for item in raw["regimes"]
        ]
        spec = SynthSpec(
            m=int(raw["m"]),
            n=int(raw["n"]),
            k=int(raw["k"]),
            s=int(raw["s"]),
            regimes=regimes,
            noise_sigma=float(ns.noise if ns.noise is not None else raw.get("noise_sigma", 0.0)),
            sparsity=float(
                ns.sparsity if ns.sparsity is not None else raw.get("sparsity", 0.0)
            ),
            seed=seed,
            weight_low=float(raw.get("weight_low", 0.2)),
            weight_high=float(raw.get("weight_high", 2.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid synth spec: {exc}") from exc
    result = generate(spec)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_path = out_dir / "frames.bin"
    labels_path = out_dir / "labels.csv"
    write_frame_cache(cache_path, result.frames, spec.m, spec.n, spec.s)
    save_labels(labels_path, result.labels)
    settings = {
        "command": "synth",
        "spec": ns.spec,
        "noise_sigma": spec.noise_sigma,
        "sparsity": spec.sparsity,
        "seed": spec.seed,
        "n_frames": len(result.frames),
        "n_regimes": len(spec.regimes),
    }
    _write_manifest(out_dir, "synth", settings)
    print(
        f"generated {len(result.frames)} frames with {len(spec.regimes)} regimes; "
        f"wrote {cache_path} and {labels_path}"
    )
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssmf",
        description=(
            "Streaming seasonal matrix factorization: factorize an evolving "
            "matrix stream, detect regime shifts online, and forecast."
        ),
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file; flags override it")
    common.add_argument("--seed", type=int, default=None, help="random seed (default 42)")
    common.add_argument("--out-dir", default=".", help="directory for outputs")
    common.add_argument("--verbose", action="store_true")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--season-length", type=int, default=None, help="time bins per season")
    model.add_argument("--k", type=int, default=None, help="latent components (default 15)")
    model.add_argument(
        "--eta", default=None, help="learning rate, or 'auto' to pick from the grid"
    )
    model.add_argument("--extraction-epochs", type=int, default=None)
    model.add_argument(
        "--selection-cadence", choices=["every_step", "every_season"], default=None
    )
    model.add_argument("--max-regimes", type=int, default=None, help="cap on regime count")
    model.add_argument("--float-cost-bits", type=float, default=None)
    model.add_argument("--sigma-floor", type=float, default=None)
    model.add_argument("--bin-width", type=float, default=None)
    model.add_argument("--init-seasons", type=int, default=None)

    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser(
        "ingest", parents=[common], help="bin a delimited event file into a frame cache"
    )
    p_ingest.add_argument("--input", required=True, help="CSV/TSV event file with a header")
    p_ingest.add_argument("--row-col", required=True, help="column holding the row key")
    p_ingest.add_argument("--col-col", required=True, help="column holding the column key")
    p_ingest.add_argument("--time-col", required=True, help="column holding the timestamp")
    p_ingest.add_argument("--count-col", default=None, help="count column (default: 1 per row)")
    p_ingest.add_argument(
        "--frequency", required=True, help="hourly | daily | weekly | <seconds>"
    )
    p_ingest.add_argument("--epoch", default=None, help="bin origin timestamp")
    p_ingest.add_argument("--season-length", type=int, default=None)
    p_ingest.add_argument("--reorder-window", type=int, default=None)
    p_ingest.add_argument("--out", default=None, help="cache path (default OUT_DIR/frames.bin)")
    p_ingest.set_defaults(func=cmd_ingest)

    p_run = sub.add_parser(
        "run", parents=[common, model], help="train on a frame cache, write checkpoint + trace"
    )
    p_run.add_argument("--frames", required=True, help="binary frame cache")
    p_run.set_defaults(func=cmd_run)

    p_forecast = sub.add_parser(
        "forecast", parents=[common], help="forecast ahead from a checkpoint"
    )
    p_forecast.add_argument("--checkpoint", required=True)
    p_forecast.add_argument("--horizon", type=int, required=True, help="steps ahead (>= 1)")
    p_forecast.add_argument(
        "--regime", type=int, default=None, help="pin the forecast regime (default: cheapest)"
    )
    p_forecast.add_argument(
        "--skip-zeros", action="store_true", help="omit zero cells from the CSV"
    )
    p_forecast.add_argument("--float-cost-bits", type=float, default=None)
    p_forecast.add_argument("--sigma-floor", type=float, default=None)
    p_forecast.add_argument("--bin-width", type=float, default=None)
    p_forecast.add_argument("--out", default=None, help="CSV path (default OUT_DIR/forecast.csv)")
    p_forecast.set_defaults(func=cmd_forecast)

    p_eval = sub.add_parser(
        "eval", parents=[common, model], help="rolling-origin forecast evaluation"
    )
    p_eval.add_argument("--frames", required=True, help="binary frame cache")
    p_eval.add_argument(
        "--method",
        action="append",
        choices=["ssmf", "smf"],
        help="repeatable; default evaluates both ssmf and smf",
    )
    p_eval.add_argument("--r-train", type=int, default=None, help="initial training length")
    p_eval.add_argument("--r-test", type=int, default=None, help="forecast block length")
    p_eval.add_argument(
        "--repeats", type=int, default=None, help="windows (default: as many as fit)"
    )
    p_eval.add_argument(
        "--rmse-nonzero-only",
        action="store_true",
        help="score only cells whose actual value is nonzero",
    )
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser(
        "synth", parents=[common], help="generate a synthetic stream with planted regimes"
    )
    p_synth.add_argument("--spec", required=True, help="JSON spec file")
    p_synth.add_argument("--noise", type=float, default=None, help="override noise_sigma")
    p_synth.add_argument("--sparsity", type=float, default=None, help="override sparsity")
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    file_cfg = _load_config_file(ns.config) if getattr(ns, "config", None) else {}
    if ns.command != "synth" and ns.seed is None:
        ns.seed = int(file_cfg.get("seed", 42))
    try:
        return ns.func(ns, file_cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        if getattr(ns, "verbose", False):
            raise
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
