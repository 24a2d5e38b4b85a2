"""Ahead-of-stream forecasting and the rolling-origin evaluation harness."""
from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .engine import EngineConfig, RegimeEngine, regime_selection, run_stream
from .factors import batch_reconstruct
from .stream import MatrixFrame, StreamConfig
from .validation import check_at_least

ETA_GRID = (0.1, 0.2, 0.3, 0.4)


def season_index(r: int, t: int, s: int) -> int:
    """Most recent observed time at the same season phase as target t.

    The unique t_s with t_s = t (mod s) and r - s < t_s <= r, for a target
    t beyond the last observed time r.
    """
    if s < 1:
        raise ValueError(f"season length must be >= 1, got {s}")
    if r < 0 or t <= r:
        raise ValueError(f"target must satisfy t > r >= 0, got r={r}, t={t}")
    return t - s * ((t - r + s - 1) // s)


def forecast(
    engine: RegimeEngine,
    targets: Iterable[int],
    regime: int | None = None,
) -> np.ndarray:
    """Forecast the given target times with the current factors.

    The regime is fixed once per call: either the given index or, by
    default, the regime with the lowest description cost over the queued
    season. Each target is reconstructed with the weight row at its season
    phase; outputs are elementwise nonnegative.
    """
    if not engine.initialized:
        raise ValueError("engine is not initialized; nothing to forecast from")
    targets = np.asarray(list(targets), dtype=np.int64)
    r = engine.t
    if targets.size and int(targets.min()) <= r:
        raise ValueError(f"forecast targets must be beyond the last observed t={r}")
    if regime is None:
        z, _, _ = regime_selection(engine.queue, engine.state, engine.tensor, engine.config)
    else:
        z = engine.tensor.check_regime(regime)
    if targets.size == 0:
        m, k = engine.state.U.shape
        return np.zeros((0, m, engine.state.V.shape[0]))
    s = engine.config.s
    anchors = np.array([season_index(r, int(t), s) for t in targets], dtype=np.int64)
    w_rows = engine.tensor.W[z - 1, anchors % s]
    return batch_reconstruct(engine.state.U, engine.state.V, w_rows)


def forecast_horizon(
    engine: RegimeEngine, horizon: int, regime: int | None = None
) -> np.ndarray:
    check_at_least(horizon, 1, "horizon")
    r = engine.t
    return forecast(engine, range(r + 1, r + 1 + horizon), regime=regime)


def _dense_block(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        a = x.astype(np.float64, copy=False)
    else:
        a = np.stack(
            [f.to_dense() if isinstance(f, MatrixFrame) else np.asarray(f, dtype=np.float64) for f in x]
        )
    if a.ndim == 2:
        a = a[None]
    return a


def rmse(predicted, actual, nonzero_only: bool = False) -> float:
    """Root mean square error over all cells and steps.

    Absent sparse cells count as zeros. With ``nonzero_only`` the mean runs
    over cells where the actual value is nonzero.
    """
    P = _dense_block(predicted)
    A = _dense_block(actual)
    if P.shape != A.shape:
        raise ValueError(f"shape mismatch: predicted {P.shape} vs actual {A.shape}")
    err = P - A
    if nonzero_only:
        mask = A != 0
        if not mask.any():
            raise ValueError("actual block has no nonzero cells")
        err = err[mask]
    return float(np.sqrt(np.mean(err * err)))


@dataclass(frozen=True)
class EvalPlan:
    """Rolling-origin protocol: train on the first ``r_train`` frames,
    forecast the next ``r_test``, then slide the origin by ``r_test``."""

    r_train: int
    r_test: int
    repeats: int = 1

    def __post_init__(self):
        check_at_least(self.r_train, 1, "r_train")
        check_at_least(self.r_test, 1, "r_test")
        check_at_least(self.repeats, 0, "repeats")


@dataclass(frozen=True)
class EvalRow:
    window: int
    r_train: int
    method: str
    rmse: float
    wall_clock_ms: float


_METHODS = {"ssmf", "smf", "smf_single_regime"}


def _method_engine_config(method: str, base: EngineConfig | None) -> EngineConfig:
    base = base or EngineConfig()
    if method == "ssmf":
        return base
    # single-regime baseline: identical engine with growth disabled
    return replace(base, max_regimes=1)


def rolling_eval(
    frames: Sequence[MatrixFrame],
    plan: EvalPlan,
    methods,
    config: StreamConfig,
    engine_config: EngineConfig | None = None,
    seed: int = 42,
    init_seasons: int = 3,
    nonzero_only: bool = False,
) -> list[EvalRow]:
    """Run the rolling-origin protocol for each method; one row per
    (window, method) with the block RMSE and the window's wall-clock time.
    """
    frames = list(frames)
    if isinstance(methods, str):
        methods = [methods]
    for method in methods:
        if method not in _METHODS:
            raise ValueError(f"unknown method {method!r}; choose from {sorted(_METHODS)}")
    if plan.r_train < init_seasons * config.s:
        raise ValueError(
            f"r_train={plan.r_train} is below the initialization window "
            f"({init_seasons} seasons = {init_seasons * config.s} frames)"
        )
    max_repeats = max((len(frames) - plan.r_train) // plan.r_test, 0)
    if plan.repeats > max_repeats:
        raise ValueError(
            f"plan needs {plan.r_train + plan.repeats * plan.r_test} frames but only "
            f"{len(frames)} are available; largest feasible plan: "
            f"EvalPlan(r_train={plan.r_train}, r_test={plan.r_test}, repeats={max_repeats})"
        )
    rows: list[EvalRow] = []
    for window in range(plan.repeats):
        r_train = plan.r_train + window * plan.r_test
        test_block = frames[r_train : r_train + plan.r_test]
        for method in methods:
            ecfg = _method_engine_config(method, engine_config)
            start = time.perf_counter()
            engine, _ = run_stream(
                frames[:r_train], config, ecfg, seed=seed, init_seasons=init_seasons
            )
            predictions = forecast(engine, range(r_train, r_train + plan.r_test))
            elapsed_ms = (time.perf_counter() - start) * 1000.0
            rows.append(
                EvalRow(
                    window=window,
                    r_train=r_train,
                    method=method,
                    rmse=rmse(predictions, test_block, nonzero_only=nonzero_only),
                    wall_clock_ms=elapsed_ms,
                )
            )
    return rows


def select_learning_rate(
    frames: Sequence[MatrixFrame],
    config: StreamConfig,
    engine_config: EngineConfig | None = None,
    candidates: Sequence[float] = ETA_GRID,
    seed: int = 42,
    init_seasons: int = 3,
) -> float:
    """Pick the learning rate whose last-season forecast RMSE is lowest.

    Trains on everything but the final season and scores one-season-ahead
    forecasts against it; ties go to the smaller rate.
    """
    frames = list(frames)
    s = config.s
    if len(frames) < init_seasons * s + s:
        raise ValueError(
            f"learning-rate selection needs {init_seasons + 1} seasons "
            f"({(init_seasons + 1) * s} frames), got {len(frames)}"
        )
    if not candidates:
        raise ValueError("no learning-rate candidates given")
    train, holdout = frames[:-s], frames[-s:]
    best_eta, best_err = None, None
    for eta in sorted(candidates):
        cfg = replace(config, eta=float(eta))
        ecfg = engine_config
        if ecfg is not None and ecfg.eta is not None:
            ecfg = replace(ecfg, eta=float(eta))
        engine, _ = run_stream(train, cfg, ecfg, seed=seed, init_seasons=init_seasons)
        first = holdout[0].t
        predictions = forecast(engine, range(first, first + s))
        err = rmse(predictions, holdout)
        if best_err is None or err < best_err:
            best_eta, best_err = float(eta), err
    return best_eta
