"""Streaming seasonal matrix factorization with online regime detection.

The package factorizes an evolving stream of nonnegative matrices into
community factors and a growable bank of seasonal weight patterns
("regimes"). Regime shifts are detected online by comparing description
costs in bits: a new regime is adopted only when it describes the recent
season more cheaply than any existing one, including the bits to store it.
Forecasts reuse the factors with the weight row at the target's season
phase.

Main entry points: the :class:`SSMF` estimator for array-based use,
:func:`run_stream` / :class:`RegimeEngine` for frame-level streaming, the
``ssmf`` command line for file-based pipelines.
"""

from .engine import (
    EngineConfig,
    RegimeEngine,
    RegimeTrace,
    TraceRecord,
    regime_extraction,
    regime_selection,
    run_stream,
)
from .estimator import SSMF
from .factors import (
    FactorState,
    SeasonalTensor,
    clone_regime,
    gradient_step,
    init_factors,
    reconstruct,
)
from .forecasting import (
    ETA_GRID,
    EvalPlan,
    EvalRow,
    forecast,
    forecast_horizon,
    rmse,
    rolling_eval,
    season_index,
    select_learning_rate,
)
from .mdl import (
    CostBreakdown,
    GaussianCoder,
    encoding_cost,
    fit_coder,
    model_cost_matrix,
    model_cost_regime,
    model_cost_tensor,
    total_cost,
)
from .stream import (
    EventRecord,
    EventSchema,
    IngestResult,
    MatrixFrame,
    SeasonQueue,
    StreamConfig,
    bin_to_frames,
    ingest_events,
    read_frame_cache,
    write_frame_cache,
)
from .synth import RegimeSpec, SynthResult, SynthSpec, generate

__version__ = "0.1.0"

__all__ = [
    "SSMF",
    "StreamConfig",
    "EngineConfig",
    "EvalPlan",
    "EvalRow",
    "EventRecord",
    "EventSchema",
    "IngestResult",
    "MatrixFrame",
    "SeasonQueue",
    "FactorState",
    "SeasonalTensor",
    "RegimeEngine",
    "RegimeTrace",
    "TraceRecord",
    "GaussianCoder",
    "CostBreakdown",
    "RegimeSpec",
    "SynthSpec",
    "SynthResult",
    "ETA_GRID",
    "bin_to_frames",
    "clone_regime",
    "encoding_cost",
    "fit_coder",
    "forecast",
    "forecast_horizon",
    "generate",
    "gradient_step",
    "ingest_events",
    "init_factors",
    "model_cost_matrix",
    "model_cost_regime",
    "model_cost_tensor",
    "read_frame_cache",
    "reconstruct",
    "regime_extraction",
    "regime_selection",
    "rmse",
    "rolling_eval",
    "run_stream",
    "season_index",
    "select_learning_rate",
    "total_cost",
    "write_frame_cache",
]
