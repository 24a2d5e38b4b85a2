"""Online regime selection, extraction, and the per-step update loop.

Each incoming frame is pushed onto the season queue, then two candidate
explanations of the queued season are priced in bits:

* selection: the cheapest existing regime slice (ties go to the lowest
  regime index);
* extraction: a fresh slice cloned from the selected one and refined by a
  few passes of the seasonal-weight update over the queue, with U and V
  held fixed.

A new regime is adopted only when the refined candidate's description cost,
including the bits to store the extra slice it adds to the bank, undercuts
the cost of keeping the selected regime. Afterwards the gradient step is
applied against the chosen regime. Regimes are never removed, so the bank
only grows when a cheaper description of the recent season exists.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .factors import (
    FactorState,
    SeasonalTensor,
    batch_reconstruct,
    gradient_step,
    init_factors,
    project_nonnegative,
    read_factor_section,
    write_factor_section,
)
from .mdl import model_cost_regime, total_cost
from .stream import (
    MatrixFrame,
    SeasonQueue,
    StreamConfig,
    read_frame_record,
    write_frame_record,
)
from .validation import check_at_least

_CADENCES = ("every_step", "every_season")


@dataclass
class EngineConfig:
    """Knobs of the per-step regime machinery.

    extraction_epochs  passes of the seasonal-weight update when fitting a
                       candidate regime (>= 1)
    eta                learning rate override; None falls back to the stream
                       config's eta
    selection_cadence  'every_step' re-evaluates regimes on each frame;
                       'every_season' only at phase zero
    max_regimes        cap on the regime count; None means unbounded, 1
                       pins the model to a single seasonal pattern
    """

    extraction_epochs: int = 5
    eta: float | None = None
    selection_cadence: str = "every_step"
    max_regimes: int | None = None

    def __post_init__(self):
        check_at_least(self.extraction_epochs, 1, "extraction_epochs")
        if self.eta is not None and self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta!r}")
        if self.selection_cadence not in _CADENCES:
            raise ValueError(
                f"selection_cadence must be one of {_CADENCES}, got {self.selection_cadence!r}"
            )
        if self.max_regimes is not None:
            check_at_least(self.max_regimes, 1, "max_regimes")


@dataclass(frozen=True)
class TraceRecord:
    """Per-step regime decision: chosen regime, bank size, and the two
    candidate costs. ``created`` is true exactly when c_re_bits undercut
    c_rs_bits at this step."""

    t: int
    z: int
    g: int
    c_rs_bits: float
    c_re_bits: float | None
    created: bool

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "z": self.z,
            "g": self.g,
            "c_rs_bits": self.c_rs_bits,
            "c_re_bits": self.c_re_bits,
            "created": self.created,
        }


@dataclass
class RegimeTrace:
    """Ordered per-step records of the regime decisions."""

    records: list[TraceRecord] = field(default_factory=list)

    def append(self, record: TraceRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_dict()) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "RegimeTrace":
        records = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                d = json.loads(line)
                records.append(
                    TraceRecord(
                        t=d["t"],
                        z=d["z"],
                        g=d["g"],
                        c_rs_bits=d["c_rs_bits"],
                        c_re_bits=d["c_re_bits"],
                        created=d["created"],
                    )
                )
        return cls(records)


def regime_selection(
    queue: SeasonQueue,
    state: FactorState,
    tensor: SeasonalTensor,
    cfg: StreamConfig,
) -> tuple[int, np.ndarray, float]:
    """Pick the existing regime with the lowest description cost over the
    queue; ties break toward the lowest index. Returns (z, slice, bits)."""
    if len(queue) == 0:
        raise ValueError("queue is empty")
    best_z, best_cost = 1, None
    for z in range(1, tensor.g + 1):
        cost = total_cost(queue, state, tensor.W[z - 1], cfg).total
        if best_cost is None or cost < best_cost:
            best_z, best_cost = z, cost
    return best_z, tensor.W[best_z - 1], best_cost


def regime_extraction(
    queue: SeasonQueue,
    state: FactorState,
    w_selected: np.ndarray,
    cfg: StreamConfig,
    engine_cfg: EngineConfig | None = None,
) -> tuple[np.ndarray, float]:
    """Refine a candidate regime on the queued season, factors held fixed.

    Starts from a clone of the selected slice (which keeps the candidate
    from overfitting a sparse season) and repeatedly applies the weight part
    of the gradient step: virtual factor updates are projected, and their
    column norms multiply the weight rows. Returns the refined slice and its
    description cost under the same cost function used for selection.
    """
    if len(queue) == 0:
        raise ValueError("queue is empty")
    engine_cfg = engine_cfg or EngineConfig()
    eta = engine_cfg.eta if engine_cfg.eta is not None else cfg.eta
    w_re = np.array(w_selected, dtype=np.float64, copy=True)
    X = queue.dense_stack()
    phases = queue.phases()
    U, V = state.U, state.V
    # frames in the queue have distinct phases, so one epoch's row updates
    # are independent and can be computed in a single batch
    L = len(queue)
    m, k = U.shape
    n = V.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(engine_cfg.extraction_epochs):
            w_rows = w_re[phases]
            residual = X - batch_reconstruct(U, V, w_rows)
            grad_u = (residual.reshape(L * m, n) @ V).reshape(L, m, k)
            grad_v = (residual.transpose(0, 2, 1).reshape(L * n, m) @ U).reshape(L, n, k)
            u_virtual = project_nonnegative(
                U[None, :, :] + eta * grad_u * w_rows[:, None, :]
            )
            v_virtual = project_nonnegative(
                V[None, :, :] + eta * grad_v * w_rows[:, None, :]
            )
            w_next = (
                w_rows
                * np.sqrt(np.einsum("lmk,lmk->lk", u_virtual, u_virtual))
                * np.sqrt(np.einsum("lnk,lnk->lk", v_virtual, v_virtual))
            )
            if not np.isfinite(w_next).all():
                # step size too large for this season's scale; keep the last
                # finite iterate rather than returning a diverged candidate
                break
            w_re[phases] = w_next
    return w_re, total_cost(queue, state, w_re, cfg).total


class RegimeEngine:
    """Streaming state: factors, the regime bank, and the season queue.

    Call :meth:`initialize` with roughly three seasons of history, then
    :meth:`step` once per new frame. The engine retains exactly the model
    floats (U, V, and the weight bank) plus the queued season; trace records
    are returned to the caller rather than accumulated.
    """

    def __init__(
        self,
        config: StreamConfig,
        engine_config: EngineConfig | None = None,
        seed: int = 42,
    ):
        self.config = config
        self.engine_config = engine_config or EngineConfig()
        self.seed = seed
        self.eta = (
            self.engine_config.eta if self.engine_config.eta is not None else config.eta
        )
        self.state: FactorState | None = None
        self.tensor: SeasonalTensor | None = None
        self.queue = SeasonQueue(config.s)
        self._cached_decision: tuple[int, float, float | None] | None = None

    @property
    def initialized(self) -> bool:
        return self.state is not None

    @property
    def g(self) -> int:
        self._require_initialized()
        return self.tensor.g

    @property
    def t(self) -> int:
        self._require_initialized()
        return self.state.t

    def _require_initialized(self):
        if self.state is None:
            raise ValueError("engine is not initialized; call initialize() first")

    def initialize(self, history: Iterable[MatrixFrame]) -> None:
        frames = list(history)
        self.state, self.tensor = init_factors(frames, self.config, seed=self.seed)
        for frame in frames[-self.config.s:]:
            self.queue.push(frame)

    def _growth_allowed(self) -> bool:
        cap = self.engine_config.max_regimes
        return cap is None or self.tensor.g < cap

    def _evaluation_due(self, t: int) -> bool:
        if self._cached_decision is None:
            return True
        if self.engine_config.selection_cadence == "every_step":
            return True
        return t % self.config.s == 0

    def step(self, frame: MatrixFrame) -> TraceRecord:
        """Process one frame: update the queue, settle the regime decision,
        and apply the gradient step. Returns this step's trace record."""
        self._require_initialized()
        self.queue.push(frame)
        created = False
        if self._evaluation_due(frame.t):
            z, w_rs, c_rs = regime_selection(self.queue, self.state, self.tensor, self.config)
            c_re = None
            if self._growth_allowed():
                w_re, c_re_slice = regime_extraction(
                    self.queue, self.state, w_rs, self.config, self.engine_config
                )
                # the keep branch retains the selected slice, the create
                # branch retains it plus the new one; pricing the retained
                # slice into the candidate makes the two totals comparable
                # as full-model costs
                c_re = c_re_slice + model_cost_regime(
                    w_rs, self.config.s, self.config.k, self.config.float_cost
                )
                if c_re < c_rs:
                    self.tensor.append(w_re)
                    z = self.tensor.g
                    created = True
            self._cached_decision = (z, c_rs, c_re)
        else:
            z, c_rs, c_re = self._cached_decision
        new_state, w_row = gradient_step(self.state, self.tensor, z, frame, self.eta)
        self.tensor.W[z - 1, frame.t % self.config.s] = w_row
        self.state = new_state
        return TraceRecord(
            t=frame.t,
            z=z,
            g=self.tensor.g,
            c_rs_bits=c_rs,
            c_re_bits=c_re,
            created=created,
        )

    def run(self, frames: Iterable[MatrixFrame]) -> RegimeTrace:
        trace = RegimeTrace()
        for frame in frames:
            trace.append(self.step(frame))
        return trace

    def model_float_count(self) -> int:
        """Floats retained by the model proper: k(m+n) + g*s*k."""
        self._require_initialized()
        return self.state.float_count() + self.tensor.float_count()

    def queue_float_count(self) -> int:
        return self.queue.float_count()

    def save(self, path) -> None:
        """Checkpoint the full engine state: factor section plus the queue,
        stored as cache-format frame records."""
        self._require_initialized()
        with open(path, "wb") as fh:
            write_factor_section(fh, self.state, self.tensor)
            fh.write(struct.pack("<I", len(self.queue)))
            for frame in self.queue.frames:
                write_frame_record(fh, frame)

    @classmethod
    def load(
        cls,
        path,
        config: StreamConfig | None = None,
        engine_config: EngineConfig | None = None,
        seed: int = 42,
        **config_overrides,
    ) -> "RegimeEngine":
        """Restore an engine; model dimensions come from the checkpoint and
        remaining settings from ``config`` or keyword overrides."""
        with open(path, "rb") as fh:
            state, tensor = read_factor_section(fh)
            (queue_len,) = struct.unpack("<I", fh.read(4))
            m, k = state.U.shape
            n = state.V.shape[0]
            frames = []
            for _ in range(queue_len):
                frame = read_frame_record(fh, m, n)
                if frame is None:
                    raise ValueError(f"{path}: truncated checkpoint queue")
                frames.append(frame)
        if config is None:
            config = StreamConfig(
                m=m, n=n, s=tensor.season_length, k=k, **config_overrides
            )
        elif (config.m, config.n, config.s, config.k) != (m, n, tensor.season_length, k):
            raise ValueError(
                f"config dims ({config.m}, {config.n}, s={config.s}, k={config.k}) do not "
                f"match checkpoint ({m}, {n}, s={tensor.season_length}, k={k})"
            )
        engine = cls(config, engine_config, seed=seed)
        engine.state = state
        engine.tensor = tensor
        for frame in frames:
            engine.queue.push(frame)
        return engine


def run_stream(
    frames: Iterable[MatrixFrame],
    config: StreamConfig,
    engine_config: EngineConfig | None = None,
    seed: int = 42,
    init_seasons: int = 3,
) -> tuple[RegimeEngine, RegimeTrace]:
    """Initialize on the leading seasons, then step through the remainder.

    Requires at least ``init_seasons`` full seasons of frames; the trace
    covers every online step after initialization.
    """
    check_at_least(init_seasons, 1, "init_seasons")
    frames = list(frames)
    n_init = init_seasons * config.s
    if len(frames) < n_init:
        raise ValueError(
            f"need at least {n_init} frames ({init_seasons} seasons) to initialize, "
            f"got {len(frames)}"
        )
    engine = RegimeEngine(config, engine_config, seed=seed)
    engine.initialize(frames[:n_init])
    trace = engine.run(frames[n_init:])
    return engine, trace
