"""Scikit-learn style estimator wrapping the streaming engine."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .engine import EngineConfig, RegimeEngine, RegimeTrace
from .forecasting import forecast, forecast_horizon, rmse
from .stream import MatrixFrame, StreamConfig
from .validation import as_frame_stack


class SSMF(BaseEstimator):
    """Shifting seasonal matrix factorization estimator.

    Factorizes a stream of nonnegative matrices into per-axis community
    factors and a growable bank of seasonal weight slices (regimes), picking
    the regime that describes the recent season in the fewest bits and
    adding one when a freshly fitted slice pays for its own storage.

    Parameters
    ----------
    season_length : int
        Time bins per seasonal period. Required before fitting.
    n_components : int, default=15
        Number of latent components.
    learning_rate : float, default=0.2
        Step size of the online gradient updates.
    extraction_epochs : int, default=5
        Passes over the queued season when fitting a candidate regime.
    max_regimes : int or None, default=None
        Cap on the regime count; 1 pins a single seasonal pattern.
    selection_cadence : {'every_step', 'every_season'}, default='every_step'
        How often the regime decision is re-evaluated.
    init_seasons : int, default=3
        Seasons of leading history consumed by initialization.
    float_cost_bits : float, default=32.0
        Bits charged per stored nonzero in the description cost.
    sigma_floor : float, default=1e-6
        Lower bound for the residual coder's standard deviation.
    bin_width : float, default=1.0
        Residual quantization width of the encoding cost.
    random_state : int, default=42
        Seed for the deterministic initialization.

    Attributes
    ----------
    U_ : ndarray of shape (m, k)
        Row community factors (nonnegative, unit-norm columns).
    V_ : ndarray of shape (n, k)
        Column community factors.
    W_ : ndarray of shape (g, s, k)
        Seasonal weight slices, one per regime.
    n_regimes_ : int
        Current number of regimes.
    trace_ : list of TraceRecord
        Per-step regime decisions from fitting.
    n_steps_seen_ : int
        Total frames consumed, including the initialization window.

    Examples
    --------
    >>> est = SSMF(season_length=7, n_components=2)
    >>> est.fit(stream)          # stream: (T, m, n) nonnegative array
    >>> ahead = est.predict(14)  # next two seasons, shape (14, m, n)
    """

    def __init__(
        self,
        season_length: int | None = None,
        n_components: int = 15,
        learning_rate: float = 0.2,
        extraction_epochs: int = 5,
        max_regimes: int | None = None,
        selection_cadence: str = "every_step",
        init_seasons: int = 3,
        float_cost_bits: float = 32.0,
        sigma_floor: float = 1e-6,
        bin_width: float = 1.0,
        random_state: int = 42,
    ):
        self.season_length = season_length
        self.n_components = n_components
        self.learning_rate = learning_rate
        self.extraction_epochs = extraction_epochs
        self.max_regimes = max_regimes
        self.selection_cadence = selection_cadence
        self.init_seasons = init_seasons
        self.float_cost_bits = float_cost_bits
        self.sigma_floor = sigma_floor
        self.bin_width = bin_width
        self.random_state = random_state

    def _make_engine(self, m: int, n: int) -> RegimeEngine:
        if self.season_length is None:
            raise ValueError("season_length must be set before fitting")
        config = StreamConfig(
            m=m,
            n=n,
            s=int(self.season_length),
            k=int(self.n_components),
            eta=float(self.learning_rate),
            float_cost=float(self.float_cost_bits),
            sigma_floor=float(self.sigma_floor),
            bin_width=float(self.bin_width),
        )
        engine_config = EngineConfig(
            extraction_epochs=int(self.extraction_epochs),
            selection_cadence=self.selection_cadence,
            max_regimes=self.max_regimes,
        )
        return RegimeEngine(config, engine_config, seed=int(self.random_state))

    def _frames_from(self, X) -> list[MatrixFrame]:
        stack = as_frame_stack(X)
        start = self.n_steps_seen_
        frames = [MatrixFrame.from_dense(start + i, x) for i, x in enumerate(stack)]
        self.n_steps_seen_ = start + len(frames)
        return frames

    def fit(self, X, y=None):
        """Fit from scratch on a stream of frames.

        X is a (T, m, n) array-like with T of at least
        ``init_seasons * season_length`` frames; the leading seasons seed
        the factors and everything after streams through the engine.
        """
        self.n_steps_seen_ = 0
        self.trace_ = []
        self._pending: list[MatrixFrame] = []
        stack = as_frame_stack(X)
        self._engine = self._make_engine(stack.shape[1], stack.shape[2])
        return self.partial_fit(stack)

    def partial_fit(self, X, y=None):
        """Consume more frames, initializing once enough history arrived.

        Usable from a cold start: frames are buffered until the
        initialization window is full, then streamed one step at a time.
        """
        if not hasattr(self, "_engine"):
            self.n_steps_seen_ = 0
            self.trace_ = []
            self._pending = []
            stack = as_frame_stack(X)
            self._engine = self._make_engine(stack.shape[1], stack.shape[2])
            frames = self._frames_from(stack)
        else:
            frames = self._frames_from(X)
        engine = self._engine
        if not engine.initialized:
            self._pending.extend(frames)
            need = self.init_seasons * engine.config.s
            if len(self._pending) < need:
                return self
            engine.initialize(self._pending[:need])
            frames = self._pending[need:]
            self._pending = []
        for frame in frames:
            self.trace_.append(engine.step(frame))
        self._sync_attributes()
        return self

    def _sync_attributes(self):
        engine = self._engine
        self.U_ = engine.state.U
        self.V_ = engine.state.V
        self.W_ = engine.tensor.W
        self.n_regimes_ = engine.tensor.g

    def _check_ready(self) -> RegimeEngine:
        if not hasattr(self, "_engine") or not self._engine.initialized:
            raise ValueError("this SSMF instance is not fitted yet; call fit first")
        return self._engine

    def predict(self, n_steps: int = 1) -> np.ndarray:
        """Forecast the next ``n_steps`` frames; shape (n_steps, m, n)."""
        engine = self._check_ready()
        return forecast_horizon(engine, int(n_steps))

    def forecast(self, targets, regime: int | None = None) -> np.ndarray:
        """Forecast explicit target times, optionally pinning the regime."""
        engine = self._check_ready()
        return forecast(engine, targets, regime=regime)

    def score(self, X, y=None) -> float:
        """Negative RMSE of forecasting the next ``len(X)`` frames against X."""
        engine = self._check_ready()
        stack = as_frame_stack(X)
        return -rmse(forecast_horizon(engine, stack.shape[0]), stack)

    @property
    def engine_(self) -> RegimeEngine:
        return self._check_ready()

    def regime_trace(self) -> RegimeTrace:
        self._check_ready()
        return RegimeTrace(list(self.trace_))
