"""Description-length costs, in bits, for model selection over regimes.

Two ingredients: a model cost that prices every stored nonzero at its index
bits plus a fixed float cost, and a data cost that charges each residual its
idealized Gaussian code length. The data coder quantizes residuals to a bin
width and clamps the resulting probability mass into (0, 1], which keeps all
costs finite and zero for perfectly coded cells.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .factors import FactorState, batch_reconstruct
from .stream import SeasonQueue, StreamConfig

_TINY = float(np.finfo(np.float64).tiny)
_LOG2E = float(np.log2(np.e))


@dataclass(frozen=True)
class GaussianCoder:
    """Gaussian residual coder with quantization width ``bin_width``."""

    mu: float
    sigma: float
    bin_width: float

    def bits(self, residuals) -> np.ndarray:
        """Per-cell code length: -log2 of the clamped bin probability."""
        r = np.asarray(residuals, dtype=np.float64)
        z = (r - self.mu) / self.sigma
        log2_density = -0.5 * z * z * _LOG2E - np.log2(self.sigma * np.sqrt(2.0 * np.pi))
        log2_p = log2_density + np.log2(self.bin_width)
        log2_p = np.clip(log2_p, np.log2(_TINY), 0.0)
        return -log2_p

    def total_bits(self, residuals) -> float:
        return float(np.sum(self.bits(residuals)))


@dataclass(frozen=True)
class CostBreakdown:
    """Total description cost split into factor and data terms (bits)."""

    cost_u: float
    cost_v: float
    cost_w: float
    cost_data: float

    @property
    def total(self) -> float:
        return self.cost_u + self.cost_v + self.cost_w + self.cost_data


def model_cost_matrix(mat, dim_a: int, dim_b: int, float_cost: float) -> float:
    """Bits to describe a matrix: nonzeros priced at index plus float cost."""
    nnz = int(np.count_nonzero(np.asarray(mat)))
    return nnz * (np.log2(dim_a) + np.log2(dim_b) + float_cost)


def model_cost_regime(
    slice_, season_length: int, n_components: int, float_cost: float
) -> float:
    """Bits for one regime slice; the per-regime term of the decomposed
    tensor cost, independent of how many regimes exist."""
    return model_cost_matrix(slice_, season_length, n_components, float_cost)


def model_cost_tensor(W, float_cost: float) -> float:
    """Exact tensor cost including the regime-index bits.

    Diagnostic companion to the decomposed per-regime form used online.
    """
    W = np.asarray(W)
    g, s, k = W.shape
    nnz = int(np.count_nonzero(W))
    return nnz * (np.log2(g) + np.log2(s) + np.log2(k) + float_cost)


def fit_coder(residuals, cfg: StreamConfig) -> GaussianCoder:
    """Fit the coder's mean and (floored) population std to residuals."""
    r = np.asarray(residuals, dtype=np.float64).ravel()
    if r.size == 0:
        raise ValueError("cannot fit a coder to an empty residual collection")
    mu = float(r.mean())
    sigma = max(float(r.std()), cfg.sigma_floor)
    return GaussianCoder(mu=mu, sigma=sigma, bin_width=cfg.bin_width)


def _as_stack(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        a = x.astype(np.float64, copy=False)
    elif isinstance(x, (list, tuple)):
        a = np.stack(
            [f.to_dense() if hasattr(f, "to_dense") else np.asarray(f, dtype=np.float64) for f in x]
        )
    elif hasattr(x, "to_dense"):
        a = x.to_dense()
    else:
        a = np.asarray(x, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    return a


def encoding_cost(x_frames, x_hat, coder: GaussianCoder) -> float:
    """Total bits to encode frames given their reconstructions."""
    X = _as_stack(x_frames)
    Xhat = _as_stack(x_hat)
    if X.shape != Xhat.shape:
        raise ValueError(f"shape mismatch: data {X.shape} vs reconstruction {Xhat.shape}")
    return coder.total_bits(X - Xhat)


def total_cost(
    queue: SeasonQueue, state: FactorState, slice_, cfg: StreamConfig
) -> CostBreakdown:
    """Description cost of the queued season under one candidate slice.

    Factor costs price U, V, and the candidate slice; the data cost encodes
    every queued frame against its phase-matched reconstruction, with the
    coder refit on those same residuals.
    """
    if len(queue) == 0:
        raise ValueError("queue is empty")
    slice_ = np.asarray(slice_, dtype=np.float64)
    X = queue.dense_stack()
    w_rows = slice_[queue.phases()]
    residuals = X - batch_reconstruct(state.U, state.V, w_rows)
    coder = fit_coder(residuals, cfg)
    m, k = state.U.shape
    n = state.V.shape[0]
    s = slice_.shape[0]
    return CostBreakdown(
        cost_u=model_cost_matrix(state.U, m, k, cfg.float_cost),
        cost_v=model_cost_matrix(state.V, n, k, cfg.float_cost),
        cost_w=model_cost_regime(slice_, s, slice_.shape[1], cfg.float_cost),
        cost_data=coder.total_bits(residuals),
    )
