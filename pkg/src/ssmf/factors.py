"""Factor state, reconstruction, and the regime-aware gradient update.

The model approximates each frame as ``X(t) ~ U diag(w) V^T`` where U and V
carry nonnegative unit-norm columns (one per latent component) and ``w`` is
the seasonal weight row of the active regime at the frame's phase. One online
step nudges U and V along the reconstruction-error gradient, projects back
onto the nonnegative orthant, and renormalizes the columns while folding the
displaced scale into the seasonal weights, so the reconstruction is unchanged
by the renormalization itself.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .stream import MatrixFrame, StreamConfig
from .validation import check_at_least

_CKPT_MAGIC = b"SSMC"
_CKPT_VERSION = 1


@dataclass
class FactorState:
    """Row and column community factors at a point in the stream.

    U is (m, k), V is (n, k); both nonnegative with unit-norm columns except
    for degenerate all-zero columns. ``t`` is the time index of the frame
    that last updated the state.
    """

    U: np.ndarray
    V: np.ndarray
    t: int

    def copy(self) -> "FactorState":
        return FactorState(self.U.copy(), self.V.copy(), self.t)

    def float_count(self) -> int:
        return int(self.U.size + self.V.size)


class SeasonalTensor:
    """Growable bank of per-regime seasonal weight slices.

    Stored as a (g, s, k) nonnegative array. Regime indices are 1-based in
    the public API; the number of regimes only ever grows.
    """

    def __init__(self, W: np.ndarray):
        W = np.asarray(W, dtype=np.float64)
        if W.ndim != 3:
            raise ValueError("seasonal tensor must be (g, s, k)")
        if W.size and float(W.min()) < 0.0:
            raise ValueError("seasonal weights must be nonnegative")
        check_at_least(W.shape[0], 1, "regime count")
        self.W = W

    @property
    def g(self) -> int:
        return int(self.W.shape[0])

    @property
    def season_length(self) -> int:
        return int(self.W.shape[1])

    @property
    def n_components(self) -> int:
        return int(self.W.shape[2])

    def check_regime(self, z: int) -> int:
        z = int(z)
        if not 1 <= z <= self.g:
            raise ValueError(f"regime out of range: z={z} with g={self.g}")
        return z

    def slice_of(self, z: int) -> np.ndarray:
        """Read-only view of regime z's (s, k) slice."""
        return self.W[self.check_regime(z) - 1]

    def append(self, slice_: np.ndarray) -> int:
        """Add a new regime slice; returns the new regime's 1-based index."""
        slice_ = np.asarray(slice_, dtype=np.float64)
        if slice_.shape != self.W.shape[1:]:
            raise ValueError(
                f"slice shape {slice_.shape} does not match {self.W.shape[1:]}"
            )
        if slice_.size and float(slice_.min()) < 0.0:
            raise ValueError("seasonal weights must be nonnegative")
        self.W = np.concatenate([self.W, slice_[None]], axis=0)
        return self.g

    def float_count(self) -> int:
        return int(self.W.size)

    def copy(self) -> "SeasonalTensor":
        return SeasonalTensor(self.W.copy())


def clone_regime(tensor: SeasonalTensor, z: int) -> np.ndarray:
    """Deep copy of regime z's slice, detached from the tensor."""
    return np.array(tensor.slice_of(z), copy=True)


def project_nonnegative(a: np.ndarray) -> np.ndarray:
    return np.maximum(a, 0.0)


def normalize_columns(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scale each column to unit norm; all-zero columns are left untouched."""
    norms = np.linalg.norm(a, axis=0)
    safe = np.where(norms > 0.0, norms, 1.0)
    return a / safe, norms


def reconstruct_rank(U: np.ndarray, V: np.ndarray, w_row: np.ndarray) -> np.ndarray:
    """Dense ``U diag(w_row) V^T`` for one seasonal weight row."""
    return (U * w_row) @ V.T


def batch_reconstruct(U: np.ndarray, V: np.ndarray, w_rows: np.ndarray) -> np.ndarray:
    """Stack of reconstructions, one per row of ``w_rows``; shape (L, m, n)."""
    L, k = w_rows.shape
    m = U.shape[0]
    scaled = (U[None, :, :] * w_rows[:, None, :]).reshape(L * m, k)
    return (scaled @ V.T).reshape(L, m, -1)


def reconstruct(
    state: FactorState, tensor: SeasonalTensor, z: int, phase: int
) -> np.ndarray:
    """Reconstruction with regime z's weights at the given season phase."""
    s = tensor.season_length
    if not 0 <= phase < s:
        raise ValueError(f"phase must be in [0, {s}), got {phase}")
    return reconstruct_rank(state.U, state.V, tensor.slice_of(z)[phase])


def gradient_update(
    U: np.ndarray, V: np.ndarray, X: np.ndarray, w_row: np.ndarray, eta: float
) -> tuple[np.ndarray, np.ndarray]:
    """Raw gradient step on U and V against frame X, before projection.

    Both sides use the previous factors on the right-hand side:
        u_i <- u_i + eta (X - Xhat) v_i w_i
        v_i <- v_i + eta (X - Xhat)^T u_i w_i
    """
    residual = X - reconstruct_rank(U, V, w_row)
    U_new = U + eta * (residual @ V) * w_row
    V_new = V + eta * (residual.T @ U) * w_row
    return U_new, V_new


def renormalize(
    U_proj: np.ndarray, V_proj: np.ndarray, w_row: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Move the projected columns' scale into the seasonal weights.

    ``w_i <- w_i * ||u_i|| * ||v_i||`` followed by column normalization, so
    the product ``U diag(w) V^T`` is preserved. A zero-norm column keeps its
    entries, skips normalization, and zeroes its weight.
    """
    U_out, u_norms = normalize_columns(U_proj)
    V_out, v_norms = normalize_columns(V_proj)
    return U_out, V_out, w_row * u_norms * v_norms


def gradient_step(
    state: FactorState,
    tensor: SeasonalTensor,
    z: int,
    frame: MatrixFrame,
    eta: float,
) -> tuple[FactorState, np.ndarray]:
    """One online update of (U, V) and the active seasonal weight row.

    The weight row used is regime z's stored row for the frame's phase,
    i.e. its value from one season earlier. Returns the new factor state and
    the new weight row; the caller is responsible for writing the row back.
    """
    tensor.check_regime(z)
    phase = frame.t % tensor.season_length
    w_row = tensor.W[z - 1, phase]
    X = frame.to_dense()
    U_raw, V_raw = gradient_update(state.U, state.V, X, w_row, eta)
    U_proj = project_nonnegative(U_raw)
    V_proj = project_nonnegative(V_raw)
    U_new, V_new, w_new = renormalize(U_proj, V_proj, w_row)
    return FactorState(U_new, V_new, t=frame.t), w_new


def _nmf_multiplicative(
    X: np.ndarray, k: int, seed: int, n_iter: int = 500, tol: float = 1e-10
) -> tuple[np.ndarray, np.ndarray]:
    """Multiplicative-update NMF of a nonnegative matrix into (m,k) x (n,k)."""
    m, n = X.shape
    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(X.mean(), 1e-12) / k)
    A = rng.random((m, k)) * scale + 1e-4
    B = rng.random((n, k)) * scale + 1e-4
    eps = 1e-12
    prev = np.inf
    for it in range(n_iter):
        A *= (X @ B) / (A @ (B.T @ B) + eps)
        B *= (X.T @ A) / (B @ (A.T @ A) + eps)
        if it % 20 == 19:
            err = float(np.linalg.norm(X - A @ B.T))
            if prev - err < tol * max(prev, 1.0):
                break
            prev = err
    return A, B


def _phase_weights(
    frames_dense: np.ndarray, phases: np.ndarray, U: np.ndarray, V: np.ndarray, s: int
) -> np.ndarray:
    """Per-phase nonnegative least squares for the seasonal weight rows."""
    m, k = U.shape
    n = V.shape[0]
    design = np.einsum("mc,nc->mnc", U, V).reshape(m * n, k)
    W = np.zeros((s, k))
    for p in range(s):
        mask = phases == p
        if not mask.any():
            continue
        target = frames_dense[mask].mean(axis=0).ravel()
        W[p], _ = nnls(design, target)
    return W


def init_factors(
    history, cfg: StreamConfig, seed: int = 42
) -> tuple[FactorState, SeasonalTensor]:
    """Fit the initial factors and a single seasonal regime from history.

    U and V come from multiplicative-update NMF of the frame average; the
    seasonal rows from per-phase nonnegative least squares on the component
    weights. Deterministic for a fixed seed. Expects about three seasons of
    frames; fewer (down to one season) is allowed with a warning.
    """
    frames = list(history)
    if len(frames) < cfg.s:
        raise ValueError(
            f"initialization needs at least one season ({cfg.s} frames), got {len(frames)}"
        )
    if len(frames) < 3 * cfg.s:
        warnings.warn(
            f"initializing from {len(frames)} frames; three seasons "
            f"({3 * cfg.s}) are recommended",
            stacklevel=2,
        )
    dense = np.stack([f.to_dense() for f in frames])
    if not dense.any():
        raise ValueError("degenerate input: history is all zeros")
    phases = np.array([f.t % cfg.s for f in frames], dtype=np.int64)

    A, B = _nmf_multiplicative(dense.mean(axis=0), cfg.k, seed=seed)
    U, _ = normalize_columns(A)
    V, _ = normalize_columns(B)
    W0 = _phase_weights(dense, phases, U, V, cfg.s)
    state = FactorState(U, V, t=frames[-1].t)
    return state, SeasonalTensor(W0[None])


def write_factor_section(fh, state: FactorState, tensor: SeasonalTensor) -> None:
    """Write the factor checkpoint section: header then row-major f64 U, V, W.

    Header layout (little-endian): magic ``SSMC``, version u32, m u32,
    n u32, k u32, s u32, g u32, t i64.
    """
    m, k = state.U.shape
    n = state.V.shape[0]
    fh.write(
        struct.pack(
            "<4sIIIIIIq",
            _CKPT_MAGIC,
            _CKPT_VERSION,
            m,
            n,
            k,
            tensor.season_length,
            tensor.g,
            state.t,
        )
    )
    fh.write(state.U.astype("<f8").tobytes())
    fh.write(state.V.astype("<f8").tobytes())
    fh.write(tensor.W.astype("<f8").tobytes())


def read_factor_section(fh) -> tuple[FactorState, SeasonalTensor]:
    head = fh.read(36)
    if len(head) < 36:
        raise ValueError("truncated checkpoint header")
    magic, version, m, n, k, s, g, t = struct.unpack("<4sIIIIIIq", head)
    if magic != _CKPT_MAGIC:
        raise ValueError(f"not a factor checkpoint (bad magic {magic!r})")
    if version != _CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")

    def read_array(count):
        buf = fh.read(8 * count)
        a = np.frombuffer(buf, dtype="<f8")
        if a.size != count:
            raise ValueError("truncated checkpoint payload")
        return a.astype(np.float64)

    U = read_array(m * k).reshape(m, k)
    V = read_array(n * k).reshape(n, k)
    W = read_array(g * s * k).reshape(g, s, k)
    return FactorState(U, V, t=t), SeasonalTensor(W)


def save_factors(path, state: FactorState, tensor: SeasonalTensor) -> None:
    with open(path, "wb") as fh:
        write_factor_section(fh, state, tensor)


def load_factors(path) -> tuple[FactorState, SeasonalTensor]:
    with open(path, "rb") as fh:
        return read_factor_section(fh)
