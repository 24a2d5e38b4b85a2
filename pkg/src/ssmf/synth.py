"""Synthetic sparse streams with planted seasonal regimes and shift points."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .stream import MatrixFrame
from .validation import check_at_least


@dataclass
class RegimeSpec:
    """One planted regime: an (s, k) weight slice and how long it lasts.

    ``weights`` may be None, in which case the generator draws the slice
    uniformly from the spec's weight range.
    """

    duration: int
    weights: np.ndarray | None = None


@dataclass
class SynthSpec:
    m: int
    n: int
    k: int
    s: int
    regimes: list[RegimeSpec]
    noise_sigma: float = 0.0
    sparsity: float = 0.0
    seed: int = 0
    weight_low: float = 0.2
    weight_high: float = 2.0

    def __post_init__(self):
        for name in ("m", "n", "k", "s"):
            check_at_least(getattr(self, name), 1, name)
        if not self.regimes:
            raise ValueError("at least one regime is required")
        for i, reg in enumerate(self.regimes):
            if reg.duration < self.s:
                raise ValueError(
                    f"regime {i + 1} duration {reg.duration} is shorter than one season ({self.s})"
                )
            if reg.weights is not None:
                w = np.asarray(reg.weights, dtype=np.float64)
                if w.shape != (self.s, self.k):
                    raise ValueError(
                        f"regime {i + 1} weights must be ({self.s}, {self.k}), got {w.shape}"
                    )
                if w.size and float(w.min()) < 0.0:
                    raise ValueError(f"regime {i + 1} weights must be nonnegative")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.sparsity < 1.0:
            raise ValueError("sparsity must be in [0, 1)")
        if not 0.0 <= self.weight_low <= self.weight_high:
            raise ValueError("need 0 <= weight_low <= weight_high")


@dataclass
class SynthResult:
    frames: list[MatrixFrame]
    labels: np.ndarray  # 1-based regime id per time step
    row_factors: np.ndarray
    col_factors: np.ndarray
    weights: list[np.ndarray] = field(default_factory=list)


def _draw_regime_weights(
    rng: np.random.Generator, s: int, k: int, low: float, high: float
) -> np.ndarray:
    """Random but season-structured weight slice.

    Per-component base levels from [low, high], modulated by one shared
    sinusoidal profile with random phase and amplitude, plus mild jitter.
    Independent draws give regimes that differ in level and profile, so a
    planted shift is a genuine change of seasonal pattern rather than
    entrywise noise.
    """
    base = rng.uniform(low, high, size=k)
    amplitude = rng.uniform(0.3, 0.8)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    profile = 1.0 + amplitude * np.sin(2.0 * np.pi * np.arange(s) / s + phase)
    jitter = rng.uniform(0.95, 1.05, size=(s, k))
    return np.clip(base[None, :] * profile[:, None] * jitter, 0.0, None)


def generate(spec: SynthSpec) -> SynthResult:
    """Draw a stream from the planted factors and regime schedule.

    Each frame is ``clip(U* diag(w_phase) V*^T + noise, 0)`` with cells then
    zeroed independently at the sparsity rate. The ground-truth label of a
    step is the regime active at that time. Deterministic for a fixed seed:
    missing regime weights are drawn first, then the factors, then the
    per-frame noise and masks in stream order.
    """
    rng = np.random.default_rng(spec.seed)
    weights = []
    for reg in spec.regimes:
        if reg.weights is None:
            weights.append(
                _draw_regime_weights(
                    rng, spec.s, spec.k, spec.weight_low, spec.weight_high
                )
            )
        else:
            weights.append(np.asarray(reg.weights, dtype=np.float64).copy())

    def unit_nonneg(rows: int) -> np.ndarray:
        a = rng.random((rows, spec.k))
        return a / np.linalg.norm(a, axis=0)

    U = unit_nonneg(spec.m)
    V = unit_nonneg(spec.n)

    frames: list[MatrixFrame] = []
    labels: list[int] = []
    t = 0
    for regime_id, reg in enumerate(spec.regimes, start=1):
        w = weights[regime_id - 1]
        for _ in range(reg.duration):
            signal = (U * w[t % spec.s]) @ V.T
            if spec.noise_sigma > 0:
                signal = signal + spec.noise_sigma * rng.standard_normal((spec.m, spec.n))
            frame = np.clip(signal, 0.0, None)
            if spec.sparsity > 0:
                frame = np.where(rng.random((spec.m, spec.n)) < spec.sparsity, 0.0, frame)
            frames.append(MatrixFrame.from_dense(t, frame))
            labels.append(regime_id)
            t += 1
    return SynthResult(
        frames=frames,
        labels=np.asarray(labels, dtype=np.int64),
        row_factors=U,
        col_factors=V,
        weights=weights,
    )


def save_labels(path, labels) -> None:
    """Write the ground-truth regime schedule as ``t, regime`` rows."""
    labels = np.asarray(labels)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "regime"])
        for t, regime in enumerate(labels):
            writer.writerow([t, int(regime)])
