"""Cost and constraint metrics computed from a settling-phase error recording.

The cost is the sigmoid-weighted mean absolute position error over the
settling window; the constraint is the peak spectral magnitude of the
sigmoid-weighted velocity error inside a configurable vibration band.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ConstraintLimit = float | Callable[[np.ndarray], float]


@dataclass(frozen=True)
class MetricConfig:
    """Metric parameters.

    ``band_hz`` is the closed frequency interval scored by the constraint.
    The sigmoid filter drops from ~1 to ~0 around ``sigmoid_offset`` samples
    past the settle index, over a width set by ``sigmoid_slope`` (samples).
    ``cost_transform`` is ``"raw"`` or ``"log10"``; ``error_scale`` and
    ``velocity_scale`` convert the recorded SI errors into the units the
    metrics are expressed in (e.g. 1e6 to score micrometres), pinning a
    reproducible normalization. In log10 mode the raw value is floored at
    ``log_floor`` to keep the cost finite.
    """

    band_hz: tuple[float, float] = (140.0, 1250.0)
    sigmoid_offset: float = 150.0
    sigmoid_slope: float = 10.0
    cost_transform: str = "raw"
    c: ConstraintLimit = 1.0
    error_scale: float = 1.0
    velocity_scale: float = 1.0
    log_floor: float = 1e-12

    def __post_init__(self):
        if not 0 < self.band_hz[0] < self.band_hz[1]:
            raise ValueError(f"invalid frequency band {self.band_hz}")
        if self.sigmoid_offset <= 0 or self.sigmoid_slope <= 0:
            raise ValueError("sigmoid offset and slope must be positive")
        if self.cost_transform not in ("raw", "log10"):
            raise ValueError(f"unknown cost transform {self.cost_transform!r}")

    def limit(self, task: np.ndarray | None = None) -> float:
        """Constraint limit for a task (constant or per-task callable)."""
        if callable(self.c):
            return float(self.c(np.atleast_1d(np.asarray(task, dtype=float))))
        return float(self.c)


def sigmoid_filter(
    i: np.ndarray | float, n_s: float, offset: float = 150.0, slope: float = 10.0
) -> np.ndarray | float:
    """Left-sided sigmoid weight, ~1 early in the settle window, ~0 late.

    w(i) = 1 - 1 / (1 + exp(-(i - n_s - offset) / slope))
    """
    z = (np.asarray(i, dtype=float) - n_s - offset) / slope
    # 1 - logistic(z) = logistic(-z), computed via exp(-|z|) to avoid overflow
    ez = np.exp(-np.abs(z))
    out = np.where(z >= 0, ez / (1.0 + ez), 1.0 / (1.0 + ez))
    if np.isscalar(i) or np.ndim(i) == 0:
        return float(out)
    return out


def _settle_window(series: np.ndarray, n_s: int, n_p: int) -> np.ndarray:
    if not 0 <= n_s < n_p:
        raise ValueError(f"invalid settle window [{n_s}, {n_p}]")
    if n_p >= series.size:
        raise ValueError(f"settle window end {n_p} beyond series length {series.size}")
    return series[n_s : n_p + 1]


def cost(run, cfg: MetricConfig) -> float:
    """Weighted mean absolute position error over the settle window.

    ``run`` needs attributes ``p_e`` (position error series), ``n_s`` and
    ``n_p`` (settle window indices). Raw mode returns a non-negative value;
    log10 mode returns log10 of the floored raw value.
    """
    p_e = _settle_window(np.asarray(run.p_e, dtype=float), run.n_s, run.n_p)
    idx = np.arange(run.n_s, run.n_p + 1)
    w = sigmoid_filter(idx, run.n_s, cfg.sigmoid_offset, cfg.sigmoid_slope)
    raw = float(np.mean(np.abs(w * p_e))) * cfg.error_scale
    if cfg.cost_transform == "log10":
        return float(np.log10(max(raw, cfg.log_floor)))
    return raw


def constraint(run, cfg: MetricConfig) -> float:
    """Peak in-band spectral magnitude of the weighted velocity error.

    The window is the settle phase; the DFT magnitude is normalized by the
    window length so a unit-amplitude integer-period complex tone scores
    exactly 1. Bins with centre frequency inside the closed band count.
    """
    v_e = _settle_window(np.asarray(run.v_e, dtype=float), run.n_s, run.n_p)
    if v_e.size < 2:
        raise ValueError("settle window too short for a spectral estimate")
    idx = np.arange(run.n_s, run.n_p + 1)
    w = sigmoid_filter(idx, run.n_s, cfg.sigmoid_offset, cfg.sigmoid_slope)
    sig = w * v_e * cfg.velocity_scale
    spectrum = np.abs(np.fft.rfft(sig)) / sig.size
    freqs = np.fft.rfftfreq(sig.size, d=1.0 / run.f_s)
    lo, hi = cfg.band_hz
    in_band = (freqs >= lo) & (freqs <= hi)
    if not np.any(in_band):
        raise ValueError(f"no spectral bins inside band {cfg.band_hz} at f_s={run.f_s}")
    return float(np.max(spectrum[in_band]))
