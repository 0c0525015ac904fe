"""Diagnostics: energies, magnetization, spectra, decorrelator, timescales."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .lattice import InteractionKernel
from .state import SpinConfig

#: Infinite-temperature value of the decorrelator (independent random spins).
D_INFINITY = math.sqrt(2.0)


@dataclass
class TimeSeries:
    """Scalar observable sampled at stroboscopic period indices (t = n*T)."""

    times: np.ndarray
    values: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self) -> int:
        return int(self.times.size)


@dataclass(frozen=True)
class TimescalePair:
    """Onset and end of the decorrelator plateau; None when never crossed."""

    tau_pth: float | None
    tau_th: float | None

    def __post_init__(self) -> None:
        if self.tau_pth is not None and self.tau_th is not None:
            if self.tau_pth > self.tau_th + 1e-9:
                raise ValueError("tau_pth must not exceed tau_th")


def magnetization(config: SpinConfig) -> float:
    """Mean z-component over all sites."""
    return float(np.mean(config.sz))


def _interaction_per_site(config, kernel, h, kappa):
    """sz_i * (kappa_i - h), the kernel-weighted pair sum seen by each site."""
    if kappa is None:
        from .dynamics import effective_field  # local import avoids a cycle

        kappa = effective_field(config, kernel, h)
    return config.sz * (np.asarray(kappa) - h)


def energy_period_averaged(
    config: SpinConfig,
    kernel: InteractionKernel,
    params,
    kappa: np.ndarray | None = None,
) -> float:
    """Per-spin energy averaged over one drive period.

    Interaction term carries a factor 1/2, plus h/2 * sz and omega*g * sx
    per site. Pass a precomputed effective field to avoid recomputing it.
    """
    inter = _interaction_per_site(config, kernel, params.h, kappa)
    per_site = 0.5 * inter + 0.5 * params.h * config.sz + params.omega * params.g * config.sx
    return float(np.mean(per_site))


def energy_first_half(
    config: SpinConfig,
    kernel: InteractionKernel,
    h: float,
    kappa: np.ndarray | None = None,
) -> float:
    """Per-spin energy of the first drive half (interaction plus h field).

    The interaction double sum is taken exactly as written, without the 1/2
    double-counting factor, so an all +z state gives 1 + h per spin. Useful
    for frequency scans since it does not depend on omega.
    """
    inter = _interaction_per_site(config, kernel, h, kappa)
    return float(np.mean(inter + h * config.sz))


def decorrelator(a: SpinConfig, b: SpinConfig) -> float:
    """Root-mean-square site-wise distance between two configurations.

    Ranges from 0 (identical) to 2 (site-wise antipodal); two independent
    random configurations give sqrt(2).
    """
    if a.N != b.N:
        raise ValueError(f"size mismatch: {a.N} vs {b.N}")
    d2 = (a.sx - b.sx) ** 2 + (a.sy - b.sy) ** 2 + (a.sz - b.sz) ** 2
    return float(np.sqrt(np.mean(d2)))


def spectrum(series: TimeSeries, M: int) -> np.ndarray:
    """Discrete Fourier transform of m(nT) over the first M periods.

    Returns m_tilde(omega'_k) = (1/M) sum_n m(nT) exp(-i omega'_k n T) for
    k = 0..M-1, where omega'_k = omega * k / M. Requires the series to hold
    consecutive periods n = 0..M-1.
    """
    if M < 1:
        raise ValueError("M must be positive")
    if len(series) < M:
        raise ValueError(f"series has {len(series)} samples, need {M}")
    head = series.times[:M]
    if head[0] != 0 or np.any(np.diff(head) != 1):
        raise ValueError("spectrum needs consecutive samples at n = 0..M-1")
    return np.fft.fft(series.values[:M]) / M


def subharmonic_order_parameter(series: TimeSeries, M: int, n: int) -> float:
    """|m_tilde(-omega/n)| + |m_tilde(+omega/n)|, the period-n response weight.

    M must be divisible by n so the subharmonic falls exactly on a bin.
    """
    if n < 2:
        raise ValueError(f"subharmonic order n must be >= 2, got {n}")
    if M % n != 0:
        raise ValueError(f"M={M} is not divisible by n={n}: subharmonic bin misaligned")
    amps = spectrum(series, M)
    k = M // n
    return float(np.abs(amps[k]) + np.abs(amps[M - k]))


def moving_average(series: TimeSeries, window: int) -> TimeSeries:
    """Centered moving mean over ``window`` recorded samples, truncated at edges."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if window == 1:
        return TimeSeries(series.times.copy(), series.values.copy(), dict(series.meta))
    v = series.values
    csum = np.concatenate([[0.0], np.cumsum(v)])
    base = np.arange(v.size) - window // 2
    lo = np.clip(base, 0, v.size)
    hi = np.clip(base + window, 0, v.size)
    smoothed = (csum[hi] - csum[lo]) / (hi - lo)
    meta = dict(series.meta)
    meta["smoothing_window"] = window
    return TimeSeries(series.times.copy(), smoothed, meta)


def _smooth_symmetric(values: np.ndarray, window: int) -> np.ndarray:
    """Centered mean over up to ``window`` samples, shrinking symmetrically
    at the edges so a steeply growing record is not biased near its start."""
    if window <= 1:
        return values
    n = values.size
    k = window // 2
    idx = np.arange(n)
    half = np.minimum(np.minimum(idx, n - 1 - idx), k)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    lo = idx - half
    hi = idx + half + 1
    return (csum[hi] - csum[lo]) / (hi - lo)


def _first_upcrossing(times, values, threshold):
    """Linearly interpolated first time values reach threshold, or None."""
    above = values >= threshold
    if not above.any():
        return None
    i = int(np.argmax(above))
    if i == 0:
        return float(times[0])
    t0, t1 = times[i - 1], times[i]
    v0, v1 = values[i - 1], values[i]
    if v1 == v0:
        return float(t1)
    return float(t0 + (threshold - v0) / (v1 - v0) * (t1 - t0))


def extract_timescales(
    d_series: TimeSeries,
    d_max: float = D_INFINITY,
    smooth_window: int = 16,
) -> TimescalePair:
    """Plateau onset and end from the 10% and 90% crossings of d_max.

    The series is smoothed first (centered window in recorded samples,
    shrinking symmetrically at the edges) to suppress subharmonic
    oscillations. tau_pth is the first 10% upcrossing. tau_th is the first
    90% upcrossing after which the record never drops below again, guarding
    against transient spikes. Either value is None when the threshold is not
    reached within the record.
    """
    if len(d_series) == 0:
        raise ValueError("empty decorrelator series")
    times = d_series.times.astype(np.float64)
    values = _smooth_symmetric(d_series.values, smooth_window)
    tau_pth = _first_upcrossing(times, values, 0.1 * d_max)
    thr = 0.9 * d_max
    below = values < thr
    if below.all():
        tau_th = None
    elif not below.any():
        tau_th = float(times[0])
    else:
        last_below = int(np.max(np.nonzero(below)[0]))
        if last_below == values.size - 1:
            tau_th = None  # dips back below at the end of the record
        else:
            tau_th = _first_upcrossing(times[last_below:], values[last_below:], thr)
    if tau_pth is not None and tau_th is not None and tau_pth > tau_th:
        tau_pth = tau_th  # smoothing artifacts can reorder marginal crossings
    return TimescalePair(tau_pth=tau_pth, tau_th=tau_th)


def decorrelator_plateau(
    d_series: TimeSeries,
    d_max: float = D_INFINITY,
    smooth_window: int = 16,
) -> float | None:
    """Median decorrelator level across the prethermal plateau window.

    The window runs from 5 * tau_pth to tau_th / 2 (or to the end of the
    record when thermalization is never reached). None when the plateau has
    not developed within the record.
    """
    pair = extract_timescales(d_series, d_max, smooth_window)
    if pair.tau_pth is None:
        return None
    smoothed = _smooth_symmetric(d_series.values, smooth_window)
    start = 5.0 * pair.tau_pth
    end = 0.5 * pair.tau_th if pair.tau_th is not None else float(d_series.times[-1])
    mask = (d_series.times >= start) & (d_series.times <= end)
    if not mask.any():
        return None
    return float(np.median(smoothed[mask]))
