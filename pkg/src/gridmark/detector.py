"""Watermark presence tests, block statistics, and threshold calibration.

Three statistics are computed per channel per decision block: the projection
gain of the received signal onto the expected watermark image, the variance of
the high-passed signal, and the Welch power in the watermark band. Thresholds
are empirical quantiles of the same statistics on clean traffic, split
Bonferroni-style so `alpha` is the per-block false-alarm budget.

On channels whose reading scales with the operating point (amplitude-scaling
kind, or a quadratic sensor map) each statistic is normalized by a per-block
level estimate before thresholding; a legitimate level change then shifts the
template and the statistic together instead of raising a false alarm.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.signal import welch
from sklearn.base import BaseEstimator

from .errors import CalibrationError, ZeroTemplateError
from .model import GridModel, invert_sensor_map
from .signals import as_array

N_TESTS = 3  # gain, band variance, band power

# Level estimates below this floor mean the channel is essentially dead;
# statistics are left un-normalized rather than divided by ~0.
_LEVEL_FLOOR = 1e-9


@dataclass(frozen=True)
class DetectorConfig:
    """Decision-block layout and test parameters.

    alpha is the per-block false-alarm target. bands are the spectral test's
    edges in normalized frequency; level_ref gives each channel's nominal RMS
    for amplitude-scaling normalization (1.0 where irrelevant).
    """

    window: int = 1000
    highpass_cutoff: float = 0.1
    alpha: float = 0.05
    bands: tuple[float, float] = (0.1, 0.5)
    level_ref: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.window < 100:
            raise ValueError(f"window must be >= 100, got {self.window}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 < self.highpass_cutoff < 0.5:
            raise ValueError(
                f"highpass_cutoff must be in (0, 0.5), got {self.highpass_cutoff}"
            )
        lo, hi = self.bands
        if not (0.0 < lo < hi <= 0.5):
            raise ValueError(f"bands must satisfy 0 < lo < hi <= 0.5, got {self.bands}")
        object.__setattr__(self, "level_ref", tuple(float(x) for x in self.level_ref))
        if any(x <= 0 for x in self.level_ref):
            raise ValueError("level_ref entries must be positive")

    def reference_level(self, channel: int) -> float:
        if channel < len(self.level_ref):
            return self.level_ref[channel]
        return 1.0


def _windowed(trace, window: Optional[int]) -> np.ndarray:
    x = as_array(trace)
    if window is None:
        return x
    if window < 1 or window > x.size:
        raise ValueError(f"window {window} outside trace of length {x.size}")
    return x[:window]


def estimate_watermark_gain(received, template, window: Optional[int] = None) -> float:
    """Projection coefficient of the received signal onto the expected image.

    Both signals are mean-removed over the window, so the statistic is exactly
    1 when the received signal is the template, scales linearly with the
    received amplitude, and ignores constant offsets. Clean traffic centers
    it at 1.
    """
    x = _windowed(received, window)
    t = _windowed(template, window)
    if x.size != t.size:
        raise ValueError(f"received ({x.size}) and template ({t.size}) lengths differ")
    if x.size == 0:
        raise ZeroTemplateError("empty window has no template energy")
    tc = t - t.mean()
    energy = float(tc @ tc)
    if energy == 0.0:
        raise ZeroTemplateError("template has zero energy on the window")
    xc = x - x.mean()
    return float((xc @ tc) / energy)


def watermark_band_variance(received, cutoff: float = 0.1,
                            window: Optional[int] = None) -> float:
    """Mean square of the high-passed signal over the window.

    The filter is the first difference scaled by 1/sqrt(2), which has unit
    power gain for white noise and blocks constants and slow demand drift.
    cutoff only labels the band split (the difference filter's shape is
    fixed); it must lie in (0, 0.5).
    """
    if not 0.0 < cutoff < 0.5:
        raise ValueError(f"cutoff must be in (0, 0.5), got {cutoff}")
    x = _windowed(received, window)
    if x.size < 2:
        return 0.0
    hp = np.diff(x) / np.sqrt(2.0)
    return float(np.mean(hp * hp))


def spectral_band_power(trace, band: tuple[float, float] = (0.1, 0.5),
                        window: Optional[int] = None) -> float:
    """Welch power integrated over the band, in variance units.

    Welch settings are fixed for reproducibility: Hann taper, segment length
    window//8, 50% overlap, constant detrend. A unit-amplitude sine inside the
    band contributes ~0.5; white noise of variance s² spread over (0, 0.5]
    contributes s²·(hi-lo)/0.5.
    """
    lo, hi = band
    if not (0.0 < lo < hi <= 0.5):
        raise ValueError(f"band must satisfy 0 < lo < hi <= 0.5, got {band}")
    x = _windowed(trace, window)
    if x.size < 16:
        raise ValueError(f"trace too short for spectral estimate ({x.size} samples)")
    nperseg = max(8, x.size // 8)
    freqs, psd = welch(x, fs=1.0, window="hann", nperseg=nperseg,
                       noverlap=nperseg // 2, detrend="constant",
                       scaling="density")
    mask = (freqs >= lo) & (freqs <= hi)
    if not np.any(mask):
        raise ValueError(f"band {band} contains no frequency bins at this window")
    df = float(freqs[1] - freqs[0])
    return float(np.sum(psd[mask]) * df)


def block_scale(model: GridModel, config: DetectorConfig, channel: int,
                block: np.ndarray) -> float:
    """Level normalizer for one block of one channel.

    Amplitude-scaling channels: block RMS over the configured reference.
    Quadratic channels: local slope f'(y) = 1 + 2 eps y of the sensor map at
    the reported operating point (mean reading inverted through the map).
    Plain linear channels: 1, leaving the raw statistics untouched.
    """
    lam = 1.0
    if model.sensor_kind[channel] == "amplitude_scaling":
        rms = float(np.sqrt(np.mean(block * block)))
        lam *= rms / config.reference_level(channel)
    eps = float(model.nonlinearity_eps[channel])
    if eps != 0.0:
        mean_read = float(np.mean(block)) / float(model.level[channel])
        # Clamp into the invertible range; a mean outside it is itself a
        # gross anomaly and the un-normalized statistics will alarm.
        disc = 1.0 + 4.0 * eps * mean_read
        if disc > 0.0:
            y0 = invert_sensor_map(eps, mean_read)
            lam *= 1.0 + 2.0 * eps * y0
    return max(lam, _LEVEL_FLOOR)


@dataclass(frozen=True)
class BlockStatistics:
    """Per-channel, per-block detector statistics (already level-normalized)."""

    gain: np.ndarray
    band_variance: np.ndarray
    band_power: np.ndarray
    window: int
    start: int = 0

    def __post_init__(self) -> None:
        shape = self.gain.shape
        if self.band_variance.shape != shape or self.band_power.shape != shape:
            raise ValueError("statistic arrays must share shape (channels, blocks)")
        if len(shape) != 2:
            raise ValueError(f"expected (channels, blocks) arrays, got shape {shape}")

    @property
    def n_channels(self) -> int:
        return int(self.gain.shape[0])

    @property
    def n_blocks(self) -> int:
        return int(self.gain.shape[1])


def compute_block_statistics(model: GridModel, received: np.ndarray,
                             templates: np.ndarray, config: DetectorConfig,
                             start: int = 0) -> BlockStatistics:
    """Split received traces into decision blocks and evaluate all three tests.

    received is (horizon, n_channels); templates is the same shape or a
    per-channel sequence of 1-D arrays. Blocks tile
    [start, start + n_blocks*window); the tail shorter than one window is
    dropped.
    """
    received = np.asarray(received, dtype=np.float64)
    if isinstance(templates, (list, tuple)):
        templates = np.column_stack([np.asarray(t, dtype=np.float64) for t in templates])
    else:
        templates = np.asarray(templates, dtype=np.float64)
    if received.shape != templates.shape:
        raise ValueError("received and template arrays must share shape")
    horizon, n_ch = received.shape
    if n_ch != model.n_sensors:
        raise ValueError(f"expected {model.n_sensors} channels, got {n_ch}")
    w = config.window
    n_blocks = (horizon - start) // w
    if n_blocks < 1:
        raise ValueError(
            f"no full decision block fits: horizon {horizon}, start {start}, window {w}"
        )
    gain = np.empty((n_ch, n_blocks))
    var = np.empty((n_ch, n_blocks))
    power = np.empty((n_ch, n_blocks))
    for ch in range(n_ch):
        for b in range(n_blocks):
            sl = slice(start + b * w, start + (b + 1) * w)
            x = received[sl, ch]
            lam = block_scale(model, config, ch, x)
            gain[ch, b] = estimate_watermark_gain(x, templates[sl, ch]) / lam
            var[ch, b] = watermark_band_variance(x, config.highpass_cutoff) / lam**2
            power[ch, b] = spectral_band_power(x, config.bands) / lam**2
    return BlockStatistics(gain=gain, band_variance=var, band_power=power,
                           window=w, start=start)


@dataclass(frozen=True)
class Thresholds:
    """Per-channel acceptance intervals for the three tests."""

    gain_low: np.ndarray
    gain_high: np.ndarray
    var_low: np.ndarray
    var_high: np.ndarray
    spec_low: np.ndarray
    spec_high: np.ndarray

    def __post_init__(self) -> None:
        for low, high, name in ((self.gain_low, self.gain_high, "gain"),
                                (self.var_low, self.var_high, "var"),
                                (self.spec_low, self.spec_high, "spec")):
            lo = np.atleast_1d(np.asarray(low, dtype=np.float64))
            hi = np.atleast_1d(np.asarray(high, dtype=np.float64))
            if lo.shape != hi.shape:
                raise ValueError(f"{name} interval arrays must share shape")
            if np.any(lo > hi):
                raise ValueError(f"{name}_low exceeds {name}_high")
        object.__setattr__(self, "gain_low", np.atleast_1d(np.asarray(self.gain_low, dtype=np.float64)))
        object.__setattr__(self, "gain_high", np.atleast_1d(np.asarray(self.gain_high, dtype=np.float64)))
        object.__setattr__(self, "var_low", np.atleast_1d(np.asarray(self.var_low, dtype=np.float64)))
        object.__setattr__(self, "var_high", np.atleast_1d(np.asarray(self.var_high, dtype=np.float64)))
        object.__setattr__(self, "spec_low", np.atleast_1d(np.asarray(self.spec_low, dtype=np.float64)))
        object.__setattr__(self, "spec_high", np.atleast_1d(np.asarray(self.spec_high, dtype=np.float64)))

    @property
    def n_channels(self) -> int:
        return int(self.gain_low.shape[0])

    def to_dict(self) -> dict:
        return {
            "gain_low": self.gain_low.tolist(), "gain_high": self.gain_high.tolist(),
            "var_low": self.var_low.tolist(), "var_high": self.var_high.tolist(),
            "spec_low": self.spec_low.tolist(), "spec_high": self.spec_high.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Thresholds":
        return cls(**{k: np.asarray(payload[k], dtype=np.float64)
                      for k in ("gain_low", "gain_high", "var_low", "var_high",
                                "spec_low", "spec_high")})


def _pool(stats: Sequence[BlockStatistics] | BlockStatistics):
    if isinstance(stats, BlockStatistics):
        stats = [stats]
    stats = list(stats)
    if not stats:
        raise CalibrationError("no clean statistics supplied")
    n_ch = stats[0].n_channels
    if any(s.n_channels != n_ch for s in stats):
        raise CalibrationError("clean statistics disagree on channel count")
    gain = np.concatenate([s.gain for s in stats], axis=1)
    var = np.concatenate([s.band_variance for s in stats], axis=1)
    power = np.concatenate([s.band_power for s in stats], axis=1)
    return gain, var, power


def calibrate_thresholds(clean_stats, alpha: float = 0.05) -> Thresholds:
    """Empirical-quantile intervals from clean blocks at per-block budget alpha.

    The two-sided tail mass is alpha / (2 * 3 tests * n_channels): a union
    bound over every comparison made per block, so the clean per-block alarm
    rate lands near alpha. Needs at least 50 pooled blocks.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    gain, var, power = _pool(clean_stats)
    n_ch, n_blocks = gain.shape
    if n_blocks < 50:
        raise CalibrationError(f"need >= 50 clean blocks, got {n_blocks}")
    tail = alpha / (2.0 * N_TESTS * n_ch)
    qs = (tail, 1.0 - tail)
    g_lo, g_hi = np.quantile(gain, qs, axis=1)
    v_lo, v_hi = np.quantile(var, qs, axis=1)
    p_lo, p_hi = np.quantile(power, qs, axis=1)
    return Thresholds(gain_low=g_lo, gain_high=g_hi, var_low=v_lo, var_high=v_hi,
                      spec_low=p_lo, spec_high=p_hi)


@dataclass(frozen=True)
class DetectorReport:
    """Judgement of one run: statistics, per-test flags, overall verdict."""

    gain: np.ndarray
    band_variance: np.ndarray
    band_power: np.ndarray
    gain_alarm: np.ndarray
    var_alarm: np.ndarray
    spec_alarm: np.ndarray
    overall_alarm: bool
    time_to_detect: Optional[int]
    window: int

    def __post_init__(self) -> None:
        any_alarm = bool(np.any(self.gain_alarm) or np.any(self.var_alarm)
                         or np.any(self.spec_alarm))
        if any_alarm != self.overall_alarm:
            raise ValueError("overall_alarm must be the OR of the per-test flags")
        if self.overall_alarm != (self.time_to_detect is not None):
            raise ValueError("time_to_detect must be present iff the run alarms")

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "overall_alarm": self.overall_alarm,
            "time_to_detect": self.time_to_detect,
            "gain": self.gain.tolist(),
            "band_variance": self.band_variance.tolist(),
            "band_power": self.band_power.tolist(),
            "gain_alarm": self.gain_alarm.tolist(),
            "var_alarm": self.var_alarm.tolist(),
            "spec_alarm": self.spec_alarm.tolist(),
        }


def judge(stats: BlockStatistics, thresholds: Thresholds) -> DetectorReport:
    """Flag every statistic strictly outside its interval; OR per block.

    time_to_detect is the end index of the first alarming block, counted in
    steps from the start of the monitored region.
    """
    if thresholds.n_channels != stats.n_channels:
        raise ValueError(
            f"thresholds cover {thresholds.n_channels} channels, "
            f"statistics have {stats.n_channels}"
        )
    g_bad = (stats.gain < thresholds.gain_low[:, None]) | \
            (stats.gain > thresholds.gain_high[:, None])
    v_bad = (stats.band_variance < thresholds.var_low[:, None]) | \
            (stats.band_variance > thresholds.var_high[:, None])
    p_bad = (stats.band_power < thresholds.spec_low[:, None]) | \
            (stats.band_power > thresholds.spec_high[:, None])
    per_block = np.any(g_bad, axis=0) | np.any(v_bad, axis=0) | np.any(p_bad, axis=0)
    overall = bool(np.any(per_block))
    ttd = int((np.argmax(per_block) + 1) * stats.window) if overall else None
    return DetectorReport(gain=stats.gain, band_variance=stats.band_variance,
                          band_power=stats.band_power, gain_alarm=g_bad,
                          var_alarm=v_bad, spec_alarm=p_bad,
                          overall_alarm=overall, time_to_detect=ttd,
                          window=stats.window)


class WatermarkDetector(BaseEstimator):
    """Estimator-style wrapper around calibrate/judge for one channel.

    fit consumes a (n_blocks, 3) matrix of clean statistics with columns
    (gain, band variance, band power); predict returns +1 for blocks inside
    all intervals and -1 for alarming blocks, following the common outlier
    convention.
    """

    def __init__(self, alpha: float = 0.05):
        self.alpha = alpha

    def _as_stats(self, X) -> BlockStatistics:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != N_TESTS:
            raise ValueError(f"expected (n_blocks, {N_TESTS}) statistics, got {X.shape}")
        return BlockStatistics(gain=X[:, 0][None, :], band_variance=X[:, 1][None, :],
                               band_power=X[:, 2][None, :], window=100)

    def fit(self, X, y=None) -> "WatermarkDetector":
        self.thresholds_ = calibrate_thresholds(self._as_stats(X), alpha=self.alpha)
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "thresholds_"):
            raise CalibrationError("detector is not fitted")
        report = judge(self._as_stats(X), self.thresholds_)
        bad = report.gain_alarm[0] | report.var_alarm[0] | report.spec_alarm[0]
        return np.where(bad, -1, 1)
