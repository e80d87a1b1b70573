"""Private watermark stream and its expected image at the sensors.

The defender draws i.i.d. Gaussian excitation from a keyed generator and adds
it at the control input. Knowing the loop, the component it expects to see on
channel i is the convolution of the stream with that channel's closed-loop
pulse response.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .model import GridModel, closed_loop_impulse_response
from .signals import SignalTrace

# Tap magnitudes below this fraction of the largest tap cannot move the
# expected image at double precision; the response is truncated there.
_TAP_TOL = 1e-17


@dataclass(frozen=True)
class WatermarkKey:
    """Seed and amplitude of the private excitation stream."""

    seed: int
    sigma_e: float

    def __post_init__(self) -> None:
        if self.sigma_e < 0:
            raise ValueError("sigma_e must be non-negative")


def generate_watermark(key: WatermarkKey, length: int) -> SignalTrace:
    """Draw the first `length` samples of the keyed stream.

    The draw is prefix-stable: generate(key, n) equals the first n samples of
    generate(key, m) for any m >= n, so live operation and offline analysis
    see the same excitation.
    """
    if length < 0:
        raise ValueError("length must be non-negative")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(key.seed)))
    return SignalTrace(key.sigma_e * rng.standard_normal(length))


def watermark_matrix(key: WatermarkKey, horizon: int, n_inputs: int) -> np.ndarray:
    """Stream shaped (horizon, n_inputs); row-major split of the 1-D draw."""
    flat = generate_watermark(key, horizon * n_inputs).values
    return flat.reshape(horizon, n_inputs)


def _effective_taps(model: GridModel, channel: int, cap: int) -> int:
    """Shortest pulse-response prefix whose tail is numerically negligible."""
    if cap <= 2:
        return cap
    acl = model.closed_loop()
    c_row = model.C[channel] * model.level[channel]
    c_norm = float(np.linalg.norm(c_row))
    taps = 2
    for j in range(model.n_inputs):
        p = model.watermark_input[:, j].copy()
        peak = 0.0
        m = 1
        for m in range(1, cap):
            peak = max(peak, abs(float(c_row @ p)))
            # c_norm * ||p|| bounds every remaining tap from this input.
            if c_norm * float(np.linalg.norm(p)) <= _TAP_TOL * peak:
                break
            p = acl @ p
        taps = max(taps, m + 1)
    return min(cap, taps)


def expected_component(model: GridModel, key: WatermarkKey, channel: int,
                       horizon: int) -> SignalTrace:
    """Watermark image the defender expects on one channel over `horizon` steps.

    Exact for a linear channel (eps = 0); on a quadratic channel it is the
    linearized image and callers rescale it per block. Zero-amplitude keys
    yield the zero trace.
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if not 0 <= channel < model.n_sensors:
        raise ValueError(f"channel {channel} out of range [0, {model.n_sensors})")
    if horizon == 0 or key.sigma_e == 0.0:
        return SignalTrace(np.zeros(horizon), dt=model.dt)
    e = watermark_matrix(key, horizon, model.n_inputs)
    taps = _effective_taps(model, channel, horizon)
    out = np.zeros(horizon)
    for j in range(model.n_inputs):
        h = closed_loop_impulse_response(model, channel, taps, input_index=j).values
        out += fftconvolve(e[:, j], h)[:horizon]
    return SignalTrace(out, dt=model.dt)


def watermark_image_rms(model: GridModel, sigma_e: float, channel: int,
                        input_index: int = 0) -> float:
    """Stationary RMS of the channel's watermark image, sigma_e * ||h||_2."""
    taps = _effective_taps(model, channel, 100_000)
    h = closed_loop_impulse_response(model, channel, taps, input_index=input_index).values
    return float(sigma_e * np.sqrt(np.sum(h * h)))
