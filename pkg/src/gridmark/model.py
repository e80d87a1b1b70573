"""Discrete-time closed-loop plant with watermark injection and sensor channels.

The plant is linear time-invariant:

    x[k+1] = A x[k] + B u[k] + B_w e[k] + w[k]
    y[k]   = C x[k]

Each sensor channel reports level * (f(y_i) + v_i) with f(y) = y + eps * y**2,
so a channel is linear when its eps is zero and its level is the nominal 1.0.
The controller closes the loop on whatever the channels deliver (an interceptor
may rewrite one of them): u[k] = r[k] + d[k] - G s_received[k], where d is a
seeded random-walk demand added to the reference path.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import AuthenticatedChannelError
from .signals import SignalTrace, as_array

InterceptorHook = Callable[[int, np.ndarray], Optional[float]]

SENSOR_KINDS = ("independent", "amplitude_scaling")


@dataclass(frozen=True, eq=False)
class GridModel:
    """Deterministic description of the loop plus noise levels.

    sensor_kind selects the scaling semantics of each channel: an
    "amplitude_scaling" channel's whole reading (watermark image included)
    rides on the channel level, an "independent" channel's does not.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    G: np.ndarray
    watermark_input: np.ndarray | None = None
    sensor_kind: tuple[str, ...] = ()
    nonlinearity_eps: np.ndarray = field(default_factory=lambda: np.zeros(0))
    level: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma_w: float = 0.0
    sigma_v: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma_d: float = 0.0
    dt: float = 1.0

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        B = np.atleast_2d(np.asarray(self.B, dtype=np.float64))
        C = np.atleast_2d(np.asarray(self.C, dtype=np.float64))
        G = np.atleast_2d(np.asarray(self.G, dtype=np.float64))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ValueError(f"B has {B.shape[0]} rows, state dim is {n}")
        if C.shape[1] != n:
            raise ValueError(f"C has {C.shape[1]} columns, state dim is {n}")
        m, p = B.shape[1], C.shape[0]
        if G.shape != (m, p):
            raise ValueError(f"G must be {m}x{p} (inputs x sensors), got {G.shape}")
        Bw = self.watermark_input
        Bw = B.copy() if Bw is None else np.atleast_2d(np.asarray(Bw, dtype=np.float64))
        if Bw.shape != B.shape:
            raise ValueError(f"watermark_input must match B's shape {B.shape}, got {Bw.shape}")

        kind = tuple(self.sensor_kind) if self.sensor_kind else ("independent",) * p
        if len(kind) != p or any(k not in SENSOR_KINDS for k in kind):
            raise ValueError(f"sensor_kind must be {p} entries from {SENSOR_KINDS}, got {kind}")
        eps = _per_channel(self.nonlinearity_eps, p, "nonlinearity_eps", default=0.0)
        level = _per_channel(self.level, p, "level", default=1.0)
        if np.any(level <= 0):
            raise ValueError("channel level must be positive")
        sigma_v = _per_channel(self.sigma_v, p, "sigma_v", default=0.0)
        if self.sigma_w < 0 or self.sigma_d < 0 or np.any(sigma_v < 0):
            raise ValueError("noise levels must be non-negative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

        for name, value in (
            ("A", A), ("B", B), ("C", C), ("G", G), ("watermark_input", Bw),
            ("nonlinearity_eps", eps), ("level", level), ("sigma_v", sigma_v),
            ("sensor_kind", kind),
        ):
            object.__setattr__(self, name, value)

        rho = self.spectral_radius()
        if not rho < 1.0:
            raise ValueError(f"closed loop is unstable: spectral radius {rho:.6f} >= 1")

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_sensors(self) -> int:
        return self.C.shape[0]

    def closed_loop(self) -> np.ndarray:
        """State matrix of the nominal (linearized) loop, A - B G diag(level) C.

        The controller consumes the level-scaled readings, so channel levels
        enter the loop; with nominal levels of 1 this is plain A - B G C.
        """
        return self.A - self.B @ self.G @ (self.level[:, None] * self.C)

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.closed_loop()))))

    def replace(self, **changes) -> "GridModel":
        return dataclasses.replace(self, **changes)


def _per_channel(value, p: int, name: str, default: float) -> np.ndarray:
    if value is None or (hasattr(value, "__len__") and len(value) == 0):
        return np.full(p, default, dtype=np.float64)
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if arr.shape == (1,) and p > 1:
        arr = np.full(p, float(arr[0]))
    if arr.shape != (p,):
        raise ValueError(f"{name} must have one entry per sensor ({p}), got shape {arr.shape}")
    return arr


@dataclass
class ChannelModel:
    """Delivery path of one sensor: optionally authenticated, optionally hooked.

    The interceptor, if present, is called every step with (k, true sensor
    vector) and may return a replacement value for this channel (None leaves
    the reading untouched). Writes against an authenticated channel are
    rejected before the simulation produces any trace.
    """

    authenticated: bool = False
    interceptor: Optional[InterceptorHook] = None


@dataclass(frozen=True)
class SeedSet:
    """Seeds for the three exogenous noise streams of one run."""

    process: object = 0
    measurement: object = 1
    demand: object = 2

    def generators(self) -> tuple[np.random.Generator, ...]:
        return tuple(
            np.random.Generator(np.random.PCG64(np.random.SeedSequence(s)))
            for s in (self.process, self.measurement, self.demand)
        )


@dataclass(frozen=True)
class TraceBundle:
    """Everything one simulation produced, aligned sample by sample.

    reference holds the effective path the controller tracked (raw reference
    plus demand walk). Noise draws are retained so decompositions and oracle
    tests can rebuild runs from the same randomness.
    """

    sensors: np.ndarray
    received: np.ndarray
    control: np.ndarray
    reference: np.ndarray
    demand: np.ndarray
    watermark: np.ndarray
    process_noise: np.ndarray
    measurement_noise: np.ndarray
    dt: float = 1.0

    def __post_init__(self) -> None:
        n = self.sensors.shape[0]
        for name in ("received", "control", "reference", "demand",
                     "watermark", "process_noise", "measurement_noise"):
            arr = getattr(self, name)
            if arr.shape[0] != n:
                raise ValueError(f"{name} length {arr.shape[0]} != horizon {n}")
            if arr.size and not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite samples")
        if self.sensors.size and not np.all(np.isfinite(self.sensors)):
            raise ValueError("sensors contains non-finite samples")

    @property
    def horizon(self) -> int:
        return int(self.sensors.shape[0])

    def sensor(self, channel: int) -> SignalTrace:
        return SignalTrace(self.sensors[:, channel], dt=self.dt)

    def channel(self, channel: int) -> SignalTrace:
        """Received trace of one channel (what the controller saw)."""
        return SignalTrace(self.received[:, channel], dt=self.dt)


def step(model: GridModel, x: np.ndarray, u: np.ndarray, e: np.ndarray,
         w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One state update; returns (next state, raw sensor vector of the current state)."""
    x = np.asarray(x, dtype=np.float64)
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    e = np.atleast_1d(np.asarray(e, dtype=np.float64))
    w = np.asarray(w, dtype=np.float64)
    if x.shape != (model.state_dim,):
        raise ValueError(f"state must have shape ({model.state_dim},), got {x.shape}")
    if u.shape != (model.n_inputs,) or e.shape != (model.n_inputs,):
        raise ValueError(f"u and e must have shape ({model.n_inputs},)")
    if w.shape != (model.state_dim,):
        raise ValueError(f"w must have shape ({model.state_dim},), got {w.shape}")
    y = model.C @ x
    x_next = model.A @ x + model.B @ u + model.watermark_input @ e + w
    return x_next, y


def sensor_output(model: GridModel, channel: int, y_raw: float, v: float = 0.0) -> float:
    """Reading the channel reports for raw value y_raw and noise draw v.

    Applies the memoryless quadratic map f(y) = y + eps*y^2, adds the
    measurement noise, then the channel level (1.0 on independent channels).
    """
    if not 0 <= channel < model.n_sensors:
        raise ValueError(f"channel {channel} out of range [0, {model.n_sensors})")
    eps = model.nonlinearity_eps[channel]
    return float(model.level[channel] * (y_raw + eps * y_raw * y_raw + v))


def invert_sensor_map(eps: float, s):
    """Principal-branch inverse of f(y) = y + eps*y^2.

    Continuous in eps at 0 (returns s there) and exact wherever
    |eps*y| < 0.25 keeps f monotone. Readings with a negative discriminant
    have no preimage and raise NonInvertibleError.
    """
    from .errors import NonInvertibleError

    s_arr = np.asarray(s, dtype=np.float64)
    if eps == 0.0:
        return s if np.isscalar(s) else s_arr.copy()
    disc = 1.0 + 4.0 * eps * s_arr
    if np.any(disc < 0.0):
        raise NonInvertibleError(
            "reading outside the invertible range of the quadratic sensor map"
        )
    # 2s / (1 + sqrt(disc)) equals (sqrt(disc) - 1) / (2 eps) without the
    # cancellation that form suffers at small eps*s.
    y = 2.0 * s_arr / (1.0 + np.sqrt(disc))
    return float(y) if np.isscalar(s) else y


def controller_law(model: GridModel, r: np.ndarray, s_received: np.ndarray) -> np.ndarray:
    """u = r - G s. r is the effective reference (demand already applied)."""
    r = np.atleast_1d(np.asarray(r, dtype=np.float64))
    s = np.atleast_1d(np.asarray(s_received, dtype=np.float64))
    if r.shape != (model.n_inputs,):
        raise ValueError(f"reference must have shape ({model.n_inputs},), got {r.shape}")
    if s.shape != (model.n_sensors,):
        raise ValueError(f"sensor vector must have shape ({model.n_sensors},), got {s.shape}")
    return r - model.G @ s


def closed_loop_impulse_response(model: GridModel, channel: int, length: int,
                                 input_index: int = 0) -> SignalTrace:
    """Response of one channel to a unit watermark pulse in the nominal loop.

    h[0] is 0 (the injection reaches the sensors one step later) and
    h[m] = level * C_ch (A - B G C)^(m-1) B_w[:, input] for m >= 1.
    A watermark stream e then shows up in the channel as the convolution h * e.
    """
    if length < 0:
        raise ValueError("length must be non-negative")
    if not 0 <= channel < model.n_sensors:
        raise ValueError(f"channel {channel} out of range [0, {model.n_sensors})")
    if not 0 <= input_index < model.n_inputs:
        raise ValueError(f"input {input_index} out of range [0, {model.n_inputs})")
    h = np.zeros(length)
    if length > 1:
        acl = model.closed_loop()
        c_row = model.C[channel]
        scale = model.level[channel]
        p = model.watermark_input[:, input_index].copy()
        for m in range(1, length):
            h[m] = scale * float(c_row @ p)
            p = acl @ p
    return SignalTrace(h, dt=model.dt)


def _reference_matrix(reference, horizon: int, n_inputs: int) -> np.ndarray:
    """Normalize a reference spec (scalar, trace, or matrix) to (horizon, n_inputs)."""
    if isinstance(reference, SignalTrace):
        reference = reference.values
    arr = np.asarray(reference, dtype=np.float64)
    if arr.ndim == 0:
        return np.full((horizon, n_inputs), float(arr))
    if arr.ndim == 1:
        if arr.shape[0] == n_inputs and horizon != n_inputs:
            return np.tile(arr, (horizon, 1))
        if arr.shape[0] != horizon:
            raise ValueError(f"reference length {arr.shape[0]} != horizon {horizon}")
        return np.repeat(arr[:, None], n_inputs, axis=1)
    if arr.shape != (horizon, n_inputs):
        raise ValueError(f"reference shape {arr.shape} != ({horizon}, {n_inputs})")
    return arr


def simulate(model: GridModel, channels: Sequence[ChannelModel], reference,
             horizon: int, seeds: SeedSet, watermark=None) -> TraceBundle:
    """Run the closed loop for `horizon` steps from the zero state.

    watermark is a WatermarkKey or None. Interceptors installed on channels
    are consulted every step with the true sensor vector; whatever they return
    is what the controller receives. Identical arguments give bitwise
    identical bundles.
    """
    from .watermark import watermark_matrix  # local import avoids a cycle

    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    p = model.n_sensors
    if len(channels) != p:
        raise ValueError(f"expected {p} channel models, got {len(channels)}")
    for i, ch in enumerate(channels):
        if ch.interceptor is not None and ch.authenticated:
            raise AuthenticatedChannelError(
                f"channel {i} is authenticated, interceptor writes are rejected"
            )

    r = _reference_matrix(reference, horizon, model.n_inputs)
    rng_w, rng_v, rng_d = seeds.generators()
    w = rng_w.standard_normal((horizon, model.state_dim)) * model.sigma_w
    v = rng_v.standard_normal((horizon, p)) * model.sigma_v
    d = np.cumsum(rng_d.standard_normal(horizon) * model.sigma_d)
    e = (watermark_matrix(watermark, horizon, model.n_inputs)
         if watermark is not None else np.zeros((horizon, model.n_inputs)))

    A, B, Bw, C, G = model.A, model.B, model.watermark_input, model.C, model.G
    eps, level = model.nonlinearity_eps, model.level
    any_eps = bool(np.any(eps != 0.0))
    hooks = [(i, ch.interceptor) for i, ch in enumerate(channels)
             if ch.interceptor is not None]
    authenticated = [ch.authenticated for ch in channels]

    sensors = np.empty((horizon, p))
    received = np.empty((horizon, p))
    control = np.empty((horizon, model.n_inputs))
    ref_eff = r + d[:, None]
    x = np.zeros(model.state_dim)

    for k in range(horizon):
        y = C @ x
        if any_eps:
            s = level * (y + eps * y * y + v[k])
        else:
            s = level * (y + v[k])
        sensors[k] = s
        rec = s
        if hooks:
            rec = s.copy()
            for i, hook in hooks:
                fake = hook(k, s)
                if fake is not None:
                    if authenticated[i]:
                        raise AuthenticatedChannelError(
                            f"write against authenticated channel {i} at step {k}"
                        )
                    rec[i] = float(fake)
        received[k] = rec
        u = ref_eff[k] - G @ rec
        control[k] = u
        x = A @ x + B @ u + Bw @ e[k] + w[k]

    return TraceBundle(
        sensors=sensors, received=received, control=control, reference=ref_eff,
        demand=d, watermark=e, process_noise=w, measurement_noise=v, dt=model.dt,
    )


def plain_channels(model: GridModel) -> list[ChannelModel]:
    """Unauthenticated, unhooked channel models for every sensor."""
    return [ChannelModel() for _ in range(model.n_sensors)]


@dataclass(frozen=True)
class Decomposition:
    """Per-channel split of sensor readings into regular + watermark + leftover.

    regular is the reading with the watermark absent (same noise draws),
    watermark_image is the linear-loop response to the watermark alone, and
    nonlinear is whatever remains; it is identically zero on linear channels.
    """

    regular: np.ndarray
    watermark_image: np.ndarray
    nonlinear: np.ndarray

    def channel(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.regular[:, i], self.watermark_image[:, i], self.nonlinear[:, i]


def decompose(model: GridModel, reference, horizon: int, seeds: SeedSet,
              watermark) -> Decomposition:
    """Split clean-loop sensor readings as S = R + N + X, run with shared seeds.

    Four runs pin the parts down: R comes from a watermark-free run, N from the
    difference of the two runs with nonlinearity forced off, X is the rest.
    No interceptors take part; attacks have no place in this identity.
    """
    chans = plain_channels(model)
    linear = model.replace(nonlinearity_eps=np.zeros(model.n_sensors))
    full = simulate(model, chans, reference, horizon, seeds, watermark)
    regular = simulate(model, chans, reference, horizon, seeds, None)
    if np.any(model.nonlinearity_eps != 0.0):
        lin_marked = simulate(linear, chans, reference, horizon, seeds, watermark)
        lin_plain = simulate(linear, chans, reference, horizon, seeds, None)
    else:
        lin_marked, lin_plain = full, regular
    image = lin_marked.sensors - lin_plain.sensors
    leftover = full.sensors - regular.sensors - image
    return Decomposition(regular=regular.sensors, watermark_image=image,
                         nonlinear=leftover)


# Reference plants. The desk-scale default is a four-state loop whose open-loop
# dynamics are mildly unstable and whose controller brings the spectral radius
# to about 0.8, so feedback genuinely matters.

_DEFAULT_A = (
    (0.82, 0.20, 0.00, 0.00),
    (0.00, 0.70, 0.15, 0.00),
    (0.00, 0.00, 0.72, 0.10),
    (0.12, 0.00, 0.00, 0.78),
)
_DEFAULT_B = ((1.0,), (0.6,), (0.0,), (0.3,))
_DEFAULT_C = ((1.0, 0.0, 0.3, 0.0), (0.0, 0.9, 0.0, 0.4))
_DEFAULT_G = ((0.119, 0.052),)


def default_model(**overrides) -> GridModel:
    """The two-sensor desk-scale plant used by the shipped presets."""
    params = dict(
        A=np.array(_DEFAULT_A), B=np.array(_DEFAULT_B),
        C=np.array(_DEFAULT_C), G=np.array(_DEFAULT_G),
        sigma_w=0.0, sigma_v=0.004, sigma_d=0.0015,
    )
    params.update(overrides)
    return GridModel(**params)


def scalar_model(a: float = 0.0, b: float = 1.0, c: float = 1.0, g: float = 0.0,
                 **overrides) -> GridModel:
    """Single-state single-sensor loop, handy for closed-form oracles."""
    params = dict(A=np.array([[a]]), B=np.array([[b]]),
                  C=np.array([[c]]), G=np.array([[g]]))
    params.update(overrides)
    return GridModel(**params)
