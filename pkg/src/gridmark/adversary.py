"""Attacker-side toolkit: model-based twin tracking and fake-signal synthesis.

The attacker sits on one sensor link. She runs her own copy of the plant
model (the "twin"), reconstructs what the controller has been fed, and uses
the twin's prediction to split each observed reading into a regular part and
a residual she cannot predict. Fake readings are built as

    fake(t) = r_fake(t) + K(t) * n(t)

where r_fake is the trajectory she wants the operator to believe, n is the
extracted residual, and K is a gain chosen by policy. Nothing in this module
ever touches the defender's injection key or seeds; the twin works purely
from public model matrices and observed traffic, and a wiring test holds
this module to that.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DegenerateBaselineError
from .model import GridModel, TraceBundle, invert_sensor_map, _reference_matrix
from .signals import SignalTrace, as_array

ATTACK_MODES = ("none", "replay", "substitution", "digital_twin", "nonlinear_dt")
GAIN_POLICIES = ("independent", "amplitude_scaling")
FAKE_KINDS = ("offset", "scale", "constant", "explicit")

# RMS-ratio gains are refused below this baseline energy rather than blowing up.
_RMS_FLOOR = 1e-9


@dataclass(frozen=True)
class FakeTrajectory:
    """What the attacker wants the operator to see in place of the real signal.

    kind:
        offset    -- regular estimate plus a constant shift
        scale     -- regular estimate times a constant factor
        constant  -- a fixed absolute value, no model needed
        explicit  -- caller-supplied series indexed by absolute step
    """

    kind: str = "offset"
    value: float = 0.0
    trace: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in FAKE_KINDS:
            raise ValueError(f"fake trajectory kind must be one of {FAKE_KINDS}, got {self.kind!r}")
        if self.kind == "explicit":
            if self.trace is None:
                raise ValueError("explicit fake trajectory requires a trace")
            arr = np.asarray(self.trace, dtype=float)
            if arr.ndim != 1 or arr.size == 0:
                raise ValueError("explicit fake trace must be a nonempty 1-D array")
            object.__setattr__(self, "trace", arr)
        if not np.isfinite(self.value):
            raise ValueError("fake trajectory value must be finite")

    @property
    def needs_regular_estimate(self) -> bool:
        return self.kind in ("offset", "scale")

    def sample(self, t: int, regular_estimate: Optional[float] = None) -> float:
        """Fake regular value at absolute step t."""
        if self.kind == "constant":
            return self.value
        if self.kind == "explicit":
            if t >= self.trace.size:
                raise ValueError(f"explicit fake trace has {self.trace.size} samples, needs step {t}")
            return float(self.trace[t])
        if regular_estimate is None:
            raise ValueError(f"fake trajectory kind {self.kind!r} needs a regular-signal estimate")
        if self.kind == "offset":
            return float(regular_estimate) + self.value
        return self.value * float(regular_estimate)


@dataclass(frozen=True)
class AttackPlan:
    """Static description of one attack: what to fake, where, and how."""

    mode: str = "none"
    target_channel: int = 0
    gain_policy: str = "independent"
    fake: FakeTrajectory = field(default_factory=FakeTrajectory)
    rms_window: int = 200
    replay_delay: int = 1000

    def __post_init__(self):
        if self.mode not in ATTACK_MODES:
            raise ValueError(f"attack mode must be one of {ATTACK_MODES}, got {self.mode!r}")
        if self.gain_policy not in GAIN_POLICIES:
            raise ValueError(f"gain policy must be one of {GAIN_POLICIES}, got {self.gain_policy!r}")
        if self.target_channel < 0:
            raise ValueError("target_channel must be nonnegative")
        if self.rms_window < 10:
            raise ValueError("rms_window must be at least 10 samples")
        if self.replay_delay < 1:
            raise ValueError("replay_delay must be at least 1 step")


@dataclass
class TwinState:
    """The attacker's running copy of the plant.

    Holds the model matrices, the current state estimate, and the control
    inputs reconstructed so far. Deliberately key-blind: there is no field
    for the defender's injection key or noise seeds, and none of the update
    math consumes them.
    """

    model: GridModel
    state: np.ndarray
    control_history: list = field(default_factory=list)
    step_index: int = 0

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=float).reshape(-1).copy()
        if self.state.size != self.model.state_dim:
            raise ValueError(
                f"twin state has {self.state.size} entries, model expects {self.model.state_dim}")

    def readout(self) -> np.ndarray:
        """Predicted raw outputs C @ x for the current twin state."""
        return self.model.C @ self.state

    def advance(self, r: np.ndarray, believed_regular: np.ndarray) -> None:
        """Step the twin forward.

        believed_regular is the per-channel signal the attacker credits the
        controller with acting on once unpredictable content is set aside.
        """
        u = r - self.model.G @ believed_regular
        self.control_history.append(u.copy())
        self.state = self.model.A @ self.state + self.model.B @ u
        self.step_index += 1


def create_twin(model: GridModel, initial_state: Optional[np.ndarray] = None) -> TwinState:
    """Build a twin from public model matrices and an initial state guess."""
    x0 = np.zeros(model.state_dim) if initial_state is None else initial_state
    return TwinState(model=model, state=np.asarray(x0, dtype=float))


def _sensor_prediction(twin: TwinState, linear: bool) -> np.ndarray:
    """Per-channel reading the twin expects, with or without the sensor map."""
    m = twin.model
    y = twin.readout()
    if linear:
        return m.level * y
    return m.level * (y + m.nonlinearity_eps * y * y)


def twin_predict(twin: TwinState, reference: np.ndarray,
                 received: np.ndarray) -> np.ndarray:
    """Advance the twin one step against observed traffic; return its prediction.

    The twin first reads out its own per-channel prediction, then steps its
    state using the control input it believes was applied. The regular part
    of each received reading is taken to be the reading minus the extracted
    residual, which for an untampered channel collapses to the twin's own
    prediction; the observed values therefore pin the residual split while
    the state update stays driven by the model. With a matched initial state
    and a noise-free plant the prediction equals the regular signal exactly;
    from a wrong initial state the error contracts at the closed-loop rate.
    """
    m = twin.model
    r = np.asarray(reference, dtype=float).reshape(-1)
    obs = np.asarray(received, dtype=float).reshape(-1)
    if r.size != m.n_inputs:
        raise ValueError(f"reference has {r.size} entries, model expects {m.n_inputs}")
    if obs.size != m.n_sensors:
        raise ValueError(f"received has {obs.size} entries, model expects {m.n_sensors}")
    s_dt = _sensor_prediction(twin, linear=np.all(m.nonlinearity_eps == 0.0))
    residual = obs - s_dt
    believed = obs - residual
    twin.advance(r, believed)
    return s_dt


def extract_watermark(observed: Union[SignalTrace, np.ndarray],
                      predicted: Union[SignalTrace, np.ndarray]) -> SignalTrace:
    """Residual the twin cannot account for: observed minus predicted.

    On an untampered channel this residual carries the filtered injection
    signature plus noise transported by the loop, which is exactly the
    content the attacker must re-emit to stay plausible.
    """
    obs = as_array(observed)
    pred = as_array(predicted)
    if obs.size != pred.size:
        raise ValueError(f"observed ({obs.size}) and predicted ({pred.size}) lengths differ")
    return SignalTrace(obs - pred)


def trailing_rms(values: Union[SignalTrace, np.ndarray], window: int) -> np.ndarray:
    """Causal RMS over the last `window` samples, partial prefixes included."""
    x = as_array(values)
    if window < 1:
        raise ValueError("window must be positive")
    sq = np.cumsum(x * x)
    shifted = np.concatenate([np.zeros(min(window, x.size)), sq[:-window] if x.size > window else []])
    counts = np.minimum(np.arange(x.size) + 1, window)
    return np.sqrt((sq - shifted) / counts)


def select_gain(policy: str,
                fake_regular: Union[SignalTrace, np.ndarray],
                regular_estimate: Union[SignalTrace, np.ndarray],
                rms_window: int = 200) -> np.ndarray:
    """Per-step residual gain K(t) for the chosen policy.

    independent channels carry the residual through unchanged (K = 1).
    amplitude_scaling channels rescale whole readings, so the residual must
    track the fake's magnitude: K(t) is the ratio of trailing RMS values of
    the fake trajectory and the estimated regular signal. Early steps use
    whatever prefix is available. A baseline RMS below 1e-9 means there is
    nothing to scale against and is refused.
    """
    if policy not in GAIN_POLICIES:
        raise ValueError(f"gain policy must be one of {GAIN_POLICIES}, got {policy!r}")
    fake = as_array(fake_regular)
    est = as_array(regular_estimate)
    if fake.size != est.size:
        raise ValueError(f"fake ({fake.size}) and estimate ({est.size}) lengths differ")
    if policy == "independent":
        return np.ones(fake.size)
    rms_est = trailing_rms(est, rms_window)
    if np.any(rms_est < _RMS_FLOOR):
        raise DegenerateBaselineError(
            "regular-signal estimate is silent over the scaling window; "
            "RMS-ratio gain is undefined")
    return trailing_rms(fake, rms_window) / rms_est


def synthesize_fake(fake_regular: Union[SignalTrace, np.ndarray],
                    residual: Union[SignalTrace, np.ndarray],
                    gain: Union[float, np.ndarray]) -> SignalTrace:
    """Assemble the transmitted fake: r_fake + K * n, elementwise."""
    fake = as_array(fake_regular)
    n = as_array(residual)
    if fake.size != n.size:
        raise ValueError(f"fake ({fake.size}) and residual ({n.size}) lengths differ")
    k = np.asarray(gain, dtype=float)
    if k.ndim not in (0, 1) or (k.ndim == 1 and k.size != fake.size):
        raise ValueError("gain must be a scalar or match the trace length")
    return SignalTrace(fake + k * n)


def naive_attack(mode: str, recorded: Union[SignalTrace, np.ndarray],
                 plan: AttackPlan, t: int) -> float:
    """Model-free fake value at step t for replay and substitution attacks.

    recorded holds the target channel's true readings up to at least t.
    Replay re-emits the reading from replay_delay steps ago and is undefined
    before that much history exists. Substitution ignores the plant entirely
    and needs a constant or explicit fake trajectory.
    """
    if mode not in ("replay", "substitution"):
        raise ValueError(f"naive_attack handles replay or substitution, got {mode!r}")
    series = as_array(recorded)
    if t < 0 or t >= series.size:
        raise ValueError(f"step {t} outside recorded history of length {series.size}")
    if mode == "replay":
        if t < plan.replay_delay:
            raise ValueError(
                f"replay needs {plan.replay_delay} steps of history, only {t} available")
        return float(series[t - plan.replay_delay])
    if plan.fake.needs_regular_estimate:
        raise ValueError("substitution has no regular-signal estimate; "
                         "use a constant or explicit fake trajectory")
    return plan.fake.sample(t)


@dataclass(frozen=True)
class RegimeReport:
    """Size checks an attacker runs before trusting linear machinery."""

    distortion_ratio: float
    residual_ratio: float
    distortion_ok: bool
    residual_small: bool

    @property
    def passed(self) -> bool:
        return self.distortion_ok and self.residual_small


# Boundary comparisons are inclusive; the slack only absorbs float rounding
# so that a ratio constructed to sit exactly on theta passes.
_REGIME_SLACK = 1e-9


def regime_check(regular: Union[SignalTrace, np.ndarray],
                 residual: Union[SignalTrace, np.ndarray],
                 distortion: Union[SignalTrace, np.ndarray],
                 theta1: float = 0.01, theta2: float = 0.01) -> RegimeReport:
    """Compare mean-square sizes of the decomposition pieces.

    distortion_ratio = <X^2>/<N^2> must stay at or below theta1 for the
    extracted residual to be trusted as injection content; residual_ratio =
    <N^2>/<R^2> at or below theta2 marks the injection as a small
    perturbation on the regular signal. Zero denominators are contract
    violations, not infinities.
    """
    r = as_array(regular)
    n = as_array(residual)
    x = as_array(distortion)
    ms_r = float(np.mean(r * r)) if r.size else 0.0
    ms_n = float(np.mean(n * n)) if n.size else 0.0
    ms_x = float(np.mean(x * x)) if x.size else 0.0
    if ms_n <= 0.0:
        raise ValueError("residual component has zero energy; ratios are undefined")
    if ms_r <= 0.0:
        raise ValueError("regular component has zero energy; ratios are undefined")
    d_ratio = ms_x / ms_n
    r_ratio = ms_n / ms_r
    return RegimeReport(
        distortion_ratio=d_ratio,
        residual_ratio=r_ratio,
        distortion_ok=d_ratio <= theta1 * (1.0 + _REGIME_SLACK),
        residual_small=r_ratio <= theta2 * (1.0 + _REGIME_SLACK),
    )


class DigitalTwinInterceptor:
    """Causal man-in-the-middle driven by a twin model.

    Installed as a channel interceptor, called once per step with the true
    readings. Before attack_start it only tracks; from attack_start on it
    returns a fake for the target channel built from the planned trajectory
    plus the gained residual. When correction_eps is set the twin maps its
    raw-output predictions through the sensor curve, extracts and re-embeds
    the residual in the pre-curve domain, and pushes the fake back through
    the curve; with correction_eps at zero this collapses to the plain
    linear behaviour.

    While attacking, the twin steps on the fake's regular part, not on the
    raw emitted value: crediting the controller with the residual-bearing
    fake would leak a slope-mismatch fraction of the extracted residual
    into the twin state, and the re-emitted copy of that leak is what the
    correlation tests would catch. Fed this way the twin stays a purely
    deterministic shadow of the loop it is steering.

    The hook records the regular part of every fake it emits so the harness
    can score plausibility and plot the deception afterwards.
    """

    def __init__(self, plan: AttackPlan, twin: TwinState,
                 reference: Union[float, np.ndarray], horizon: int,
                 attack_start: int = 0,
                 correction_eps: Optional[float] = None):
        if plan.mode not in ("digital_twin", "nonlinear_dt"):
            raise ValueError(f"twin interceptor needs a twin attack mode, got {plan.mode!r}")
        m = twin.model
        if plan.target_channel >= m.n_sensors:
            raise ValueError(
                f"target channel {plan.target_channel} out of range for {m.n_sensors} sensors")
        if attack_start < 0 or attack_start >= horizon:
            raise ValueError("attack_start must lie inside the horizon")
        self.plan = plan
        self.twin = twin
        self.horizon = int(horizon)
        self.attack_start = int(attack_start)
        self.reference = _reference_matrix(reference, horizon, m.n_inputs)
        # Correction curve for the target channel; None means ignore the
        # sensor curve entirely (the plain linear attacker).
        self.correction_eps = None if correction_eps is None else float(correction_eps)
        self._target = plan.target_channel
        self._level_t = float(m.level[self._target])
        self._fake_sq: deque = deque(maxlen=plan.rms_window)
        self._est_sq: deque = deque(maxlen=plan.rms_window)
        self.fake_regular_log = np.full(horizon, np.nan)
        self.residual_log = np.full(horizon, np.nan)
        self.gain_log = np.full(horizon, np.nan)

    def _gain(self) -> float:
        if self.plan.gain_policy == "independent":
            return 1.0
        ms_est = float(np.mean(self._est_sq))
        if ms_est < _RMS_FLOOR ** 2:
            raise DegenerateBaselineError(
                "regular-signal estimate is silent over the scaling window; "
                "RMS-ratio gain is undefined")
        return float(np.sqrt(np.mean(self._fake_sq) / ms_est))

    def __call__(self, k: int, s_true: np.ndarray) -> Optional[float]:
        twin = self.twin
        m = twin.model
        tgt = self._target
        linear = self.correction_eps is None
        s_pred = _sensor_prediction(twin, linear=linear)
        residual = s_true - s_pred

        fake = None
        believed = s_pred.copy()
        if k >= self.attack_start:
            if linear:
                est = float(s_pred[tgt])
                r_fake = self.plan.fake.sample(k, est)
                if self.plan.gain_policy == "amplitude_scaling":
                    self._fake_sq.append(r_fake * r_fake)
                    self._est_sq.append(est * est)
                gain = self._gain()
                n_t = float(residual[tgt])
                fake = r_fake + gain * n_t
                fake_regular = r_fake
            else:
                eps = self.correction_eps
                # Work in the pre-curve domain: invert the observed reading,
                # split off the residual there, re-embed, map back.
                y_pred = float(twin.readout()[tgt])
                y_obs = float(invert_sensor_map(eps, s_true[tgt] / self._level_t))
                n_t = y_obs - y_pred
                r_fake = self.plan.fake.sample(k, y_pred)
                if self.plan.gain_policy == "amplitude_scaling":
                    self._fake_sq.append(r_fake * r_fake)
                    self._est_sq.append(y_pred * y_pred)
                gain = self._gain()
                y_fake = r_fake + gain * n_t
                fake = self._level_t * (y_fake + eps * y_fake * y_fake)
                fake_regular = self._level_t * (r_fake + eps * r_fake * r_fake)
            believed[tgt] = fake_regular
            self.fake_regular_log[k] = fake_regular
            self.residual_log[k] = n_t
            self.gain_log[k] = gain

        twin.advance(self.reference[k], believed)
        return None if fake is None else float(fake)


def run_digital_twin_attack(plan: AttackPlan, twin: TwinState,
                            reference: Union[float, np.ndarray], horizon: int,
                            attack_start: int = 0) -> DigitalTwinInterceptor:
    """Wire the plain linear twin attack as a channel interceptor."""
    if plan.mode != "digital_twin":
        raise ValueError(f"expected mode 'digital_twin', got {plan.mode!r}")
    return DigitalTwinInterceptor(plan, twin, reference, horizon,
                                  attack_start=attack_start, correction_eps=None)


def nonlinear_firstorder_attack(plan: AttackPlan, twin: TwinState,
                                eps_known: float,
                                reference: Union[float, np.ndarray], horizon: int,
                                attack_start: int = 0) -> DigitalTwinInterceptor:
    """Twin attack that neutralizes a quadratic sensor curve on the target.

    The attacker inverts the curve with coefficient eps_known before doing
    any linear work and reapplies it afterward, so the emitted fake carries
    the same local slope as a genuine reading. With eps_known = 0 this is
    exactly the plain linear attack.
    """
    if plan.mode != "nonlinear_dt":
        raise ValueError(f"expected mode 'nonlinear_dt', got {plan.mode!r}")
    if not np.isfinite(eps_known):
        raise ValueError("eps_known must be finite")
    return DigitalTwinInterceptor(plan, twin, reference, horizon,
                                  attack_start=attack_start,
                                  correction_eps=float(eps_known))


class ReplayInterceptor:
    """Record-then-replay: re-emit the target's reading from delay steps ago."""

    def __init__(self, plan: AttackPlan, horizon: int, attack_start: int):
        if plan.mode != "replay":
            raise ValueError(f"expected mode 'replay', got {plan.mode!r}")
        if attack_start < plan.replay_delay:
            raise ValueError(
                f"replay needs {plan.replay_delay} steps of history before "
                f"attacking; attack_start={attack_start} is too early")
        self.plan = plan
        self.attack_start = int(attack_start)
        self._recorded = np.zeros(horizon)
        self.fake_regular_log = np.full(horizon, np.nan)

    def __call__(self, k: int, s_true: np.ndarray) -> Optional[float]:
        tgt = self.plan.target_channel
        self._recorded[k] = s_true[tgt]
        if k < self.attack_start:
            return None
        fake = naive_attack("replay", self._recorded[:k + 1], self.plan, k)
        self.fake_regular_log[k] = fake
        return fake


class SubstitutionInterceptor:
    """Emit the planned fake trajectory outright, watermark and all ignored."""

    def __init__(self, plan: AttackPlan, horizon: int, attack_start: int):
        if plan.mode != "substitution":
            raise ValueError(f"expected mode 'substitution', got {plan.mode!r}")
        if plan.fake.needs_regular_estimate:
            raise ValueError("substitution has no regular-signal estimate; "
                             "use a constant or explicit fake trajectory")
        self.plan = plan
        self.attack_start = int(attack_start)
        self.fake_regular_log = np.full(horizon, np.nan)

    def __call__(self, k: int, s_true: np.ndarray) -> Optional[float]:
        if k < self.attack_start:
            return None
        fake = self.plan.fake.sample(k)
        self.fake_regular_log[k] = fake
        return fake
