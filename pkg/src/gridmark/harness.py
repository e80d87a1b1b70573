"""Scenario configs, Monte Carlo running, aggregation, and file export.

A scenario bundles one plant model, one watermark policy, one detector
setup, and one attack plan. Every run of a scenario is reproducible from
(base_seed, run_index) alone; calibration runs live in a disjoint part of
the seed space so thresholds are never fit on evaluation noise.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats as _scipy_stats

from .adversary import (AttackPlan, DigitalTwinInterceptor, FakeTrajectory,
                        ReplayInterceptor, SubstitutionInterceptor, create_twin,
                        nonlinear_firstorder_attack, regime_check,
                        run_digital_twin_attack)
from .detector import (BlockStatistics, DetectorConfig, DetectorReport, Thresholds,
                       calibrate_thresholds, compute_block_statistics, judge)
from .errors import AuthenticatedChannelError, CalibrationError
from .model import (ChannelModel, GridModel, SeedSet, TraceBundle, decompose,
                    default_model, plain_channels, simulate)
from .watermark import WatermarkKey, expected_component

# Stream tags keep the per-run noise sources on independent generators.
_TAG_PROCESS = 0
_TAG_MEASUREMENT = 1
_TAG_DEMAND = 2
_TAG_WATERMARK = 3
# Calibration run indices live past this offset so they never collide with
# evaluation run indices within a campaign.
_CALIBRATION_OFFSET = 2 ** 32

WATERMARK_POLICIES = ("fresh_per_run", "fixed")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce one experiment campaign."""

    model: GridModel
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    attack: AttackPlan = field(default_factory=AttackPlan)
    sigma_e: float = 0.02
    watermark_policy: str = "fresh_per_run"
    horizon: int = 10000
    warm_up: int = 2000
    attack_start: Optional[int] = None
    n_runs: int = 50
    base_seed: int = 1
    reference: float = 1.0
    authenticated: Tuple[bool, ...] = ()
    compute_regime: bool = False
    theta1: float = 0.01
    theta2: float = 0.01
    preset: str = "custom"
    thresholds_path: Optional[str] = None

    def __post_init__(self):
        if self.horizon <= self.warm_up + self.detector.window:
            raise ValueError(
                f"scenario.horizon must exceed scenario.warm_up + detector.window "
                f"({self.horizon} <= {self.warm_up} + {self.detector.window})")
        if self.warm_up < 0:
            raise ValueError("scenario.warm_up must be nonnegative")
        if self.n_runs < 1:
            raise ValueError("scenario.n_runs must be at least 1")
        if self.sigma_e < 0:
            raise ValueError("watermark.sigma_e must be nonnegative")
        if self.watermark_policy not in WATERMARK_POLICIES:
            raise ValueError(
                f"watermark.policy must be one of {WATERMARK_POLICIES}, "
                f"got {self.watermark_policy!r}")
        auth = tuple(bool(a) for a in self.authenticated)
        if not auth:
            auth = (False,) * self.model.n_sensors
        if len(auth) == 1 and self.model.n_sensors > 1:
            auth = auth * self.model.n_sensors
        if len(auth) != self.model.n_sensors:
            raise ValueError(
                f"scenario.authenticated needs {self.model.n_sensors} flags, "
                f"got {len(auth)}")
        object.__setattr__(self, "authenticated", auth)
        start = self.warm_up if self.attack_start is None else self.attack_start
        if not (0 <= start < self.horizon):
            raise ValueError(
                f"attack.start must lie inside the horizon, got {start}")
        object.__setattr__(self, "attack_start", int(start))
        if self.attack.mode == "replay" and self.attack_start < self.attack.replay_delay:
            raise ValueError(
                f"attack.start ({self.attack_start}) must be at least "
                f"attack.replay_delay ({self.attack.replay_delay}) for replay")
        if self.attack.mode != "none" and self.attack.target_channel >= self.model.n_sensors:
            raise ValueError(
                f"attack.target_channel {self.attack.target_channel} out of range "
                f"for {self.model.n_sensors} sensors")


@dataclass(frozen=True)
class RunResult:
    """Outcome of one seeded run: detector verdict plus attack-side metrics."""

    run_index: int
    seed: int
    report: DetectorReport
    deception_rms: float
    regime_distortion_ratio: float = float("nan")
    regime_residual_ratio: float = float("nan")
    attack_rejected: bool = False

    def __post_init__(self):
        if self.deception_rms < 0:
            raise ValueError("deception_rms must be nonnegative")


@dataclass(frozen=True)
class MetricsSummary:
    """Campaign aggregate over independent runs."""

    n_runs: int
    alarm_rate: float
    wilson_low: float
    wilson_high: float
    mean_time_to_detect: Optional[float]
    median_time_to_detect: Optional[float]
    mean_deception_rms: float
    gain_alarm_rate: float
    var_alarm_rate: float
    spec_alarm_rate: float
    block_alarm_rate: float
    n_blocks: int
    rejected_runs: int
    config_digest: str

    def __post_init__(self):
        for name in ("alarm_rate", "gain_alarm_rate", "var_alarm_rate",
                     "spec_alarm_rate", "block_alarm_rate"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not (self.wilson_low <= self.alarm_rate <= self.wilson_high):
            raise ValueError("alarm rate must lie inside its confidence interval")

    def to_dict(self) -> dict:
        return {
            "n_runs": self.n_runs,
            "alarm_rate": self.alarm_rate,
            "wilson_low": self.wilson_low,
            "wilson_high": self.wilson_high,
            "mean_time_to_detect": self.mean_time_to_detect,
            "median_time_to_detect": self.median_time_to_detect,
            "mean_deception_rms": self.mean_deception_rms,
            "gain_alarm_rate": self.gain_alarm_rate,
            "var_alarm_rate": self.var_alarm_rate,
            "spec_alarm_rate": self.spec_alarm_rate,
            "block_alarm_rate": self.block_alarm_rate,
            "n_blocks": self.n_blocks,
            "rejected_runs": self.rejected_runs,
            "config_digest": self.config_digest,
        }


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0 <= successes <= n:
        raise ValueError(f"successes must lie in [0, {n}], got {successes}")
    z = float(_scipy_stats.norm.ppf(0.5 + confidence / 2.0))
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    # At the degenerate proportions the exact bounds are 0 and 1; computing
    # them in floats can land one rounding step inside, so pin them.
    low = 0.0 if successes == 0 else max(0.0, center - half)
    high = 1.0 if successes == n else min(1.0, center + half)
    return (low, high)


def derive_seeds(base_seed: int, run_index: int) -> SeedSet:
    """Per-run noise seeds: independent streams keyed by (base, run, tag)."""
    return SeedSet(
        process=(base_seed, run_index, _TAG_PROCESS),
        measurement=(base_seed, run_index, _TAG_MEASUREMENT),
        demand=(base_seed, run_index, _TAG_DEMAND),
    )


def derive_watermark_key(config: ScenarioConfig, run_index: int) -> WatermarkKey:
    """Defender's injection key for one run.

    fresh_per_run draws a new key every run (recorded traffic goes stale,
    which is what makes replay attacks detectable); fixed reuses one key
    across the campaign.
    """
    idx = run_index if config.watermark_policy == "fresh_per_run" else 0
    seed = int(np.random.SeedSequence(
        entropy=(config.base_seed, idx, _TAG_WATERMARK)).generate_state(1, np.uint64)[0])
    return WatermarkKey(seed=seed, sigma_e=config.sigma_e)


def run_fingerprint(base_seed: int, run_index: int) -> int:
    """Stable integer identifying one run's seed material in exports."""
    return int(np.random.SeedSequence(
        entropy=(base_seed, run_index)).generate_state(1, np.uint64)[0])


def _build_interceptor(config: ScenarioConfig, twin_model: GridModel):
    """Fresh attack hook for one run, or None for clean scenarios."""
    plan = config.attack
    if plan.mode == "none":
        return None
    if plan.mode == "replay":
        return ReplayInterceptor(plan, config.horizon, config.attack_start)
    if plan.mode == "substitution":
        return SubstitutionInterceptor(plan, config.horizon, config.attack_start)
    twin = create_twin(twin_model)
    if plan.mode == "digital_twin":
        return run_digital_twin_attack(plan, twin, config.reference,
                                       config.horizon, attack_start=config.attack_start)
    eps_known = float(twin_model.nonlinearity_eps[plan.target_channel])
    return nonlinear_firstorder_attack(plan, twin, eps_known, config.reference,
                                       config.horizon, attack_start=config.attack_start)


def _wire_channels(config: ScenarioConfig, hook) -> List[ChannelModel]:
    channels = []
    for i in range(config.model.n_sensors):
        ch_hook = hook if (hook is not None and i == config.attack.target_channel) else None
        channels.append(ChannelModel(authenticated=config.authenticated[i],
                                     interceptor=ch_hook))
    return channels


def _deception_rms(config: ScenarioConfig, bundle: TraceBundle, hook) -> float:
    """RMS gap between the reported regular signal and the true one.

    Twin attacks log the fake regular trajectory and the extracted residual,
    so the true regular part of the target reading is reading - residual.
    Model-free attacks have no residual split; the gap is measured against
    the true reading itself (watermark content included, which is small).
    """
    if hook is None:
        return 0.0
    tgt = config.attack.target_channel
    fake_reg = hook.fake_regular_log
    active = ~np.isnan(fake_reg)
    if not np.any(active):
        return 0.0
    true_reading = bundle.sensors[active, tgt]
    if isinstance(hook, DigitalTwinInterceptor):
        true_regular = true_reading - hook.residual_log[active]
    else:
        true_regular = true_reading
    return float(np.sqrt(np.mean((fake_reg[active] - true_regular) ** 2)))


def _clean_variant(config: ScenarioConfig) -> ScenarioConfig:
    return replace(config, attack=AttackPlan(mode="none"), attack_start=None)


def simulate_run(config: ScenarioConfig, run_index: int):
    """One seeded simulation with the scenario's attack wired in.

    Returns (bundle, hook, key, rejected). An attack aimed at an
    authenticated channel is rejected by the channel layer; the defender
    then sees exactly the clean traffic, which is re-simulated with the
    same seeds so the returned bundle is the clean run bit-for-bit.
    """
    seeds = derive_seeds(config.base_seed, run_index)
    key = derive_watermark_key(config, run_index)
    hook = _build_interceptor(config, config.model)
    try:
        bundle = simulate(config.model, _wire_channels(config, hook),
                          config.reference, config.horizon, seeds, watermark=key)
        return bundle, hook, key, False
    except AuthenticatedChannelError:
        bundle = simulate(config.model, _wire_channels(config, None),
                          config.reference, config.horizon, seeds, watermark=key)
        return bundle, None, key, True


def run_scenario(config: ScenarioConfig, run_index: int,
                 thresholds: Optional[Thresholds] = None) -> RunResult:
    """Execute one run end to end and judge it against calibrated thresholds."""
    if thresholds is None:
        thresholds = load_thresholds_for(config)
    bundle, hook, key, rejected = simulate_run(config, run_index)
    stats = _block_stats(config, bundle, key)
    report = judge(stats, thresholds)
    deception = _deception_rms(config, bundle, hook)
    xn = nr = float("nan")
    if config.compute_regime:
        seeds = derive_seeds(config.base_seed, run_index)
        dec = decompose(config.model, config.reference, config.horizon, seeds, key)
        tgt = config.attack.target_channel
        sl = slice(config.warm_up, None)
        rep = regime_check(dec.regular[sl, tgt], dec.watermark_image[sl, tgt],
                           dec.nonlinear[sl, tgt], config.theta1, config.theta2)
        xn, nr = rep.distortion_ratio, rep.residual_ratio
    return RunResult(
        run_index=run_index,
        seed=run_fingerprint(config.base_seed, run_index),
        report=report,
        deception_rms=deception if config.attack.mode != "none" else 0.0,
        regime_distortion_ratio=xn,
        regime_residual_ratio=nr,
        attack_rejected=rejected,
    )


def _block_stats(config: ScenarioConfig, bundle: TraceBundle,
                 key: WatermarkKey) -> BlockStatistics:
    templates = [expected_component(config.model, key, ch, config.horizon).values
                 for ch in range(config.model.n_sensors)]
    return compute_block_statistics(config.model, bundle.received, templates,
                                    config.detector, start=config.warm_up)


def calibrate_scenario(config: ScenarioConfig, n_runs: int = 50) -> Thresholds:
    """Fit alarm thresholds on clean runs from the calibration seed block."""
    clean = _clean_variant(config)
    stats = []
    for i in range(n_runs):
        idx = _CALIBRATION_OFFSET + i
        bundle, _, key, _ = simulate_run(clean, idx)
        stats.append(_block_stats(clean, bundle, key))
    return calibrate_thresholds(stats, alpha=config.detector.alpha)


def load_thresholds_for(config: ScenarioConfig) -> Thresholds:
    if config.thresholds_path is None:
        raise CalibrationError(
            "scenario has no thresholds: set paths.thresholds or pass thresholds "
            "from calibrate_scenario")
    path = config.thresholds_path
    if not os.path.exists(path):
        raise CalibrationError(f"thresholds file not found: {path}; run calibrate first")
    with open(path, "r", encoding="utf-8") as fh:
        return Thresholds.from_dict(json.load(fh))


def save_thresholds(thresholds: Thresholds, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(thresholds.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_one(args):
    config, run_index, thresholds = args
    return run_scenario(config, run_index, thresholds)


def run_many(config: ScenarioConfig, n_runs: Optional[int] = None,
             thresholds: Optional[Thresholds] = None,
             threads: int = 1) -> List[RunResult]:
    """Independent runs 0..n-1; order of execution never affects results."""
    n = config.n_runs if n_runs is None else int(n_runs)
    if n < 1:
        raise ValueError("n_runs must be at least 1")
    if thresholds is None:
        thresholds = load_thresholds_for(config)
    jobs = [(config, i, thresholds) for i in range(n)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    return sorted(results, key=lambda r: r.run_index)


def summarize(config: ScenarioConfig, results: Sequence[RunResult]) -> MetricsSummary:
    """Aggregate run results into campaign metrics."""
    if not results:
        raise ValueError("cannot summarize zero runs")
    n = len(results)
    alarms = sum(1 for r in results if r.report.overall_alarm)
    low, high = wilson_interval(alarms, n)
    ttds = [r.report.time_to_detect for r in results if r.report.time_to_detect is not None]
    block_alarms = 0
    block_total = 0
    for r in results:
        per_block = (r.report.gain_alarm | r.report.var_alarm | r.report.spec_alarm).any(axis=0)
        block_alarms += int(per_block.sum())
        block_total += per_block.size
    return MetricsSummary(
        n_runs=n,
        alarm_rate=alarms / n,
        wilson_low=low,
        wilson_high=high,
        mean_time_to_detect=float(np.mean(ttds)) if ttds else None,
        median_time_to_detect=float(np.median(ttds)) if ttds else None,
        mean_deception_rms=float(np.mean([r.deception_rms for r in results])),
        gain_alarm_rate=sum(1 for r in results if r.report.gain_alarm.any()) / n,
        var_alarm_rate=sum(1 for r in results if r.report.var_alarm.any()) / n,
        spec_alarm_rate=sum(1 for r in results if r.report.spec_alarm.any()) / n,
        block_alarm_rate=(block_alarms / block_total) if block_total else 0.0,
        n_blocks=block_total,
        rejected_runs=sum(1 for r in results if r.attack_rejected),
        config_digest=scenario_digest(config),
    )


def monte_carlo(config: ScenarioConfig, n_runs: Optional[int] = None,
                thresholds: Optional[Thresholds] = None,
                threads: int = 1) -> MetricsSummary:
    """Run the campaign and aggregate; see run_many for the per-run records."""
    return summarize(config, run_many(config, n_runs, thresholds, threads))


# ---------------------------------------------------------------------------
# Flat-text scenario configs


def parse_config_text(text: str) -> Dict[str, str]:
    """Parse `key.path = value` lines; '#' starts a comment; later keys win."""
    mapping: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"config line {lineno}: empty key")
        mapping[key] = value.strip()
    return mapping


def _parse_floats(value: str) -> Tuple[float, ...]:
    return tuple(float(part) for part in value.split(",") if part.strip() != "")


def _parse_matrix(value: str) -> Tuple[Tuple[float, ...], ...]:
    return tuple(_parse_floats(row) for row in value.split(";") if row.strip() != "")


def _parse_bool(value: str, key: str) -> bool:
    v = value.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"{key}: expected a boolean, got {value!r}")


def _parse_fake(value: str) -> FakeTrajectory:
    if ":" in value:
        kind, _, num = value.partition(":")
        return FakeTrajectory(kind.strip(), float(num))
    return FakeTrajectory(value.strip())


def build_scenario(mapping: Dict[str, str]) -> ScenarioConfig:
    """Turn a flat key/value mapping into a validated ScenarioConfig.

    Unknown keys are rejected so typos fail loudly; every error message
    carries the offending key path.
    """
    working = dict(mapping)

    def take(key: str, default: Optional[str] = None) -> Optional[str]:
        return working.pop(key, default)

    model_keys = {
        "model.A": ("A", _parse_matrix),
        "model.B": ("B", _parse_matrix),
        "model.C": ("C", _parse_matrix),
        "model.G": ("G", _parse_matrix),
        "model.watermark_input": ("watermark_input", _parse_matrix),
        "model.sigma_w": ("sigma_w", float),
        "model.sigma_v": ("sigma_v", _parse_floats),
        "model.sigma_d": ("sigma_d", float),
        "model.level": ("level", _parse_floats),
        "model.nonlinearity_eps": ("nonlinearity_eps", _parse_floats),
        "model.dt": ("dt", float),
    }
    overrides = {}
    for key, (field_name, conv) in model_keys.items():
        if key in working:
            raw = working.pop(key)
            try:
                overrides[field_name] = conv(raw)
            except ValueError as exc:
                raise ValueError(f"{key}: {exc}") from exc
    if "model.sensor_kind" in working:
        kinds = tuple(k.strip() for k in working.pop("model.sensor_kind").split(","))
        overrides["sensor_kind"] = kinds
    try:
        model = default_model(**overrides)
    except ValueError as exc:
        raise ValueError(f"model.*: {exc}") from exc

    def take_typed(key, conv, default):
        if key not in working:
            return default
        raw = working.pop(key)
        try:
            return conv(raw)
        except ValueError as exc:
            raise ValueError(f"{key}: {exc}") from exc

    det_kwargs = {}
    det_kwargs["window"] = take_typed("detector.window", int, 1000)
    det_kwargs["highpass_cutoff"] = take_typed("detector.highpass_cutoff", float, 0.1)
    det_kwargs["alpha"] = take_typed("detector.alpha", float, 0.05)
    if "detector.bands" in working:
        raw = working.pop("detector.bands")
        lo, _, hi = raw.partition(":")
        try:
            det_kwargs["bands"] = (float(lo), float(hi))
        except ValueError as exc:
            raise ValueError(f"detector.bands: expected 'low:high', got {raw!r}") from exc
    if "detector.level_ref" in working:
        det_kwargs["level_ref"] = _parse_floats(working.pop("detector.level_ref"))
    try:
        detector = DetectorConfig(**det_kwargs)
    except ValueError as exc:
        raise ValueError(f"detector.*: {exc}") from exc

    plan_kwargs = {}
    plan_kwargs["mode"] = take("attack.mode", "none")
    plan_kwargs["target_channel"] = take_typed("attack.target_channel", int, 0)
    plan_kwargs["gain_policy"] = take("attack.gain_policy", "independent")
    if "attack.fake" in working:
        raw = working.pop("attack.fake")
        try:
            plan_kwargs["fake"] = _parse_fake(raw)
        except ValueError as exc:
            raise ValueError(f"attack.fake: {exc}") from exc
    plan_kwargs["rms_window"] = take_typed("attack.rms_window", int, 200)
    plan_kwargs["replay_delay"] = take_typed("attack.replay_delay", int, 1000)
    try:
        plan = AttackPlan(**plan_kwargs)
    except ValueError as exc:
        raise ValueError(f"attack.*: {exc}") from exc

    attack_start = take_typed("attack.start", int, None)
    auth: Tuple[bool, ...] = ()
    if "scenario.authenticated" in working:
        raw = working.pop("scenario.authenticated")
        auth = tuple(_parse_bool(part.strip(), "scenario.authenticated")
                     for part in raw.split(","))

    kwargs = dict(
        model=model,
        detector=detector,
        attack=plan,
        sigma_e=take_typed("watermark.sigma_e", float, 0.02),
        watermark_policy=take("watermark.policy", "fresh_per_run"),
        horizon=take_typed("scenario.horizon", int, 10000),
        warm_up=take_typed("scenario.warm_up", int, 2000),
        attack_start=attack_start,
        n_runs=take_typed("scenario.n_runs", int, 50),
        base_seed=take_typed("scenario.base_seed", int, 1),
        reference=take_typed("scenario.reference", float, 1.0),
        authenticated=auth,
        compute_regime=take_typed("scenario.compute_regime",
                                  lambda v: _parse_bool(v, "scenario.compute_regime"),
                                  False),
        theta1=take_typed("scenario.theta1", float, 0.01),
        theta2=take_typed("scenario.theta2", float, 0.01),
        preset=take("scenario.preset", "custom"),
        thresholds_path=take("paths.thresholds", None),
    )
    if working:
        unknown = ", ".join(sorted(working))
        raise ValueError(f"unknown config keys: {unknown}")
    return ScenarioConfig(**kwargs)


def load_scenario(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return build_scenario(parse_config_text(fh.read()))


def canonical_config_text(config: ScenarioConfig) -> str:
    """Stable plain-text rendering of a scenario, used for digests."""
    m = config.model

    def mat(a):
        return "; ".join(", ".join(repr(float(v)) for v in row) for row in np.atleast_2d(a))

    def vec(a):
        return ", ".join(repr(float(v)) for v in np.atleast_1d(a))

    items = {
        "model.A": mat(m.A), "model.B": mat(m.B), "model.C": mat(m.C),
        "model.G": mat(m.G), "model.watermark_input": mat(m.watermark_input),
        "model.sensor_kind": ", ".join(m.sensor_kind),
        "model.nonlinearity_eps": vec(m.nonlinearity_eps),
        "model.level": vec(m.level),
        "model.sigma_w": repr(float(m.sigma_w)),
        "model.sigma_v": vec(m.sigma_v),
        "model.sigma_d": repr(float(m.sigma_d)),
        "model.dt": repr(float(m.dt)),
        "detector.window": str(config.detector.window),
        "detector.highpass_cutoff": repr(config.detector.highpass_cutoff),
        "detector.alpha": repr(config.detector.alpha),
        "detector.bands": f"{config.detector.bands[0]!r}:{config.detector.bands[1]!r}",
        "detector.level_ref": vec(config.detector.level_ref) if config.detector.level_ref else "",
        "attack.mode": config.attack.mode,
        "attack.target_channel": str(config.attack.target_channel),
        "attack.gain_policy": config.attack.gain_policy,
        "attack.fake": f"{config.attack.fake.kind}:{config.attack.fake.value!r}",
        "attack.rms_window": str(config.attack.rms_window),
        "attack.replay_delay": str(config.attack.replay_delay),
        "attack.start": str(config.attack_start),
        "watermark.sigma_e": repr(config.sigma_e),
        "watermark.policy": config.watermark_policy,
        "scenario.horizon": str(config.horizon),
        "scenario.warm_up": str(config.warm_up),
        "scenario.n_runs": str(config.n_runs),
        "scenario.base_seed": str(config.base_seed),
        "scenario.reference": repr(config.reference),
        "scenario.authenticated": ", ".join(str(a).lower() for a in config.authenticated),
        "scenario.compute_regime": str(config.compute_regime).lower(),
        "scenario.theta1": repr(config.theta1),
        "scenario.theta2": repr(config.theta2),
    }
    return "\n".join(f"{k} = {v}" for k, v in sorted(items.items())) + "\n"


def scenario_digest(config: ScenarioConfig) -> str:
    return hashlib.sha256(canonical_config_text(config).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Export

CSV_COLUMNS = ("run_index", "seed", "alarm", "time_to_detect", "gain_stat",
               "var_stat", "spec_stat", "deception_rms",
               "regime_distortion_ratio", "regime_residual_ratio")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    return "" if math.isnan(value) else repr(value)


def _csv_rows(config: ScenarioConfig, results: Sequence[RunResult]):
    tgt = config.attack.target_channel
    for r in results:
        rep = r.report
        yield (
            _fmt(r.run_index),
            _fmt(r.seed),
            _fmt(rep.overall_alarm),
            _fmt(rep.time_to_detect),
            _fmt(float(np.mean(rep.gain[tgt]))),
            _fmt(float(np.mean(rep.band_variance[tgt]))),
            _fmt(float(np.mean(rep.band_power[tgt]))),
            _fmt(r.deception_rms),
            _fmt(r.regime_distortion_ratio),
            _fmt(r.regime_residual_ratio),
        )


def export_results(config: ScenarioConfig, results: Sequence[RunResult],
                   fmt: str, path: str,
                   summary: Optional[MetricsSummary] = None) -> None:
    """Write per-run rows (csv) or the campaign summary (json) to path.

    Per-run statistics columns hold the mean over analyzed blocks of the
    target channel's normalized gain, band variance, and band power.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be csv or json, got {fmt!r}")
    try:
        if fmt == "csv":
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for row in _csv_rows(config, results):
                writer.writerow(row)
            payload = buf.getvalue()
        else:
            if summary is None:
                summary = summarize(config, results)
            doc = summary.to_dict()
            doc["preset"] = config.preset
            payload = json.dumps(doc, indent=2, sort_keys=True) + "\n"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"failed writing {fmt} results to {path}: {exc}") from exc


def read_results_csv(path: str) -> List[Dict[str, Optional[float]]]:
    """Parse an exported CSV back into typed per-run records."""
    out: List[Dict[str, Optional[float]]] = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV columns in {path}: {reader.fieldnames}")
        for row in reader:
            rec: Dict[str, Optional[float]] = {}
            for col in CSV_COLUMNS:
                raw = row[col]
                if raw == "":
                    rec[col] = None
                elif col in ("run_index", "seed", "alarm"):
                    rec[col] = int(raw)
                else:
                    rec[col] = float(raw)
            out.append(rec)
    return out


def emit_plot_data(bundle: TraceBundle, channel: int, path: str,
                   warm_up: int = 0,
                   template: Optional[np.ndarray] = None,
                   fake_regular: Optional[np.ndarray] = None,
                   residual: Optional[np.ndarray] = None) -> None:
    """Columnar text dump of one channel's decomposition for plotting.

    Columns: step t, true regular part R1, injected component N1, true
    reading S1, then (attack runs only) the reported fake regular R1f and
    the received fake S1f. N1 is the defender's expected component on clean
    runs and the attacker's extracted residual on attack runs, so the
    identity S1f - R1f = K * N1 holds row by row. Rows cover the analysis
    region: warm_up through the end of the horizon.
    """
    if not 0 <= channel < bundle.sensors.shape[1]:
        raise ValueError(f"unknown channel {channel} for {bundle.sensors.shape[1]} sensors")
    if not 0 <= warm_up < bundle.horizon:
        raise ValueError(f"warm_up {warm_up} outside horizon {bundle.horizon}")
    attacked = fake_regular is not None
    if attacked:
        if residual is None:
            raise ValueError("attack plot data needs the extracted residual")
        n1 = np.where(np.isnan(residual), 0.0, residual)
    elif template is not None:
        n1 = np.asarray(template, dtype=float)
    else:
        raise ValueError("clean plot data needs the expected watermark component")
    s1 = bundle.sensors[:, channel]
    r1 = s1 - n1
    cols = ["t", "R1", "N1", "S1"]
    data = [np.arange(bundle.horizon), r1, n1, s1]
    if attacked:
        cols += ["R1f", "S1f"]
        data += [np.where(np.isnan(fake_regular), s1 - n1, fake_regular),
                 bundle.received[:, channel]]
    rows = np.column_stack(data)[warm_up:]
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(" ".join(cols) + "\n")
            np.savetxt(fh, rows, fmt="%.12g")
    except OSError as exc:
        raise OSError(f"failed writing plot data to {path}: {exc}") from exc
