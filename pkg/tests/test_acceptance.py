"""Acceptance gate: eleven end-to-end properties of the shipped pipeline.

Each test prints one pass/fail line with its measured numbers (visible under
plain `pytest`), then asserts. Campaign fixtures are module-scoped so the
Monte Carlo work runs once; thresholds come from the session fixtures.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from gridmark import (
    AttackPlan,
    AuthenticatedChannelError,
    ChannelModel,
    FakeTrajectory,
    ReplayInterceptor,
    SeedSet,
    SubstitutionInterceptor,
    WatermarkKey,
    create_twin,
    decompose,
    default_model,
    derive_seeds,
    derive_watermark_key,
    extract_watermark,
    nonlinear_firstorder_attack,
    plain_channels,
    run_digital_twin_attack,
    run_many,
    run_scenario,
    simulate,
    twin_predict,
    watermark_image_rms,
    watermark_matrix,
    wilson_interval,
)

pytestmark = pytest.mark.acceptance


def _emit(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number:2d} {'PASS' if ok else 'FAIL'}: {detail}")


def block_alarm_counts(results):
    """(alarming blocks, total blocks) with the three tests OR-ed per block."""
    alarms = blocks = 0
    for r in results:
        per_block = (r.report.gain_alarm | r.report.var_alarm
                     | r.report.spec_alarm).any(axis=0)
        alarms += int(per_block.sum())
        blocks += per_block.size
    return alarms, blocks


def alarm_rate(results):
    return float(np.mean([r.report.overall_alarm for r in results]))


def clean_variant(config):
    return replace(config, attack=AttackPlan(mode="none"), attack_start=None)


@pytest.fixture(scope="module")
def clean_results(clean_config, thresholds_default):
    return run_many(clean_config, thresholds=thresholds_default)


@pytest.fixture(scope="module")
def dtk1_results(dtk1_config, thresholds_default):
    return run_many(dtk1_config, thresholds=thresholds_default)


@pytest.fixture(scope="module")
def procnoise_results(procnoise_config, thresholds_procnoise):
    return run_many(procnoise_config, thresholds=thresholds_procnoise)


@pytest.fixture(scope="module")
def procnoise_clean_results(procnoise_config, thresholds_procnoise):
    return run_many(clean_variant(procnoise_config), thresholds=thresholds_procnoise)


@pytest.fixture(scope="module")
def amp_results(amp_config, thresholds_amp):
    return run_many(amp_config, thresholds=thresholds_amp)


@pytest.fixture(scope="module")
def amp_clean_results(amp_config, thresholds_amp):
    return run_many(clean_variant(amp_config), thresholds=thresholds_amp)


@pytest.fixture(scope="module")
def nl_corrected_results(nl_config, thresholds_nl):
    return run_many(nl_config, thresholds=thresholds_nl)


@pytest.fixture(scope="module")
def nl_plain_results(nl_config, thresholds_nl):
    plain = replace(nl_config, attack=replace(nl_config.attack, mode="digital_twin"))
    return run_many(plain, thresholds=thresholds_nl)


@pytest.fixture(scope="module")
def nl_clean_results(nl_config, thresholds_nl):
    return run_many(clean_variant(nl_config), thresholds=thresholds_nl)


def test_criterion_01_decomposition_equals_loop_convolution(capsys):
    t0 = time.monotonic()
    m = default_model()
    key = WatermarkKey(seed=20260815, sigma_e=0.02)
    horizon = 3000
    dec = decompose(m, 1.0, horizon, SeedSet(), key)
    e = watermark_matrix(key, horizon, m.n_inputs)[:, 0]
    acl = m.closed_loop()
    worst = 0.0
    for ch in range(m.n_sensors):
        taps = np.zeros(400)
        p = m.watermark_input[:, 0].copy()
        row = m.C[ch] * m.level[ch]
        for j in range(1, taps.size):
            taps[j] = row @ p
            p = acl @ p
        want = np.convolve(e, taps)[:horizon]
        got = dec.watermark_image[:, ch]
        worst = max(worst, float(np.linalg.norm(got - want) / np.linalg.norm(want)))
    leftover = float(np.max(np.abs(dec.nonlinear)))
    elapsed = time.monotonic() - t0
    ok = worst <= 1e-9 and leftover <= 1e-12 and elapsed < 1.0
    _emit(capsys, 1, ok,
          f"injected component matches filtered-stream convolution "
          f"(worst rel {worst:.2e}), linear leftover {leftover:.2e}, {elapsed:.2f}s")
    assert worst <= 1e-9
    assert leftover <= 1e-12
    assert elapsed < 1.0


def test_criterion_02_twin_extraction_recovers_injected_component(capsys):
    m = default_model(sigma_v=0.0, sigma_d=0.0)
    key = WatermarkKey(seed=31, sigma_e=0.02)
    horizon = 3000
    warm = 200
    bundle = simulate(m, plain_channels(m), 1.0, horizon, SeedSet(), watermark=key)
    twin = create_twin(m, initial_state=np.ones(m.state_dim))
    preds = np.empty((horizon, m.n_sensors))
    for k in range(horizon):
        preds[k] = twin_predict(twin, bundle.reference[k], bundle.received[k])
    extracted = extract_watermark(bundle.sensors[warm:, 0], preds[warm:, 0]).values
    truth = decompose(m, 1.0, horizon, SeedSet(), key).watermark_image[warm:, 0]
    rel = float(np.linalg.norm(extracted - truth) / np.linalg.norm(truth))
    ok = rel <= 1e-9
    _emit(capsys, 2, ok,
          f"noise-free twin extraction matches the true injected component "
          f"(rel {rel:.2e} after {warm}-step warm-up from a wrong initial state)")
    assert rel <= 1e-9


def test_criterion_03_unit_gain_resynthesis_reproduces_reading(capsys):
    m = default_model(sigma_v=0.0, sigma_d=0.0)
    key = WatermarkKey(seed=123, sigma_e=0.02)
    plan = AttackPlan(mode="digital_twin", target_channel=0,
                      fake=FakeTrajectory("offset", 0.0))
    hook = run_digital_twin_attack(plan, create_twin(m), 1.0, 2000)
    bundle = simulate(m, [ChannelModel(interceptor=hook), ChannelModel()],
                      1.0, 2000, SeedSet(), watermark=key)
    active = ~np.isnan(hook.gain_log)
    unit_gain = bool(np.all(hook.gain_log[active] == 1.0))
    diff = float(np.max(np.abs(bundle.received[:, 0] - bundle.sensors[:, 0])))
    ok = unit_gain and diff <= 1e-12
    _emit(capsys, 3, ok,
          f"unit residual gain with the true regular trajectory reproduces the "
          f"reading (max abs gap {diff:.2e})")
    assert unit_gain
    assert diff <= 1e-12


def test_criterion_04_calibrated_false_alarm_rate(capsys, clean_config, clean_results):
    alarms, blocks = block_alarm_counts(clean_results)
    rate = alarms / blocks
    alpha = clean_config.detector.alpha
    low, high = wilson_interval(round(alpha * blocks), blocks)
    ok = blocks == 400 and low <= rate <= high
    _emit(capsys, 4, ok,
          f"fresh clean block alarm rate {rate:.4f} ({alarms}/{blocks}) inside "
          f"[{low:.4f}, {high:.4f}] around alpha={alpha}")
    assert blocks == 400
    assert low <= rate <= high


def test_criterion_05_naive_attacks_detected_fast(capsys, sub_config, replay_config,
                                                  thresholds_fast):
    outcomes = {}
    for name, config in (("substitution", sub_config), ("replay", replay_config)):
        results = run_many(config, thresholds=thresholds_fast)
        rate = alarm_rate(results)
        ttds = [r.report.time_to_detect for r in results
                if r.report.time_to_detect is not None]
        median_ttd = float(np.median(ttds)) if ttds else float("inf")
        outcomes[name] = (len(results), rate, median_ttd,
                          2 * config.detector.window)
    ok = all(rate >= 0.95 and ttd <= budget
             for (_, rate, ttd, budget) in outcomes.values())
    assert replay_config.attack.replay_delay == 1000
    detail = "; ".join(
        f"{name} {rate:.3f} of {n} runs, median time-to-detect {ttd:.0f} <= {budget}"
        for name, (n, rate, ttd, budget) in outcomes.items())
    _emit(capsys, 5, ok, detail)
    for name, (n, rate, ttd, budget) in outcomes.items():
        assert n == 200, name
        assert rate >= 0.95, name
        assert ttd <= budget, name


def test_criterion_06_twin_attack_invisible_at_large_deception(
        capsys, dtk1_config, dtk1_results, clean_results):
    alarms_clean, blocks_clean = block_alarm_counts(clean_results)
    low, high = wilson_interval(alarms_clean, blocks_clean)
    alarms, blocks = block_alarm_counts(dtk1_results)
    rate = alarms / blocks
    deception = float(np.mean([r.deception_rms for r in dtk1_results]))
    sigma_n = watermark_image_rms(dtk1_config.model, dtk1_config.sigma_e,
                                  dtk1_config.attack.target_channel)
    sustained = dtk1_config.horizon - dtk1_config.attack_start
    ok = (low <= rate <= high) and deception >= 10 * sigma_n and sustained >= 5000
    _emit(capsys, 6, ok,
          f"twin-attack block alarm rate {rate:.4f} inside clean Wilson band "
          f"[{low:.4f}, {high:.4f}] while deception RMS {deception:.6f} >= "
          f"10 sigma_N = {10 * sigma_n:.6f} sustained {sustained} steps")
    assert low <= rate <= high
    assert deception >= 10 * sigma_n
    assert sustained >= 5000


def test_criterion_07_twin_attack_invisible_with_process_noise(
        capsys, procnoise_config, procnoise_results, procnoise_clean_results):
    assert float(procnoise_config.model.sigma_w) == procnoise_config.sigma_e
    alarms_clean, blocks_clean = block_alarm_counts(procnoise_clean_results)
    low, high = wilson_interval(alarms_clean, blocks_clean)
    alarms, blocks = block_alarm_counts(procnoise_results)
    rate = alarms / blocks
    deception = float(np.mean([r.deception_rms for r in procnoise_results]))
    sigma_n = watermark_image_rms(procnoise_config.model, procnoise_config.sigma_e,
                                  procnoise_config.attack.target_channel)
    ok = (low <= rate <= high) and deception >= 10 * sigma_n
    _emit(capsys, 7, ok,
          f"with process noise sigma_w = sigma_e: block alarm rate {rate:.4f} "
          f"inside clean band [{low:.4f}, {high:.4f}], deception RMS "
          f"{deception:.6f} >= {10 * sigma_n:.6f}")
    assert low <= rate <= high
    assert deception >= 10 * sigma_n


def test_criterion_08_rms_ratio_gain_hides_scaling(
        capsys, amp_config, thresholds_amp, amp_results, amp_clean_results):
    assert amp_config.attack.fake.kind == "scale"
    assert amp_config.attack.fake.value == 2.0
    tgt = amp_config.attack.target_channel
    lo_band = thresholds_amp.gain_low[tgt]
    hi_band = thresholds_amp.gain_high[tgt]
    quiet = float(np.mean([
        bool(np.all((r.report.gain[tgt] >= lo_band) & (r.report.gain[tgt] <= hi_band)))
        for r in amp_results]))
    rate_attacked = alarm_rate(amp_results)
    clean_alarms = int(sum(r.report.overall_alarm for r in amp_clean_results))
    low, high = wilson_interval(clean_alarms, len(amp_clean_results))
    ok = quiet >= 0.90 and low <= rate_attacked <= high
    _emit(capsys, 8, ok,
          f"doubled-RMS fake: correlation statistic inside its band in "
          f"{quiet:.3f} of {len(amp_results)} runs; alarm rate {rate_attacked:.4f} "
          f"vs clean band [{low:.4f}, {high:.4f}]")
    assert len(amp_results) == 200
    assert quiet >= 0.90
    assert low <= rate_attacked <= high


def test_criterion_09_component_size_regime_check(capsys, clean_config,
                                                  thresholds_default):
    config = replace(clean_config,
                     model=default_model(nonlinearity_eps=(0.013, 0.0)),
                     sigma_e=0.26, compute_regime=True)
    result = run_scenario(config, 0, thresholds_default)
    dec = decompose(config.model, config.reference, config.horizon,
                    derive_seeds(config.base_seed, 0),
                    derive_watermark_key(config, 0))
    sl = slice(config.warm_up, None)
    regular = dec.regular[sl, 0]
    injected = dec.watermark_image[sl, 0]
    leftover = dec.nonlinear[sl, 0]
    want_distortion = float(np.mean(leftover ** 2) / np.mean(injected ** 2))
    want_residual = float(np.mean(injected ** 2) / np.mean(regular ** 2))
    rel_d = abs(result.regime_distortion_ratio - want_distortion) / want_distortion
    rel_r = abs(result.regime_residual_ratio - want_residual) / want_residual
    sized = all(0.005 <= v <= 0.02 for v in (want_distortion, want_residual))
    passes = (result.regime_distortion_ratio <= config.theta1
              and result.regime_residual_ratio <= config.theta2)
    ok = rel_d <= 1e-9 and rel_r <= 1e-9 and sized and passes
    _emit(capsys, 9, ok,
          f"reported size ratios ({result.regime_distortion_ratio:.5f}, "
          f"{result.regime_residual_ratio:.5f}) match the decomposition oracle "
          f"(rel {max(rel_d, rel_r):.1e}) and pass at defaults "
          f"({config.theta1}, {config.theta2})")
    assert rel_d <= 1e-9 and rel_r <= 1e-9
    assert sized
    assert passes


def test_criterion_10_curvature_correction_restores_stealth(
        capsys, nl_clean_results, nl_plain_results, nl_corrected_results):
    rate_clean = alarm_rate(nl_clean_results)
    rate_plain = alarm_rate(nl_plain_results)
    rate_corrected = alarm_rate(nl_corrected_results)
    ok = rate_plain >= 0.5 and rate_corrected <= rate_plain / 5
    _emit(capsys, 10, ok,
          f"on a curved sensor the plain twin attack alarms at {rate_plain:.4f} "
          f"(clean {rate_clean:.4f}); the curvature-corrected attack drops to "
          f"{rate_corrected:.4f} <= {rate_plain / 5:.4f}")
    assert len(nl_plain_results) == 200
    assert rate_plain >= 0.5
    assert rate_corrected <= rate_plain / 5


def test_criterion_11_authenticated_channel_blocks_every_mode(
        capsys, auth_config, thresholds_default):
    results = run_many(auth_config, thresholds=thresholds_default)
    all_rejected = all(r.attack_rejected for r in results)

    identical = True
    clean_cfg = clean_variant(auth_config)
    for r in results:
        c = run_scenario(clean_cfg, r.run_index, thresholds_default)
        identical &= r.report.overall_alarm == c.report.overall_alarm
        identical &= r.report.time_to_detect == c.report.time_to_detect
        for name in ("gain", "band_variance", "band_power",
                     "gain_alarm", "var_alarm", "spec_alarm"):
            identical &= bool(np.array_equal(getattr(r.report, name),
                                             getattr(c.report, name)))

    m = auth_config.model
    twin_plan = AttackPlan(mode="digital_twin", target_channel=0,
                           fake=FakeTrajectory("offset", 0.1))
    nl_plan = AttackPlan(mode="nonlinear_dt", target_channel=0,
                         fake=FakeTrajectory("offset", 0.1))
    sub_plan = AttackPlan(mode="substitution", fake=FakeTrajectory("constant", 5.0))
    replay_plan = AttackPlan(mode="replay", replay_delay=100)
    hooks = (
        run_digital_twin_attack(twin_plan, create_twin(m), 1.0, 600),
        nonlinear_firstorder_attack(nl_plan, create_twin(m), 0.01, 1.0, 600),
        SubstitutionInterceptor(sub_plan, horizon=600, attack_start=0),
        ReplayInterceptor(replay_plan, horizon=600, attack_start=200),
    )
    raised = 0
    for hook in hooks:
        channels = [ChannelModel(authenticated=True, interceptor=hook),
                    ChannelModel()]
        with pytest.raises(AuthenticatedChannelError):
            simulate(m, channels, 1.0, 600, SeedSet())
        raised += 1

    ok = all_rejected and identical and raised == len(hooks)
    _emit(capsys, 11, ok,
          f"all {len(results)} attacked runs rejected, detector output "
          f"bit-identical to clean runs, {raised}/4 attack modes refused outright")
    assert all_rejected
    assert identical
    assert raised == 4
