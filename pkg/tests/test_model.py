"""Plant dynamics, sensor maps, simulation identities, and decomposition."""

import numpy as np
import pytest

from gridmark import (
    AuthenticatedChannelError,
    ChannelModel,
    GridModel,
    SeedSet,
    WatermarkKey,
    closed_loop_impulse_response,
    controller_law,
    decompose,
    default_model,
    generate_watermark,
    invert_sensor_map,
    plain_channels,
    scalar_model,
    sensor_output,
    simulate,
    step,
)
from gridmark.errors import NonInvertibleError


def noise_free(**overrides):
    return default_model(sigma_v=0.0, sigma_d=0.0, **overrides)


class TestStep:
    def test_zero_state_readout(self):
        m = scalar_model(a=0.0)
        x_next, y = step(m, [0.0], [1.0], [0.0], [0.0])
        assert x_next == pytest.approx([1.0])
        assert y == pytest.approx([0.0])

    def test_null_dynamics(self):
        m = default_model()
        x_next, y = step(m, np.zeros(4), [0.0], [0.0], np.zeros(4))
        assert np.all(x_next == 0.0)
        assert np.all(y == 0.0)

    def test_scalar_recursion(self):
        # x+ = 0.5*2 + 1*1 + 1*0.5 = 2.5, reading is the pre-update state
        m = scalar_model(a=0.5)
        x_next, y = step(m, [2.0], [1.0], [0.5], [0.0])
        assert x_next == pytest.approx([2.5])
        assert y == pytest.approx([2.0])

    def test_shape_checks(self):
        m = default_model()
        with pytest.raises(ValueError, match="state"):
            step(m, np.zeros(3), [0.0], [0.0], np.zeros(4))
        with pytest.raises(ValueError, match="u and e"):
            step(m, np.zeros(4), [0.0, 0.0], [0.0], np.zeros(4))


class TestSensorOutput:
    def test_linear_passthrough(self):
        m = default_model()
        assert sensor_output(m, 0, 3.2, 0.0) == pytest.approx(3.2)

    def test_quadratic_map(self):
        m = default_model(nonlinearity_eps=(0.1, 0.0))
        assert sensor_output(m, 0, 2.0, 0.0) == pytest.approx(2.4)

    def test_level_scales_reading(self):
        m = default_model(level=(57.5, 1.0),
                          G=((0.0, 0.052),))
        assert sensor_output(m, 0, 2.0, 0.0) == pytest.approx(115.0)

    def test_channel_range(self):
        with pytest.raises(ValueError, match="channel"):
            sensor_output(default_model(), 5, 1.0)


class TestInvertSensorMap:
    def test_eps_zero_identity(self):
        assert invert_sensor_map(0.0, 3.7) == 3.7

    def test_roundtrip_precision(self):
        # exact inverse wherever the map is comfortably monotone
        for eps in (0.01, 0.05, -0.02):
            y = np.linspace(-0.24 / abs(eps), 0.24 / abs(eps), 101)
            s = y + eps * y * y
            back = invert_sensor_map(eps, s)
            assert np.max(np.abs(back - y)) <= 1e-12 * np.max(np.abs(y))

    def test_out_of_range_rejected(self):
        with pytest.raises(NonInvertibleError):
            invert_sensor_map(0.1, -30.0)


class TestControllerLaw:
    def test_open_loop(self):
        m = scalar_model(g=0.0)
        assert controller_law(m, [1.7], [99.0]) == pytest.approx([1.7])

    def test_scalar_feedback(self):
        m = scalar_model(g=0.4, a=0.0)
        assert controller_law(m, [0.0], [5.0]) == pytest.approx([-2.0])

    def test_two_sensor_cancellation(self):
        m = GridModel(A=np.zeros((2, 2)), B=[[1.0], [0.0]], C=np.eye(2),
                      G=[[0.3, 0.7]])
        assert controller_law(m, [1.0], [1.0, 1.0]) == pytest.approx([0.0])


class TestSimulate:
    def test_all_zero(self):
        m = noise_free()
        b = simulate(m, plain_channels(m), 0.0, 200, SeedSet())
        assert np.all(b.sensors == 0.0)
        assert np.all(b.control == 0.0)

    def test_reference_superposition(self):
        m = noise_free()
        rng = np.random.default_rng(3)
        r1 = rng.standard_normal(300)
        r2 = rng.standard_normal(300)
        s = SeedSet()
        b12 = simulate(m, plain_channels(m), r1 + r2, 300, s)
        b1 = simulate(m, plain_channels(m), r1, 300, s)
        b2 = simulate(m, plain_channels(m), r2, 300, s)
        assert np.allclose(b12.sensors, b1.sensors + b2.sensors, atol=1e-9)

    def test_dc_gain_matches_algebra(self):
        # steady state solved independently from the loop fixed point
        m = noise_free()
        r = 1.0
        acl = m.A - m.B @ m.G @ (m.level[:, None] * m.C)
        x_star = np.linalg.solve(np.eye(4) - acl, (m.B @ [r]).ravel())
        s_star = m.level * (m.C @ x_star)
        b = simulate(m, plain_channels(m), r, 400, SeedSet())
        assert np.allclose(b.sensors[-1], s_star, atol=1e-10)

    def test_determinism_bitwise(self, clean_config):
        m = clean_config.model
        key = WatermarkKey(seed=99, sigma_e=0.02)
        a = simulate(m, plain_channels(m), 1.0, 500, SeedSet(), watermark=key)
        b = simulate(m, plain_channels(m), 1.0, 500, SeedSet(), watermark=key)
        assert np.array_equal(a.sensors, b.sensors)
        assert np.array_equal(a.received, b.received)
        assert np.array_equal(a.control, b.control)

    def test_authenticated_channel_rejects_interceptor(self):
        m = default_model()
        chans = [ChannelModel(authenticated=True, interceptor=lambda k, s: 5.0),
                 ChannelModel()]
        with pytest.raises(AuthenticatedChannelError):
            simulate(m, chans, 1.0, 100, SeedSet())

    def test_interceptor_rewrites_received_only(self):
        m = noise_free()
        chans = [ChannelModel(interceptor=lambda k, s: 9.0), ChannelModel()]
        b = simulate(m, chans, 1.0, 50, SeedSet())
        assert np.all(b.received[:, 0] == 9.0)
        assert not np.any(b.sensors[:, 0] == 9.0)
        assert np.array_equal(b.received[:, 1], b.sensors[:, 1])


class TestImpulseResponse:
    def test_pure_delay(self):
        m = scalar_model(a=0.0, g=0.0)
        h = closed_loop_impulse_response(m, 0, 6).values
        assert np.array_equal(h, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0])

    def test_length_zero(self):
        assert len(closed_loop_impulse_response(default_model(), 0, 0)) == 0

    def test_matches_hand_recursion(self):
        # independent oracle: propagate the pulse through the loop by hand
        m = default_model()
        acl = m.A - m.B @ m.G @ (m.level[:, None] * m.C)
        p = m.watermark_input[:, 0].copy()
        want = [0.0]
        for _ in range(1, 40):
            want.append(float(m.level[1] * (m.C[1] @ p)))
            p = acl @ p
        got = closed_loop_impulse_response(m, 1, 40).values
        assert np.allclose(got, want, rtol=1e-12, atol=1e-15)


class TestDecompose:
    def test_no_watermark_means_no_image(self):
        m = default_model()
        d = decompose(m, 1.0, 300, SeedSet(), WatermarkKey(seed=1, sigma_e=0.0))
        assert np.all(d.watermark_image == 0.0)
        assert np.all(d.nonlinear == 0.0)

    def test_linear_channel_has_zero_leftover(self):
        m = default_model()
        d = decompose(m, 1.0, 500, SeedSet(), WatermarkKey(seed=2, sigma_e=0.02))
        assert np.max(np.abs(d.nonlinear)) <= 1e-12

    def test_image_equals_convolution_oracle(self):
        m = default_model()
        key = WatermarkKey(seed=5, sigma_e=0.02)
        horizon = 2000
        d = decompose(m, 1.0, horizon, SeedSet(), key)
        e = generate_watermark(key, horizon).values
        acl = m.A - m.B @ m.G @ (m.level[:, None] * m.C)
        for ch in range(2):
            p = m.watermark_input[:, 0].copy()
            h = [0.0]
            for _ in range(1, 300):
                h.append(float(m.level[ch] * (m.C[ch] @ p)))
                p = acl @ p
            want = np.convolve(e, h)[:horizon]
            n = d.watermark_image[:, ch]
            rel = np.linalg.norm(n - want) / np.linalg.norm(want)
            assert rel <= 1e-9

    def test_parts_sum_to_reading(self):
        m = default_model(nonlinearity_eps=(0.01, 0.0))
        key = WatermarkKey(seed=6, sigma_e=0.05)
        b = simulate(m, plain_channels(m), 1.0, 400, SeedSet(), watermark=key)
        d = decompose(m, 1.0, 400, SeedSet(), key)
        total = d.regular + d.watermark_image + d.nonlinear
        assert np.allclose(total, b.sensors, atol=1e-12)


class TestModelValidation:
    def test_unstable_loop_rejected(self):
        with pytest.raises(ValueError, match="spectral radius"):
            scalar_model(a=1.2, g=0.0)

    def test_marginal_loop_rejected(self):
        with pytest.raises(ValueError, match="spectral radius"):
            scalar_model(a=1.0, g=0.0)

    def test_level_enters_the_loop(self):
        # feedback through a level-scaled channel changes stability
        m = scalar_model(a=0.9, g=0.05)
        assert m.spectral_radius() == pytest.approx(0.85)
        with pytest.raises(ValueError, match="spectral radius"):
            scalar_model(a=0.9, g=-0.05, level=(10.0,))

    def test_bad_shapes(self):
        with pytest.raises(ValueError, match="square"):
            GridModel(A=np.zeros((2, 3)), B=np.zeros((2, 1)),
                      C=np.zeros((1, 2)), G=np.zeros((1, 1)))
        with pytest.raises(ValueError, match="G must be"):
            GridModel(A=np.zeros((2, 2)), B=np.zeros((2, 1)),
                      C=np.eye(2), G=np.zeros((2, 2)))

    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            scalar_model(sigma_w=-0.1)
