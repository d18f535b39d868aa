"""Closed-form model checks against independently computed constants."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timebin import model
from timebin.errors import NumericError

SQRT2 = math.sqrt(2.0)


def make_source(mu, **kw):
    return model.SourceParams(mean_pairs_per_pulse=mu, **kw)


class TestRateAlgebra:
    # frozen reference point: mu=0.08, alpha_s=0.30/dark 2e-6, alpha_i=0.25/dark 1e-6
    SRC = model.SourceParams(0.08, clock_hz=5e9)
    CH_S = model.ChannelParams(0.30, dark_prob=2e-6)
    CH_I = model.ChannelParams(0.25, dark_prob=1e-6)

    def test_singles_prob(self):
        assert model.singles_prob(self.SRC, self.CH_S) == pytest.approx(0.024002, abs=0)
        assert model.singles_prob(self.SRC, self.CH_I) == pytest.approx(0.020001, abs=0)

    def test_coincidence_split(self):
        cc, acc = model.coincidence_probs(self.SRC, self.CH_S, self.CH_I)
        assert acc == pytest.approx(0.000480064002, rel=1e-12)
        assert cc == pytest.approx(0.006480064002, rel=1e-12)
        # subtracting the accidental floor leaves exactly the pair term
        assert cc - acc == pytest.approx(0.08 * 0.30 * 0.25, rel=1e-12)

    def test_car_value(self):
        assert model.car(self.SRC, self.CH_S, self.CH_I) == pytest.approx(
            13.49833350345648, rel=1e-12)

    def test_rate_prediction_scales_with_clock(self):
        pred = model.predict_rates(self.SRC, self.CH_S, self.CH_I)
        assert pred.singles_s_cps == pytest.approx(120010000.0, rel=1e-12)
        assert pred.singles_i_cps == pytest.approx(100005000.0, rel=1e-12)
        assert pred.coincidence_cps == pytest.approx(32400320.01, rel=1e-12)
        assert pred.accidental_cps == pytest.approx(2400320.01, rel=1e-12)

    def test_car_needs_accidentals(self):
        clean = model.ChannelParams(0.5)
        with pytest.raises(ZeroDivisionError):
            model.car(model.SourceParams(0.0), clean, clean)

    @given(mu=st.floats(1e-6, 0.5), alpha=st.floats(1e-3, 1.0))
    def test_car_is_inverse_mu_plus_one_without_darks(self, mu, alpha):
        src = model.SourceParams(mu)
        ch = model.ChannelParams(alpha)
        assert model.car(src, ch, ch) == pytest.approx(1.0 / mu + 1.0, rel=1e-9)


class TestDeadTimeTransfer:
    def test_paralyzable_output(self):
        dead = model.DeadTimeSpec(50e-9, "paralyzable")
        assert model.observed_singles_rate(1e6, dead) == pytest.approx(
            951229.424500714, rel=1e-12)

    def test_nonparalyzable_output(self):
        dead = model.DeadTimeSpec(50e-9, "nonparalyzable")
        assert model.observed_singles_rate(1e6, dead) == pytest.approx(
            952380.9523809523, rel=1e-12)

    @given(rate=st.floats(1.0, 1e7), tau=st.floats(1e-9, 1e-6))
    @settings(max_examples=200)
    def test_inversion_round_trip(self, rate, tau):
        for mode in ("paralyzable", "nonparalyzable"):
            dead = model.DeadTimeSpec(tau, mode)
            if mode == "paralyzable" and rate * tau > 0.99:
                continue   # past the peak the observed rate is not invertible
            if mode == "nonparalyzable" and rate * tau > 50.0:
                continue
            obs = model.observed_singles_rate(rate, dead)
            assert model.invert_observed_singles_rate(obs, dead) == pytest.approx(
                rate, rel=1e-6)

    def test_paralyzable_inversion_at_the_peak(self):
        # the transfer curve tops out at 1/(e tau); exactly there the
        # inversion must return 1/tau, not NaN
        tau = 50e-9
        dead = model.DeadTimeSpec(tau, "paralyzable")
        peak = 1.0 / (math.e * tau)
        assert model.invert_observed_singles_rate(peak, dead) == pytest.approx(
            1.0 / tau, rel=1e-6)

    def test_rates_above_the_physical_maximum_are_rejected(self):
        dead_p = model.DeadTimeSpec(50e-9, "paralyzable")
        with pytest.raises(NumericError):
            model.invert_observed_singles_rate(7.36e6 * 1.01, dead_p)
        dead_n = model.DeadTimeSpec(50e-9, "nonparalyzable")
        with pytest.raises(NumericError):
            model.invert_observed_singles_rate(1.0 / 50e-9, dead_n)

    def test_zero_dead_time_is_identity(self):
        dead = model.DeadTimeSpec(0.0)
        assert model.observed_singles_rate(3.3e6, dead) == 3.3e6
        assert model.invert_observed_singles_rate(3.3e6, dead) == 3.3e6


class TestSaturationCurve:
    def test_reference_points(self):
        assert model.deadtime_limited_coincidence(0.1, 5) == pytest.approx(0.05, abs=0)
        assert model.deadtime_limited_coincidence(0.05, 10) == pytest.approx(0.025, abs=0)
        assert model.deadtime_limited_coincidence(0.02, 0) == pytest.approx(0.02, abs=0)

    def test_peak_location(self):
        assert model.saturation_peak_mu(5) == pytest.approx(0.1, abs=0)
        d = 7.0
        peak = model.saturation_peak_mu(d)
        grid = np.linspace(1e-4, 1.0 / d, 2001)
        vals = [model.deadtime_limited_coincidence(m, d) for m in grid]
        assert abs(grid[int(np.argmax(vals))] - peak) < 2e-4

    def test_domain_edge(self):
        with pytest.raises(NumericError):
            model.deadtime_limited_coincidence(0.3, 5)


class TestVisibility:
    def test_reference_values(self):
        assert model.visibility_multipair(0.001) == pytest.approx(
            0.998003992015968, rel=1e-12)
        assert model.visibility_multipair(0.094) == pytest.approx(
            0.8417508417508418, rel=1e-12)
        assert model.predicted_fringe_visibility(0.001) == pytest.approx(
            0.9481037924151696, rel=1e-12)
        assert model.predicted_fringe_visibility(0.094) == pytest.approx(
            0.7996632996632996, rel=1e-12)

    @given(mu=st.floats(0.0, 10.0))
    def test_jitter_free_form_reduces_to_multipair(self, mu):
        assert model.visibility_with_jitter(mu, 1.0) == model.visibility_multipair(mu)

    def test_slot_capture_reference(self):
        p_in, p_out = model.slot_capture_probability(model.JitterSpec(120e-12), 200e-12)
        assert p_in == pytest.approx(0.9502782546553663, rel=1e-12)
        assert p_in + p_out == pytest.approx(1.0, abs=1e-15)
        full, none = model.slot_capture_probability(model.JitterSpec(0.0), 200e-12)
        assert full == 1.0 and none == 0.0

    def test_capture_feeds_visibility(self):
        p_in, _ = model.slot_capture_probability(model.JitterSpec(120e-12), 200e-12)
        assert model.predicted_fringe_visibility(0.094, 0.95, p_in) == pytest.approx(
            0.7863012907267782, rel=1e-12)

    def test_threshold_mu_for_a_bell_violation(self):
        root = model.bell_threshold_mu(0.95)
        assert root == pytest.approx(0.17175144212722016, rel=1e-12)
        assert round(root, 2) == 0.17
        # at the root the prediction sits exactly on the bound
        assert model.predicted_fringe_visibility(root) == pytest.approx(
            model.BELL_VISIBILITY, rel=1e-12)
        with pytest.raises(NumericError):
            model.bell_threshold_mu(0.5)

    @given(theta=st.floats(-20.0, 20.0), v=st.floats(0.0, 1.0))
    def test_fringe_half_turn_pairs_average_to_one_half(self, theta, v):
        up = model.fringe_coincidence(theta, 0.0, v)
        down = model.fringe_coincidence(theta + math.pi, 0.0, v)
        assert up + down == pytest.approx(1.0, abs=1e-12)
        assert 0.0 <= up <= 1.0


def settings_grid(theta_s0=0.0, theta_i0=0.0):
    """The sixteen analyzer phase combinations of a four-setting run."""
    signal = (theta_s0, theta_s0 + math.pi / 2.0)
    idler = (theta_i0 - math.pi / 4.0, theta_i0 + math.pi / 4.0)
    return signal, idler


def brute_force_s(v, scale=1e6, flip_idler=False):
    """S from noiseless fringe rates at the standard settings."""
    signal, idler = settings_grid()
    if flip_idler:
        idler = (idler[1], idler[0])
    es = []
    for a in signal:
        for b in idler:
            n = [scale * model.fringe_coincidence(a + da, b + db, v)
                 for da, db in ((0, 0), (0, math.pi), (math.pi, 0), (math.pi, math.pi))]
            e, _ = model.chsh_correlation(*n)
            es.append(e)
    s, _, _ = model.chsh_s((es[0], es[1], es[2], es[3]))
    return s


class TestChsh:
    def test_correlation_reference(self):
        e, sigma = model.chsh_correlation(120, 80, 80, 120)
        assert e == pytest.approx(0.2, rel=1e-12)
        assert sigma == pytest.approx(0.048989794855663564, rel=1e-12)

    def test_correlation_rejects_empty(self):
        with pytest.raises(NumericError):
            model.chsh_correlation(0, 0, 0, 0)

    @given(v=st.floats(0.0, 1.0))
    @settings(max_examples=60)
    def test_s_equals_2sqrt2_v_at_the_standard_settings(self, v):
        assert brute_force_s(v) == pytest.approx(2.0 * SQRT2 * v, abs=1e-9)

    def test_swapping_the_idler_settings_cancels_s(self):
        # regression guard: with a phase-sum fringe the idler offsets must
        # be (-pi/4, +pi/4); the mirrored assignment nulls the statistic
        for v in (0.5, 0.7071, 0.95):
            assert abs(brute_force_s(v, flip_idler=True)) < 1e-9

    def test_violation_flag_is_strict(self):
        s, sigma, flag = model.chsh_s((0.5, 0.5, 0.5, -0.5), (0.01,) * 4)
        assert s == pytest.approx(2.0)
        assert not flag
        assert sigma == pytest.approx(0.02, rel=1e-12)
        _, _, flag_hi = model.chsh_s((0.505, 0.5, 0.5, -0.5))
        assert flag_hi

    def test_correlation_bounds_are_enforced(self):
        with pytest.raises(ValueError):
            model.chsh_s((1.5, 0.0, 0.0, 0.0))


class TestPhaseTemperature:
    def test_half_turn_reference(self):
        assert model.phase_from_temperature(44.80, 43.40, 1.40) == pytest.approx(
            math.pi, abs=1e-12)
        assert model.phase_from_temperature(43.40, 43.40, 1.40) == 0.0

    @given(temp=st.floats(-50.0, 150.0))
    def test_round_trip(self, temp):
        phase = model.phase_from_temperature(temp, 43.40, 1.40)
        back = model.temperature_from_phase(phase, 43.40, 1.40)
        assert back == pytest.approx(temp, abs=1e-9)

    def test_zero_scale_rejected(self):
        with pytest.raises(ValueError):
            model.phase_from_temperature(44.0, 43.0, 0.0)


class TestParameterValidation:
    def test_out_of_range_values_are_rejected(self):
        with pytest.raises(ValueError):
            model.SourceParams(-0.1)
        with pytest.raises(ValueError):
            model.SourceParams(0.1, coherence_pulses=1)
        with pytest.raises(ValueError):
            model.ChannelParams(1.3)
        with pytest.raises(ValueError):
            model.ChannelParams(0.5, dark_prob=1.0)
        with pytest.raises(ValueError):
            model.DeadTimeSpec(-1e-9)
        with pytest.raises(ValueError):
            model.DeadTimeSpec(1e-9, "sometimes")
        with pytest.raises(ValueError):
            model.MziParams(interference_visibility=1.2)

    def test_jitter_sigma_conversion(self):
        j = model.JitterSpec(30e-12)
        assert j.sigma_s == pytest.approx(1.2739827004320287e-11, rel=1e-12)
