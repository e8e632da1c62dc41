import logging
import math

import numpy as np
import pytest

from photon_memory_sim.core import SystemParams, mhz
from photon_memory_sim.envelopes import FlatEnvelope, SechEnvelope
from photon_memory_sim.pulses import (ControlPulse, PiecewisePulse, PulseDivergenceError,
                                      cooperativity, default_c1, effective_decay,
                                      efficiency_bounds, eta_max, eta_prime_max,
                                      modified_cooperativity, omega_D, omega_F, omega_G, omega_X,
                                      omega_X_retr, phase_rate, phase_to_detuning, read_pulse_csv,
                                      time_reverse, write_pulse_csv)


def test_bounds_reference_values(ref_params, lossy_params):
    assert cooperativity(ref_params) == pytest.approx(3.2744, abs=1e-4)
    assert eta_max(cooperativity(ref_params)) == pytest.approx(0.76605, abs=1e-5)
    assert eta_prime_max(lossy_params) == pytest.approx(0.653283, abs=1e-6)
    b = efficiency_bounds(lossy_params)
    assert b.C_prime == pytest.approx(modified_cooperativity(lossy_params))
    assert b.G == pytest.approx(2.42 / 2.75)


def test_lossless_bound_limits(ref_params):
    assert eta_prime_max(ref_params) == pytest.approx(eta_max(cooperativity(ref_params)))
    assert eta_prime_max(ref_params.with_(gamma=0.0)) == 1.0
    assert eta_prime_max(ref_params.with_(gamma=0.0, kappa_loss=1.0)) == pytest.approx(
        ref_params.kappa / (ref_params.kappa + 1.0))
    with pytest.raises(ValueError):
        cooperativity(ref_params.with_(gamma=0.0))
    with pytest.raises(ValueError):
        eta_max(-1.0)


def test_effective_decay(lossy_params):
    p = lossy_params
    assert effective_decay(p) == pytest.approx(p.gamma * (1 + modified_cooperativity(p)))
    assert effective_decay(p, with_losses=False) == pytest.approx(p.gamma * (1 + cooperativity(p)))


def test_control_pulse_cap_logs_and_records(caplog):
    p = ControlPulse(lambda t: 10.0 * np.ones_like(t), 0.0, 1.0, cap=4.0, name="big")
    with caplog.at_level(logging.WARNING):
        v = p(np.array([0.1, 0.2]))
    np.testing.assert_allclose(np.abs(v), 4.0)
    assert len(p.clip_events) == 2
    assert "clipped" in caplog.text


def test_control_pulse_nonfinite_raises():
    p = ControlPulse(lambda t: np.where(np.asarray(t) == 0.5, np.nan, 1.0), 0.0, 1.0)
    with pytest.raises(FloatingPointError):
        p(0.5)
    with pytest.raises(ValueError):
        ControlPulse(lambda t: t, 1.0, 1.0)


def test_control_pulse_helpers():
    c = ControlPulse.constant(2 + 1j, -1.0, 1.0)
    assert c(0.3) == 2 + 1j
    t, v = c.sample(5)
    assert len(t) == 5 and np.all(v == 2 + 1j)
    s = ControlPulse(lambda t: np.asarray(t) + 0j, 0.0, 1.0).shifted(2.0)
    assert (s.t_start, s.t_end) == (2.0, 3.0)
    assert s(2.5) == pytest.approx(0.5)
    f = ControlPulse.from_samples(np.linspace(0, 1, 11), np.linspace(0, 1, 11) * 1j)
    assert f(0.55) == pytest.approx(0.55j)


def test_piecewise_pulse_layout():
    p = PiecewisePulse([1, 2, 3, 4], 0.0, 2.0)
    assert len(p) == 4
    assert p.dt == 0.5
    assert p.breakpoints == (0.5, 1.0, 1.5)
    np.testing.assert_array_equal(p(np.array([0.0, 0.49, 0.5, 1.99, 2.0])), [1, 1, 2, 4, 4])
    with pytest.raises(ValueError):
        PiecewisePulse([], 0.0, 1.0)


def test_g_pulse_cap_holds_away_from_t1(ref_params, ref_env):
    pulse = omega_G(ref_params, ref_env)
    t = np.linspace(pulse.t_start, pulse.t_end, 2001)[1:]
    assert np.max(np.abs(pulse(t))) < mhz(50)


def test_x_equals_g_without_losses(ref_params, ref_env):
    t = np.linspace(-2.5, 2.5, 101)
    np.testing.assert_allclose(omega_X(ref_params, ref_env)(t), omega_G(ref_params, ref_env)(t))


def test_x_uses_loss_corrected_decay(lossy_params, ref_env):
    t = np.linspace(-2.0, 2.0, 11)
    ratio = np.abs(omega_X(lossy_params, ref_env)(t) / omega_G(lossy_params, ref_env)(t))
    expected = math.sqrt(effective_decay(lossy_params) / effective_decay(lossy_params, False))
    np.testing.assert_allclose(ratio, expected, rtol=1e-12)


def test_omega_f_warns_off_resonance(ref_params, ref_env):
    with pytest.warns(RuntimeWarning, match="resonance"):
        omega_F(ref_params.with_(delta_1=1.0), ref_env)


def test_omega_f_rejects_nonpositive_c1(ref_params, ref_env):
    with pytest.raises(ValueError):
        omega_F(ref_params, ref_env, c1=-1.0)


def test_omega_d_radicand_failure_reports_time():
    p = SystemParams.reference(tc=0.02)
    env = SechEnvelope.from_tc(0.02)
    with pytest.raises(PulseDivergenceError) as info:
        omega_D(p, env)
    assert p.t_start <= info.value.t <= p.t_end
    with pytest.raises(ValueError):
        omega_D(p.with_(g=0.0), env)


def test_f_equals_d_for_flat_lossless_input():
    p = SystemParams(gamma=0.0, t_start=-1.0, t_end=1.0)
    env = FlatEnvelope(-1.0, 1.0)
    t = np.linspace(-0.99, 0.99, 51)
    # F(t1) = -kappa E needs a larger rho0 for a positive c1
    f = omega_F(p, env, rho0=1.0)(t)
    np.testing.assert_allclose(f, omega_D(p, env, rho0=1.0)(t), rtol=1e-12)


def test_default_c1_positive_in_adiabatic_regime(ref_params, ref_env):
    assert default_c1(ref_params, ref_env) > 0


def test_gauge_detuning_closed_form(ref_params, ref_env):
    delta = 5 * ref_params.gamma
    pulse = omega_G(ref_params, ref_env, Delta=delta)
    det, mag = phase_to_detuning(pulse)
    t = np.linspace(-2.0, 2.0, 41)
    dec = effective_decay(ref_params, with_losses=False)
    expected = -delta * np.abs(pulse(t)) ** 2 / (delta**2 + dec**2)
    np.testing.assert_allclose(det(t), expected, rtol=1e-10)
    np.testing.assert_allclose(mag(t), np.abs(pulse(t)))


def test_numeric_phase_rate_warns_and_matches():
    chirp = ControlPulse(lambda t: np.exp(1j * 3.0 * np.asarray(t) ** 2), -1.0, 1.0, name="chirp")
    with pytest.warns(RuntimeWarning):
        rate = phase_rate(chirp)
    t = np.linspace(-0.9, 0.9, 7)
    np.testing.assert_allclose(rate(t), 6.0 * t, atol=1e-6)
    real = ControlPulse.constant(1.0, 0.0, 1.0)
    assert np.all(phase_rate(real)(np.array([0.2, 0.4])) == 0)


def test_time_reverse_of_retrieval_is_storage(lossy_params, ref_env):
    p = lossy_params.with_(delta_1=2 * lossy_params.gamma)
    store = time_reverse(omega_X_retr(p, ref_env))
    t = np.linspace(-2.9, 2.9, 59)
    ratio = store(t) / omega_X(p, ref_env)(t)
    # equal up to one global phase
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-8)
    assert abs(ratio[0]) == pytest.approx(1.0, rel=1e-8)


def test_time_reverse_piecewise():
    p = PiecewisePulse([1, 2j, 3], 0.0, 3.0)
    r = time_reverse(p)
    assert isinstance(r, PiecewisePulse)
    np.testing.assert_array_equal(r.slices, [3, -2j, 1])


def test_pulse_csv_spline_roundtrip(tmp_path, ref_params, ref_env):
    pulse = omega_G(ref_params.with_(delta_1=3.0), ref_env)
    t = np.linspace(-3, 3, 401)
    write_pulse_csv(tmp_path / "p.csv", pulse, t)
    assert (tmp_path / "p.csv").read_text().startswith("t,omega_re,omega_im\n")
    back = read_pulse_csv(tmp_path / "p.csv")
    np.testing.assert_array_equal(back(t), pulse(t))


def test_pulse_csv_piecewise_roundtrip(tmp_path):
    p = PiecewisePulse(np.arange(16) * (1 - 0.5j), -0.4, 1.2)
    write_pulse_csv(tmp_path / "p.csv", p)
    back = read_pulse_csv(tmp_path / "p.csv", kind="piecewise")
    np.testing.assert_array_equal(back.slices, p.slices)
    np.testing.assert_allclose(back.edges, p.edges, atol=1e-15)


def test_pulse_csv_rejects_bad_input(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,a\n0,1\n1,2\n")
    with pytest.raises(ValueError):
        read_pulse_csv(bad)
    ok = tmp_path / "ok.csv"
    ok.write_text("t,omega_re,omega_im\n0,1,0\n1,1,0\n3,1,0\n")
    with pytest.raises(ValueError):
        read_pulse_csv(ok, kind="piecewise")
    with pytest.raises(ValueError):
        read_pulse_csv(ok, kind="linear")
