import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from photon_memory_sim.config import defaults, parse_config
from photon_memory_sim.core import Basis, SystemParams, mhz
from photon_memory_sim.envelopes import FlatEnvelope, SechEnvelope
from photon_memory_sim.grape import make_problem
from photon_memory_sim.io_oracle import decay_identity_residual, retrieval_ode
from photon_memory_sim.propagator import (QuantumState, density_from_state, propagate,
                                          propagate_density_reference, simulate)
from photon_memory_sim.pulses import (PiecewisePulse, cooperativity, default_c1, eta_max, eta_prime_max,
                                      omega_D, omega_F, omega_G, omega_X_retr, phase_to_detuning,
                                      read_pulse_csv, time_reverse, write_pulse_csv)

rates = st.floats(0.5, 6.0)
small_rates = st.floats(0.0, 1.5)


def _params(g, kappa, gamma, kappa_loss, delta, n_modes=21, tc=0.3):
    return SystemParams.reference(tc=tc, g=mhz(g), kappa=mhz(kappa), gamma=mhz(gamma),
                                  kappa_loss=mhz(kappa_loss), delta_1=mhz(delta), n_modes=n_modes)


slices = st.lists(st.complex_numbers(max_magnitude=60, allow_nan=False, allow_infinity=False),
                  min_size=16, max_size=24)


@pytest.mark.filterwarnings("ignore:mode expansion captures")
@settings(max_examples=20)
@given(rates, rates, rates, small_rates, st.floats(-3, 3), slices)
def test_norm_closure_everywhere(g, kappa, gamma, kappa_loss, delta, values):
    p = _params(g, kappa, gamma, kappa_loss, delta)
    env = SechEnvelope.from_tc(0.3)
    rec = simulate(p, env, PiecewisePulse(values, p.t_start, p.t_end), np.linspace(p.t_start, p.t_end, 50))
    assert np.max(np.abs(rec.closure() - 1)) < 1e-6
    for name in ("p_r", "p_s", "p_loss", "rho_rr", "rho_ee", "rho_aa"):
        assert np.all(getattr(rec, name) >= -1e-12)
    assert np.all(np.diff(rec.p_s) >= -1e-9) and np.all(np.diff(rec.p_loss) >= -1e-9)


@pytest.mark.filterwarnings("ignore:mode expansion captures")
@settings(max_examples=8)
@given(rates, rates, rates, small_rates, st.floats(-3, 3), slices)
def test_pure_state_matches_density_matrix(g, kappa, gamma, kappa_loss, delta, values):
    p = _params(g, kappa, gamma, kappa_loss, delta, n_modes=15, tc=0.2)
    env = SechEnvelope.from_tc(0.2)
    pulse = PiecewisePulse(values, p.t_start, p.t_end)
    t = np.linspace(p.t_start, p.t_end, 9)
    pure = simulate(p, env, pulse, t, tol=1e-11)
    rho0 = density_from_state(QuantumState.from_envelope(env, p))
    dm = propagate_density_reference(rho0, p, pulse, t, tol=1e-11)
    for name in ("p_r", "p_s", "p_loss", "rho_rr", "rho_ee", "rho_aa"):
        np.testing.assert_allclose(getattr(dm, name), getattr(pure, name), atol=1e-6)


@settings(max_examples=10)
@given(rates, rates, st.floats(-3, 3), st.floats(-1, 1), st.integers(0, 2**31 - 1))
def test_grape_gradient(g, kappa, delta, delta2, seed):
    base = SystemParams.reference(tc=0.1)
    p = base.with_(g=mhz(g), kappa=mhz(kappa), gamma=0.0, kappa_loss=0.0, delta_1=mhz(delta),
                   delta_2=mhz(delta2), n_modes=21)
    env = SechEnvelope.from_tc(0.1)
    prob = make_problem(p, env, 16, complex_controls=True)
    u = np.random.default_rng(seed).normal(size=prob.n_controls) * mhz(5)
    _, grad = prob.value_and_gradient(u)
    h = 1e-6
    fd = np.array([(prob.objective(u + h * e) - prob.objective(u - h * e)) / (2 * h)
                   for e in np.eye(len(u))])
    scale = max(np.max(np.abs(fd)), 1e-8)
    assert np.max(np.abs(grad - fd)) / scale < 1e-5


@given(slices, st.floats(-2, 0), st.floats(0.1, 3))
def test_time_reverse_involution_piecewise(values, start, width):
    p = PiecewisePulse(values, start, start + width)
    twice = time_reverse(time_reverse(p))
    np.testing.assert_array_equal(twice.slices, p.slices)
    assert (twice.t_start, twice.t_end) == (p.t_start, p.t_end)


@given(rates, rates, st.floats(-20, 20), st.floats(-2.5, 2.5))
def test_time_reverse_involution_analytic(g, kappa, delta, t):
    p = _params(g, kappa, 3.03, 0.0, 0.0, tc=0.5).with_(delta_1=delta)
    pulse = omega_G(p, SechEnvelope.from_tc(0.5))
    assert time_reverse(time_reverse(pulse))(t) == pulse(t)


@given(rates, rates, st.floats(0.2, 2.0))
def test_f_pulse_reduces_to_d_pulse(g, kappa, width):
    p = SystemParams(g=mhz(g), kappa=mhz(kappa), gamma=0.0, t_start=-width, t_end=width)
    env = FlatEnvelope(-width, width)
    assume(default_c1(p, env, rho0=1.0) > 0.05 * p.kappa)
    t = np.linspace(-0.99 * width, 0.99 * width, 25)
    f = omega_F(p, env, rho0=1.0, check=False)(t)
    d = omega_D(p, env, rho0=1.0, check=False)(t)
    np.testing.assert_allclose(f, d, rtol=1e-10)


@settings(max_examples=15)
@given(rates, rates, rates, small_rates, st.floats(-5, 5))
def test_decay_identity(g, kappa, gamma, kappa_loss, delta):
    p = _params(g, kappa, gamma, kappa_loss, delta, tc=0.5)
    env = SechEnvelope.from_tc(0.5)
    tol = 1e-10
    traj = retrieval_ode(p, omega_X_retr(p, env), np.linspace(p.t_start, p.t_end, 801), tol=tol)
    assert np.max(np.abs(decay_identity_residual(p, traj))) < 100 * tol


@settings(max_examples=5)
@given(st.floats(0.5, 6.0), st.floats(-6.0, 6.0))
def test_gauge_equivalence(gamma_units, delta_units):
    p = SystemParams.reference(n_modes=61, kappa_loss=mhz(0.33))
    p = p.with_(delta_1=delta_units * p.gamma * gamma_units / 3.0)
    env = SechEnvelope.from_tc(0.5)
    pulse = omega_G(p, env)
    det, mag = phase_to_detuning(pulse)
    t = np.linspace(p.t_start, p.t_end, 41)
    a = simulate(p, env, pulse, t)
    b = simulate(p, env, mag, t, detuning=det)
    for name in ("rho_rr", "p_r", "p_s", "p_loss"):
        np.testing.assert_allclose(getattr(a, name), getattr(b, name), atol=1e-4)


@given(rates, rates, rates, small_rates)
def test_bounds_ordering(g, kappa, gamma, kappa_loss):
    p = SystemParams.from_mhz(g=g, kappa=kappa, gamma=gamma, kappa_loss=kappa_loss)
    em = eta_max(cooperativity(p))
    ep = eta_prime_max(p)
    assert 0 < ep <= em + 1e-15 < 1
    assert eta_prime_max(p.with_(kappa_loss=p.kappa_loss + 1.0)) < ep


@given(st.integers(1, 200).map(lambda k: 2 * k + 1))
def test_basis_bijection(n):
    b = Basis(n)
    idx = np.random.default_rng(n).integers(0, len(b), 20)
    assert all(b.index(b.label(int(i))) == i for i in idx)
    assert len({b.cavity, b.excited, b.target, b.spont_sink, b.cavity_sink}) == 5


@given(st.floats(0.01, 50), st.floats(0, 5), st.integers(1, 100).map(lambda k: 2 * k + 1),
       st.sampled_from(["F", "D", "G", "X", "opt"]))
def test_config_dump_roundtrip(g, kl, n, kind):
    cfg = defaults()
    cfg.values["params"]["g_mhz"] = g
    cfg.values["params"]["kappa_loss_mhz"] = kl
    cfg.values["geometry"]["n_modes"] = n
    cfg.values["pulse"]["kind"] = kind
    assert parse_config(cfg.dump()).values == cfg.values


@given(slices)
def test_piecewise_pulse_csv_exact(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("csv") / "p.csv"
    p = PiecewisePulse(values, -0.3, 0.9)
    write_pulse_csv(path, p)
    np.testing.assert_array_equal(read_pulse_csv(path, kind="piecewise").slices, p.slices)


@settings(max_examples=10)
@given(st.integers(0, 22))
def test_undriven_lossless_dynamics_is_unitary(index):
    p = SystemParams(n_modes=21, line_length=2.0, gamma=0.0, t_start=-0.5, t_end=0.5)
    rec = propagate(QuantumState.basis_state(p, index), p, 0.0, np.linspace(-0.5, 0.5, 5))
    assert rec.p_s[-1] == 0 and rec.p_loss[-1] == 0
    assert abs(rec.final_state.total() - 1) < 1e-6
    assert math.isclose(rec.closure()[-1], 1, abs_tol=1e-6)
    with pytest.raises(ValueError):
        Basis(index * 2 + 2)
