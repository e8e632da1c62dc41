import math

import numpy as np
import pytest
from scipy.integrate import simpson

from photon_memory_sim.envelopes import SechEnvelope
from photon_memory_sim.io_oracle import (EMPTIED_THRESHOLD, analytic_emitted_norm,
                                         analytic_output, decay_identity_residual, node_chain,
                                         output_coupling, reflection_coefficient, retrieval_bound,
                                         retrieval_ode, storage_ode, time_reversed_envelope)
from photon_memory_sim.propagator import simulate
from photon_memory_sim.pulses import eta_prime_max, omega_X, omega_X_retr, time_reverse
from tests import frozen


@pytest.fixture
def grid(lossy_params):
    return np.linspace(lossy_params.t_start, lossy_params.t_end, 4001)


def test_coupling_constants(lossy_params):
    p = lossy_params
    assert output_coupling(p) ** 2 / (2 * (p.gamma + p.g**2 / (p.kappa + p.kappa_loss))) == \
        pytest.approx(eta_prime_max(p))
    assert reflection_coefficient(p) == pytest.approx((2.42 - 0.33) / 2.75)
    assert retrieval_bound(p) == eta_prime_max(p)


def test_reflection_outside_validated_regime_is_flagged(ref_params, caplog):
    p = ref_params.with_(kappa_loss=2 * ref_params.kappa)
    assert reflection_coefficient(p) < 0
    assert "validated regime" in caplog.text


def test_storage_oracle_matches_mode_model(lossy_params, ref_env, grid):
    pulse = omega_X(lossy_params, ref_env)
    traj = storage_ode(lossy_params, ref_env, pulse, grid)
    full = simulate(lossy_params, ref_env, pulse)
    assert traj.eta == pytest.approx(full.rho_rr[-1], abs=1e-3)
    assert traj.eta <= eta_prime_max(lossy_params) + 1e-6
    assert traj.info["model"] == "cavity"


@pytest.mark.parametrize("delta_gammas", [0.0, 3.0])
def test_eliminated_retrieval_reaches_bound(lossy_params, ref_env, grid, delta_gammas):
    p = lossy_params.with_(delta_1=delta_gammas * lossy_params.gamma)
    traj = retrieval_ode(p, omega_X_retr(p, ref_env), grid)
    assert traj.efficiency == pytest.approx(frozen.ETA_X_RETR_BOUND, abs=1e-6)
    assert traj.emptied and abs(traj.r[-1]) ** 2 < EMPTIED_THRESHOLD
    assert np.max(np.abs(decay_identity_residual(p, traj))) < 1e-9


def test_cavity_retrieval_close_to_eliminated(lossy_params, ref_env, grid):
    retr = omega_X_retr(lossy_params, ref_env)
    cav = retrieval_ode(lossy_params, retr, grid, model="cavity")
    assert cav.efficiency == pytest.approx(eta_prime_max(lossy_params), abs=2e-3)
    assert cav.c is not None


def test_analytic_output_against_eliminated_model(lossy_params, ref_env, grid):
    for delta in (0.0, 3 * lossy_params.gamma):
        p = lossy_params.with_(delta_1=delta)
        retr = omega_X_retr(p, ref_env)
        traj = retrieval_ode(p, retr, grid)
        an = analytic_output(p, retr, grid)
        rel = math.sqrt(simpson(np.abs(traj.e_out - an) ** 2, x=grid)
                        / simpson(np.abs(traj.e_out) ** 2, x=grid))
        assert rel < 0.02
        assert analytic_emitted_norm(p, retr, grid)[-1] == pytest.approx(traj.efficiency, abs=1e-5)


def test_analytic_output_matches_target_shape(lossy_params, ref_env, grid):
    # adiabatic emission reproduces sqrt(eta') E_out up to a global phase
    p = lossy_params
    an = analytic_output(p, omega_X_retr(p, ref_env), grid)
    ratio = an[1000:3000] / ref_env(grid[1000:3000])
    np.testing.assert_allclose(np.abs(ratio), np.abs(ratio[0]), rtol=1e-9)
    # the +-6 Tc window holds slightly less than unit norm
    assert abs(ratio[0]) == pytest.approx(math.sqrt(eta_prime_max(p)), rel=1e-4)


def test_oracle_input_validation(lossy_params):
    with pytest.raises(ValueError):
        retrieval_ode(lossy_params, 1.0, np.array([0.0, -1.0]))
    with pytest.raises(ValueError):
        retrieval_ode(lossy_params, 1.0, model="bogus")


def test_time_reversed_envelope_is_involution():
    t = np.linspace(-2, 2, 801)
    v = SechEnvelope.from_tc(0.3, center=0.4)(t) * np.exp(1j * t**2)
    once = time_reversed_envelope(t, v, normalize=False)
    twice = time_reversed_envelope(t, once.values, normalize=False)
    np.testing.assert_array_equal(twice.values, v)
    assert time_reversed_envelope(t, 3 * v).norm() == pytest.approx(1.0, abs=1e-12)


def test_storage_of_time_reversed_emission(lossy_params, ref_env, grid):
    # storing the time-reversed emitted photon with the time-reversed pulse
    # recovers the retrieval efficiency
    retr = omega_X_retr(lossy_params, ref_env)
    emitted = retrieval_ode(lossy_params, retr, grid, model="cavity")
    env = time_reversed_envelope(grid, emitted.e_out)
    stored = storage_ode(lossy_params, env, time_reverse(retr), grid)
    assert stored.eta == pytest.approx(emitted.efficiency, abs=1e-3)


def test_node_chain_constant(lossy_params, ref_env):
    chain = node_chain(lossy_params, ref_env, 6)
    assert len(chain.storage_eta) == 5
    assert chain.spread < 1e-3
    assert all(abs(r - chain.retrieval_eta[0]) < 1e-6 for r in chain.retrieval_eta)
    with pytest.raises(ValueError):
        node_chain(lossy_params, ref_env, 1)
    with pytest.raises(ValueError):
        node_chain(lossy_params, ref_env, 3, backend="gpu")


def test_node_chain_full_backend(small_params, ref_env):
    chain = node_chain(small_params, ref_env, 3, backend="full", n_points=1501)
    assert chain.spread < 1e-3
    assert 0.5 < chain.storage_eta[0] <= eta_prime_max(small_params) + 1e-3

