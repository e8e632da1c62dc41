import numpy as np
import pytest

from photon_memory_sim.core import SystemParams, mhz
from photon_memory_sim.envelopes import SechEnvelope
from photon_memory_sim.grape import (DEFAULT_BOUND, FALLBACK_AMPLITUDE, LossyModelError,
                                     evaluate_with_losses, fit_two_regimes, initial_guess,
                                     make_problem, min_coherence_time, min_coherence_time_point,
                                     optimize_storage)
from photon_memory_sim.pulses import PiecewisePulse, cooperativity, eta_max


def _fast(tc=0.1, n_modes=61, **kw):
    base = SystemParams.reference(tc=tc)
    p = base.with_(gamma=0.0, kappa_loss=0.0, n_modes=n_modes, **kw)
    return p, SechEnvelope.from_tc(tc)


def _fd_gradient(problem, u, h=1e-6):
    return np.array([(problem.objective(u + h * e) - problem.objective(u - h * e)) / (2 * h)
                     for e in np.eye(len(u))])


@pytest.mark.parametrize("model,method", [("modes", "dense"), ("modes", "krylov"), ("io", "auto")])
@pytest.mark.parametrize("detuned", [False, True])
def test_gradient_matches_finite_differences(model, method, detuned):
    kw = dict(delta_1=mhz(3.0), delta_2=mhz(0.5)) if detuned else {}
    p, env = _fast(n_modes=41, **kw)
    prob = make_problem(p, env, 16, model=model, method=method)
    assert prob.complex_controls == detuned
    u = np.random.default_rng(7).normal(size=prob.n_controls) * mhz(2)
    _, grad = prob.value_and_gradient(u)
    fd = _fd_gradient(prob, u)
    assert np.max(np.abs(grad - fd)) / np.max(np.abs(fd)) < 1e-5


def test_dense_and_matrix_free_paths_agree():
    p, env = _fast(delta_1=1.0)
    u = np.random.default_rng(2).normal(size=64) * 20
    a = make_problem(p, env, 32, method="dense").value_and_gradient(u)
    b = make_problem(p, env, 32, method="krylov").value_and_gradient(u)
    assert a[0] == pytest.approx(b[0], abs=1e-12)
    np.testing.assert_allclose(a[1], b[1], atol=1e-10)


def test_objective_matches_propagator():
    p, env = _fast()
    prob = make_problem(p, env, 32)
    slices = np.linspace(10, 80, 32) + 0j
    eta, rec = evaluate_with_losses(PiecewisePulse(slices, p.t_start, p.t_end), p, env)
    assert rec.rho_rr[-1] == pytest.approx(prob.objective(prob.controls(slices)), abs=1e-4)


def test_problem_validation():
    p, env = _fast()
    with pytest.raises(LossyModelError):
        make_problem(p.with_(gamma=1.0), env)
    with pytest.raises(LossyModelError):
        optimize_storage(p.with_(kappa_loss=1.0), env, 16)
    with pytest.raises(ValueError):
        make_problem(p, env, 8)
    with pytest.raises(ValueError):
        make_problem(p, env, 16, model="crab")
    with pytest.raises(ValueError):
        make_problem(p, env, 16, method="lanczos")


def test_zero_iterations_return_initial_guess():
    p, env = _fast()
    init = np.linspace(1, 30, 16) + 0j
    rep = optimize_storage(p, env, 16, max_iters=0, initial=init)
    np.testing.assert_array_equal(rep.pulse.slices, init)
    assert rep.iterations == 0 and len(rep.eta_history) == 1
    with pytest.raises(ValueError):
        optimize_storage(p, env, 16, initial=np.ones(5))


def test_initial_guess_is_clipped_adiabatic_pulse():
    p, env = _fast()
    guess = initial_guess(p, env, 64, bound=mhz(5))
    assert np.max(np.abs(guess)) <= mhz(5) + 1e-12
    flat = initial_guess(p.with_(g=0.0), env, 16, DEFAULT_BOUND)
    np.testing.assert_array_equal(flat, FALLBACK_AMPLITUDE)


def test_optimization_improves_monotonically_within_bounds():
    p, env = _fast(tc=0.05)
    bound = mhz(40)
    rep = optimize_storage(p, env, 32, max_iters=40, bound=bound)
    hist = np.array(rep.eta_history)
    assert np.all(np.diff(hist) >= -1e-12)
    assert hist[-1] > hist[0]
    assert np.max(np.abs(rep.pulse.slices.real)) <= bound + 1e-9
    assert rep.reason in ("max_iters", "g_tol", "converged")
    assert len(rep.grad_norms) == len(rep.eta_history)


def test_refinement_does_not_lose_efficiency():
    p, env = _fast(tc=0.05)
    coarse = optimize_storage(p, env, 16, max_iters=30)
    fine = optimize_storage(p, env, 32, max_iters=30, initial=np.repeat(coarse.pulse.slices, 2))
    assert fine.eta_history[0] == pytest.approx(coarse.eta, abs=1e-10)
    assert fine.eta >= coarse.eta - 1e-9


def test_lossless_optimum_respects_bound_with_decay_reinstated():
    p, env = _fast(tc=0.1)
    rep = optimize_storage(p, env, 32, max_iters=40)
    lossy = p.with_(gamma=mhz(3.03))
    eta, _ = evaluate_with_losses(rep.pulse, lossy, env)
    assert eta <= eta_max(cooperativity(lossy)) + 1e-3


def test_io_and_mode_models_agree_on_optimized_pulse():
    p, env = _fast(tc=0.05, n_modes=151)
    rep = optimize_storage(p, env, 32, max_iters=60, model="io")
    modes = make_problem(p, env, 32)
    assert modes.objective(modes.controls(rep.pulse.slices)) == pytest.approx(rep.eta, abs=0.01)
    assert rep.model == "io"


def test_fit_two_regimes_recovers_synthetic_law():
    kappa = 2.0
    g = kappa * np.logspace(-1, 1, 17)
    tc = np.where(g < kappa, 0.7 * kappa / g**2, 0.0)
    tc = np.maximum(tc, 0.3 / kappa)
    fit = fit_two_regimes(g, tc, kappa)
    assert fit["slope_weak"] == pytest.approx(-2.0, abs=1e-9)
    assert fit["a"] == pytest.approx(0.7)
    assert fit["a_prime"] == pytest.approx(0.3)


def test_min_coherence_time_point_brackets_threshold():
    base = SystemParams.reference()
    res = min_coherence_time_point(2 * base.kappa, 0.5, base, n_slices=32, max_iters=40,
                                   rel_tol=0.1)
    assert res.status == "ok" and res.eta_achieved >= 0.5
    with pytest.raises(ValueError):
        min_coherence_time_point(base.kappa, 1.5, base)


def test_min_coherence_time_unreachable_reported():
    base = SystemParams.reference()
    res = min_coherence_time(
        [base.kappa], 0.99, base, n_slices=16, max_iters=5, tc_range=(1e-4, 2e-4))[0]
    assert res.status != "ok" and np.isnan(res.tc_min)
