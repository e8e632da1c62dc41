"""Piecewise-constant optimal control of lossless storage.

Two models share one optimizer:

* ``"modes"``: the line-mode Hamiltonian.  Slice propagators are exact
  exponentials, either by dense diagonalisation or by a matrix-free power
  series of the arrowhead operator.  Slice derivatives are exact in both
  paths (divided differences of the eigenphases, or the block-triangular
  augmented generator).
* ``"io"``: cavity, excited and target amplitudes driven by the incoming
  field through the Markovian input-output relation.  The input is
  piecewise linear on a fine sub-grid, which the augmented exponential
  integrates exactly.  Much cheaper; used for coherence-time sweeps.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, expm
from scipy.optimize import minimize

from .core import SystemParams, initial_state, mhz, mode_coupling, mode_grid
from .envelopes import SechEnvelope
from .pulses import ControlPulse, PiecewisePulse, omega_X

log = logging.getLogger(__name__)

DEFAULT_SLICES = 256
MIN_SLICES = 16
DEFAULT_BOUND = mhz(100.0)
FALLBACK_AMPLITUDE = mhz(0.1)
DENSE_MAX_DIM = 120
IO_SUBSTEPS = 16


class LossyModelError(ValueError):
    """Optimisation runs on the lossless model only."""


@dataclass
class OptimizationReport:
    pulse: PiecewisePulse
    eta_history: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    reason: str = ""
    iterations: int = 0
    evaluations: int = 0
    model: str = "modes"

    @property
    def eta(self) -> float:
        return float(self.eta_history[-1])


def _check_lossless(params: SystemParams):
    if params.gamma != 0 or params.kappa_loss != 0:
        raise LossyModelError("optimize_storage needs gamma = kappa_loss = 0; "
                              "use evaluate_with_losses for lossy dynamics")


# --------------------------------------------------------------------------
# problems

class _Problem:
    """Maps real control vectors to slice amplitudes, J and dJ/du."""

    def __init__(self, params: SystemParams, n_slices: int, complex_controls: bool):
        self.params = params
        self.m = n_slices
        self.complex_controls = complex_controls
        self.t_start, self.t_end = params.t_start, params.t_end
        self.tau = (self.t_end - self.t_start) / n_slices
        self.evaluations = 0

    @property
    def n_controls(self) -> int:
        return 2 * self.m if self.complex_controls else self.m

    def slices(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.complex_controls:
            return u[: self.m] + 1j * u[self.m:]
        return u + 0j

    def controls(self, slices) -> np.ndarray:
        slices = np.asarray(slices, dtype=complex)
        if self.complex_controls:
            return np.concatenate([slices.real, slices.imag])
        return slices.real.copy()

    def _pack(self, d_re, d_im):
        return np.concatenate([d_re, d_im]) if self.complex_controls else d_re

    def objective(self, u) -> float:
        return self.value_and_gradient(u, need_gradient=False)[0]

    def value_and_gradient(self, u, need_gradient=True):
        raise NotImplementedError


class ModeProblem(_Problem):
    """Lossless mode-resolved storage; ``J = |<r|U(t2, t1)|psi0>|^2``."""

    def __init__(self, params, env, n_slices, complex_controls, method="auto"):
        super().__init__(params, n_slices, complex_controls)
        self.psi0 = initial_state(env, params)
        self.n = params.n_modes
        self.dim = params.dim
        self.omegas = mode_grid(params)
        self.lam = mode_coupling(params)
        if method == "auto":
            method = "dense" if self.dim <= DENSE_MAX_DIM else "krylov"
        if method not in ("dense", "krylov"):
            raise ValueError(f"unknown method {method!r}")
        self.method = method
        H0 = np.zeros((self.dim, self.dim))
        n = self.n
        H0[np.arange(n), np.arange(n)] = self.omegas
        H0[:n, n] = H0[n, :n] = self.lam
        H0[n, n + 1] = H0[n + 1, n] = params.g
        H0[n + 1, n + 1] = -params.delta_1
        H0[n + 2, n + 2] = params.delta_2
        self.H0 = H0
        self.e, self.r = n + 1, n + 2
        # crude 2-norm bound of the static part, for the series step count
        self.h0_norm = (np.max(np.abs(self.omegas)) + math.sqrt(n * self.lam**2 + params.g**2)
                        + abs(params.delta_1) + abs(params.delta_2))

    # ---- dense path
    def _slice_eig(self, w):
        if w.imag == 0:
            H = self.H0.copy()
            w = w.real
        else:
            H = self.H0.astype(complex)
        H[self.e, self.r] = w
        H[self.r, self.e] = np.conj(w)
        mu, V = eigh(H)
        return mu, V

    def _dense(self, slices, need_gradient):
        tau = self.tau
        psi = self.psi0.astype(complex)
        history = [psi]
        eigs = []
        for w in slices:
            mu, V = self._slice_eig(w)
            eigs.append((mu, V))
            psi = V @ (np.exp(-1j * mu * tau) * (V.conj().T @ psi))
            history.append(psi)
        amp = psi[self.r]
        if not need_gradient:
            return amp, None, None
        d_re = np.empty(self.m)
        d_im = np.empty(self.m)
        chi = np.zeros(self.dim, dtype=complex)
        chi[self.r] = 1.0
        for k in range(self.m - 1, -1, -1):
            mu, V = eigs[k]
            Vh = V.conj().T
            alpha = Vh @ chi
            beta = Vh @ history[k]
            half = 0.5 * (mu[:, None] + mu[None, :])
            G = -1j * tau * np.exp(-1j * half * tau) * np.sinc((mu[:, None] - mu[None, :]) * tau / (2 * np.pi))
            xe = np.conj(alpha) * np.conj(V[self.e])
            xr = np.conj(alpha) * np.conj(V[self.r])
            ye = V[self.e] * beta
            yr = V[self.r] * beta
            a = xe @ G @ yr
            b = xr @ G @ ye
            d_re[k] = 2.0 * (np.conj(amp) * (a + b)).real
            d_im[k] = 2.0 * (np.conj(amp) * (1j * (a - b))).real
            chi = V @ (np.exp(1j * mu * tau) * alpha)
        return amp, d_re, d_im

    # ---- matrix-free path
    def _apply(self, v, w):
        """``H v`` for a stack of vectors ``v[..., dim]``."""
        n = self.n
        out = np.empty_like(v)
        c = v[..., n]
        e = v[..., n + 1]
        r = v[..., n + 2]
        out[..., :n] = self.omegas * v[..., :n] + self.lam * c[..., None]
        out[..., n] = self.lam * v[..., :n].sum(axis=-1) + self.params.g * e
        out[..., n + 1] = -self.params.delta_1 * e + self.params.g * c + w * r
        out[..., n + 2] = self.params.delta_2 * r + np.conj(w) * e
        return out

    def _substeps(self, w):
        return max(1, int(math.ceil((self.h0_norm + abs(w)) * self.tau / 0.5)))

    def _series(self, gen, v, scale):
        """``exp(scale * G) v`` by its power series, ``||scale G|| <= ~0.5``."""
        total = v.copy()
        term = v
        for k in range(1, 40):
            term = gen(term) * (scale / k)
            total += term
            if np.max(np.abs(term)) <= 1e-17 * max(1.0, np.max(np.abs(total))):
                break
        return total

    def _krylov(self, slices, need_gradient):
        n_dir = 2 if self.complex_controls else 1
        e, r = self.e, self.r
        psi = self.psi0.astype(complex)
        derivs = []
        for w in slices:
            s = self._substeps(w)
            h = self.tau / s
            if not need_gradient:
                for _ in range(s):
                    psi = self._series(lambda v: self._apply(v, w), psi, -1j * h)
                continue
            # augmented generator [[H, dH], [0, H]] acting on (d, psi)
            stack = np.zeros((n_dir + 1, self.dim), dtype=complex)
            stack[-1] = psi

            def gen(v, w=w):
                out = self._apply(v, w)
                p = v[-1]
                out[0, e] += p[r]
                out[0, r] += p[e]
                if n_dir == 2:
                    out[1, e] += 1j * p[r]
                    out[1, r] -= 1j * p[e]
                return out

            for _ in range(s):
                stack = self._series(gen, stack, -1j * h)
            psi = stack[-1]
            derivs.append(stack[:-1].copy())
        amp = psi[r]
        if not need_gradient:
            return amp, None, None
        d_re = np.empty(self.m)
        d_im = np.zeros(self.m)
        chi = np.zeros(self.dim, dtype=complex)
        chi[r] = 1.0
        for k in range(self.m - 1, -1, -1):
            w = slices[k]
            proj = derivs[k] @ np.conj(chi)
            d_re[k] = 2.0 * (np.conj(amp) * proj[0]).real
            if n_dir == 2:
                d_im[k] = 2.0 * (np.conj(amp) * proj[1]).real
            s = self._substeps(w)
            for _ in range(s):
                chi = self._series(lambda v, w=w: self._apply(v, w), chi, 1j * self.tau / s)
        return amp, d_re, d_im

    def value_and_gradient(self, u, need_gradient=True):
        self.evaluations += 1
        slices = self.slices(u)
        run = self._dense if self.method == "dense" else self._krylov
        amp, d_re, d_im = run(slices, need_gradient)
        J = float(abs(amp) ** 2)
        if not need_gradient:
            return J, None
        return J, self._pack(d_re, d_im)


class IOProblem(_Problem):
    """Lossless storage in the cavity input-output model."""

    def __init__(self, params, env, n_slices, complex_controls, substeps=IO_SUBSTEPS):
        super().__init__(params, n_slices, complex_controls)
        self.s = substeps
        self.h = self.tau / substeps
        grid = self.t_start + self.h * np.arange(n_slices * substeps + 1)
        self.inputs = np.asarray(env(grid), dtype=complex).reshape(-1)
        p = params
        self.base = np.array([
            [-p.kappa, -1j * p.g, 0],
            [-1j * p.g, 1j * p.delta_1, 0],
            [0, 0, -1j * p.delta_2],
        ], dtype=complex)
        self.b = np.array([-1j * math.sqrt(2 * p.kappa), 0, 0], dtype=complex)

    def _A(self, w):
        A = self.base.copy()
        A[1, 2] = -1j * w
        A[2, 1] = -1j * np.conj(w)
        return A

    def _block(self, w, n_dir):
        """Exponential of the augmented generator over one sub-step."""
        A = self._A(w)
        d = 3 * (n_dir + 1)
        M = np.zeros((d + 2, d + 2), dtype=complex)
        for j in range(n_dir + 1):
            M[3 * j:3 * j + 3, 3 * j:3 * j + 3] = A
        dA = [np.array([[0, 0, 0], [0, 0, -1j], [0, -1j, 0]]),
              np.array([[0, 0, 0], [0, 0, 1], [0, -1, 0]])][:n_dir]
        for j, D in enumerate(dA):
            M[3 * (j + 1):3 * (j + 2), 0:3] = D
        M[0:3, d] = self.b
        M[d, d + 1] = 1.0
        return expm(M * self.h), d

    def value_and_gradient(self, u, need_gradient=True):
        self.evaluations += 1
        slices = self.slices(u)
        n_dir = (2 if self.complex_controls else 1) if need_gradient else 0
        x = np.zeros(3, dtype=complex)
        homog = []
        derivs = []
        E = self.inputs
        for k, w in enumerate(slices):
            B, d = self._block(w, n_dir)
            Phi = B[:d, :d]
            Bu0 = B[:d, d]
            Bu1 = B[:d, d + 1]
            z = np.zeros(d, dtype=complex)
            z[:3] = x
            j0 = k * self.s
            for j in range(self.s):
                e0 = E[j0 + j]
                slope = (E[j0 + j + 1] - e0) / self.h
                z = Phi @ z + Bu0 * e0 + Bu1 * slope
            x = z[:3]
            if need_gradient:
                homog.append(np.linalg.matrix_power(Phi[:3, :3], self.s))
                derivs.append(z[3:].reshape(n_dir, 3))
        amp = x[2]
        J = float(abs(amp) ** 2)
        if not need_gradient:
            return J, None
        d_re = np.empty(self.m)
        d_im = np.zeros(self.m)
        lam = np.array([0, 0, 1], dtype=complex)
        for k in range(self.m - 1, -1, -1):
            proj = derivs[k] @ lam
            d_re[k] = 2.0 * (np.conj(amp) * proj[0]).real
            if self.complex_controls:
                d_im[k] = 2.0 * (np.conj(amp) * proj[1]).real
            lam = lam @ homog[k]
        return J, self._pack(d_re, d_im)


def make_problem(params: SystemParams, env, n_slices: int = DEFAULT_SLICES,
                 model: str = "modes", complex_controls: bool | None = None,
                 method: str = "auto") -> _Problem:
    _check_lossless(params)
    if n_slices < MIN_SLICES:
        raise ValueError(f"need at least {MIN_SLICES} slices, got {n_slices}")
    if complex_controls is None:
        complex_controls = params.delta_1 != 0 or params.delta_2 != 0
    if model == "modes":
        return ModeProblem(params, env, n_slices, complex_controls, method)
    if model == "io":
        return IOProblem(params, env, n_slices, complex_controls)
    raise ValueError(f"unknown model {model!r}")


# --------------------------------------------------------------------------
# optimisation

def initial_guess(params: SystemParams, env, n_slices: int, bound: float) -> np.ndarray:
    """Adiabatic pulse at slice midpoints, clipped; flat fallback if undefined."""
    t = params.t_start + (np.arange(n_slices) + 0.5) * (params.window / n_slices)
    try:
        values = np.asarray(omega_X(params, env)(t), dtype=complex)
        if not np.all(np.isfinite(values)):
            raise FloatingPointError("non-finite adiabatic pulse")
    except (ValueError, ArithmeticError) as exc:
        log.info("adiabatic guess unavailable (%s); using flat pulse", exc)
        return np.full(n_slices, FALLBACK_AMPLITUDE + 0j)
    mag = np.abs(values)
    over = mag > bound
    values[over] *= bound / mag[over]
    return values


def optimize_storage(params: SystemParams, env, n_slices: int = DEFAULT_SLICES,
                     max_iters: int = 200, g_tol: float = 1e-7, bound: float = DEFAULT_BOUND,
                     model: str = "modes", initial=None, complex_controls: bool | None = None,
                     method: str = "auto") -> OptimizationReport:
    """Maximise the lossless storage efficiency over piecewise-constant slices.

    Uses L-BFGS-B with box bounds ``|Re|, |Im| <= bound``; its line search
    enforces sufficient decrease, so the recorded efficiency never drops.
    """
    problem = make_problem(params, env, n_slices, model, complex_controls, method)
    slices0 = initial_guess(params, env, n_slices, bound) if initial is None else \
        np.asarray(initial, dtype=complex)
    if len(slices0) != n_slices:
        raise ValueError("initial guess has the wrong number of slices")
    u0 = np.clip(problem.controls(slices0), -bound, bound)
    J0, grad0 = problem.value_and_gradient(u0)
    report = OptimizationReport(
        pulse=PiecewisePulse(problem.slices(u0), params.t_start, params.t_end, name="opt"),
        eta_history=[J0], grad_norms=[float(np.linalg.norm(grad0))], model=model,
    )
    if max_iters <= 0:
        report.reason = "max_iters"
        report.evaluations = problem.evaluations
        return report

    seen = {}

    def fun(u):
        J, grad = problem.value_and_gradient(u)
        if len(seen) > 64:
            seen.clear()
        seen[u.tobytes()] = (J, grad)
        return -J, -grad

    def callback(xk):
        hit = seen.get(np.asarray(xk, dtype=float).tobytes())
        J, grad = hit if hit is not None else problem.value_and_gradient(xk)
        report.eta_history.append(J)
        report.grad_norms.append(float(np.linalg.norm(grad)))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(fun, u0, jac=True, method="L-BFGS-B",
                       bounds=[(-bound, bound)] * problem.n_controls, callback=callback,
                       options={"maxiter": max_iters, "gtol": g_tol, "ftol": 1e-12,
                                "maxcor": 20})
    final = problem.objective(res.x)
    if not report.eta_history or abs(report.eta_history[-1] - final) > 1e-12:
        report.eta_history.append(final)
        report.grad_norms.append(report.grad_norms[-1])
    report.pulse = PiecewisePulse(problem.slices(res.x), params.t_start, params.t_end, name="opt")
    report.iterations = int(res.nit)
    report.evaluations = problem.evaluations
    msg = str(res.message).lower()
    if res.nit >= max_iters or "max" in msg and "iter" in msg:
        report.reason = "max_iters"
    elif "pgtol" in msg or "projected gradient" in msg:
        report.reason = "g_tol"
    elif "rel_reduction" in msg or "factr" in msg:
        report.reason = "converged"
    else:
        report.reason = str(res.message)
    return report


def evaluate_with_losses(pulse: ControlPulse, params: SystemParams, env, t_grid=None,
                         tol: float = 1e-9):
    """Full mode-resolved propagation of ``pulse`` with the losses in ``params``."""
    from .propagator import simulate

    record = simulate(params, env, pulse, t_grid, tol)
    return record.final_eta, record


# --------------------------------------------------------------------------
# minimum coherence time

@dataclass
class TcMinResult:
    g: float
    tc_min: float
    eta_achieved: float
    iters: int
    status: str = "ok"


def sweep_geometry(params: SystemParams, tc: float, window: float):
    """Line length and window for a sweep point; the line holds the whole photon."""
    length = max(2 * window * tc, 15.0 / params.kappa)
    return params.with_(line_length=length, t_start=-window * tc, t_end=window * tc)


def _best_eta(params, tc, eta_target, n_slices, window, model, max_iters, initial):
    p = sweep_geometry(params, tc, window)
    env = SechEnvelope.from_tc(tc, window=window)
    rep = optimize_storage(p, env, n_slices, max_iters=max_iters, model=model, initial=initial)
    return rep


def min_coherence_time_point(g: float, eta_target: float, params_base: SystemParams,
                             n_slices: int = 64, window: float = 6.0, model: str = "io",
                             max_iters: int = 150, rel_tol: float = 0.02,
                             tc_range: tuple | None = None) -> TcMinResult:
    """Smallest coherence time reaching ``eta_target`` at coupling ``g``.

    Geometric scan for a bracket, then bisection in ``log Tc`` with warm
    starts (slice amplitudes rescaled by the time-scale ratio).
    """
    if not 0 < eta_target < 1:
        raise ValueError("eta_target must lie in (0, 1)")
    params = params_base.with_(g=g, gamma=0.0, kappa_loss=0.0)
    kappa = params.kappa
    scale = max(kappa / g**2, 1.0 / kappa) if g > 0 else 1.0 / kappa
    lo_lim, hi_lim = tc_range if tc_range else (1e-3 * scale, 1e3 * scale)
    iters = 0
    cache = {}

    def evaluate(tc, initial=None):
        nonlocal iters
        rep = _best_eta(params, tc, eta_target, n_slices, window, model, max_iters, initial)
        iters += rep.iterations
        cache[tc] = rep
        return rep.eta

    tc = min(max(scale, lo_lim), hi_lim)
    ok = evaluate(tc) >= eta_target
    step = 2.0
    if ok:
        hi = tc
        lo = tc / step
        while evaluate(lo, _rescale(cache[hi], hi, lo)) >= eta_target:
            hi = lo
            lo = lo / step
            if lo < lo_lim:
                return TcMinResult(g, float("nan"), cache[hi].eta, iters, "below scan range")
    else:
        lo = tc
        hi = tc * step
        while evaluate(hi, _rescale(cache[lo], lo, hi)) < eta_target:
            lo = hi
            hi = hi * step
            if hi > hi_lim:
                return TcMinResult(g, float("nan"), cache[lo].eta, iters, "target unreachable")
    while hi / lo > 1 + rel_tol:
        mid = math.sqrt(lo * hi)
        if evaluate(mid, _rescale(cache[hi], hi, mid)) >= eta_target:
            hi = mid
        else:
            lo = mid
    return TcMinResult(g, hi, cache[hi].eta, iters)


def _rescale(report: OptimizationReport, tc_from: float, tc_to: float) -> np.ndarray:
    return report.pulse.slices * (tc_from / tc_to)


def min_coherence_time(g_values, eta_target: float, params_base: SystemParams,
                       jobs: int = 1, **kwargs) -> list:
    """:func:`min_coherence_time_point` for every ``g``; points run in parallel."""
    g_values = list(g_values)
    if jobs <= 1:
        return [min_coherence_time_point(g, eta_target, params_base, **kwargs) for g in g_values]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(min_coherence_time_point, g, eta_target, params_base, **kwargs)
                   for g in g_values]
        return [f.result() for f in futures]


def fit_two_regimes(g_values, tc_values, kappa: float):
    """Least-squares coefficients of ``a kappa / g^2`` (g <= kappa/3) and ``a' / kappa`` (g >= 3 kappa).

    Also returns the log-log slope of the weak-coupling branch.
    """
    g = np.asarray(g_values, dtype=float)
    tc = np.asarray(tc_values, dtype=float)
    ok = np.isfinite(tc)
    weak = ok & (g <= kappa / 3)
    strong = ok & (g >= 3 * kappa)
    a = float(np.exp(np.mean(np.log(tc[weak] * g[weak] ** 2 / kappa)))) if weak.any() else float("nan")
    a2 = float(np.exp(np.mean(np.log(tc[strong] * kappa)))) if strong.any() else float("nan")
    slope = float(np.polyfit(np.log(g[weak]), np.log(tc[weak]), 1)[0]) if weak.sum() >= 2 else float("nan")
    return {"a": a, "a_prime": a2, "slope_weak": slope}
