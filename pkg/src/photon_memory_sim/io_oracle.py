"""Few-amplitude input-output model of the cavity node.

Independent of the mode-resolved propagator: the line is replaced by the
Markovian input-output relation, and integration goes through scipy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, solve_ivp

from .core import SystemParams, output_envelope
from .envelopes import SampledEnvelope
from .pulses import effective_decay, eta_prime_max, omega_X_retr, time_reverse

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
EMPTIED_THRESHOLD = 1e-4


class OracleIntegrationError(ArithmeticError):
    pass


@dataclass
class AmplitudeTrajectory:
    """Amplitudes on ``times``; ``c`` is None for the cavity-eliminated model."""

    times: np.ndarray
    c: np.ndarray | None
    e: np.ndarray
    r: np.ndarray
    e_out: np.ndarray
    emitted: np.ndarray  # int |E_out|^2 from t1
    e_weight: np.ndarray  # int |e|^2 from t1
    info: dict = field(default_factory=dict)

    @property
    def eta(self) -> float:
        """Final target-state population."""
        return float(abs(self.r[-1]) ** 2)

    @property
    def efficiency(self) -> float:
        """Total emitted norm."""
        return float(self.emitted[-1])

    @property
    def emptied(self) -> bool:
        return abs(self.r[-1]) ** 2 < EMPTIED_THRESHOLD

    def atom_norm(self) -> np.ndarray:
        return np.abs(self.e) ** 2 + np.abs(self.r) ** 2


def output_coupling(params: SystemParams) -> float:
    """``G sqrt(2 gamma C) = g sqrt(2 kappa) / (kappa + kappa_loss)``."""
    return params.g * math.sqrt(2.0 * params.kappa) / (params.kappa + params.kappa_loss)


def reflection_coefficient(params: SystemParams) -> float:
    if params.kappa_loss > params.kappa:
        log.warning("kappa_loss > kappa lies outside the validated regime of the "
                    "cavity-eliminated relation")
    return (params.kappa - params.kappa_loss) / (params.kappa + params.kappa_loss)


def _pulse_fn(pulse):
    if pulse is None:
        return lambda t: 0.0
    if callable(pulse):
        return lambda t: complex(pulse(t))
    value = complex(pulse)
    return lambda t: value


def _grid(params, t_grid, n=2001):
    if t_grid is None:
        return np.linspace(params.t_start, params.t_end, n)
    t = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    return t


def _solve(rhs, y0, times, tol):
    sol = solve_ivp(rhs, (times[0], times[-1]), np.asarray(y0, dtype=complex), method="DOP853",
                    t_eval=times, rtol=tol, atol=tol)
    if not sol.success:
        raise OracleIntegrationError(f"integration failed: {sol.message}")
    return sol.y, sol.nfev


def storage_ode(params: SystemParams, env, pulse, t_grid=None,
                tol: float = DEFAULT_TOL) -> AmplitudeTrajectory:
    """Cavity, excited and target amplitudes driven by the incoming field ``env``."""
    times = _grid(params, t_grid)
    om = _pulse_fn(pulse)
    ein = (lambda t: complex(env(t))) if env is not None else (lambda t: 0.0)
    g, kt, gamma, delta = params.g, params.kappa + params.kappa_loss, params.gamma, params.delta_1
    s2k = math.sqrt(2.0 * params.kappa)

    def rhs(t, y):
        c, e, r = y[0], y[1], y[2]
        w = om(t)
        a = ein(t)
        dc = -1j * g * e - 1j * s2k * a - kt * c
        de = (1j * delta - gamma) * e - 1j * g * c - 1j * w * r
        dr = -1j * np.conj(w) * e
        out = 1j * s2k * c - a
        return [dc, de, dr, abs(out) ** 2, abs(e) ** 2]

    y, nfev = _solve(rhs, [0, 0, 0, 0, 0], times, tol)
    c, e, r = y[0], y[1], y[2]
    ein_t = np.array([ein(t) for t in times])
    return AmplitudeTrajectory(times, c, e, r, 1j * s2k * c - ein_t, y[3].real, y[4].real,
                               {"nfev": nfev, "model": "cavity"})


def retrieval_ode(params: SystemParams, pulse, t_grid=None, tol: float = DEFAULT_TOL,
                  model: str = "eliminated", env_in=None, r0: complex = 1.0) -> AmplitudeTrajectory:
    """Emission from ``r(t1) = r0`` (default 1).

    ``model="eliminated"`` integrates the cavity-eliminated pair with
    ``E_out = G sqrt(2 gamma C) e``; ``model="cavity"`` keeps the cavity
    amplitude.  ``env_in`` optionally adds an incoming field.
    """
    times = _grid(params, t_grid)
    om = _pulse_fn(pulse)
    ein = (lambda t: complex(env_in(t))) if env_in is not None else (lambda t: 0.0)
    if model == "cavity":
        g, kt, gamma, delta = params.g, params.kappa + params.kappa_loss, params.gamma, params.delta_1
        s2k = math.sqrt(2.0 * params.kappa)

        def rhs(t, y):
            c, e, r = y[0], y[1], y[2]
            w = om(t)
            a = ein(t)
            dc = -1j * g * e - 1j * s2k * a - kt * c
            de = (1j * delta - gamma) * e - 1j * g * c - 1j * w * r
            return [dc, de, -1j * np.conj(w) * e, abs(1j * s2k * c - a) ** 2, abs(e) ** 2]

        y, nfev = _solve(rhs, [0, 0, r0, 0, 0], times, tol)
        ein_t = np.array([ein(t) for t in times])
        e_out = 1j * s2k * y[0] - ein_t
        return AmplitudeTrajectory(times, y[0], y[1], y[2], e_out, y[3].real, y[4].real,
                                   {"nfev": nfev, "model": model})
    if model != "eliminated":
        raise ValueError(f"unknown model {model!r}")
    decay = effective_decay(params)
    k_out = output_coupling(params)
    refl = reflection_coefficient(params)
    delta = params.delta_1

    def rhs(t, y):
        e, r = y[0], y[1]
        w = om(t)
        a = ein(t)
        de = (1j * delta - decay) * e - 1j * w * r - k_out * a
        out = k_out * e + refl * a
        return [de, -1j * np.conj(w) * e, abs(out) ** 2, abs(e) ** 2]

    y, nfev = _solve(rhs, [0, r0, 0, 0], times, tol)
    ein_t = np.array([ein(t) for t in times])
    e_out = k_out * y[0] + refl * ein_t
    return AmplitudeTrajectory(times, None, y[0], y[1], e_out, y[2].real, y[3].real,
                               {"nfev": nfev, "model": model})


def decay_identity_residual(params: SystemParams, traj: AmplitudeTrajectory) -> np.ndarray:
    """``|e|^2 + |r|^2 + 2 gamma (1 + C') int |e|^2 - 1`` along a retrieval run."""
    start = traj.atom_norm()[0]
    return traj.atom_norm() + 2.0 * effective_decay(params) * traj.e_weight - start


def _cumulative_pulse_energy(pulse, times):
    energy = getattr(pulse, "energy", None)
    if energy is not None:
        return energy(times) - energy(times[0])
    w = np.abs(np.asarray(pulse(times), dtype=complex)) ** 2
    return cumulative_trapezoid(w, x=times, initial=0.0)


def analytic_output(params: SystemParams, pulse, t) -> np.ndarray:
    """Adiabatic output field for retrieval from ``r(t1) = 1``.

    ``t`` must be an increasing grid starting at ``t1``; the pulse energy is
    integrated on it.
    """
    t = np.asarray(t, dtype=float)
    z = 1j * params.delta_1 - effective_decay(params)
    w = np.asarray(pulse(t), dtype=complex)
    return 1j * output_coupling(params) * w / z * np.exp(_cumulative_pulse_energy(pulse, t) / z)


def analytic_emitted_norm(params: SystemParams, pulse, t) -> np.ndarray:
    """Closed-form ``int_{t1}^{t} |E_out|^2`` of :func:`analytic_output`."""
    t = np.asarray(t, dtype=float)
    decay = effective_decay(params)
    bound = output_coupling(params) ** 2 / (2.0 * decay)
    rate = 2.0 * decay / (decay**2 + params.delta_1**2)
    return bound * (1.0 - np.exp(-rate * _cumulative_pulse_energy(pulse, t)))


def retrieval_bound(params: SystemParams) -> float:
    """``G C' / (1 + C')``; identical to the storage bound."""
    return eta_prime_max(params)


# --------------------------------------------------------------------------
# time reversal and node chains

def time_reversed_envelope(times, values, normalize: bool = True) -> SampledEnvelope:
    """``E*(t_a + t_b - t)`` on the same uniform grid, optionally unit-normalised."""
    times = np.asarray(times, dtype=float)
    env = SampledEnvelope(times, np.conj(np.asarray(values, dtype=complex)[::-1]))
    return env.normalized() if normalize else env


@dataclass
class ChainResult:
    storage_eta: list
    retrieval_eta: list
    envelopes: list

    @property
    def spread(self) -> float:
        return float(max(self.storage_eta) - min(self.storage_eta))


def _emit_full(params, pulse, times, tol, backend, r0):
    from .propagator import QuantumState, propagate

    state0 = QuantumState.basis_state(params, params.n_modes + 2)
    state0.amps *= r0
    rec = propagate(state0, params, pulse, times, tol, backend=backend)
    modes = rec.final_state.modes
    e_out = output_envelope(modes, rec.final_state.t, times, params)
    return e_out, float(np.sum(np.abs(modes) ** 2))


def node_chain(params: SystemParams, env0, n_nodes: int, backend: str = "io",
               n_points: int = 4001, tol: float = DEFAULT_TOL,
               kernel_backend: str | None = None) -> ChainResult:
    """Pass one excitation through ``n_nodes`` identical nodes.

    Node 1 starts in the target state and emits with the retrieval pulse
    shaped for ``env0``.  Each emitted photon is stored in the next node with
    the time-reversed, conjugated retrieval pulse, and that node then emits
    again with the retrieval pulse.  Returns the storage efficiency of every
    hop (``n_nodes - 1`` values) and the emitted norm of every node.
    """
    if n_nodes < 2:
        raise ValueError("a chain needs at least two nodes")
    if backend not in ("io", "full"):
        raise ValueError(f"unknown backend {backend!r}")
    times = np.linspace(params.t_start, params.t_end, n_points)
    retr = omega_X_retr(params, env0)
    store = time_reverse(retr)
    r_amp = 1.0 + 0j
    storage_eta, retrieval_eta, envelopes = [], [], []
    for hop in range(n_nodes - 1):
        if backend == "io":
            traj = retrieval_ode(params, retr, times, tol, model="cavity", r0=r_amp)
            e_out, emitted = traj.e_out, traj.efficiency
        else:
            e_out, emitted = _emit_full(params, retr, times, 1e-9, kernel_backend, r_amp)
        retrieval_eta.append(emitted / abs(r_amp) ** 2)
        env = SampledEnvelope(times, e_out).normalized()
        if backend == "io":
            r_next = storage_ode(params, env, store, times, tol).r[-1]
        else:
            from .propagator import simulate

            rec = simulate(params, env, store, times, 1e-9, backend=kernel_backend)
            r_next = rec.final_state.target
        storage_eta.append(float(abs(r_next) ** 2))
        envelopes.append(env)
        r_amp = r_next * math.sqrt(emitted)
    return ChainResult(storage_eta, retrieval_eta, envelopes)
