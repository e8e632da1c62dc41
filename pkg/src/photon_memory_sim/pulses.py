"""Control pulses, closed-form efficiency bounds and pulse CSV I/O."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .core import SystemParams

log = logging.getLogger(__name__)

#: floor applied to cumulative photon norms inside logs and square roots
NORM_FLOOR = 1e-12
DEFAULT_RHO0 = 1e-4
DEFAULT_CHECK_SAMPLES = 20001


class PulseDivergenceError(ValueError):
    """An analytic pulse has a non-positive radicand inside its window."""

    def __init__(self, name: str, t: float, hint: str):
        super().__init__(f"{name}: radicand <= 0 first at t = {t:.6g} us ({hint})")
        self.t = t


class ControlPulse:
    """Complex Rabi frequency ``Omega(t)`` [rad/us] on ``[t_start, t_end]``.

    ``func`` must accept arrays.  When ``cap`` is set, magnitudes above it
    are clipped and every clipped evaluation is logged and appended to
    ``clip_events`` as ``(t, |Omega|)``.
    """

    def __init__(self, func, t_start: float, t_end: float, cap: float | None = None,
                 name: str = "pulse", breakpoints=(), phase_rate=None, energy=None):
        if not t_start < t_end:
            raise ValueError("empty pulse domain")
        self.func = func
        self.t_start = float(t_start)
        self.t_end = float(t_end)
        self.cap = cap
        self.name = name
        self.breakpoints = tuple(sorted(float(b) for b in breakpoints if t_start < b < t_end))
        self.phase_rate = phase_rate
        # optional closed form of int_{t_start}^{t} |Omega|^2
        self.energy = energy
        self.clip_events: list[tuple[float, float]] = []

    def __repr__(self):
        return f"ControlPulse({self.name!r}, [{self.t_start:.4g}, {self.t_end:.4g}])"

    def __call__(self, t):
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        values = np.asarray(self.func(t), dtype=complex) * np.ones(t.shape)
        if not np.all(np.isfinite(values)):
            bad = t[~np.isfinite(values)][0]
            raise FloatingPointError(f"{self.name} is not finite at t = {bad:.6g}")
        if self.cap is not None:
            mag = np.abs(values)
            over = mag > self.cap
            if np.any(over):
                for tt, mm in zip(t[over], mag[over]):
                    self.clip_events.append((float(tt), float(mm)))
                log.warning("%s clipped to %.6g rad/us at %d sample(s), first t = %.6g",
                            self.name, self.cap, int(over.sum()), t[over][0])
                values[over] *= self.cap / mag[over]
        return values[0] if scalar else values

    def sample(self, n: int = 2001):
        t = np.linspace(self.t_start, self.t_end, n)
        return t, self(t)

    def with_cap(self, cap: float | None) -> "ControlPulse":
        return ControlPulse(self.func, self.t_start, self.t_end, cap, self.name,
                            self.breakpoints, self.phase_rate)

    def shifted(self, dt: float) -> "ControlPulse":
        func = self.func
        rate = self.phase_rate
        return ControlPulse(lambda t: func(np.asarray(t) - dt), self.t_start + dt,
                            self.t_end + dt, self.cap, self.name,
                            [b + dt for b in self.breakpoints],
                            None if rate is None else (lambda t: rate(np.asarray(t) - dt)))

    @classmethod
    def constant(cls, value: complex, t_start: float, t_end: float, name="constant"):
        return cls(lambda t: np.full(np.shape(t), value, dtype=complex), t_start, t_end, name=name)

    @classmethod
    def from_samples(cls, times, values, name="sampled", cap=None) -> "ControlPulse":
        """Cubic-spline interpolation of complex samples on an increasing grid."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=complex)
        spline = CubicSpline(times, values)
        t0, t1 = times[0], times[-1]
        pulse = cls(lambda t: spline(np.clip(t, t0, t1)), t0, t1, cap, name)
        pulse.samples = (times, values)
        return pulse


class PiecewisePulse(ControlPulse):
    """Piecewise-constant pulse with ``M`` equal slices on ``[t_start, t_end]``."""

    def __init__(self, slices, t_start: float, t_end: float, name="piecewise", cap=None):
        self.slices = np.asarray(slices, dtype=complex).copy()
        m = len(self.slices)
        if m < 1:
            raise ValueError("need at least one slice")
        edges = np.linspace(t_start, t_end, m + 1)
        self.edges = edges
        self.dt = (t_end - t_start) / m
        values = self.slices

        def func(t):
            idx = np.clip(np.floor((np.asarray(t) - t_start) / self.dt).astype(int), 0, m - 1)
            return values[idx]

        super().__init__(func, t_start, t_end, cap, name, edges[1:-1])

    def __len__(self):
        return len(self.slices)


# --------------------------------------------------------------------------
# efficiency bounds

def cooperativity(params: SystemParams) -> float:
    """``C = g^2 / (kappa gamma)``."""
    if params.kappa <= 0 or params.gamma <= 0:
        raise ValueError("cooperativity needs kappa > 0 and gamma > 0")
    return params.g**2 / (params.kappa * params.gamma)


def modified_cooperativity(params: SystemParams) -> float:
    """``C' = g^2 / (gamma (kappa + kappa_loss))``."""
    if params.kappa + params.kappa_loss <= 0 or params.gamma <= 0:
        raise ValueError("modified cooperativity needs kappa + kappa_loss > 0 and gamma > 0")
    return params.g**2 / (params.gamma * (params.kappa + params.kappa_loss))


def eta_max(C: float) -> float:
    if C < 0:
        raise ValueError("cooperativity must be >= 0")
    return C / (1.0 + C)


def escape_fraction(params: SystemParams) -> float:
    """``G = kappa / (kappa + kappa_loss)``."""
    return params.kappa / (params.kappa + params.kappa_loss)


def eta_prime_max(params: SystemParams) -> float:
    """Storage bound with parasitic losses, ``G C' / (1 + C')``.

    Written as ``G g^2 / (gamma (kappa + kappa_loss) + g^2)`` so that the
    lossless limit ``gamma = 0`` gives ``G``.
    """
    kt = params.kappa + params.kappa_loss
    denom = params.gamma * kt + params.g**2
    if denom == 0:
        return 0.0
    return escape_fraction(params) * params.g**2 / denom


@dataclass(frozen=True)
class EfficiencyBounds:
    C: float
    C_prime: float
    eta_max: float
    eta_prime_max: float
    G: float


def efficiency_bounds(params: SystemParams) -> EfficiencyBounds:
    C = cooperativity(params)
    Cp = modified_cooperativity(params)
    return EfficiencyBounds(C, Cp, eta_max(C), eta_prime_max(params), escape_fraction(params))


def effective_decay(params: SystemParams, with_losses: bool = True) -> float:
    """``gamma (1 + C')`` (or ``gamma (1 + C)``) = ``gamma + g^2 / kappa_tot``."""
    kt = params.kappa + (params.kappa_loss if with_losses else 0.0)
    if kt <= 0:
        raise ValueError("kappa + kappa_loss must be positive")
    return params.gamma + params.g**2 / kt


# --------------------------------------------------------------------------
# analytic pulses

def _window(params: SystemParams, env):
    return max(params.t_start, env.t_start), min(params.t_end, env.t_end)


def _check_radicand(name, func, t_start, t_end, hint, n=DEFAULT_CHECK_SAMPLES):
    t = np.linspace(t_start, t_end, n)
    bad = np.nonzero(func(t) <= 0)[0]
    if bad.size:
        raise PulseDivergenceError(name, float(t[bad[0]]), hint)


def _cumulative(env, t_start):
    """``int_{t_start}^{t} |E|^2`` as a function of ``t``."""
    offset = float(env.cumulative_norm(t_start))
    return lambda t: env.cumulative_norm(t) - offset


def default_c1(params: SystemParams, env, rho0: float = DEFAULT_RHO0) -> float:
    """``c1 = 2 kappa rho0 - |F(t1)|^2 / g^2`` with ``F = dE/dt - kappa E``.

    This is the choice under which the F pulse coincides with the
    D pulse when ``dF/dt + gamma F = 0``.
    """
    t1 = max(params.t_start, env.t_start)
    F1 = env.derivative(t1) - params.kappa * env(t1)
    c1 = 2.0 * params.kappa * rho0
    if params.g > 0:
        c1 -= abs(F1) ** 2 / params.g**2
    return float(c1)


def omega_F(params: SystemParams, env, c1: float | None = None, rho0: float = DEFAULT_RHO0,
            check: bool = True) -> ControlPulse:
    """Impedance-matching pulse in the adiabatic, resonant limit."""
    if params.delta_1 != 0:
        warnings.warn("omega_F assumes one-photon resonance (delta_1 = 0)", RuntimeWarning,
                      stacklevel=2)
    if c1 is None:
        c1 = default_c1(params, env, rho0)
    if not c1 > 0:
        raise ValueError(f"c1 must be positive, got {c1:.6g}")
    t1, t2 = _window(params, env)
    cum = _cumulative(env, t1)
    kappa, g = params.kappa, params.g

    def radicand(t):
        return c1 + 2.0 * kappa * cum(t) - np.abs(env(t)) ** 2

    if check:
        _check_radicand("omega_F", radicand, t1, t2, "c1 too small")

    def func(t):
        return g * env(t) / np.sqrt(radicand(t) + 0j)

    return ControlPulse(func, t1, t2, name="F")


def omega_D(params: SystemParams, env, rho0: float = DEFAULT_RHO0,
            check: bool = True) -> ControlPulse:
    """Impedance-matching pulse without adiabatic approximation.

    ``Omega = [g E + (F' + gamma F) / g] / sqrt(2 kappa rho0 + 2 kappa int|E|^2
    - |E|^2 - D / g^2)`` with ``F = E' - kappa E`` and
    ``D = 2 gamma int|F|^2 + |F|^2``.
    """
    if not rho0 > 0:
        raise ValueError("rho0 must be positive")
    if params.g <= 0:
        raise ValueError("omega_D needs g > 0")
    t1, t2 = _window(params, env)
    cum = _cumulative(env, t1)
    kappa, gamma, g = params.kappa, params.gamma, params.g
    E1sq = abs(env(t1)) ** 2
    dnorm0 = float(env.cumulative_derivative_norm(t1))

    def parts(t):
        E = env(t)
        dE = env.derivative(t)
        F = dE - kappa * E
        dF = env.second_derivative(t) - kappa * dE
        # int |F|^2 = int |E'|^2 - kappa (|E|^2 - |E(t1)|^2) + kappa^2 int |E|^2
        intF = (env.cumulative_derivative_norm(t) - dnorm0
                - kappa * (np.abs(E) ** 2 - E1sq) + kappa**2 * cum(t))
        D = 2.0 * gamma * intF + np.abs(F) ** 2
        rad = 2.0 * kappa * rho0 + 2.0 * kappa * cum(t) - np.abs(E) ** 2 - D / g**2
        return g * E + (dF + gamma * F) / g, rad

    if check:
        _check_radicand("omega_D", lambda t: parts(t)[1], t1, t2,
                        "rho0 too small or dynamics too non-adiabatic")

    def func(t):
        num, rad = parts(t)
        return num / np.sqrt(rad + 0j)

    return ControlPulse(func, t1, t2, name="D")


def _phase_matched_pulse(name, decay, delta, env, t1, t2, floor=NORM_FLOOR):
    # phase sign follows the -Delta |e><e| term of our Hamiltonian
    if not decay > 0:
        raise ValueError(f"{name}: effective decay gamma(1+C) must be positive")
    cum = _cumulative(env, t1)
    pref = (decay + 1j * delta) / math.sqrt(2.0 * decay)
    phase_coeff = delta / (2.0 * decay)

    def func(t):
        n = np.maximum(cum(t), floor)
        return pref * env(t) / np.sqrt(n) * np.exp(1j * phase_coeff * np.log(n))

    def phase_rate(t):
        n = np.maximum(cum(t), floor)
        return phase_coeff * np.abs(env(t)) ** 2 / n

    return ControlPulse(func, t1, t2, name=name, phase_rate=phase_rate)


def omega_G(params: SystemParams, env, Delta: float | None = None) -> ControlPulse:
    """Efficiency-maximising adiabatic pulse for an ideal resonator."""
    Delta = params.delta_1 if Delta is None else Delta
    t1, t2 = _window(params, env)
    return _phase_matched_pulse("G", effective_decay(params, with_losses=False), Delta, env, t1, t2)


def omega_X(params: SystemParams, env, Delta: float | None = None) -> ControlPulse:
    """``omega_G`` with ``kappa -> kappa + kappa_loss``; compensates parasitic losses."""
    Delta = params.delta_1 if Delta is None else Delta
    t1, t2 = _window(params, env)
    return _phase_matched_pulse("X", effective_decay(params, with_losses=True), Delta, env, t1, t2)


def omega_X_retr(params: SystemParams, env_out, Delta: float | None = None,
                 eta: float | None = None, floor: float = NORM_FLOOR) -> ControlPulse:
    """Retrieval pulse emitting ``env_out`` (norm ``eta``) from the target state.

    The domain is the support of ``env_out``.
    """
    Delta = params.delta_1 if Delta is None else Delta
    eta = eta_prime_max(params) if eta is None else eta
    decay = effective_decay(params)
    t1, t2 = env_out.t_start, env_out.t_end
    total = float(env_out.cumulative_norm(t2))
    pref = (decay - 1j * Delta) / math.sqrt(2.0 * decay)
    phase_coeff = -Delta / (2.0 * decay)

    def remaining(t):
        return np.maximum(total - env_out.cumulative_norm(t), floor)

    def func(t):
        rem = remaining(t)
        return pref * env_out(t) / np.sqrt(rem) * np.exp(1j * phase_coeff * np.log(rem / eta))

    def energy(t):
        return abs(pref) ** 2 * np.log(max(total, floor) / remaining(t))

    return ControlPulse(func, t1, t2, name="X_retr", energy=energy)


def time_reverse(pulse: ControlPulse) -> ControlPulse:
    """``Omega*(t_start + t_end - t)`` on the same domain."""
    a, b = pulse.t_start, pulse.t_end
    if isinstance(pulse, PiecewisePulse):
        return PiecewisePulse(np.conj(pulse.slices[::-1]), a, b, f"{pulse.name}_rev", pulse.cap)
    func = pulse.func
    rate = pulse.phase_rate
    return ControlPulse(
        lambda t: np.conj(func(a + b - np.asarray(t))), a, b, pulse.cap,
        f"{pulse.name}_rev", [a + b - x for x in pulse.breakpoints],
        None if rate is None else (lambda t: rate(a + b - np.asarray(t))),
    )


def phase_rate(pulse: ControlPulse, n: int = DEFAULT_CHECK_SAMPLES):
    """``d chi/dt`` of ``Omega = |Omega| exp(i chi)`` as a callable.

    Uses the analytic rate when the pulse carries one, otherwise finite
    differences of the unwrapped sampled phase (with a warning).
    """
    if pulse.phase_rate is not None:
        return pulse.phase_rate
    t = np.linspace(pulse.t_start, pulse.t_end, n)
    chi = np.unwrap(np.angle(pulse.func(t)))
    if np.ptp(chi) == 0:
        return lambda tt: np.zeros(np.shape(tt))
    warnings.warn(f"{pulse.name}: phase rate taken by finite differences of sampled phase",
                  RuntimeWarning, stacklevel=3)
    h = t[1] - t[0]
    rate = np.gradient(chi, h, edge_order=2)
    rate[2:-2] = (chi[:-4] - 8 * chi[1:-3] + 8 * chi[3:-1] - chi[4:]) / (12 * h)
    spline = CubicSpline(t, rate)
    return lambda tt: spline(np.clip(tt, t[0], t[-1]))


def phase_to_detuning(pulse: ControlPulse, n: int = DEFAULT_CHECK_SAMPLES):
    """Trade the phase of ``pulse`` for a time-dependent two-photon detuning.

    Returns ``(delta, magnitude)``.  Propagating with the real pulse
    ``|Omega|`` and the extra detuning ``delta(t) = -d chi/dt`` on
    ``|r><r|`` is the frame change ``r -> exp(i chi) r`` of the complex-pulse
    dynamics, so all populations agree.
    """
    func = pulse.func
    magnitude = ControlPulse(lambda t: np.abs(func(t)) + 0j, pulse.t_start, pulse.t_end,
                             pulse.cap, f"|{pulse.name}|", pulse.breakpoints)
    rate = phase_rate(pulse, n)
    return (lambda t: -np.asarray(rate(t), dtype=float)), magnitude


# --------------------------------------------------------------------------
# CSV

def write_pulse_csv(path, pulse: ControlPulse, times=None, n: int = 2001) -> None:
    """Write ``t,omega_re,omega_im`` at full double precision.

    Piecewise pulses default to their slice midpoints so that
    ``read_pulse_csv(..., kind="piecewise")`` restores them exactly.
    """
    if times is None:
        if isinstance(pulse, PiecewisePulse):
            times = pulse.edges[:-1] + 0.5 * pulse.dt
        else:
            times = np.linspace(pulse.t_start, pulse.t_end, n)
    times = np.asarray(times, dtype=float)
    values = np.atleast_1d(pulse(times))
    with open(path, "w") as fh:
        fh.write("t,omega_re,omega_im\n")
        for t, v in zip(times, values):
            fh.write(f"{t:.17g},{v.real:.17g},{v.imag:.17g}\n")


def read_pulse_csv(path, name="file", kind: str = "spline") -> ControlPulse:
    """Read a pulse CSV.

    ``kind="spline"`` interpolates the samples; ``kind="piecewise"`` treats
    them as slice midpoints on a uniform grid.
    """
    with open(path) as fh:
        header = fh.readline().strip()
    if header.replace(" ", "") != "t,omega_re,omega_im":
        raise ValueError(f"{path}: expected header t,omega_re,omega_im, got {header!r}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 3 or len(data) < 2:
        raise ValueError(f"{path}: expected at least two rows of t,omega_re,omega_im")
    t, values = data[:, 0], data[:, 1] + 1j * data[:, 2]
    if kind == "spline":
        return ControlPulse.from_samples(t, values, name=name)
    if kind == "piecewise":
        dt = np.diff(t)
        if not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
            raise ValueError(f"{path}: piecewise pulses need a uniform midpoint grid")
        h = (t[-1] - t[0]) / (len(t) - 1)
        return PiecewisePulse(values, t[0] - 0.5 * h, t[-1] + 0.5 * h, name=name)
    raise ValueError(f"unknown pulse kind {kind!r}")
