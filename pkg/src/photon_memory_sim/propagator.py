"""Single-excitation propagation, observables and a density-matrix reference."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from . import kernels
from .core import Basis, SystemParams, initial_state, mode_coupling, mode_grid
from .pulses import ControlPulse, PiecewisePulse

DEFAULT_TOL = 1e-9
DEFAULT_OUTPUT_POINTS = 2000
DEFAULT_TABLE_POINTS = 20001
MAX_STEPS_PER_SEGMENT = 50_000_000
RECORD_COLUMNS = ("t", "eta", "p_r", "p_s", "p_loss", "rho_rr", "rho_ee", "rho_aa",
                  "omega_re", "omega_im")


class IntegrationError(ArithmeticError):
    """Adaptive propagation failed; ``t`` is the time reached."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} at t = {t:.9g} us")
        self.t = t


@dataclass
class QuantumState:
    """Pure single-excitation state plus the two sink populations.

    ``amps`` holds the N mode amplitudes followed by cavity photon, excited
    atom and target atom.
    """

    amps: np.ndarray
    p_spont: float = 0.0
    p_cavloss: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        self.amps = np.asarray(self.amps, dtype=complex)

    @classmethod
    def from_envelope(cls, env, params: SystemParams) -> "QuantumState":
        return cls(initial_state(env, params), t=params.t_start)

    @classmethod
    def basis_state(cls, params: SystemParams, index: int, t: float | None = None):
        amps = np.zeros(params.dim, dtype=complex)
        amps[index] = 1.0
        return cls(amps, t=params.t_start if t is None else t)

    @property
    def n_modes(self) -> int:
        return len(self.amps) - 3

    @property
    def modes(self) -> np.ndarray:
        return self.amps[: self.n_modes]

    @property
    def cavity(self) -> complex:
        return self.amps[-3]

    @property
    def excited(self) -> complex:
        return self.amps[-2]

    @property
    def target(self) -> complex:
        return self.amps[-1]

    def total(self) -> float:
        return float(np.vdot(self.amps, self.amps).real) + self.p_spont + self.p_cavloss

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.amps, [self.p_spont, self.p_cavloss]]).astype(complex)

    @classmethod
    def from_vector(cls, y: np.ndarray, t: float) -> "QuantumState":
        return cls(y[:-2].copy(), float(y[-2].real), float(y[-1].real), t)


@dataclass
class SimulationRecord:
    times: np.ndarray
    eta: np.ndarray
    p_r: np.ndarray
    p_s: np.ndarray
    p_loss: np.ndarray
    rho_rr: np.ndarray
    rho_ee: np.ndarray
    rho_aa: np.ndarray
    pulse_trace: np.ndarray
    final_state: QuantumState | None = None
    mode_history: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    def closure(self) -> np.ndarray:
        """Total probability at each stored time."""
        return self.rho_rr + self.rho_ee + self.rho_aa + self.p_r + self.p_s + self.p_loss

    @property
    def final_eta(self) -> float:
        return float(self.eta[-1])

    def summary(self) -> dict:
        return {
            "eta": float(self.eta[-1]),
            "p_r": float(self.p_r[-1]),
            "p_s": float(self.p_s[-1]),
            "p_loss": float(self.p_loss[-1]),
            "rho_rr": float(self.rho_rr[-1]),
        }

    def to_csv(self, path) -> None:
        cols = [self.times, self.eta, self.p_r, self.p_s, self.p_loss, self.rho_rr,
                self.rho_ee, self.rho_aa, self.pulse_trace.real, self.pulse_trace.imag]
        with open(path, "w") as fh:
            fh.write(",".join(RECORD_COLUMNS) + "\n")
            for row in zip(*cols):
                fh.write(",".join(f"{v:.12g}" for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "SimulationRecord":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        if tuple(header) != RECORD_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        d = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(d[:, 0], d[:, 1], d[:, 2], d[:, 3], d[:, 4], d[:, 5], d[:, 6], d[:, 7],
                   d[:, 8] + 1j * d[:, 9])


# --------------------------------------------------------------------------
# Hamiltonian

def build_hamiltonian(params: SystemParams, omega, t: float, detuning=None) -> "ArrowheadHamiltonian":
    """Hermitian ``H(t)`` on the N+3 coherent subspace (no loss terms)."""
    value = complex(omega(t)) if callable(omega) else complex(omega)
    delta_2 = params.delta_2 if detuning is None else float(detuning(t))
    return ArrowheadHamiltonian(mode_grid(params), mode_coupling(params), params.g,
                                params.delta_1, delta_2, value)


@dataclass(frozen=True)
class ArrowheadHamiltonian:
    """Mode diagonal bordered by the cavity row/column, plus the atom block."""

    omegas: np.ndarray
    lam: float
    g: float
    delta_1: float
    delta_2: float
    omega: complex

    @property
    def dim(self) -> int:
        return len(self.omegas) + 3

    def matvec(self, psi: np.ndarray) -> np.ndarray:
        n = len(self.omegas)
        c, e, r = psi[n], psi[n + 1], psi[n + 2]
        out = np.empty_like(psi, dtype=complex)
        out[:n] = self.omegas * psi[:n] + self.lam * c
        out[n] = self.lam * psi[:n].sum() + self.g * e
        out[n + 1] = -self.delta_1 * e + self.g * c + self.omega * r
        out[n + 2] = self.delta_2 * r + np.conj(self.omega) * e
        return out

    def dense(self) -> np.ndarray:
        n = len(self.omegas)
        H = np.zeros((n + 3, n + 3), dtype=complex)
        H[np.arange(n), np.arange(n)] = self.omegas
        H[:n, n] = self.lam
        H[n, :n] = self.lam
        H[n, n + 1] = H[n + 1, n] = self.g
        H[n + 1, n + 1] = -self.delta_1
        H[n + 1, n + 2] = self.omega
        H[n + 2, n + 1] = np.conj(self.omega)
        H[n + 2, n + 2] = self.delta_2
        return H


# --------------------------------------------------------------------------
# pulse tabulation

@dataclass(frozen=True)
class PulseTable:
    t0: float
    h: float
    coef: np.ndarray  # (rows, 3, 4): Re Omega, Im Omega, delta_2; highest power first
    piecewise: bool

    @property
    def rows(self) -> int:
        return self.coef.shape[0]

    def row_range(self, t_a: float, t_b: float) -> tuple[int, int]:
        """Rows a segment ``[t_a, t_b]`` between breakpoints may use."""
        if not self.piecewise:
            return 0, self.rows - 1
        mid = 0.5 * (t_a + t_b)
        k = min(max(int(math.floor((mid - self.t0) / self.h)), 0), self.rows - 1)
        return k, k


def tabulate_pulse(pulse, t_start: float, t_end: float, delta_2: float = 0.0,
                   detuning=None, n_points: int = DEFAULT_TABLE_POINTS) -> PulseTable:
    """Cubic-spline table of the pulse and two-photon detuning on ``[t_start, t_end]``.

    Piecewise-constant pulses get an exact one-row-per-slice table.
    """
    if isinstance(pulse, PiecewisePulse) and detuning is None:
        if pulse.t_start > t_start + 1e-12 or pulse.t_end < t_end - 1e-12:
            raise ValueError("time grid leaves the pulse domain")
        coef = np.zeros((len(pulse), 3, 4))
        vals = np.asarray(pulse(pulse.edges[:-1] + 0.5 * pulse.dt), dtype=complex)
        coef[:, 0, 3] = vals.real
        coef[:, 1, 3] = vals.imag
        coef[:, 2, 3] = delta_2
        return PulseTable(pulse.t_start, pulse.dt, coef, True)
    t = np.linspace(t_start, t_end, n_points)
    values = np.asarray(pulse(t), dtype=complex) if callable(pulse) else np.full(t.shape, complex(pulse))
    det = np.full(t.shape, float(delta_2)) if detuning is None else np.asarray(detuning(t), dtype=float)
    coef = np.empty((n_points - 1, 3, 4))
    for ch, y in enumerate((values.real, values.imag, det)):
        coef[:, ch, :] = CubicSpline(t, y).c.T
    return PulseTable(t_start, t[1] - t[0], np.ascontiguousarray(coef), False)


# --------------------------------------------------------------------------
# propagation

def _check_pulse_domain(pulse, t_start, t_end):
    if isinstance(pulse, ControlPulse):
        slack = 1e-9 * max(1.0, abs(t_end - t_start))
        if t_start < pulse.t_start - slack or t_end > pulse.t_end + slack:
            raise ValueError(
                f"time grid [{t_start:.6g}, {t_end:.6g}] leaves pulse domain "
                f"[{pulse.t_start:.6g}, {pulse.t_end:.6g}]"
            )


def efficiency(record: SimulationRecord, env, t_start: float | None = None,
               floor: float = 1e-14) -> np.ndarray:
    """``rho_rr(t) / int_{t1}^{t} |E_in|^2``; NaN where the denominator vanishes."""
    t1 = record.times[0] if t_start is None else t_start
    denom = np.asarray(env.cumulative_norm(record.times) - env.cumulative_norm(t1), dtype=float)
    eta = np.full(record.times.shape, np.nan)
    ok = denom > floor
    eta[ok] = record.rho_rr[ok] / denom[ok]
    return eta


def propagate(state0: QuantumState, params: SystemParams, omega, t_grid=None,
              tol: float = DEFAULT_TOL, env=None, detuning=None, backend: str | None = None,
              table_points: int = DEFAULT_TABLE_POINTS, keep_modes: bool = False,
              check_norm: bool = True) -> SimulationRecord:
    """Integrate the non-Hermitian single-excitation dynamics.

    ``omega`` is a :class:`ControlPulse`, any callable, or a constant.
    ``detuning`` optionally replaces the constant two-photon detuning by a
    function of time.  ``env`` is the incoming envelope used for the
    efficiency column.
    """
    if t_grid is None:
        t_grid = np.linspace(state0.t, params.t_end, DEFAULT_OUTPUT_POINTS)
    times = np.asarray(t_grid, dtype=float)
    if times.ndim != 1 or len(times) < 1 or np.any(np.diff(times) <= 0):
        raise ValueError("t_grid must be a strictly increasing 1-d grid")
    if times[0] < state0.t - 1e-12:
        raise ValueError("t_grid starts before the initial state")
    if len(state0.amps) != params.dim:
        raise ValueError(f"state has dimension {len(state0.amps)}, expected {params.dim}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    t0, t_last = state0.t, times[-1]
    _check_pulse_domain(omega, t0, t_last)

    kern = kernels.get_backend(backend)
    table = tabulate_pulse(omega, t0, t_last, params.delta_2, detuning, table_points) \
        if callable(omega) else tabulate_pulse(complex(omega), t0, t_last, params.delta_2,
                                               detuning, 2)
    omegas = np.ascontiguousarray(mode_grid(params), dtype=float)
    lam = mode_coupling(params)
    physics = (omegas, lam, params.g, params.gamma, params.kappa_loss, params.delta_1,
               table.t0, table.h, table.coef)

    stops = set(times.tolist())
    if table.piecewise:
        edges = table.t0 + table.h * np.arange(table.rows + 1)
        stops.update(x for x in edges.tolist() if t0 < x < t_last)
    stops = np.array(sorted(x for x in stops if x >= t0))
    is_output = np.isin(stops, times)

    y = state0.to_vector()
    norm0 = state0.total()
    k1 = np.empty_like(y)
    n = params.n_modes
    out = np.empty((len(times), params.dim + 2), dtype=complex)
    h = 1e-3 * max(t_last - t0, 1e-9)
    h_min = 1e-15 * max(1.0, abs(t_last), abs(t0))
    t = t0
    accepted = rejected = 0
    checked_steps = 0
    j = 0
    for stop, record_here in zip(stops, is_output):
        if stop > t:
            k_lo, k_hi = table.row_range(t, stop)
            kern.rhs_eval(t, y, k1, *physics, k_lo, k_hi)
            h, acc, rej, status, t_reached = kern.dp45_advance(
                y, t, stop, h, *physics, k_lo, k_hi, tol, tol, h_min,
                MAX_STEPS_PER_SEGMENT, k1)
            accepted += acc
            rejected += rej
            if status == 1:
                raise IntegrationError("step size underflow (stiff pulse)", t_reached)
            if status == 2:
                raise IntegrationError("step limit exceeded", t_reached)
            t = stop
        if record_here:
            if check_norm:
                # each accepted step may contribute up to tol
                total = float(np.vdot(y[:-2], y[:-2]).real + y[-2].real + y[-1].real)
                budget = 10 * tol * max(1, accepted - checked_steps)
                if abs(total - norm0) > budget:
                    raise IntegrationError(
                        f"norm drift {total - norm0:.3g} exceeds 10*tol per step", t)
                norm0 = total
                checked_steps = accepted
            out[j] = y
            j += 1

    pops = np.abs(out[:, : params.dim]) ** 2
    record = SimulationRecord(
        times=times,
        eta=np.full(len(times), np.nan),
        p_r=pops[:, :n].sum(axis=1),
        p_s=out[:, -2].real.copy(),
        p_loss=out[:, -1].real.copy(),
        rho_rr=pops[:, n + 2],
        rho_ee=pops[:, n + 1],
        rho_aa=pops[:, n],
        pulse_trace=_trace(omega, times),
        final_state=QuantumState.from_vector(y, t),
        mode_history=out[:, :n].copy() if keep_modes else None,
        stats={"accepted": accepted, "rejected": rejected, "backend": kern.__name__},
    )
    if env is not None:
        record.eta = efficiency(record, env, t0)
    return record


def _trace(omega, times):
    if callable(omega):
        return np.asarray(omega(times), dtype=complex)
    return np.full(times.shape, complex(omega))


def simulate(params: SystemParams, env, omega, t_grid=None, tol: float = DEFAULT_TOL,
             **kwargs) -> SimulationRecord:
    """Store the photon ``env`` starting from the line state at ``params.t_start``."""
    state0 = QuantumState.from_envelope(env, params)
    return propagate(state0, params, omega, t_grid, tol, env=env, **kwargs)


# --------------------------------------------------------------------------
# spatial distribution

def spatial_distribution(state, x_grid, params: SystemParams, carrier: int | None = None) -> np.ndarray:
    """Photon probability density along the line, ``x in [-L, 0]``.

    Mode ``n`` is the standing wave ``sin((n_c + n) pi x / L)`` with carrier
    quantum number ``n_c`` (default ``N``).
    """
    x = np.asarray(x_grid, dtype=float)
    L = params.line_length
    if np.any(x < -L * (1 + 1e-12)) or np.any(x > L * 1e-12):
        raise ValueError("x must lie in [-L, 0]")
    amps = state.modes if isinstance(state, QuantumState) else np.asarray(state)[: params.n_modes]
    half = (params.n_modes - 1) // 2
    nc = params.n_modes if carrier is None else carrier
    if nc <= half:
        raise ValueError("carrier quantum number must exceed (N-1)/2")
    q = nc + np.arange(-half, half + 1)
    field_x = np.sin(np.outer(x, q) * math.pi / L) @ amps
    return (2.0 / L) * np.abs(field_x) ** 2


# --------------------------------------------------------------------------
# density-matrix reference

MAX_REFERENCE_MODES = 61


def _lindblad_operators(params: SystemParams):
    basis = Basis(params.n_modes)
    dim = len(basis)
    n = params.n_modes
    jumps = []
    if params.gamma > 0:
        L = np.zeros((dim, dim))
        L[basis.spont_sink, basis.excited] = math.sqrt(2 * params.gamma)
        jumps.append(L)
    if params.kappa_loss > 0:
        L = np.zeros((dim, dim))
        L[basis.cavity_sink, basis.cavity] = math.sqrt(2 * params.kappa_loss)
        jumps.append(L)
    return basis, dim, n, jumps


def propagate_density_reference(rho0, params: SystemParams, omega, t_grid, tol: float = 1e-10,
                                detuning=None, env=None) -> SimulationRecord:
    """Full Lindblad evolution on the N+5 dimensional space (reference only)."""
    if params.n_modes > MAX_REFERENCE_MODES:
        raise ValueError(f"density reference limited to N <= {MAX_REFERENCE_MODES}")
    basis, dim, n, jumps = _lindblad_operators(params)
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (dim, dim):
        raise ValueError(f"rho0 must be {dim}x{dim}")
    times = np.asarray(t_grid, dtype=float)
    pulse = omega if callable(omega) else (lambda t: complex(omega))
    H0 = np.zeros((dim, dim), dtype=complex)
    H0[: params.dim, : params.dim] = build_hamiltonian(params, 0.0, times[0]).dense()
    e, r = basis.excited, basis.target
    H0[r, r] = 0.0
    decay = sum(L.T @ L for L in jumps) if jumps else np.zeros((dim, dim))

    def rhs(t, flat):
        rho = flat.reshape(dim, dim)
        H = H0.copy()
        w = complex(pulse(t))
        H[e, r] = w
        H[r, e] = np.conj(w)
        H[r, r] = params.delta_2 if detuning is None else float(detuning(t))
        d = -1j * (H @ rho - rho @ H) - 0.5 * (decay @ rho + rho @ decay)
        for L in jumps:
            d += L @ rho @ L.T
        return d.ravel()

    sol = solve_ivp(rhs, (times[0], times[-1]), rho0.ravel(), method="DOP853",
                    t_eval=times, rtol=tol, atol=tol)
    if not sol.success:
        raise IntegrationError(sol.message, float(sol.t[-1]) if sol.t.size else times[0])
    rhos = sol.y.T.reshape(len(times), dim, dim)
    diag = np.einsum("kii->ki", rhos).real
    record = SimulationRecord(
        times=times,
        eta=np.full(len(times), np.nan),
        p_r=diag[:, :n].sum(axis=1),
        p_s=diag[:, basis.spont_sink],
        p_loss=diag[:, basis.cavity_sink],
        rho_rr=diag[:, r],
        rho_ee=diag[:, e],
        rho_aa=diag[:, basis.cavity],
        pulse_trace=_trace(pulse, times),
        stats={"rho_final": rhos[-1], "trace": np.einsum("kii->k", rhos),
               "hermiticity": np.max(np.abs(rhos - rhos.conj().transpose(0, 2, 1)))},
    )
    if env is not None:
        record.eta = efficiency(record, env, times[0])
    return record


def density_from_state(state: QuantumState) -> np.ndarray:
    """Embed a pure single-excitation state (and sinks) as an N+5 density matrix."""
    psi = state.amps
    dim = len(psi) + 2
    rho = np.zeros((dim, dim), dtype=complex)
    rho[: len(psi), : len(psi)] = np.outer(psi, psi.conj())
    rho[-2, -2] = state.p_spont
    rho[-1, -1] = state.p_cavloss
    return rho
