"""Physical parameters, single-excitation basis and transmission-line modes.

All rates are angular frequencies in rad/us, times are in us and the speed
of light is fixed to ``c = 1`` so lengths are light-travel times.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, replace
from typing import NamedTuple, Union

import numpy as np

TWO_PI = 2.0 * math.pi
SPEED_OF_LIGHT = 1.0

#: (g, kappa, gamma) of the reference setup in units of 2pi MHz.
REFERENCE_RATES_MHZ = (4.9, 2.42, 3.03)
#: parasitic loss rate used for the lossy reference runs, 2pi MHz.
REFERENCE_KAPPA_LOSS_MHZ = 0.33
REFERENCE_TC = 0.5
REFERENCE_N_MODES = 211


def mhz(value: float) -> float:
    """Convert a rate given as ``value x 2pi MHz`` to rad/us."""
    return TWO_PI * value


@dataclass(frozen=True)
class SystemParams:
    """Rates, detunings and discretisation of one simulation.

    Attributes
    ----------
    g, kappa, kappa_loss, gamma : float
        Atom-cavity coupling, cavity decay into the line, parasitic cavity
        decay and excited-state decay. Amplitude rates in rad/us.
    delta_1 : float
        One-photon detuning (cavity minus atomic frequency), rad/us.
    delta_2 : float
        Two-photon detuning, rad/us.
    n_modes : int
        Odd number of transmission-line modes.
    line_length : float
        Length of the transmission line in us (c = 1).
    t_start, t_end : float
        Simulation window, ``t_start < 0 < t_end``.
    """

    g: float = mhz(REFERENCE_RATES_MHZ[0])
    kappa: float = mhz(REFERENCE_RATES_MHZ[1])
    gamma: float = mhz(REFERENCE_RATES_MHZ[2])
    kappa_loss: float = 0.0
    delta_1: float = 0.0
    delta_2: float = 0.0
    n_modes: int = REFERENCE_N_MODES
    line_length: float = 6.0
    t_start: float = -3.0
    t_end: float = 3.0

    def __post_init__(self):
        for name in ("g", "kappa", "gamma", "kappa_loss"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if int(self.n_modes) != self.n_modes or self.n_modes < 3 or self.n_modes % 2 == 0:
            raise ValueError(f"n_modes must be an odd integer >= 3, got {self.n_modes}")
        if not self.line_length > 0:
            raise ValueError(f"line_length must be > 0, got {self.line_length}")
        if not self.t_start < 0 < self.t_end:
            raise ValueError(
                f"window must satisfy t_start < 0 < t_end, got [{self.t_start}, {self.t_end}]"
            )

    @classmethod
    def from_mhz(
        cls,
        g: float = REFERENCE_RATES_MHZ[0],
        kappa: float = REFERENCE_RATES_MHZ[1],
        gamma: float = REFERENCE_RATES_MHZ[2],
        kappa_loss: float = 0.0,
        delta_1: float = 0.0,
        delta_2: float = 0.0,
        **geometry,
    ) -> "SystemParams":
        """Build from rates quoted as ``X x 2pi MHz``."""
        return cls(
            g=mhz(g),
            kappa=mhz(kappa),
            gamma=mhz(gamma),
            kappa_loss=mhz(kappa_loss),
            delta_1=mhz(delta_1),
            delta_2=mhz(delta_2),
            **geometry,
        )

    @classmethod
    def reference(cls, tc: float = REFERENCE_TC, window: float = 6.0, **overrides) -> "SystemParams":
        """Reference setup with the default geometry for coherence time ``tc``.

        ``overrides`` may contain any field (angular units); geometry fields
        given explicitly win over the derived defaults.
        """
        kappa = overrides.get("kappa", mhz(REFERENCE_RATES_MHZ[1]))
        length, t1, t2 = default_scenario_geometry(tc, kappa, window=window)
        fields = dict(line_length=length, t_start=t1, t_end=t2)
        fields.update(overrides)
        return cls(**fields)

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)

    @property
    def dim(self) -> int:
        """Dimension of the coherent (pure-state) sector, N + 3."""
        return self.n_modes + 3

    @property
    def window(self) -> float:
        return self.t_end - self.t_start


class Level(enum.IntEnum):
    """Non-mode basis states, numbered after the N line modes."""

    CAVITY_PHOTON = 0
    EXCITED_ATOM = 1
    TARGET_ATOM = 2
    SPONT_SINK = 3
    CAVITY_SINK = 4


class Mode(NamedTuple):
    n: int


BasisLabel = Union[Mode, Level]


class Basis:
    """Bijection between basis labels and the integers ``0 .. N+4``.

    Modes come first in ascending ``n``, then cavity photon, excited atom,
    target atom and the two absorbing sinks.
    """

    def __init__(self, n_modes: int):
        if n_modes < 3 or n_modes % 2 == 0:
            raise ValueError("n_modes must be odd and >= 3")
        self.n_modes = n_modes
        self.half = (n_modes - 1) // 2

    def __len__(self) -> int:
        return self.n_modes + 5

    @property
    def cavity(self) -> int:
        return self.n_modes + Level.CAVITY_PHOTON

    @property
    def excited(self) -> int:
        return self.n_modes + Level.EXCITED_ATOM

    @property
    def target(self) -> int:
        return self.n_modes + Level.TARGET_ATOM

    @property
    def spont_sink(self) -> int:
        return self.n_modes + Level.SPONT_SINK

    @property
    def cavity_sink(self) -> int:
        return self.n_modes + Level.CAVITY_SINK

    def index(self, label: BasisLabel) -> int:
        if isinstance(label, Mode):
            if abs(label.n) > self.half:
                raise KeyError(f"mode {label.n} outside +-{self.half}")
            return label.n + self.half
        return self.n_modes + Level(label)

    def label(self, index: int) -> BasisLabel:
        if not 0 <= index < len(self):
            raise IndexError(index)
        if index < self.n_modes:
            return Mode(index - self.half)
        return Level(index - self.n_modes)


def mode_numbers(n_modes: int) -> np.ndarray:
    half = (n_modes - 1) // 2
    return np.arange(-half, half + 1)


def mode_grid(params: SystemParams) -> np.ndarray:
    """Detunings ``omega_n - omega_c = n pi c / L`` of the line modes."""
    return mode_numbers(params.n_modes) * math.pi * SPEED_OF_LIGHT / params.line_length


def mode_coupling(params: SystemParams) -> float:
    """Flat mode-cavity coupling ``lambda = sqrt(kappa c / L)``."""
    return math.sqrt(params.kappa * SPEED_OF_LIGHT / params.line_length)


def default_scenario_geometry(tc: float, kappa: float, window: float = 6.0):
    """Return ``(L, t_start, t_end)`` for coherence time ``tc``.

    ``L = max(12 c tc, 15 c / kappa)`` and the window is ``+-window * tc``
    (6 for adiabatic runs, 15 for the long non-adiabatic runs).
    """
    if tc <= 0 or kappa <= 0:
        raise ValueError("tc and kappa must be positive")
    length = max(12.0 * SPEED_OF_LIGHT * tc, 15.0 * SPEED_OF_LIGHT / kappa)
    return length, -window * tc, window * tc


def photon_mode_amplitudes(env, params: SystemParams, renormalize: bool = True) -> np.ndarray:
    """Mode amplitudes ``E_n`` of an incoming photon with mirror envelope ``env``.

    The amplitudes are referenced to ``t = 0``: the state at time ``t`` is
    ``E_n exp(-i w_n t)`` for a freely propagating photon.
    """
    omegas = mode_grid(params)
    amps = math.sqrt(SPEED_OF_LIGHT / (2.0 * params.line_length)) * env.spectrum(omegas)
    total = float(np.sum(np.abs(amps) ** 2))
    if total < 0.999:
        warnings.warn(
            f"mode expansion captures only {total:.6f} of the photon norm; "
            "increase n_modes or line_length",
            RuntimeWarning,
            stacklevel=2,
        )
    if renormalize:
        if total == 0:
            raise ValueError("envelope has no overlap with the mode grid")
        amps = amps / math.sqrt(total)
    return amps


def mirror_field(mode_amps: np.ndarray, times, params: SystemParams) -> np.ndarray:
    """Field passing the mirror plane at ``times`` for freely propagating modes.

    ``mode_amps`` are the amplitudes at time ``t_ref = 0`` in the convention
    of :func:`photon_mode_amplitudes`; this is its inverse transform.
    """
    omegas = mode_grid(params)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    phases = np.exp(-1j * np.outer(times, omegas))
    return math.sqrt(SPEED_OF_LIGHT / (2.0 * params.line_length)) * (phases @ mode_amps)


def output_envelope(mode_amps_t: np.ndarray, t_now: float, times, params: SystemParams) -> np.ndarray:
    """Reconstruct the outgoing field ``E_out(t)`` from mode amplitudes at ``t_now``.

    Free back-propagation of the line state to the mirror; the sign follows
    the input-output relation ``E_out = i sqrt(2 kappa) a - E_in``.
    """
    ref_amps = mode_amps_t * np.exp(1j * mode_grid(params) * t_now)
    return -mirror_field(ref_amps, times, params)


def initial_state(env, params: SystemParams) -> np.ndarray:
    """Pure state at ``params.t_start``: photon in the line, cavity empty, atom in g."""
    psi = np.zeros(params.dim, dtype=complex)
    psi[: params.n_modes] = photon_mode_amplitudes(env, params) * np.exp(
        -1j * mode_grid(params) * params.t_start
    )
    return psi
