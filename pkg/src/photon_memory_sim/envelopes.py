"""Photon wavepacket envelopes at the mirror plane."""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline


def sech_envelope(T: float, t):
    """``(1/sqrt(T)) sech(2t/T)``."""
    if not T > 0:
        raise ValueError(f"characteristic time must be positive, got {T}")
    return 1.0 / (math.sqrt(T) * np.cosh(2.0 * np.asarray(t, dtype=float) / T))


def sech_time_from_tc(tc: float) -> float:
    """Characteristic time T of the sech envelope with coherence time ``tc``."""
    return 4.0 * math.sqrt(3.0) * tc / math.pi


class Envelope:
    """Complex amplitude ``E(t)`` [us^-1/2] supported on ``[t_start, t_end]``."""

    t_start: float
    t_end: float

    def __call__(self, t):
        raise NotImplementedError

    def derivative(self, t):
        raise NotImplementedError

    def second_derivative(self, t):
        raise NotImplementedError

    def cumulative_norm(self, t):
        """``int_{t_start}^{t} |E|^2``."""
        raise NotImplementedError

    def cumulative_derivative_norm(self, t):
        """``int_{t_start}^{t} |dE/dt|^2``."""
        raise NotImplementedError

    def spectrum(self, omega):
        """``int exp(i omega t) E(t) dt``."""
        raise NotImplementedError

    def norm(self) -> float:
        return float(self.cumulative_norm(self.t_end))

    def remaining_norm(self, t):
        """``int_{t}^{t_end} |E|^2``."""
        return self.norm() - self.cumulative_norm(t)

    def sample(self, n: int = 4001):
        t = np.linspace(self.t_start, self.t_end, n)
        return t, np.asarray(self(t), dtype=complex)

    def shifted(self, dt: float) -> "Envelope":
        """Same wavepacket delayed by ``dt`` with the window moved along."""
        t, values = self.sample(8001)
        return SampledEnvelope(t + dt, values)


class SechEnvelope(Envelope):
    """Hyperbolic-secant photon centred at ``center``."""

    def __init__(self, T: float, t_start: float, t_end: float, center: float = 0.0):
        if not T > 0:
            raise ValueError(f"characteristic time must be positive, got {T}")
        if not t_start < t_end:
            raise ValueError("empty support window")
        self.T = float(T)
        self.t_start = float(t_start)
        self.t_end = float(t_end)
        self.center = float(center)

    @classmethod
    def from_tc(cls, tc: float, window: float = 6.0, center: float = 0.0) -> "SechEnvelope":
        return cls(sech_time_from_tc(tc), center - window * tc, center + window * tc, center)

    @property
    def tc(self) -> float:
        return math.pi * self.T / (4.0 * math.sqrt(3.0))

    def _x(self, t):
        return 2.0 * (np.asarray(t, dtype=float) - self.center) / self.T

    def __call__(self, t):
        return sech_envelope(self.T, np.asarray(t, dtype=float) - self.center) + 0j

    def derivative(self, t):
        x = self._x(t)
        return -(2.0 / self.T**1.5) * np.tanh(x) / np.cosh(x) + 0j

    def second_derivative(self, t):
        x = self._x(t)
        sech = 1.0 / np.cosh(x)
        return (4.0 / self.T**2.5) * sech * (np.tanh(x) ** 2 - sech**2) + 0j

    def cumulative_norm(self, t):
        t = np.clip(np.asarray(t, dtype=float), self.t_start, self.t_end)
        return 0.5 * (np.tanh(self._x(t)) - np.tanh(self._x(self.t_start)))

    def cumulative_derivative_norm(self, t):
        t = np.clip(np.asarray(t, dtype=float), self.t_start, self.t_end)
        return (2.0 / (3.0 * self.T**2)) * (
            np.tanh(self._x(t)) ** 3 - np.tanh(self._x(self.t_start)) ** 3
        )

    def spectrum(self, omega):
        omega = np.asarray(omega, dtype=float)
        return (
            0.5 * math.pi * math.sqrt(self.T) / np.cosh(0.25 * math.pi * omega * self.T)
        ) * np.exp(1j * omega * self.center)

    def shifted(self, dt: float) -> "SechEnvelope":
        return SechEnvelope(self.T, self.t_start + dt, self.t_end + dt, self.center + dt)


class FlatEnvelope(Envelope):
    """Constant amplitude ``1/sqrt(t_end - t_start)`` on its window."""

    def __init__(self, t_start: float, t_end: float):
        if not t_start < t_end:
            raise ValueError("empty support window")
        self.t_start = float(t_start)
        self.t_end = float(t_end)
        self.amplitude = 1.0 / math.sqrt(self.t_end - self.t_start)

    def _inside(self, t):
        t = np.asarray(t, dtype=float)
        return (t >= self.t_start) & (t <= self.t_end)

    def __call__(self, t):
        return np.where(self._inside(t), self.amplitude, 0.0) + 0j

    def derivative(self, t):
        return np.zeros_like(np.asarray(t, dtype=float)) + 0j

    second_derivative = derivative

    def cumulative_norm(self, t):
        t = np.clip(np.asarray(t, dtype=float), self.t_start, self.t_end)
        return (t - self.t_start) * self.amplitude**2

    def cumulative_derivative_norm(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def spectrum(self, omega):
        omega = np.asarray(omega, dtype=float)
        a, b = self.t_start, self.t_end
        out = np.empty(omega.shape, dtype=complex)
        small = np.abs(omega) * (b - a) < 1e-8
        w = omega[~small]
        out[~small] = (np.exp(1j * w * b) - np.exp(1j * w * a)) / (1j * w)
        out[small] = b - a
        return self.amplitude * out

    def shifted(self, dt: float) -> "FlatEnvelope":
        return FlatEnvelope(self.t_start + dt, self.t_end + dt)


def _central_difference(values: np.ndarray, h: float) -> np.ndarray:
    """4th-order central first derivative; 2nd-order one-sided at the edges."""
    d = np.gradient(values, h, edge_order=2)
    if len(values) >= 5:
        d[2:-2] = (values[:-4] - 8 * values[1:-3] + 8 * values[3:-1] - values[4:]) / (12 * h)
    return d


class SampledEnvelope(Envelope):
    """Envelope given on a uniform grid, cubic-spline interpolated.

    Derivatives use 4th-order central differences on the grid.
    """

    def __init__(self, times, values):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=complex)
        if times.ndim != 1 or times.shape != values.shape or len(times) < 5:
            raise ValueError("need matching 1-d time and value arrays with >= 5 samples")
        steps = np.diff(times)
        if np.any(steps <= 0) or np.ptp(steps) > 1e-6 * steps.mean():
            raise ValueError("sampled envelopes need a uniform increasing time grid")
        self.times = times
        self.values = values
        self.t_start = float(times[0])
        self.t_end = float(times[-1])
        self.h = float(steps.mean())
        self._spline = CubicSpline(times, values)
        first = _central_difference(values, self.h)
        self._d1 = CubicSpline(times, first)
        self._d2 = CubicSpline(times, _central_difference(first, self.h))
        self._cum = CubicSpline(times, np.abs(values) ** 2).antiderivative()
        self._dcum = CubicSpline(times, np.abs(first) ** 2).antiderivative()

    def _inside(self, t):
        t = np.asarray(t, dtype=float)
        return (t >= self.t_start) & (t <= self.t_end)

    def __call__(self, t):
        return np.where(self._inside(t), self._spline(np.asarray(t, dtype=float)), 0.0)

    def derivative(self, t):
        return np.where(self._inside(t), self._d1(np.asarray(t, dtype=float)), 0.0)

    def second_derivative(self, t):
        return np.where(self._inside(t), self._d2(np.asarray(t, dtype=float)), 0.0)

    def cumulative_norm(self, t):
        t = np.clip(np.asarray(t, dtype=float), self.t_start, self.t_end)
        return np.maximum(self._cum(t), 0.0)

    def cumulative_derivative_norm(self, t):
        t = np.clip(np.asarray(t, dtype=float), self.t_start, self.t_end)
        return np.maximum(self._dcum(t), 0.0)

    def spectrum(self, omega):
        omega = np.asarray(omega, dtype=float)
        t = np.linspace(self.t_start, self.t_end, max(8 * len(self.times), 4001))
        vals = self(t)
        out = np.empty(omega.shape, dtype=complex)
        for chunk in np.array_split(np.arange(omega.size), max(1, omega.size // 64)):
            w = omega.ravel()[chunk]
            out.ravel()[chunk] = simpson(np.exp(1j * np.outer(w, t)) * vals, x=t, axis=1)
        return out

    def shifted(self, dt: float) -> "SampledEnvelope":
        return SampledEnvelope(self.times + dt, self.values)

    def normalized(self) -> "SampledEnvelope":
        return SampledEnvelope(self.times, self.values / math.sqrt(self.norm()))


def coherence_time(env: Envelope, n: int = 20001) -> float:
    """Standard deviation of the normalised intensity profile ``|E(t)|^2``."""
    t = np.linspace(env.t_start, env.t_end, n)
    w = np.abs(env(t)) ** 2
    norm = simpson(w, x=t)
    if not norm > 0:
        raise ValueError("zero-norm envelope has no coherence time")
    mean = simpson(t * w, x=t) / norm
    var = simpson((t - mean) ** 2 * w, x=t) / norm
    return math.sqrt(max(var, 0.0))


def write_envelope_csv(path, times, values) -> None:
    values = np.asarray(values, dtype=complex)
    with open(path, "w") as fh:
        fh.write("t,re,im\n")
        for t, v in zip(times, values):
            fh.write(f"{t:.12g},{v.real:.12g},{v.imag:.12g}\n")


def read_envelope_csv(path) -> SampledEnvelope:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    values = data[:, 1] + (1j * data[:, 2] if data.shape[1] > 2 else 0.0)
    return SampledEnvelope(data[:, 0], values)
