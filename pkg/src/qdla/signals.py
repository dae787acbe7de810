"""Target AC signal and the noise processes that enter the probe Hamiltonian.

Noise values are dimensionless and expressed in units of the target
amplitude: the field seen by the probe is ``A * (sin(w t + b) + noise(t))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import ConfigError

TWO_PI = 2.0 * math.pi


def wrap_phase(beta: float) -> float:
    """Map an angle onto [-pi, pi)."""
    return (beta + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class TargetSignal:
    """``S(t) = amplitude * sin(omega * t + beta)``; amplitude and omega in rad/s."""

    amplitude: float
    omega: float
    beta: float = 0.0

    def __post_init__(self):
        if not (self.amplitude >= 0.0 and math.isfinite(self.amplitude)):
            raise ConfigError(f"amplitude must be finite and >= 0, got {self.amplitude}")
        if not (self.omega > 0.0 and math.isfinite(self.omega)):
            raise ConfigError(f"omega must be finite and > 0, got {self.omega}")
        object.__setattr__(self, "beta", wrap_phase(float(self.beta)))

    @property
    def half_period(self) -> float:
        """Lock-in pulse spacing ``pi / omega``."""
        return math.pi / self.omega

    def value(self, t):
        return self.amplitude * np.sin(self.omega * np.asarray(t, dtype=float) + self.beta)

    def integral(self, a, b):
        """Exact integral of S over [a, b] (broadcasts)."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        w, ph = self.omega, self.beta
        return (self.amplitude / w) * (np.cos(w * a + ph) - np.cos(w * b + ph))

    def with_amplitude(self, amplitude: float) -> "TargetSignal":
        return TargetSignal(amplitude, self.omega, self.beta)


def target_value(sig: TargetSignal, t):
    return sig.value(t)


# --- noise models -----------------------------------------------------------


@dataclass(frozen=True)
class NoNoise:
    pass


@dataclass(frozen=True)
class WhiteGaussian:
    """Zero-order-hold Gaussian noise: a fresh N(0, sigma^2) draw every ``sample_dt``.

    ``sample_dt=None`` means "tau/50 of whatever target is being measured";
    resolve it with :meth:`resolved` before sampling.
    """

    sigma: float
    sample_dt: float | None = None

    def __post_init__(self):
        if not self.sigma >= 0.0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if self.sample_dt is not None and not self.sample_dt > 0.0:
            raise ConfigError(f"sample_dt must be > 0, got {self.sample_dt}")

    def resolved(self, sig: TargetSignal) -> "WhiteGaussian":
        if self.sample_dt is not None:
            return self
        return WhiteGaussian(self.sigma, sig.half_period / 50.0)


@dataclass(frozen=True)
class Mains:
    """Single-tone interference ``amplitude * sin(omega_ma t + phase)``.

    ``phase="random"`` draws the phase uniformly on [0, 2 pi) from the seed.
    """

    amplitude: float
    omega_ma: float = TWO_PI * 50.0
    phase: Union[float, str] = "random"

    def __post_init__(self):
        if not self.amplitude >= 0.0:
            raise ConfigError(f"mains amplitude must be >= 0, got {self.amplitude}")
        if not self.omega_ma > 0.0:
            raise ConfigError(f"omega_ma must be > 0, got {self.omega_ma}")
        if isinstance(self.phase, str) and self.phase != "random":
            raise ConfigError(f"mains phase must be a number or 'random', got {self.phase!r}")


NoiseModel = Union[NoNoise, WhiteGaussian, Mains]


def derive_rng(seed: int, *indices: int) -> np.random.Generator:
    """Independent generator for (master seed, point index, realization index, ...)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(i) for i in indices)))


@dataclass(frozen=True)
class SignalTrace:
    times: np.ndarray
    values: np.ndarray
    seed: int

    def __post_init__(self):
        if self.times.shape != self.values.shape:
            raise ConfigError("times and values must have equal length")


class NoiseRealization:
    """One continuous-time draw of a noise model.

    Provides point values, exact integrals over arbitrary intervals and the
    discontinuity points an integrator must step on.
    """

    def __init__(self, model: NoiseModel, t_end: float, rng: np.random.Generator):
        self.model = model
        self.t_end = float(t_end)
        self._draws = None
        self._cum = None
        self._phase = 0.0
        if isinstance(model, WhiteGaussian):
            if model.sample_dt is None:
                raise ConfigError("WhiteGaussian.sample_dt must be resolved before sampling")
            count = int(math.floor(self.t_end / model.sample_dt)) + 2
            self._draws = model.sigma * rng.standard_normal(count)
            self._cum = np.concatenate(([0.0], np.cumsum(self._draws) * model.sample_dt))
        elif isinstance(model, Mains):
            self._phase = rng.uniform(0.0, TWO_PI) if model.phase == "random" else float(model.phase)

    @property
    def is_zero(self) -> bool:
        m = self.model
        return (
            isinstance(m, NoNoise)
            or (isinstance(m, WhiteGaussian) and m.sigma == 0.0)
            or (isinstance(m, Mains) and m.amplitude == 0.0)
        )

    @property
    def mains_phase(self) -> float:
        return self._phase

    def _index(self, t):
        k = np.floor(np.asarray(t, dtype=float) / self.model.sample_dt).astype(np.int64)
        if np.any(k >= len(self._draws)) or np.any(k < 0):
            raise ConfigError("noise queried outside its realization window")
        return k

    def value(self, t):
        t = np.asarray(t, dtype=float)
        m = self.model
        if isinstance(m, WhiteGaussian):
            return self._draws[self._index(t)]
        if isinstance(m, Mains):
            return m.amplitude * np.sin(m.omega_ma * t + self._phase)
        return np.zeros_like(t)

    def primitive(self, t):
        """Antiderivative vanishing at t=0."""
        t = np.asarray(t, dtype=float)
        m = self.model
        if isinstance(m, WhiteGaussian):
            k = self._index(t)
            return self._cum[k] + self._draws[k] * (t - k * m.sample_dt)
        if isinstance(m, Mains):
            w = m.omega_ma
            return (m.amplitude / w) * (math.cos(self._phase) - np.cos(w * t + self._phase))
        return np.zeros_like(t)

    def integral(self, a, b):
        return self.primitive(b) - self.primitive(a)

    def breakpoints(self, a: float, b: float) -> np.ndarray:
        """Discontinuities strictly inside (a, b)."""
        m = self.model
        if not isinstance(m, WhiteGaussian) or self.is_zero:
            return np.empty(0)
        k0 = math.floor(a / m.sample_dt) + 1
        k1 = math.ceil(b / m.sample_dt) - 1
        pts = np.arange(k0, k1 + 1) * m.sample_dt
        return pts[(pts > a) & (pts < b)]


def realize(model: NoiseModel | None, t_end: float, seed: int, *indices: int) -> NoiseRealization | None:
    if model is None or isinstance(model, NoNoise):
        return None
    return NoiseRealization(model, t_end, derive_rng(seed, *indices))


def sample_noise(model: NoiseModel, times, seed: int) -> SignalTrace:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1:
        raise ConfigError("times must be one-dimensional")
    if times.size > 1 and np.any(np.diff(times) <= 0):
        raise ConfigError("times must be strictly increasing")
    if isinstance(model, NoNoise) or times.size == 0:
        return SignalTrace(times, np.zeros_like(times), int(seed))
    if times[0] < 0:
        raise ConfigError("noise times must be >= 0")
    real = NoiseRealization(model, float(times[-1]), derive_rng(seed))
    return SignalTrace(times, np.asarray(real.value(times), dtype=float), int(seed))
