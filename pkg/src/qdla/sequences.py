"""PDD and CP pi-pulse trains: pulse timing, modulation function and filter function.

Pulse positions are the single source of truth. PDD places ``n - 1`` pulses at
``j * tau_m`` and CP places ``n`` pulses at ``(j - 1/2) * tau_m``; the
modulation ``h(t) = cos(alpha(t))`` is always derived from those positions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

PDD = "PDD"
CP = "CP"


@dataclass(frozen=True)
class PulseTrain:
    """Equally spaced pi-pulse train of total duration ``n * tau_m``.

    ``width`` is the square-pulse length T_Omega; ``0`` means ideal delta pulses.
    """

    kind: str
    tau_m: float
    n: int
    width: float = 0.0

    def __post_init__(self):
        kind = str(self.kind).upper()
        if kind not in (PDD, CP):
            raise ConfigError(f"kind must be 'PDD' or 'CP', got {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not self.tau_m > 0:
            raise ConfigError(f"tau_m must be > 0, got {self.tau_m}")
        if int(self.n) != self.n or self.n < 2 or self.n % 2:
            raise ConfigError(f"n must be an even positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        if not 0.0 <= self.width <= self.tau_m:
            raise ConfigError(f"pulse width must satisfy 0 <= width <= tau_m, got {self.width}")

    @property
    def is_delta(self) -> bool:
        return self.width == 0.0

    @property
    def duration(self) -> float:
        return self.n * self.tau_m

    @property
    def pulse_count(self) -> int:
        return self.n - 1 if self.kind == PDD else self.n

    @property
    def offset(self) -> float:
        """Pulse-center offset lambda in ``t_j = (j - lambda) tau_m``."""
        return 0.0 if self.kind == PDD else 0.5

    @property
    def omega_pulse(self) -> float:
        """Pulse Rabi rate pi / T_Omega."""
        return math.pi / self.width if self.width > 0 else math.inf

    def with_(self, **changes) -> "PulseTrain":
        return replace(self, **changes)


def pulse_centers(train: PulseTrain) -> np.ndarray:
    j = np.arange(1, train.pulse_count + 1, dtype=float)
    return (j - train.offset) * train.tau_m


def _pulses_done(train: PulseTrain, t) -> np.ndarray:
    centers = pulse_centers(train)
    return np.searchsorted(centers, np.asarray(t, dtype=float), side="right")


def modulation_h(train: PulseTrain, t):
    """Square-wave reference ``(-1)**(number of pulse centers <= t)``."""
    k = _pulses_done(train, t)
    out = np.where(k % 2 == 0, 1.0, -1.0)
    return out if out.ndim else float(out)


def alpha(train: PulseTrain, t):
    """Integrated drive angle at time t."""
    t = np.asarray(t, dtype=float)
    if train.is_delta:
        out = math.pi * _pulses_done(train, t).astype(float)
    else:
        c = pulse_centers(train)
        w = train.width
        frac = np.clip((t[..., None] - (c - 0.5 * w)) / w, 0.0, 1.0)
        out = math.pi * frac.sum(axis=-1)
    return out if out.ndim else float(out)


def segments(train: PulseTrain):
    """Constant-h segments for delta pulses: (starts, stops, signs)."""
    edges = np.concatenate(([0.0], pulse_centers(train), [train.duration]))
    signs = np.where(np.arange(len(edges) - 1) % 2 == 0, 1.0, -1.0)
    return edges[:-1], edges[1:], signs


def filter_function(train: PulseTrain, omega):
    """``|int_0^{t_n} h(t) exp(i omega t) dt|**2`` by exact per-segment integration."""
    if not train.is_delta:
        raise ConfigError("filter_function is defined for delta-shaped pulses")
    omega = np.asarray(omega, dtype=float)
    a, b, s = segments(train)
    w = omega[..., None]
    small = np.abs(w) < 1e-300
    w_safe = np.where(small, 1.0, w)
    seg = np.where(
        small,
        (b - a) + 0j,
        (np.exp(1j * w_safe * b) - np.exp(1j * w_safe * a)) / (1j * w_safe),
    )
    total = (s * seg).sum(axis=-1)
    out = np.abs(total) ** 2
    return out if out.ndim else float(out)
