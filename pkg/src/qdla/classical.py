"""Classical double lock-in amplifier: mix with sin/cos references and integrate."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .errors import ConfigError
from .signals import NoiseModel, NoNoise, SignalTrace, TargetSignal, WhiteGaussian, realize


@dataclass(frozen=True)
class IQPair:
    I: float
    Q: float
    T: float
    omega_m: float

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError(f"integration time must be > 0, got {self.T}")


def _trace(sig: TargetSignal, noise: NoiseModel | None, T: float, samples_per_period: int, seed: int) -> SignalTrace:
    count = int(math.ceil(T / (2 * math.pi / sig.omega) * samples_per_period))
    count += count % 2  # even interval count for Simpson
    t = np.linspace(0.0, T, count + 1)
    v = sig.value(t)
    if noise is not None and not isinstance(noise, NoNoise):
        if isinstance(noise, WhiteGaussian):
            noise = noise.resolved(sig)
        v = v + sig.amplitude * realize(noise, T, seed).value(t)
    return SignalTrace(t, v, seed)


def mix_and_integrate(
    source,
    omega_m: float,
    T: float,
    noise: NoiseModel | None = None,
    seed: int = 0,
    samples_per_period: int = 256,
) -> IQPair:
    """``I = int_0^T V sin(omega_m t) dt`` and ``Q = int_0^T V cos(omega_m t) dt``.

    ``source`` is either a sampled :class:`SignalTrace` (integrated on its own grid)
    or a :class:`TargetSignal`, which is sampled here together with ``noise``.
    """
    if not T > 0:
        raise ConfigError(f"integration time must be > 0, got {T}")
    if isinstance(source, TargetSignal):
        if T < 10 * 2 * math.pi / source.omega:
            warnings.warn("integration window shorter than 10 signal periods", RuntimeWarning, stacklevel=2)
        trace = _trace(source, noise, T, samples_per_period, seed)
    elif isinstance(source, SignalTrace):
        trace = source
    else:
        raise ConfigError(f"unsupported source type {type(source).__name__}")
    t, v = trace.times, trace.values
    keep = t <= T
    t, v = t[keep], v[keep]
    I = float(simpson(v * np.sin(omega_m * t), x=t))
    Q = float(simpson(v * np.cos(omega_m * t), x=t))
    return IQPair(I, Q, T, omega_m)


def extract_classical(iq: IQPair) -> tuple[float, float]:
    """``A = 2 sqrt(I^2 + Q^2) / T`` and the full-quadrant ``beta = atan2(Q, I)``."""
    return 2.0 * math.hypot(iq.I, iq.Q) / iq.T, math.atan2(iq.Q, iq.I)
