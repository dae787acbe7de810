"""Five-level double-Lambda CPT realization of the two-channel lock-in.

Levels 1..4 are ground states grouped as {1, 2} (PDD channel) and {3, 4}
(CP channel); level 5 is the shared excited state. Light-on stages
(preparation and detection) use the exact propagator ``expm(L t)`` of the
Lindblad superoperator. The light-off sensing stage factorizes into two
2x2 ground-state blocks driven by the pulse trains, plus free decay of |5>.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .errors import ConfigError, IntegrationError
from .sequences import PulseTrain, pulse_centers
from .signals import NoiseRealization, TargetSignal
from .spin import interaction_unitaries

TWO_PI = 2.0 * math.pi
# 87Rb ground-state gyromagnetic ratio: -1.0014 * 2 pi * 1.4 MHz/G, in rad/(s T)
GAMMA_G = -1.0014 * TWO_PI * 1.4e6 / 1e-4
GAMMA_RB = TWO_PI * 5.746e6


@dataclass(frozen=True)
class CPTParams:
    Gamma: float = GAMMA_RB
    Omega: float = 0.035 * GAMMA_RB
    delta1: float = TWO_PI * 1e6
    delta2: float = TWO_PI * 1e6
    Delta1: float = 0.0
    Delta2: float = 0.0
    gamma_g: float = GAMMA_G
    T_prep: float = 1e-4
    T_detect: float = 2e-6
    strict_signs: bool = False

    def __post_init__(self):
        if not self.Gamma > 0:
            raise ConfigError(f"Gamma must be > 0, got {self.Gamma}")
        if not (self.T_prep >= 0 and self.T_detect > 0):
            raise ConfigError("T_prep must be >= 0 and T_detect > 0")

    def amplitude(self, B0: float) -> float:
        """Signal amplitude ``|gamma_g| B0`` in rad/s."""
        return abs(self.gamma_g) * B0

    def field(self, A: float) -> float:
        return A / abs(self.gamma_g)

    def with_(self, **changes) -> "CPTParams":
        return replace(self, **changes)


def ket(j: int) -> np.ndarray:
    v = np.zeros(5, dtype=complex)
    v[j - 1] = 1.0
    return v


def _proj(v) -> np.ndarray:
    return np.outer(v, v.conj())


DARK12 = (ket(1) - ket(2)) / math.sqrt(2.0)
DARK34 = (ket(3) - ket(4)) / math.sqrt(2.0)
BRIGHT12 = (ket(1) + ket(2)) / math.sqrt(2.0)
BRIGHT34 = (ket(3) + ket(4)) / math.sqrt(2.0)
RHO_DARK = 0.5 * (_proj(DARK12) + _proj(DARK34))
RHO_BRIGHT = 0.5 * (_proj(BRIGHT12) + _proj(BRIGHT34))
RHO_GROUND_MIX = np.diag([0.25, 0.25, 0.25, 0.25, 0.0]).astype(complex)


def build_hamiltonian(p: CPTParams, light_on: bool = True) -> np.ndarray:
    h = np.diag(
        [
            -p.delta1 - p.Delta1 / 2,
            -p.delta1 + p.Delta1 / 2,
            p.delta2 - p.Delta2 / 2,
            p.delta2 + p.Delta2 / 2,
            0.0,
        ]
    ).astype(complex)
    if light_on:
        h[:4, 4] = np.conj(p.Omega)
        h[4, :4] = p.Omega
    return h


def _jumps(p: CPTParams):
    return [math.sqrt(p.Gamma / 4.0) * np.outer(ket(j), ket(5)) for j in range(1, 5)]


def liouvillian(p: CPTParams, light_on: bool) -> np.ndarray:
    """Superoperator acting on row-major ``rho.ravel()``."""
    h = build_hamiltonian(p, light_on)
    eye = np.eye(5)
    sup = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for c in _jumps(p):
        cdc = c.conj().T @ c
        sup += np.kron(c, c.conj()) - 0.5 * (np.kron(cdc, eye) + np.kron(eye, cdc.T))
    return sup


def _lindblad_rhs(p: CPTParams, light_on: bool, drive):
    h0 = build_hamiltonian(p, light_on)
    jumps = _jumps(p)

    def rhs(t, y):
        r = y.reshape(5, 5)
        h = h0 if drive is None else h0 + drive(t)
        d = -1j * (h @ r - r @ h)
        for c in jumps:
            cd = c.conj().T
            d += c @ r @ cd - 0.5 * (cd @ c @ r + r @ cd @ c)
        return d.ravel()

    return rhs


def check_density_matrix(rho: np.ndarray, herm_tol=1e-10, trace_tol=1e-8, pos_tol=1e-8, error=ConfigError) -> None:
    """Raise ``error`` unless rho is Hermitian, unit-trace and positive within tolerance."""
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        raise error("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > trace_tol:
        raise error(f"density matrix trace is {np.trace(rho).real:.12g}")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -pos_tol:
        raise error("density matrix has a negative eigenvalue")


def lindblad_evolve(
    rho0: np.ndarray,
    p: CPTParams,
    duration: float,
    light_on: bool = True,
    drive=None,
    breakpoints=(),
    rtol: float = 1e-10,
    atol: float = 1e-13,
) -> np.ndarray:
    """Evolve ``rho0`` under the five-level master equation.

    Without ``drive`` the generator is constant and the exact matrix exponential
    is used. ``drive(t)`` adds a time-dependent 5x5 Hermitian term; the adaptive
    integrator is then restarted at every entry of ``breakpoints``.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    check_density_matrix(rho0)
    if duration < 0:
        raise ConfigError("duration must be >= 0")
    if drive is None:
        out = (expm(liouvillian(p, light_on) * duration) @ rho0.ravel()).reshape(5, 5)
    else:
        rhs = _lindblad_rhs(p, light_on, drive)
        pts = np.unique(np.concatenate(([0.0, duration], [b for b in breakpoints if 0 < b < duration])))
        y = rho0.ravel()
        for a, b in zip(pts[:-1], pts[1:]):
            sol = solve_ivp(rhs, (a, b), y, method="DOP853", rtol=rtol, atol=atol)
            if sol.status != 0:
                raise IntegrationError(f"Lindblad integration failed on [{a}, {b}]: {sol.message}")
            y = sol.y[:, -1]
        out = y.reshape(5, 5)
    out = 0.5 * (out + out.conj().T)
    check_density_matrix(out, error=IntegrationError)
    return out


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Uhlmann fidelity ``Tr sqrt(sqrt(rho) sigma sqrt(rho))`` (not squared)."""
    s = _psd_sqrt(rho)
    return float(np.sum(np.sqrt(np.clip(np.linalg.eigvalsh(s @ sigma @ s), 0.0, None))))


def prepare_dark_states(p: CPTParams, rho_in: np.ndarray | None = None):
    """Pump the ground mixture for ``T_prep``; returns ``(rho, fidelity vs the dark pair)``."""
    rho = lindblad_evolve(RHO_GROUND_MIX if rho_in is None else rho_in, p, p.T_prep, light_on=True)
    return rho, fidelity(rho, RHO_DARK)


def _embed(u12: np.ndarray, u34: np.ndarray, phase12: complex = 1.0, phase34: complex = 1.0) -> np.ndarray:
    u = np.zeros((5, 5), dtype=complex)
    u[:2, :2] = phase12 * u12
    u[2:4, 2:4] = phase34 * u34
    u[4, 4] = 1.0
    return u


def _lab_frame(u_int: np.ndarray, train: PulseTrain) -> np.ndarray:
    """Attach the drive rotation ``exp(-i N pi sigma_x / 2)`` accumulated by the N pulses."""
    if train.pulse_count % 2:
        return -1j * np.array([[0, 1], [1, 0]], dtype=complex) @ u_int
    return (-1.0) ** (train.pulse_count // 2) * u_int


def sensing_unitary(
    sig: TargetSignal,
    train_pdd: PulseTrain,
    train_cp: PulseTrain,
    p: CPTParams,
    noise_pdd: NoiseRealization | None = None,
    noise_cp: NoiseRealization | None = None,
    n_values=None,
) -> np.ndarray:
    """Ground-block propagators for sub-sequences of length n; shape (len(n_values), 5, 5)."""
    if (train_pdd.tau_m, train_pdd.n, train_pdd.width) != (train_cp.tau_m, train_cp.n, train_cp.width):
        raise ConfigError("PDD and CP trains must share tau_m, n and pulse width")
    n_values = np.atleast_1d([train_pdd.n] if n_values is None else n_values)
    sig_cp = TargetSignal(sig.amplitude, sig.omega, sig.beta + math.pi) if p.strict_signs else sig
    u12 = interaction_unitaries(train_pdd, sig, noise_pdd, n_values)
    u34 = interaction_unitaries(train_cp, sig_cp, noise_cp, n_values)
    out = np.empty((len(n_values), 5, 5), dtype=complex)
    for i, n in enumerate(n_values):
        t = n * train_pdd.tau_m
        out[i] = _embed(
            _lab_frame(u12[i], train_pdd.with_(n=int(n))),
            _lab_frame(u34[i], train_cp.with_(n=int(n))),
            np.exp(1j * p.delta1 * t),
            np.exp(-1j * p.delta2 * t),
        )
    return out


def free_decay(rho: np.ndarray, p: CPTParams, t: float) -> np.ndarray:
    """Light-off relaxation of |5> into the four ground states (commutes with the ground unitaries)."""
    rho = rho.copy()
    keep = math.exp(-p.Gamma * t)
    lost = rho[4, 4].real * (1.0 - keep)
    rho[4, 4] *= keep
    rho[:4, 4] *= math.exp(-0.5 * p.Gamma * t)
    rho[4, :4] *= math.exp(-0.5 * p.Gamma * t)
    rho[np.arange(4), np.arange(4)] += lost / 4.0
    return rho


def sensing_evolution(
    rho: np.ndarray,
    sig: TargetSignal,
    train_pdd: PulseTrain,
    train_cp: PulseTrain,
    p: CPTParams,
    noise_pdd: NoiseRealization | None = None,
    noise_cp: NoiseRealization | None = None,
    light_on: bool = False,
) -> np.ndarray:
    """Light-off sensing: {1,2} under the PDD train, {3,4} under the CP train."""
    if light_on:
        raise ConfigError("the CPT light must be off during sensing")
    u = sensing_unitary(sig, train_pdd, train_cp, p, noise_pdd, noise_cp)[0]
    out = u @ rho @ u.conj().T
    out = free_decay(out, p, train_pdd.duration)
    return 0.5 * (out + out.conj().T)


def sensing_drive(sig: TargetSignal, train_pdd: PulseTrain, train_cp: PulseTrain, p: CPTParams):
    """Time-dependent 5x5 ground-state term for square pulses: signal on both blocks plus the pi pulses.

    Frame: rotating frame of the Hamiltonian (light off), ground pairs addressed
    as ``M(t)/2 sigma_z + Omega_k(t)/2 sigma_x``.
    """
    if train_pdd.is_delta or train_cp.is_delta:
        raise ConfigError("the full five-level drive needs square pulses")
    sz = np.array([[1, 0], [0, -1]], dtype=complex)
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    s34 = -1.0 if p.strict_signs else 1.0
    c_pdd, c_cp = pulse_centers(train_pdd), pulse_centers(train_cp)
    w = train_pdd.width
    rabi = math.pi / w

    def on(c, t):
        return bool(np.any(np.abs(t - c) < 0.5 * w))

    def drive(t):
        m = float(sig.value(t))
        d = np.zeros((5, 5), dtype=complex)
        d[:2, :2] = 0.5 * m * sz + (0.5 * rabi * sx if on(c_pdd, t) else 0)
        d[2:4, 2:4] = 0.5 * s34 * m * sz + (0.5 * rabi * sx if on(c_cp, t) else 0)
        return d

    edges = np.concatenate([c_pdd - w / 2, c_pdd + w / 2, c_cp - w / 2, c_cp + w / 2])
    return drive, np.sort(edges)


def detection_functional(p: CPTParams) -> np.ndarray:
    """Row vector ``f`` with ``rho55(after detection) = f @ rho.ravel()``."""
    prop = expm(liouvillian(p, light_on=True) * p.T_detect)
    return prop[24, :]


@dataclass
class Detector:
    """Caches the detection map and the bright-state normalization for one parameter set."""

    p: CPTParams
    functional: np.ndarray = field(init=False, repr=False)
    a: float = field(init=False)

    def __post_init__(self):
        self.functional = detection_functional(self.p)
        self.a = float((self.functional @ RHO_BRIGHT.ravel()).real)

    def __call__(self, rho: np.ndarray):
        """``(rho55, rho55 / a)`` for a state or a stack of states."""
        rho = np.asarray(rho)
        flat = rho.reshape(rho.shape[:-2] + (25,))
        r55 = np.real(flat @ self.functional)
        return r55, r55 / self.a


def detect_rho55(rho: np.ndarray, p: CPTParams):
    """Apply the query light for ``T_detect``; returns ``(rho55, rho55 / a)``."""
    check_density_matrix(rho)
    r55, norm = Detector(p)(rho)
    return float(r55), float(norm)


def tilde_rho55(series) -> np.ndarray:
    series = np.asarray(series, dtype=float)
    if series.size < 2:
        raise ConfigError("need at least two samples")
    return series - series.mean()
