"""Two-level probe dynamics under an AC signal and a PDD/CP pulse train.

Everything is computed in the interaction picture with respect to the pulse
drive, where ``H_I(t) = M(t)/2 * (cos(alpha) sigma_z + sin(alpha) sigma_y)``
and ``M(t) = S(t) + A * noise(t)``. The probe starts in ``(|up> + |down>)/sqrt(2)``.

Three independent routes to the accumulated phase exist and are cross-checked
in the test suite:

* :func:`phase_ideal_exact` sums the exact antiderivative over constant-h segments;
* :func:`phase_closed_form` evaluates the summed trigonometric expressions;
* :func:`propagate_numeric` integrates the Schroedinger equation with an adaptive
  Runge-Kutta stepper.

:func:`interaction_unitaries` is the fast path used by scans: exact diagonal
propagators between pulses and fourth-order Magnus steps inside square pulses.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConfigError, IntegrationError, SingularConfigurationError
from .sequences import PDD, PulseTrain, pulse_centers, segments
from .signals import NoiseRealization, TargetSignal, WhiteGaussian

SQRT3 = math.sqrt(3.0)
PLUS = np.array([1.0, 1.0], dtype=complex) / math.sqrt(2.0)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.T.copy()

_SMALL = 1e-8


@dataclass(frozen=True)
class PhasePair:
    phi_z: float
    phi_y: float = 0.0

    @property
    def magnitude(self) -> float:
        return math.hypot(self.phi_z, self.phi_y)


@dataclass(frozen=True)
class DecayChannel:
    gamma: float

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ConfigError(f"decay rate must be >= 0, got {self.gamma}")


# --- closed forms ------------------------------------------------------------


def _dirichlet(n: int, x):
    """sin(n x) / sin(x) with a Taylor fallback at the removable singularity x = 0."""
    x = np.asarray(x, dtype=float)
    s = np.sin(x)
    small = np.abs(x) < _SMALL
    safe = np.where(small, 1.0, s)
    return np.where(small, n * (1.0 - (n * n - 1.0) * x * x / 6.0), np.sin(n * x) / safe)


def _detuning(train: PulseTrain, sig: TargetSignal):
    return sig.omega * (train.tau_m - sig.half_period) / 2.0


def phase_ideal_exact(train: PulseTrain, sig: TargetSignal) -> float:
    """Accumulated phase for delta pulses by exact per-segment integration."""
    return accumulated_phase(train, sig, train.duration)


def accumulated_phase(train: PulseTrain, sig: TargetSignal, t: float) -> float:
    """``int_0^t S(t') h(t') dt'`` for delta pulses."""
    if not train.is_delta:
        raise ConfigError("accumulated_phase requires delta-shaped pulses")
    a, b, s = segments(train)
    b = np.minimum(b, t)
    keep = a < t
    return float(np.sum(s[keep] * sig.integral(a[keep], b[keep])))


def phase_closed_form(train: PulseTrain, sig: TargetSignal) -> float:
    """Summed closed form of the accumulated phase for delta pulses.

    With ``x = omega (tau_m - tau) / 2``:

    PDD: ``2 A/omega cos(n x + beta) cos(x) sin(n x)/sin(x)``
    CP:  ``2 A/omega sin(n x + beta) (1 + sin x) sin(n x)/sin(x)``
    """
    n = train.n
    x = _detuning(train, sig)
    pref = 2.0 * sig.amplitude / sig.omega * _dirichlet(n, x)
    if train.kind == PDD:
        out = pref * np.cos(n * x + sig.beta) * np.cos(x)
    else:
        out = pref * np.sin(n * x + sig.beta) * (1.0 + np.sin(x))
    return float(out)


def phase_lockin_linear(kind: str, n: int, sig: TargetSignal) -> float:
    """Phase at tau_m = tau: ``n 2A/omega cos(beta)`` (PDD) or ``... sin(beta)`` (CP)."""
    rate = 2.0 * sig.amplitude / sig.omega
    return n * rate * (math.cos(sig.beta) if kind == PDD else math.sin(sig.beta))


def _alternating_sum(theta1: float, psi: float, count: int) -> complex:
    """``sum_{j=1}^{count} (-1)**(j-1) exp(i (theta1 + (j-1) psi))``."""
    if count == 0:
        return 0j
    r = -np.exp(1j * psi)
    d = r - 1.0
    if abs(d) < _SMALL:
        geo = count + count * (count - 1) / 2.0 * d + count * (count - 1) * (count - 2) / 6.0 * d * d
    else:
        geo = (1.0 - r**count) / (1.0 - r)
    return complex(np.exp(1j * theta1) * geo)


def phase_finite_pulse(train: PulseTrain, sig: TargetSignal) -> PhasePair:
    """First-order phases (phi_z, phi_y) for square pulses of width T_Omega.

    ``phi_z = int S cos(alpha)`` and ``phi_y = int S sin(alpha)`` over [0, n tau_m].
    Exact for the given pulse shape; only the time ordering is neglected.
    """
    if train.is_delta:
        return PhasePair(phase_closed_form(train, sig), 0.0)
    w = sig.omega
    wp = train.omega_pulse
    if abs(w - wp) < 1e-6 * w:
        raise SingularConfigurationError(
            f"signal frequency {w} coincides with the pulse Rabi rate pi/T_Omega = {wp}"
        )
    A, beta = sig.amplitude, sig.beta
    psi = w * train.tau_m
    N = train.pulse_count
    lam = train.offset
    kern = math.cos(w * train.width / 2.0) * (1.0 / (w + wp) - 1.0 / (w - wp))
    # sum_j (-1)^(j-1) exp(i(omega t_j + beta)), t_j = (j - lam) tau_m
    alt = _alternating_sum((1.0 - lam) * psi + beta, psi, N)
    end_sign = -1.0 if N % 2 else 1.0
    phi_z = (A / w) * (math.cos(beta) - end_sign * math.cos(train.n * psi + beta)) - (A / w) * wp * kern * alt.real
    phi_y = A * kern * alt.imag
    return PhasePair(float(phi_z), float(phi_y))


# --- propagators -------------------------------------------------------------


def su2(vx, vy, vz) -> np.ndarray:
    """exp(-i (vx sx + vy sy + vz sz)) for arrays of rotation vectors; returns (..., 2, 2)."""
    vx, vy, vz = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (vx, vy, vz)))
    norm = np.sqrt(vx * vx + vy * vy + vz * vz)
    c = np.cos(norm)
    k = np.sinc(norm / np.pi)  # sin|v| / |v|
    out = np.empty(vx.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c - 1j * k * vz
    out[..., 1, 1] = c + 1j * k * vz
    out[..., 0, 1] = -1j * k * vx - k * vy
    out[..., 1, 0] = -1j * k * vx + k * vy
    return out


def dyson_second_order(phi: PhasePair) -> np.ndarray:
    """Propagator ``exp(-i (phi_z sz + phi_y sy) / 2)``; valid while |phi| <~ 1."""
    if phi.magnitude > 1.0:
        warnings.warn(
            f"phase magnitude {phi.magnitude:.3g} > 1: second-order expansion is outside its validity domain",
            RuntimeWarning,
            stacklevel=2,
        )
    return su2(0.0, phi.phi_y / 2.0, phi.phi_z / 2.0)


def rotation_phases(u: np.ndarray) -> tuple[float, float, float]:
    """Rotation vector (phi_x, phi_y, phi_z) of ``u = exp(-i phi.sigma / 2)`` (global phase removed)."""
    u = u / np.sqrt(np.linalg.det(u))
    c = float(np.clip(u[0, 0].real, -1, 1))
    sx, sy, sz = -u[0, 1].imag, -u[0, 1].real, -u[0, 0].imag
    s = math.sqrt(sx * sx + sy * sy + sz * sz)
    theta = 2.0 * math.atan2(s, c)
    if s == 0:
        return 0.0, 0.0, 0.0
    f = theta / s
    return f * sx, f * sy, f * sz


def _field_integral(sig, noise, a, b):
    out = sig.integral(a, b)
    if noise is not None and not noise.is_zero:
        out = out + sig.amplitude * noise.integral(a, b)
    return out


def _field(sig, noise, t):
    out = sig.value(t)
    if noise is not None and not noise.is_zero:
        out = out + sig.amplitude * noise.value(t)
    return out


def _window_unitaries(train, sig, noise, substeps):
    """Propagator across every square pulse window, shape (pulses, 2, 2)."""
    c = pulse_centers(train)
    w = train.width
    starts = c - 0.5 * w
    grid = starts[:, None] + w * np.linspace(0.0, 1.0, substeps + 1)[None, :]
    if noise is not None and not noise.is_zero:
        extra = [noise.breakpoints(s, s + w) for s in starts]
        width = max((len(e) for e in extra), default=0)
        if width:
            pad = np.empty((len(starts), width))
            for i, e in enumerate(extra):
                pad[i, : len(e)] = e
                pad[i, len(e):] = starts[i] + w
            grid = np.sort(np.concatenate((grid, pad), axis=1), axis=1)
    lo, hi = grid[:, :-1], grid[:, 1:]
    h = hi - lo
    mid = 0.5 * (lo + hi)
    t1 = mid - h * (SQRT3 / 6.0)
    t2 = mid + h * (SQRT3 / 6.0)
    wp = train.omega_pulse
    j = np.arange(len(c))[:, None]

    def comps(t):
        # evaluate inside the half-open step so piecewise-constant noise takes the step's value
        ang = j * math.pi + wp * (t - starts[:, None])
        m = _field(sig, noise, t)
        return m * np.cos(ang), m * np.sin(ang)

    z1, y1 = comps(t1)
    z2, y2 = comps(t2)
    vz = h * (z1 + z2) / 4.0
    vy = h * (y1 + y2) / 4.0
    vx = -(SQRT3 / 24.0) * h * h * (z2 * y1 - y2 * z1)
    steps = su2(vx, vy, vz)
    out = np.broadcast_to(np.eye(2, dtype=complex), (len(c), 2, 2)).copy()
    for k in range(steps.shape[1]):
        out = steps[:, k] @ out
    return out


def interaction_unitaries(
    train: PulseTrain,
    sig: TargetSignal,
    noise: NoiseRealization | None = None,
    n_values=None,
    substeps: int = 24,
) -> np.ndarray:
    """Interaction-picture propagators at ``t_n = n tau_m`` for each n in ``n_values``.

    Each entry is the propagator of the n-interval sequence of the same kind,
    spacing and pulse width (a sub-sequence of ``train``). Default: ``[train.n]``.
    Returns an array of shape (len(n_values), 2, 2).
    """
    n_values = np.atleast_1d(np.asarray([train.n] if n_values is None else n_values, dtype=int))
    if np.any(n_values < 0) or np.any(n_values > train.n):
        raise ConfigError("requested n outside the sequence length")
    c = pulse_centers(train)
    w = train.width
    tau_m = train.tau_m
    npulse = len(c)
    starts, ends = c - 0.5 * w, c + 0.5 * w
    prev_end = np.concatenate(([0.0], ends[:-1]))
    # free evolution before pulse j (0-based) happens with h = (-1)**j
    sign = np.where(np.arange(npulse) % 2 == 0, 1.0, -1.0)
    phi_free = sign * _field_integral(sig, noise, prev_end, starts)
    t_n = n_values * tau_m
    included = np.searchsorted(c, t_n - 1e-12 * tau_m, side="left")
    tail_sign = np.where(included % 2 == 0, 1.0, -1.0)

    if train.is_delta:
        # everything commutes: a single accumulated phase per n
        before = np.concatenate(([0.0], np.cumsum(phi_free)))
        last_end = np.where(included > 0, c[np.maximum(included - 1, 0)], 0.0)
        phi = before[included] + tail_sign * _field_integral(sig, noise, last_end, t_n)
        out = np.zeros((len(n_values), 2, 2), dtype=complex)
        out[:, 0, 0] = np.exp(-0.5j * phi)
        out[:, 1, 1] = np.exp(0.5j * phi)
        return out

    windows = _window_unitaries(train, sig, noise, substeps)
    # cumulative[L] = propagator right after the L-th pulse window
    cumulative = np.empty((npulse + 1, 2, 2), dtype=complex)
    u = np.eye(2, dtype=complex)
    cumulative[0] = u
    for k in range(npulse):
        e = np.exp(-0.5j * phi_free[k])
        u = np.array([[e * u[0, 0], e * u[0, 1]], [np.conj(e) * u[1, 0], np.conj(e) * u[1, 1]]])
        u = windows[k] @ u
        cumulative[k + 1] = u

    last_end = np.where(included > 0, ends[np.maximum(included - 1, 0)], 0.0)
    last_end = np.minimum(last_end, t_n)
    phi_tail = tail_sign * _field_integral(sig, noise, last_end, t_n)
    base = cumulative[included]
    e = np.exp(-0.5j * phi_tail)
    out = np.empty_like(base)
    out[:, 0, :] = e[:, None] * base[:, 0, :]
    out[:, 1, :] = np.conj(e)[:, None] * base[:, 1, :]
    return out


def sigma_x_expectation(unitaries: np.ndarray) -> np.ndarray:
    """<sigma_x> of ``U |+>`` for a stack of propagators."""
    psi = unitaries @ PLUS
    return 2.0 * np.real(np.conj(psi[..., 0]) * psi[..., 1])


def readout_from_unitaries(unitaries: np.ndarray):
    """(P_up, P_z) after the recombination pulse, for a stack of propagators."""
    sx = sigma_x_expectation(unitaries)
    return (1.0 - sx) / 2.0, -sx


def readout_p_up(phi):
    """``(1 - cos(phi)) / 2``; a PhasePair uses its magnitude."""
    if isinstance(phi, PhasePair):
        phi = phi.magnitude
    return (1.0 - np.cos(phi)) / 2.0


def readout_p_z(phi):
    """``-cos(phi)``; a PhasePair uses its magnitude."""
    if isinstance(phi, PhasePair):
        phi = phi.magnitude
    return -np.cos(phi)


def _breakpoints(train: PulseTrain, noise, t_end: float) -> np.ndarray:
    c = pulse_centers(train)
    if train.is_delta:
        pts = [c]
    else:
        pts = [c - 0.5 * train.width, c + 0.5 * train.width]
    if noise is not None and not noise.is_zero:
        pts.append(noise.breakpoints(0.0, t_end))
    pts = np.concatenate(pts + [[0.0, t_end]])
    pts = np.unique(pts[(pts >= 0.0) & (pts <= t_end)])
    return pts


def _alpha_on(train: PulseTrain, a: float, b: float):
    """alpha(t) on [a, b] as (alpha at a, slope), assuming [a, b] lies on one piece."""
    c = pulse_centers(train)
    mid = 0.5 * (a + b)
    if train.is_delta:
        return math.pi * np.searchsorted(c, mid, side="right"), 0.0
    w = train.width
    done = np.searchsorted(c + 0.5 * w, mid, side="right")
    if done < len(c) and c[done] - 0.5 * w <= mid:
        return math.pi * done + train.omega_pulse * (a - (c[done] - 0.5 * w)), train.omega_pulse
    return math.pi * done, 0.0


def propagate_numeric(
    train: PulseTrain,
    sig: TargetSignal,
    noise: NoiseRealization | None = None,
    state0=None,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    t_end: float | None = None,
) -> np.ndarray:
    """Integrate the interaction-picture Schroedinger equation with adaptive RK (DOP853).

    Steps are forced to break at every pulse edge (or delta-pulse position) and
    at every noise discontinuity.
    """
    psi = PLUS.copy() if state0 is None else np.asarray(state0, dtype=complex).copy()
    if abs(np.vdot(psi, psi).real - 1.0) > 1e-10:
        raise ConfigError("initial state must be normalized")
    t_end = train.duration if t_end is None else float(t_end)
    pts = _breakpoints(train, noise, t_end)
    for a, b in zip(pts[:-1], pts[1:]):
        a0, rate = _alpha_on(train, a, b)

        # piecewise-constant noise: sample at the segment midpoint so stage
        # evaluations at the right edge never pick up the next draw
        held = None if noise is None or noise.is_zero else sig.amplitude * float(noise.value(0.5 * (a + b)))
        if held is not None and not isinstance(noise.model, WhiteGaussian):
            held = None

        def rhs(t, y, a=a, a0=a0, rate=rate, held=held):
            ang = a0 + rate * (t - a)
            m = sig.value(t) + held if held is not None else _field(sig, noise, t)
            cz, cy = math.cos(ang), math.sin(ang)
            # -i H y with H = m/2 (cz sz + cy sy)
            return -0.5j * m * np.array([cz * y[0] - 1j * cy * y[1], 1j * cy * y[0] - cz * y[1]])

        sol = solve_ivp(rhs, (a, b), psi, method="DOP853", rtol=rtol, atol=atol)
        if sol.status != 0:
            raise IntegrationError(f"integration failed on [{a}, {b}]: {sol.message}")
        psi = sol.y[:, -1]
    return psi


def coherence_closed_form(train: PulseTrain, sig: TargetSignal, decay: DecayChannel, t: float) -> complex:
    """rho_12(t) = exp(-gamma t / 2) exp(-i phi(t)) / 2 for delta pulses from |+>."""
    return 0.5 * math.exp(-0.5 * decay.gamma * t) * np.exp(-1j * accumulated_phase(train, sig, t))


def evolve_with_decay(
    train: PulseTrain,
    sig: TargetSignal,
    decay: DecayChannel,
    t: float,
    rho0=None,
    rtol: float = 1e-11,
    atol: float = 1e-13,
) -> np.ndarray:
    """Integrate the interaction-picture Lindblad equation with a ground-state decay channel.

    For delta pulses the jump operator in the rotating frame is sigma_- while
    h = +1 and sigma_+ while h = -1; the Hamiltonian is ``S(t) h sigma_z / 2``.
    """
    if not train.is_delta:
        raise ConfigError("evolve_with_decay supports delta-shaped pulses")
    rho = np.outer(PLUS, PLUS.conj()) if rho0 is None else np.asarray(rho0, dtype=complex).copy()
    g = decay.gamma
    pts = _breakpoints(train, None, float(t))
    for a, b in zip(pts[:-1], pts[1:]):
        h = 1.0 if np.searchsorted(pulse_centers(train), 0.5 * (a + b)) % 2 == 0 else -1.0
        jump = SIGMA_MINUS if h > 0 else SIGMA_PLUS
        jdj = jump.conj().T @ jump

        def rhs(s, y, h=h, jump=jump, jdj=jdj):
            r = y.reshape(2, 2)
            ham = 0.5 * sig.value(s) * h * SIGMA_Z
            d = -1j * (ham @ r - r @ ham)
            if g:
                d = d + g * (jump @ r @ jump.conj().T - 0.5 * (jdj @ r + r @ jdj))
            return d.ravel()

        sol = solve_ivp(rhs, (a, b), rho.ravel(), method="DOP853", rtol=rtol, atol=atol)
        if sol.status != 0:
            raise IntegrationError(f"Lindblad integration failed on [{a}, {b}]: {sol.message}")
        rho = sol.y[:, -1].reshape(2, 2)
    return rho
