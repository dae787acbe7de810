"""Combining the PDD/CP records and recovering (omega, A, beta).

Weak regime: the population sum over a tau_m scan is an even function of the
detuning, so its peak marks the lock-in point and a least-squares fit of the
Dirichlet-kernel shape yields A.

Strong regime: at a fixed tau_m the sigma_z expectations oscillate in n with
rates ``2A|cos b|/omega`` and ``2A|sin b|/omega``; a DFT over even n localizes
into four peaks exactly at lock-in (IPR 1/4) and smears out elsewhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import AliasingError, ConfigError, EstimationError, NoLockError, RegimeError, ResolutionError

WEAK = "weak_Pup"
STRONG = "strong_Pz"
TAU_SCAN = "tau_m_scan"
N_SCAN = "n_scan"


@dataclass(frozen=True)
class MeasurementRecord:
    axis: str
    abscissa: np.ndarray
    p_pdd: np.ndarray
    p_cp: np.ndarray
    regime: str

    def __post_init__(self):
        if self.axis not in (TAU_SCAN, N_SCAN):
            raise ConfigError(f"unknown record axis {self.axis!r}")
        if self.regime not in (WEAK, STRONG):
            raise ConfigError(f"unknown regime {self.regime!r}")
        for name in ("abscissa", "p_pdd", "p_cp"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.abscissa.shape == self.p_pdd.shape == self.p_cp.shape) or self.abscissa.ndim != 1:
            raise ConfigError("record arrays must be one-dimensional and of equal length")
        lo = 0.0 if self.regime == WEAK else -1.0
        tol = 1e-9
        for name in ("p_pdd", "p_cp"):
            v = getattr(self, name)
            if np.any(v < lo - tol) or np.any(v > 1.0 + tol):
                raise ConfigError(f"{name} outside [{lo:g}, 1] for regime {self.regime}")


@dataclass(frozen=True)
class Spectrum:
    bins: np.ndarray
    amplitudes: np.ndarray
    n_m: int
    excluded_low_bins: int = 2

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.amplitudes)

    @property
    def omega_ratio(self) -> np.ndarray:
        """Bin positions in units of omega: ``2 pi k / n_m``."""
        return 2.0 * math.pi * self.bins / self.n_m


@dataclass
class LockInEstimate:
    omega_hat: float
    A_hat: float
    beta_hat_abs: float | None
    ipr_curve: np.ndarray | None = None
    shift_D: float | None = None
    fft_peaks: tuple | None = None
    extras: dict = field(default_factory=dict)


def _need(rec: MeasurementRecord, regime: str):
    if rec.regime != regime:
        raise RegimeError(f"expected a {regime} record, got {rec.regime}")


def weak_combined(rec: MeasurementRecord) -> np.ndarray:
    _need(rec, WEAK)
    return rec.p_pdd + rec.p_cp


def strong_combined(rec: MeasurementRecord) -> np.ndarray:
    _need(rec, STRONG)
    return rec.p_pdd + rec.p_cp


# --- weak regime ---------------------------------------------------------------


def weak_model(tau_m, A: float, omega: float, n: int, tau0: float):
    """Small-phase population sum ``(A/omega)^2 [sin(n x)/sin(x)]^2``, ``x = omega (tau_m - tau0)/2``."""
    x = omega * (np.asarray(tau_m, dtype=float) - tau0) / 2.0
    s = np.sin(x)
    small = np.abs(x) < 1e-8
    d = np.where(small, n, np.sin(n * x) / np.where(small, 1.0, s))
    return (A / omega) ** 2 * d * d


def symmetry_score(curve, center: int) -> float:
    """Pearson correlation of the curve with its mirror about index ``center``.

    Uses the widest window symmetric about the center that fits in the array.
    """
    curve = np.asarray(curve, dtype=float)
    m = min(center, len(curve) - 1 - center)
    if m < 1:
        return 0.0
    sub = curve[center - m : center + m + 1]
    if np.ptp(sub) == 0:
        return 1.0
    return float(np.corrcoef(sub, sub[::-1])[0, 1])


def locate_lock_in_weak(tau_grid, curve, n: int, min_lobe_points: int = 8):
    """Return ``(tau_hat, symmetry_score)`` from a weak-regime tau_m scan.

    The main lobe of the n-pulse response spans ``|tau_m - tau| < 2 tau / n``;
    fewer than ``min_lobe_points`` grid points inside it is a resolution error.
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    curve = np.asarray(curve, dtype=float)
    if tau_grid.shape != curve.shape or tau_grid.size < 3:
        raise ConfigError("tau grid and curve must have equal length >= 3")
    steps = np.diff(tau_grid)
    if np.any(steps <= 0) or np.ptp(steps) > 1e-6 * abs(steps.mean()):
        raise ConfigError("tau grid must be uniform and increasing")
    i = int(np.argmax(curve))
    tau_hat = float(tau_grid[i])
    inside = int(np.count_nonzero(np.abs(tau_grid - tau_hat) < 2.0 * tau_hat / n))
    if inside < min_lobe_points:
        raise ResolutionError(
            f"only {inside} grid points under the main lobe (need {min_lobe_points}); refine the grid"
        )
    return tau_hat, symmetry_score(curve, i)


@dataclass(frozen=True)
class WeakFit:
    A_hat: float
    beta_hat_abs: float
    tau0_hat: float
    offset: float
    residual_rms: float


def beta_from_populations(p_pdd: float, p_cp: float) -> float:
    """|beta| from the two populations at lock-in, where |phi| = arccos(1 - 2P)."""
    phi_pdd = math.acos(float(np.clip(1.0 - 2.0 * p_pdd, -1.0, 1.0)))
    phi_cp = math.acos(float(np.clip(1.0 - 2.0 * p_cp, -1.0, 1.0)))
    return math.atan2(phi_cp, phi_pdd)


def fit_weak(
    tau_grid,
    curve,
    tau_hat: float,
    omega: float,
    n: int,
    p_pdd=None,
    p_cp=None,
    fit_offset: bool = False,
) -> WeakFit:
    """Least-squares fit of ``weak_model`` for (A, tau0[, offset]) and |beta| at lock-in.

    ``p_pdd``/``p_cp`` are the per-channel curves on the same grid; when given,
    |beta| is read from them at the grid point nearest the fitted lock-in.
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    curve = np.asarray(curve, dtype=float)
    peak = float(curve[np.argmin(np.abs(tau_grid - tau_hat))])
    a0 = omega * math.sqrt(max(peak, 1e-300)) / n
    step = float(np.mean(np.diff(tau_grid)))

    def resid(p):
        base = weak_model(tau_grid, p[0], omega, n, p[1])
        return base + (p[2] if fit_offset else 0.0) - curve

    p0 = [a0, tau_hat] + ([0.0] if fit_offset else [])
    scale = [max(a0, 1e-12), step] + ([max(peak, 1e-12)] if fit_offset else [])
    sol = least_squares(resid, p0, x_scale=scale, method="lm", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=2000)
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    A_hat, tau0 = abs(float(sol.x[0])), float(sol.x[1])
    if not sol.success or not np.all(np.isfinite(sol.x)) or A_hat == 0 or abs(tau0 - tau_hat) > 0.5 * np.ptp(tau_grid):
        raise EstimationError(f"weak-regime fit did not converge: {sol.message}", residual=rms)
    if p_pdd is not None and p_cp is not None:
        k = int(np.argmin(np.abs(tau_grid - tau0)))
        beta = beta_from_populations(np.asarray(p_pdd)[k], np.asarray(p_cp)[k])
    else:
        beta = float("nan")
    return WeakFit(A_hat, beta, tau0, float(sol.x[2]) if fit_offset else 0.0, rms)


# --- strong regime -------------------------------------------------------------


def fft_spectrum(series, n_m: int, excluded_low_bins: int = 2) -> Spectrum:
    """``F_k = sum_{n=2,4..n_m} P_n exp(-2 pi i n k / n_m)`` for the retained bins k.

    ``series`` holds the values at n = 2, 4, ..., n_m.
    """
    series = np.asarray(series, dtype=float)
    if n_m % 2 or n_m < 16:
        raise ConfigError(f"n_m must be even and >= 16, got {n_m}")
    m = n_m // 2
    if series.shape != (m,):
        raise ConfigError(f"expected {m} samples (n = 2..{n_m} even), got {series.shape}")
    k = np.arange(m)
    full = np.exp(-2j * math.pi * k / m) * np.fft.fft(series)
    keep = k >= excluded_low_bins
    return Spectrum(k[keep], full[keep], n_m, excluded_low_bins)


def ipr(spec: Spectrum) -> float:
    mag = spec.magnitude
    top = mag.max(initial=0.0)
    if top == 0:
        return 0.0
    p = (mag / top) ** 2
    total = p.sum()
    return float((p * p).sum() / total**2)


def locate_lock_in_strong(tau_grid, ipr_values, tau_true: float | None = None, min_contrast: float = 0.02):
    """``(tau_hat, shift_D)``; shift_D is ``|tau_hat - tau_true|`` when the truth is supplied."""
    tau_grid = np.asarray(tau_grid, dtype=float)
    ipr_values = np.asarray(ipr_values, dtype=float)
    if tau_grid.shape != ipr_values.shape or tau_grid.size < 2:
        raise ConfigError("tau grid and IPR curve must have equal length >= 2")
    if np.ptp(ipr_values) < min_contrast:
        raise NoLockError(f"IPR curve is flat (max - min = {np.ptp(ipr_values):.3g} < {min_contrast})")
    tau_hat = float(tau_grid[int(np.argmax(ipr_values))])
    return tau_hat, (abs(tau_hat - tau_true) if tau_true is not None else None)


def peak_bin(spec: Spectrum, upper: float | None = None) -> float:
    """Interpolated bin of the largest |F_k| with k <= upper (default: half the bins)."""
    m = spec.n_m // 2
    upper = m / 2 if upper is None else upper
    mag = spec.magnitude
    sel = np.nonzero(spec.bins <= upper)[0]
    if sel.size == 0:
        raise ConfigError("no retained bins in the search range")
    i = int(sel[np.argmax(mag[sel])])
    if mag[i] == 0:
        return 0.0
    k = float(spec.bins[i])
    if 0 < i < len(mag) - 1:
        a, b, c = mag[i - 1], mag[i], mag[i + 1]
        den = a - 2 * b + c
        if den < 0:
            k += 0.5 * (a - c) / den
    return k


def amplitude_phase_from_peaks(omega_fft_pdd: float, omega_fft_cp: float, omega: float):
    """``A = sqrt(w_pdd^2 + w_cp^2)/2`` and ``|beta| = arctan(w_cp / w_pdd)``."""
    A = 0.5 * math.hypot(omega_fft_pdd, omega_fft_cp)
    beta = math.atan2(abs(omega_fft_cp), abs(omega_fft_pdd))
    return A, beta


def extract_A_beta_strong(spec_pdd: Spectrum, spec_cp: Spectrum, omega: float, floor: float = 1e-9):
    """Per-channel peak search, then ``(A_hat, beta_hat_abs, (w_fft_pdd, w_fft_cp))``.

    A channel whose retained spectrum is numerically empty (rate zero) reports 0.
    """
    if spec_pdd.n_m != spec_cp.n_m:
        raise ConfigError("channel spectra must share n_m")
    m = spec_pdd.n_m // 2
    ks = []
    for spec in (spec_pdd, spec_cp):
        if spec.magnitude.max(initial=0.0) <= floor * m:
            ks.append(0.0)
        else:
            ks.append(peak_bin(spec))
    for name, k, other in (("PDD", ks[0], ks[1]), ("CP", ks[1], ks[0])):
        if k == 0.0:
            continue
        if abs(k - m / 2) < 2:
            raise AliasingError(f"{name} peak at bin {k:.2f} lies within 2 bins of the fold at {m / 2}")
        if other != 0.0 and abs(k - (m - other)) < 2:
            raise AliasingError(f"{name} peak at bin {k:.2f} collides with the mirror of the other channel")
    w_pdd, w_cp = (omega * 2.0 * math.pi * k / spec_pdd.n_m for k in ks)
    A, beta = amplitude_phase_from_peaks(w_pdd, w_cp, omega)
    return A, beta, (w_pdd, w_cp)


def two_peaks(spec: Spectrum) -> tuple[float, float]:
    """Interpolated bins of the two strongest local maxima with k <= n_m/4, in ascending order.

    Used when only the channel sum is observable: the two peaks are the PDD and
    CP rates, but which is which cannot be told from the sum alone.
    """
    m = spec.n_m // 2
    mag = spec.magnitude
    cand = [
        i
        for i in range(1, len(mag) - 1)
        if spec.bins[i] <= m / 2 and mag[i] >= mag[i - 1] and mag[i] >= mag[i + 1] and mag[i] > 0
    ]
    if len(cand) < 2:
        raise AliasingError("fewer than two spectral peaks in the alias-free half")
    top = sorted(cand, key=lambda i: -mag[i])[:2]
    ks = []
    for i in top:
        a, b, c = mag[i - 1], mag[i], mag[i + 1]
        den = a - 2 * b + c
        ks.append(float(spec.bins[i]) + (0.5 * (a - c) / den if den < 0 else 0.0))
    return tuple(sorted(ks))
