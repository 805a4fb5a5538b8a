"""Nonlinear susceptibilities, photon-number equation and laser power."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import pi, sqrt

import numpy as np

from . import liouvillian as lv
from .constants import C, EPS0, HBAR, HG_MASS_U, TWO_PI
from .doppler import thermal_speed

log = logging.getLogger(__name__)

PROBE_WAVELENGTH_NM = 253.7


class UnphysicalSaturation(ValueError):
    """alpha > 0 without any saturating term."""


class ThresholdNotFound(RuntimeError):
    pass


def probe_omega(scheme=None) -> float:
    wl = scheme.transitions["ab"].wavelength if scheme is not None else PROBE_WAVELENGTH_NM
    return TWO_PI * C / (wl * 1e-9)


@dataclass(frozen=True)
class SusceptibilityExpansion:
    """Odd-order susceptibilities chi^(1), chi^(3), chi^(5) (SI units)."""

    chi: tuple[complex, ...]
    residual: float
    order: int = 2
    omegas: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    coherences: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def imag(self, n: int) -> float:
        """chi''_n for n = 1, 3, 5; zero beyond the truncation order."""
        m = (n - 1) // 2
        return float(self.chi[m].imag) if m < len(self.chi) else 0.0


def fit_nonlinear_susceptibilities(omegas, coherences, dipole: float, density: float,
                                   order: int = 2) -> SusceptibilityExpansion:
    """Fit rho(Omega) = sum_m c_{2m+1} Omega^{2m+1} and map to chi^(2m+1).

    ``omegas`` are probe Rabi frequencies d E / hbar and ``coherences`` the
    corresponding averaged <D>. Comparing P = eps0 sum chi^(2m+1) E^(2m+1)
    with P = N d sum c_{2m+1} Omega^(2m+1) gives
    chi^(2m+1) = N d^(2m+2) c_{2m+1} / (eps0 hbar^(2m+1)); the overlap volumes
    V_m appear on both sides and cancel.
    """
    om = np.asarray(omegas, dtype=float)
    rho = np.asarray(coherences, dtype=complex)
    if om.shape != rho.shape:
        raise ValueError("omegas and coherences differ in shape")
    if np.any(om <= 0):
        raise ValueError("Rabi samples must be positive")
    if len(np.unique(om)) < order + 2:
        raise ValueError(f"need at least {order + 2} distinct samples for order {order}")
    scale = om.max()
    x = (om / scale) ** 2
    design = np.vander(x, order + 1, increasing=True)
    if np.linalg.cond(design) > 1e12:
        raise ValueError("ill-conditioned fit design matrix")
    y = rho / om
    coef, *_ = np.linalg.lstsq(design.astype(complex), y, rcond=None)
    fit = design @ coef
    residual = float(np.linalg.norm(fit - y) / max(np.linalg.norm(y), 1e-300))
    c = coef / scale ** (2 * np.arange(order + 1))
    chi = tuple(complex(density * dipole ** (2 * m + 2) * c[m] / (EPS0 * HBAR ** (2 * m + 1)))
                for m in range(order + 1))
    return SusceptibilityExpansion(chi, residual, order, om, rho)


def fit_window(system: lv.AtomSystem, quadrature=None, geometry=None, deviation: float = 0.2,
               start: float | None = None, max_doublings: int = 60) -> float:
    """Smallest Omega (doubling from ``start``) where |rho/Omega| departs ``deviation`` from linear."""
    om = start or system.probe_rabi
    ref = lv.averaged_coherence(system, 0.0, quadrature, geometry, om) / om
    for _ in range(max_doublings):
        om *= 2
        val = lv.averaged_coherence(system, 0.0, quadrature, geometry, om) / om
        if abs(val / ref - 1) >= deviation:
            return om
    raise ValueError("no saturation found within the doubling budget")


def expansion_for(system: lv.AtomSystem, quadrature=None, geometry=None, order: int = 2,
                  samples: int = 8, omega_max: float | None = None) -> SusceptibilityExpansion:
    """Sample the averaged steady state on log-spaced Omega and fit."""
    omega_max = omega_max or fit_window(system, quadrature, geometry)
    omegas = np.geomspace(omega_max / 100, omega_max, samples)
    coh = np.array([lv.averaged_coherence(system, 0.0, quadrature, geometry, o) for o in omegas])
    return fit_nonlinear_susceptibilities(omegas, coh, lv.probe_dipole(system.scheme), system.density, order)


@dataclass(frozen=True)
class CavityParams:
    """Ring-cavity data for the single-mode photon-number equation."""

    Q: float
    mode_volume: float  # V_c, m^3
    overlap_ratio: float  # V_0 / V_c
    waist: float  # m

    def __post_init__(self):
        if self.Q <= 0:
            raise ValueError("Q must be > 0")
        if self.mode_volume <= 0 or self.waist <= 0:
            raise ValueError("mode volume and waist must be > 0")
        if not 0 < self.overlap_ratio <= 1:
            raise ValueError("V_0 / V_c must lie in (0, 1]")

    @classmethod
    def from_conductivity(cls, sigma: float, omega_p: float, **kw) -> "CavityParams":
        return cls(Q=EPS0 * omega_p / sigma, **kw)

    @classmethod
    def gaussian(cls, Q: float, waist: float, length: float, overlap_ratio: float) -> "CavityParams":
        """Fundamental mode of waist ``waist`` over round-trip ``length``: V_c = pi w0^2 L / 2."""
        return cls(Q, pi * waist ** 2 * length / 2, overlap_ratio, waist)

    @property
    def V0(self) -> float:
        return self.overlap_ratio * self.mode_volume

    def V(self, m: int) -> float:
        """V_m = V_0 / 2^m for a transversely localized mode."""
        return self.V0 / 2 ** m


@dataclass(frozen=True)
class GainParameters:
    alpha: float
    beta: float
    gamma: float


def gain_parameters(exp: SusceptibilityExpansion, cavity: CavityParams, omega_p: float,
                    chi1: float | None = None) -> GainParameters:
    """alpha, beta, gamma of dn/dt = alpha n - beta n^2 - gamma n^3.

    ``chi1`` overrides chi''_1 of the expansion (e.g. a direct linear-response value).
    """
    Vc = cavity.mode_volume
    c1 = exp.imag(1) if chi1 is None else chi1
    alpha = -omega_p / cavity.Q - omega_p * cavity.overlap_ratio * c1
    beta = HBAR * omega_p ** 2 * cavity.V(1) * exp.imag(3) / (2 * EPS0 * Vc ** 2)
    gamma = HBAR ** 2 * omega_p ** 3 * cavity.V(2) * exp.imag(5) / (4 * EPS0 * Vc ** 3)
    return GainParameters(alpha, beta, gamma)


def stationary_photon_number(g: GainParameters, rel_tol: float = 1e-6) -> float:
    """Stable root of alpha - beta n - gamma n^2 = 0, or 0 below threshold."""
    a, b, c = g.alpha, g.beta, g.gamma
    if a <= 0:
        return 0.0
    if b <= 0 and c <= 0:
        raise UnphysicalSaturation(f"alpha={a:.3g} > 0 with beta={b:.3g}, gamma={c:.3g} <= 0")
    if b > 0:
        n_hat = a / b
        if abs(c) * n_hat ** 2 < rel_tol * b * n_hat:
            return n_hat - c * n_hat ** 2 / b
    disc = b * b + 4 * a * c
    if disc < 0:
        raise UnphysicalSaturation("no stationary photon number: beta^2 + 4 alpha gamma < 0")
    # 2 alpha / (beta + sqrt(disc)) equals -beta/2gamma + sqrt(beta^2/4gamma^2 + alpha/gamma)
    return 2 * a / (b + sqrt(disc))


def intracavity_power(n: float, cavity: CavityParams, omega_p: float) -> float:
    if n < 0:
        raise ValueError("photon number must be >= 0")
    return HBAR * omega_p * C * pi * cavity.waist ** 2 * n / (2 * cavity.mode_volume)


def doppler_sigma_omega(T: float, omega_p: float, mass_u: float = HG_MASS_U) -> float:
    """Standard deviation of the Doppler spectrum, omega sigma_v / c."""
    return omega_p * thermal_speed(T, mass_u) / C


PUMP_SIGMA_OMEGA = TWO_PI * 440e6


def pump_power(r: float, area: float, sigma_omega: float | None = None, T: float | None = None,
               omega_p: float | None = None, gamma_ab: float | None = None) -> float:
    """Pump power for rate ``r`` with a Gaussian pump spectrum of width ``sigma_omega``.

    Without ``sigma_omega`` the Doppler width of the probe line at ``T`` is
    used, or 2 pi x 440 MHz (300 K) when ``T`` is not given either.
    """
    from .atom_model import MERCURY_TRANSITIONS

    omega_p = omega_p or probe_omega()
    gamma_ab = gamma_ab or MERCURY_TRANSITIONS["ab"].gamma
    if r < 0 or area <= 0:
        raise ValueError("r must be >= 0 and area > 0")
    if sigma_omega is None:
        sigma_omega = PUMP_SIGMA_OMEGA if T is None else doppler_sigma_omega(T, omega_p)
    sigma = sigma_omega
    return sqrt(2) * HBAR * omega_p ** 3 * sigma * area * r / (pi ** 1.5 * C ** 2 * gamma_ab)


@dataclass(frozen=True)
class PowerPoint:
    r: float
    pump_power: float
    alpha: float
    beta: float
    gamma: float
    photons: float
    power: float


def linear_chi_imag(system: lv.AtomSystem, quadrature=None, geometry=None) -> float:
    """chi''_1 at line centre from direct linear response."""
    return lv.averaged_susceptibility(system, 0.0, quadrature, geometry).imag


def power_curve(system: lv.AtomSystem, rates, cavity: CavityParams, quadrature=None, geometry=None,
                area: float = 4e-6, sigma_omega: float | None = None, order: int = 2) -> list[PowerPoint]:
    """Stationary intracavity power over pump rates ``rates`` (s^-1).

    alpha comes from the direct linear response; beta and gamma from the
    odd-polynomial fit, which is only evaluated above threshold.
    """
    omega_p = probe_omega(system.scheme)
    out = []
    for r in rates:
        s = system.with_(pump_r=float(r))
        chi1 = linear_chi_imag(s, quadrature, geometry)
        alpha = -omega_p / cavity.Q - omega_p * cavity.overlap_ratio * chi1
        beta = gamma = float("nan")
        n = 0.0
        if alpha > 0:
            g = gain_parameters(expansion_for(s, quadrature, geometry, order), cavity, omega_p, chi1)
            beta, gamma = g.beta, g.gamma
            n = stationary_photon_number(g)
        out.append(PowerPoint(float(r), pump_power(r, area, sigma_omega, omega_p=omega_p), alpha, beta, gamma,
                              n, intracavity_power(n, cavity, omega_p)))
    return out


def threshold_rate(system: lv.AtomSystem, cavity: CavityParams, quadrature=None, geometry=None,
                   r_max: float = 1e8, iterations: int = 40, tol: float = 1e-4) -> float:
    """Pump rate where alpha = 0, by bisection on [0, r_max]."""
    omega_p = probe_omega(system.scheme)

    def alpha(r):
        chi1 = linear_chi_imag(system.with_(pump_r=r), quadrature, geometry)
        return -omega_p / cavity.Q - omega_p * cavity.overlap_ratio * chi1

    a0 = alpha(0.0)
    if a0 > 0:
        return 0.0
    if alpha(r_max) <= 0:
        raise ThresholdNotFound(f"alpha < 0 over the whole window r <= {r_max:.3g} s^-1")
    lo, hi = 0.0, r_max
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        a = alpha(mid)
        if abs(a) < tol * abs(a0):
            return mid
        if a > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ThresholdMap:
    b_s: np.ndarray
    b_w: np.ndarray
    pump_threshold: np.ndarray  # W, nan where no threshold was found
    rate_threshold: np.ndarray


def threshold_scan(system: lv.AtomSystem, b_s_grid, b_w_grid, cavity: CavityParams, quadrature=None,
                   geometry=None, area: float = 4e-6, sigma_omega: float | None = None, r_max: float = 1e8,
                   iterations: int = 40) -> ThresholdMap:
    """Threshold pump power over a grid of drive linewidths."""
    bs = np.asarray(b_s_grid, dtype=float)
    bw = np.asarray(b_w_grid, dtype=float)
    rates = np.full((bs.size, bw.size), np.nan)
    b_r = system.linewidths[2]
    for i, a in enumerate(bs):
        for j, b in enumerate(bw):
            s = system.with_(linewidths=(a, b, b_r))
            try:
                rates[i, j] = threshold_rate(s, cavity, quadrature, geometry, r_max, iterations)
            except ThresholdNotFound as exc:
                log.warning("b_s=%.3g b_w=%.3g: %s", a, b, exc)
    omega_p = probe_omega(system.scheme)
    powers = np.where(np.isnan(rates), np.nan,
                      pump_power(1.0, area, sigma_omega, omega_p=omega_p) * np.nan_to_num(rates))
    return ThresholdMap(bs, bw, powers, rates)


def pump_dependence(system: lv.AtomSystem, rates, quadrature=None, geometry=None) -> np.ndarray:
    """<chi''> at line centre for each pump rate."""
    return np.array([linear_chi_imag(system.with_(pump_r=float(r)), quadrature, geometry) for r in rates])


__all__ = [
    "CavityParams", "GainParameters", "PowerPoint", "SusceptibilityExpansion", "ThresholdMap",
    "ThresholdNotFound", "UnphysicalSaturation", "expansion_for", "fit_nonlinear_susceptibilities",
    "fit_window", "gain_parameters", "intracavity_power", "power_curve", "probe_omega", "pump_dependence",
    "pump_power", "stationary_photon_number", "threshold_rate", "threshold_scan",
]
