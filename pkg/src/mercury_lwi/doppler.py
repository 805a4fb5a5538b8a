"""Doppler-free beam geometry, velocity averaging and thermal vapor data."""

from __future__ import annotations

from dataclasses import dataclass
from math import log, sqrt

import numpy as np

from scipy.special import wofz

from .constants import AMU, C, HBAR, HG_MASS_U, KB, TWO_PI

#: Antoine form log10(p / Pa) = A - B / (T + C) for mercury vapor. B and C are
#: the standard tabulated values; A is set so that N(300 K) = 9.2e13 cm^-3.
ANTOINE_B = 3007.129
ANTOINE_C = -10.001
ANTOINE_A = float(np.log10(9.2e19 * KB * 300.0) + ANTOINE_B / (300.0 + ANTOINE_C))
VAPOR_T_RANGE = (273.0, 400.0)


class GeometryError(ValueError):
    pass


def wavenumber(wavelength_nm: float) -> float:
    return TWO_PI / (wavelength_nm * 1e-9)


@dataclass(frozen=True)
class BeamGeometry:
    """Wave vectors (rad/m) of the probe, strong, weak and repump fields."""

    k_p: np.ndarray
    k_s: np.ndarray
    k_w: np.ndarray
    k_r: np.ndarray

    @property
    def closure_residual(self) -> float:
        return float(np.linalg.norm(self.k_p + self.k_s - self.k_w))

    @property
    def matrix(self) -> np.ndarray:
        """Rows k_p, k_s, k_w, k_r."""
        return np.vstack([self.k_p, self.k_s, self.k_w, self.k_r])

    def scaled(self, factor: float) -> "BeamGeometry":
        return BeamGeometry(self.k_p * factor, self.k_s * factor, self.k_w * factor, self.k_r * factor)

    def unit(self, name: str) -> np.ndarray:
        k = getattr(self, "k_" + name)
        return k / np.linalg.norm(k)


def three_photon_geometry(lambda_p: float, lambda_s: float, lambda_w: float,
                          lambda_r: float = 404.7) -> BeamGeometry:
    """Coplanar wave vectors with k_p + k_s - k_w = 0.

    k_p points along +z, k_s lies in the x-z plane with positive x component,
    and the repump travels along k_s.
    """
    kp, ks, kw = (wavenumber(x) for x in (lambda_p, lambda_s, lambda_w))
    if not abs(kp - ks) <= kw <= kp + ks:
        raise GeometryError("wave-vector triangle k_p + k_s = k_w cannot be closed")
    cos_t = (kw ** 2 - kp ** 2 - ks ** 2) / (2 * kp * ks)
    cos_t = min(1.0, max(-1.0, cos_t))
    sin_t = sqrt(1.0 - cos_t ** 2)
    k_p = np.array([0.0, 0.0, kp])
    k_s = ks * np.array([sin_t, 0.0, cos_t])
    k_w = k_p + k_s
    k_r = wavenumber(lambda_r) * k_s / ks
    return BeamGeometry(k_p, k_s, k_w, k_r)


def mercury_geometry() -> BeamGeometry:
    return three_photon_geometry(253.7, 435.8, 546.1, 404.7)


def detuning_shifts(geometry: BeamGeometry, velocities: np.ndarray) -> np.ndarray:
    """-k_j . v for j = p, s, w, r; shape (n, 4)."""
    return -np.atleast_2d(velocities) @ geometry.matrix.T


def shifted_detunings(base, geometry: BeamGeometry, v) -> dict[str, float]:
    """Per-field detunings Delta_j - k_j . v seen by an atom moving with ``v``."""
    if isinstance(base, dict):
        base = [base.get(k, 0.0) for k in "pswr"]
    shifted = np.asarray(base, dtype=float) + detuning_shifts(geometry, np.asarray(v, dtype=float))[0]
    return dict(zip("pswr", shifted))


def three_photon_detuning(base, geometry: BeamGeometry, v) -> float:
    d = shifted_detunings(base, geometry, v)
    return d["p"] + d["s"] - d["w"]


def thermal_speed(T: float, mass_u: float = HG_MASS_U) -> float:
    """One-dimensional velocity standard deviation sqrt(k_B T / m) in m/s."""
    return sqrt(KB * T / (mass_u * AMU))


@dataclass(frozen=True)
class VelocityQuadrature:
    """Quadrature nodes for the Maxwell-Boltzmann average.

    When ``line_axis`` is set, the velocity component along it is not sampled:
    callers integrate it exactly (see :func:`gaussian_pole_average`) and the
    nodes cover only the remaining axes.
    """

    velocities: np.ndarray  # (n, 3) m/s
    weights: np.ndarray  # (n,), sum 1
    temperature: float
    dimensions: int
    line_axis: np.ndarray | None = None
    sigma: float = 0.0


def _span_axes(geometry: BeamGeometry) -> np.ndarray:
    """Orthonormal rows spanning the wave vectors."""
    _, s, vt = np.linalg.svd(geometry.matrix)
    rank = int(np.sum(s > 1e-9 * s[0]))
    return vt[:rank]


def gauss_hermite_quadrature(T: float, nodes: int = 24, geometry: BeamGeometry | None = None,
                             dimensions: int | None = None, mass_u: float = HG_MASS_U) -> VelocityQuadrature:
    """Tensor Gauss-Hermite rule for the Maxwell-Boltzmann distribution.

    Only the velocity components along the span of the wave vectors matter,
    so the rule is built on that span (two axes for coplanar beams).
    """
    if geometry is not None and dimensions is None:
        axes = _span_axes(geometry)
    else:
        axes = np.eye(3)[: dimensions or 3]
    x, w = np.polynomial.hermite.hermgauss(nodes)
    sigma = thermal_speed(T, mass_u)
    grids = np.meshgrid(*([x] * len(axes)), indexing="ij")
    wgrid = np.prod(np.meshgrid(*([w] * len(axes)), indexing="ij"), axis=0).ravel()
    coords = np.stack([g.ravel() for g in grids], axis=1) * sqrt(2.0) * sigma
    vel = coords @ axes
    return VelocityQuadrature(vel, wgrid / wgrid.sum(), T, len(axes))


def line_quadrature(T: float, nodes: int = 24, geometry: BeamGeometry | None = None,
                    mass_u: float = HG_MASS_U) -> VelocityQuadrature:
    """Gauss-Hermite nodes transverse to k_p, exact integration along k_p.

    The generator is affine in the velocity component along the line axis, so
    the response is a rational function of it and its Gaussian average has a
    closed form. Only the smooth transverse dependence is sampled.
    """
    geometry = geometry or mercury_geometry()
    e1 = geometry.unit("p")
    axes = _span_axes(geometry)
    rest = axes - np.outer(axes @ e1, e1)
    _, sv, vt = np.linalg.svd(rest)
    rest = vt[: int(np.sum(sv > 1e-9))]
    sigma = thermal_speed(T, mass_u)
    if len(rest) == 0:
        return VelocityQuadrature(np.zeros((1, 3)), np.ones(1), T, 1, e1, sigma)
    x, w = np.polynomial.hermite.hermgauss(nodes)
    grids = np.meshgrid(*([x] * len(rest)), indexing="ij")
    wgrid = np.prod(np.meshgrid(*([w] * len(rest)), indexing="ij"), axis=0).ravel()
    coords = np.stack([g.ravel() for g in grids], axis=1) * sqrt(2.0) * sigma
    return VelocityQuadrature(coords @ rest, wgrid / wgrid.sum(), T, len(rest) + 1, e1, sigma)


def gaussian_pole_average(residues, poles, sigma: float) -> complex:
    """Average of sum_k c_k / (v - z_k) over v ~ N(0, sigma^2).

    Uses the Faddeeva function w; poles on the real axis are not allowed.
    """
    c = np.asarray(residues, dtype=complex)
    z = np.asarray(poles, dtype=complex)
    if sigma == 0:
        return complex(np.sum(c / (-z)))
    zeta = z / (sqrt(2.0) * sigma)
    upper = zeta.imag > 0
    w = wofz(np.where(upper, zeta, zeta.conj()))
    integral = np.where(upper, 1j * np.pi * w, np.conj(1j * np.pi * w))
    return complex(np.sum(c * integral) / (sqrt(2.0 * np.pi) * sigma))


def rest_quadrature() -> VelocityQuadrature:
    return VelocityQuadrature(np.zeros((1, 3)), np.ones(1), 0.0, 0)


def velocity_average(sampler, quad: VelocityQuadrature, vectorized: bool = True) -> complex:
    """Weighted sum of ``sampler(v)`` over the quadrature nodes."""
    if quad.line_axis is not None:
        raise ValueError("a line quadrature needs the exact line integral; use a plain quadrature")
    if vectorized:
        values = np.asarray(sampler(quad.velocities))
    else:
        values = np.array([sampler(v) for v in quad.velocities])
    return complex(values @ quad.weights)


def doppler_fwhm(wavelength_nm: float, T: float, mass_u: float = HG_MASS_U) -> float:
    """Doppler FWHM in Hz: sqrt(8 k_B T ln 2 / m) / lambda."""
    if wavelength_nm <= 0 or T <= 0 or mass_u <= 0:
        raise ValueError("arguments must be positive")
    return sqrt(8 * KB * T * log(2) / (mass_u * AMU)) / (wavelength_nm * 1e-9)


def vapor_pressure(T: float) -> float:
    """Mercury saturated vapor pressure in Pa."""
    lo, hi = VAPOR_T_RANGE
    if not lo < T < hi:
        raise ValueError(f"temperature {T} K outside the correlation range {VAPOR_T_RANGE}")
    return 10 ** (ANTOINE_A - ANTOINE_B / (T + ANTOINE_C))


def vapor_density(T: float) -> float:
    """Atomic number density in m^-3 from the ideal gas law."""
    return vapor_pressure(T) / (KB * T)


def recoil_shift(wavelength_nm: float, mass_u: float = HG_MASS_U) -> float:
    """Recoil shift hbar omega^2 / (2 m c^2) in rad/s."""
    if wavelength_nm <= 0 or mass_u <= 0:
        raise ValueError("arguments must be positive")
    omega = TWO_PI * C / (wavelength_nm * 1e-9)
    return HBAR * omega ** 2 / (2 * mass_u * AMU * C ** 2)


__all__ = [
    "BeamGeometry", "GeometryError", "VelocityQuadrature", "detuning_shifts", "doppler_fwhm",
    "gauss_hermite_quadrature", "gaussian_pole_average", "line_quadrature", "mercury_geometry", "recoil_shift", "rest_quadrature",
    "shifted_detunings", "thermal_speed", "three_photon_geometry", "vapor_density",
    "vapor_pressure", "velocity_average",
]
