"""Spatial susceptibility of the medium formed by intersecting Gaussian drive beams."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from math import pi, sqrt
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import atom_model as am
from .constants import C, EPS0, HBAR

log = logging.getLogger(__name__)


def gaussian_peak_amplitude(power: float, waist: float) -> float:
    """Slowly varying peak amplitude (V/m) of a fundamental Gaussian beam.

    The real field is E0 cos(wt) with E0 = sqrt(2 I0 / (eps0 c)) and
    I0 = 2P / (pi w0^2); the positive-frequency amplitude is E0 / 2.
    """
    if power < 0 or waist <= 0:
        raise ValueError("power must be >= 0 and waist > 0")
    I0 = 2.0 * power / (pi * waist ** 2)
    return sqrt(I0 / (2.0 * EPS0 * C))


@dataclass(frozen=True)
class GaussianBeamSpec:
    waist: float
    power: float
    wavelength: float  # nm
    direction: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    focus: np.ndarray = field(default_factory=lambda: np.zeros(3))
    polarization: np.ndarray = field(default_factory=lambda: am.E_Y.copy())

    def __post_init__(self):
        if self.waist <= 0:
            raise ValueError("waist must be > 0")
        if self.power < 0:
            raise ValueError("power must be >= 0")
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if n == 0:
            raise ValueError("direction must be non-zero")
        object.__setattr__(self, "direction", d / n)
        object.__setattr__(self, "focus", np.asarray(self.focus, dtype=float))

    @property
    def k(self) -> float:
        return 2 * pi / (self.wavelength * 1e-9)

    @property
    def rayleigh_range(self) -> float:
        return pi * self.waist ** 2 / (self.wavelength * 1e-9)

    @property
    def peak_amplitude(self) -> float:
        return gaussian_peak_amplitude(self.power, self.waist)


def power_to_peak_rabi(beam: GaussianBeamSpec, transition: am.Transition, J_upper: int) -> dict[int, complex]:
    """Spherical Rabi components at the focus."""
    reduced = am.reduced_rabi(beam.peak_amplitude, transition, J_upper)
    eps = np.asarray(beam.polarization, dtype=complex)
    eps = eps / np.linalg.norm(eps)
    return {q: complex(np.vdot(am.spherical_basis(q), eps) * reduced) for q in (-1, 0, 1)}


def beam_amplitude_at(beam: GaussianBeamSpec, r) -> np.ndarray:
    """Complex Gaussian envelope at points ``r`` (..., 3), carrier exp(ikz) excluded."""
    d = np.asarray(r, dtype=float) - beam.focus
    z = d @ beam.direction
    rho2 = np.sum(d * d, axis=-1) - z ** 2
    zr = beam.rayleigh_range
    q = 1.0 + (z / zr) ** 2
    w2 = beam.waist ** 2 * q
    inv_R = z / (z ** 2 + zr ** 2)
    gouy = np.arctan(z / zr)
    phase = beam.k * rho2 * inv_R / 2 - gouy
    return beam.peak_amplitude / np.sqrt(q) * np.exp(-rho2 / w2 + 1j * phase)


@dataclass
class ComplexField3D:
    """Samples on a uniform grid; ``extents`` = (x0, x1, y0, y1, z0, z1) in m."""

    values: np.ndarray
    extents: tuple[float, float, float, float, float, float]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.ndim != 3:
            raise ValueError("values must be three-dimensional")
        ext = tuple(float(e) for e in self.extents)
        if len(ext) != 6 or not all(ext[2 * i + 1] > ext[2 * i] for i in range(3)):
            raise ValueError("extents must be (x0, x1, y0, y1, z0, z1) with positive spans")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        self.extents = ext

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(np.linspace(self.extents[2 * i], self.extents[2 * i + 1], n)
                     for i, n in enumerate(self.shape))

    def interpolator(self) -> RegularGridInterpolator:
        return RegularGridInterpolator(self.axes(), self.values, bounds_error=False, fill_value=0.0)

    def slice_at(self, x: np.ndarray, y: np.ndarray, z: float) -> np.ndarray:
        """Trilinear samples on the transverse grid (x, y) at plane z; zero outside."""
        X, Y = np.meshgrid(x, y, indexing="ij")
        pts = np.stack([X, Y, np.full_like(X, z)], axis=-1)
        return self.interpolator()(pts)

    def save(self, path) -> None:
        """Binary: 3 x int64 dims, 6 x float64 extents, row-major complex128."""
        with open(path, "wb") as fh:
            fh.write(struct.pack("<3q", *self.shape))
            fh.write(struct.pack("<6d", *self.extents))
            fh.write(np.ascontiguousarray(self.values, dtype="<c16").tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "ComplexField3D":
        raw = Path(path).read_bytes()
        dims = struct.unpack("<3q", raw[:24])
        ext = struct.unpack("<6d", raw[24:72])
        vals = np.frombuffer(raw[72:], dtype="<c16").reshape(dims).copy()
        return cls(vals, ext)


@dataclass(frozen=True)
class GridSpec:
    shape: tuple[int, int, int]
    extents: tuple[float, float, float, float, float, float]

    def points(self) -> np.ndarray:
        axes = [np.linspace(self.extents[2 * i], self.extents[2 * i + 1], n) for i, n in enumerate(self.shape)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


class SusceptibilityTable:
    """chi(|Omega_s|, |Omega_w|) with memoized direct solves and an interpolation table.

    ``system`` supplies every other parameter; only the reduced Rabi
    frequencies of the s and w drives are replaced.

    chi depends mostly on the ratio Omega_w / Omega_s and changes fastest at
    weak drive, so both axes are spaced geometrically from ``floor`` times the
    axis maximum and interpolated in log Omega. Below the floor the value is
    held: with a drive switched off some Zeeman sublevels are dark traps and
    the stationary state is not unique, so the floor also picks the limit of
    a vanishing but non-zero drive.
    """

    floor = 1e-3

    def __init__(self, system, quadrature=None, geometry=None, size: int = 64,
                 omega_s_max: float = 0.0, omega_w_max: float = 0.0, method: str = "linear"):
        from . import liouvillian as lv

        self._lv = lv
        self.system = system
        self.quadrature = quadrature
        self.geometry = geometry
        self.direct = lru_cache(maxsize=None)(self._direct)
        if method not in ("linear", "cubic"):
            raise ValueError(f"unknown interpolation method {method!r}")
        if size < (4 if method == "cubic" else 2):
            raise ValueError(f"table size {size} too small for {method} interpolation")
        self.size = size
        self.method = method
        # an absent beam still needs an increasing grid
        self.grid_s = np.geomspace(self.floor * (omega_s_max or 1.0), omega_s_max or 1.0, size)
        self.grid_w = np.geomspace(self.floor * (omega_w_max or 1.0), omega_w_max or 1.0, size)
        self._interp = None

    def _direct(self, omega_s: float, omega_w: float) -> complex:
        omega_s = max(omega_s, self.grid_s[0])
        omega_w = max(omega_w, self.grid_w[0])
        sys_ = self.system.with_drive("s", rabi=omega_s).with_drive("w", rabi=omega_w)
        return self._lv.averaged_susceptibility(sys_, 0.0, self.quadrature, self.geometry)

    def build(self) -> "SusceptibilityTable":
        vals = np.array([[self.direct(float(a), float(b)) for b in self.grid_w] for a in self.grid_s])
        self._interp = RegularGridInterpolator((np.log(self.grid_s), np.log(self.grid_w)), vals,
                                               method=self.method)
        return self

    def __call__(self, omega_s, omega_w) -> np.ndarray:
        if self._interp is None:
            self.build()
        pts = np.stack([np.log(np.clip(omega_s, self.grid_s[0], self.grid_s[-1])),
                        np.log(np.clip(omega_w, self.grid_w[0], self.grid_w[-1]))], axis=-1)
        return self._interp(pts)


def peak_reduced_rabi(beams: dict[str, GaussianBeamSpec], system) -> dict[str, float]:
    """Reduced Rabi frequencies of the s and w beams at their foci (0 when absent)."""
    peaks = {}
    for name in ("s", "w"):
        beam = beams.get(name)
        if beam is None:
            peaks[name] = 0.0
            continue
        tr = system.scheme.transitions[am.DRIVE_TRANSITIONS[name]]
        peaks[name] = am.reduced_rabi(beam.peak_amplitude, tr, J_upper=system.scheme.J(tr.upper))
    return peaks


def local_rabi(beams: dict[str, GaussianBeamSpec], system, points) -> dict[str, np.ndarray]:
    """Reduced Rabi magnitudes of the s and w beams at ``points`` (..., 3)."""
    pts = np.asarray(points, dtype=float)
    peaks = peak_reduced_rabi(beams, system)
    out = {}
    for name in ("s", "w"):
        beam = beams.get(name)
        if beam is None or beam.power == 0:
            out[name] = np.zeros(pts.shape[:-1])
        else:
            out[name] = peaks[name] * np.abs(beam_amplitude_at(beam, pts)) / beam.peak_amplitude
    return out


def make_table(beams: dict[str, GaussianBeamSpec], system, quadrature=None, geometry=None,
               size: int = 64, method: str = "linear") -> SusceptibilityTable:
    """Table spanning zero to the peak Rabi frequencies of ``beams``."""
    peaks = peak_reduced_rabi(beams, system)
    return SusceptibilityTable(system, quadrature, geometry, size, peaks["s"], peaks["w"], method)


def susceptibility_at(beams: dict[str, GaussianBeamSpec], system, table: SusceptibilityTable):
    """Callable chi(x, y, z) in the beam frame, suitable as a cavity medium."""

    def chi(x, y, z):
        x, y = np.broadcast_arrays(x, y)
        pts = np.stack([x, y, np.full_like(x, z, dtype=float)], axis=-1)
        loc = local_rabi(beams, system, pts)
        return table(loc["s"], loc["w"])

    return chi


def sample_gain_distribution(beams: dict[str, GaussianBeamSpec], system, grid: GridSpec,
                             quadrature=None, geometry=None, table_size: int = 64,
                             table: SusceptibilityTable | None = None,
                             table_method: str = "linear") -> ComplexField3D:
    """<chi^(1)> on ``grid`` for the local drive strengths of the s and w beams.

    The repump is flooded: it keeps the uniform strength set in ``system``.
    Beam phase fronts are ignored; only |amplitude| sets the local Rabi values.
    """
    if table is None:
        table = make_table(beams, system, quadrature, geometry, table_size, table_method)
    loc = local_rabi(beams, system, grid.points())
    return ComplexField3D(table(loc["s"], loc["w"]), grid.extents)


def drive_beams(geometry, waist: float, power_s: float, power_w: float,
                polarization=am.E_Y) -> dict[str, GaussianBeamSpec]:
    """Strong and weak drive beams along k_s and k_w, focused at the origin."""
    return {
        "s": GaussianBeamSpec(waist, power_s, 435.8, geometry.unit("s"), polarization=polarization),
        "w": GaussianBeamSpec(waist, power_w, 546.1, geometry.unit("w"), polarization=polarization),
    }


def power_for_rabi(component: float, waist: float, transition: am.Transition, J_upper: int,
                   polarization=am.E_Y) -> float:
    """Beam power whose largest spherical Rabi component at the focus equals ``component``."""
    eps = np.asarray(polarization, dtype=complex)
    eps = eps / np.linalg.norm(eps)
    largest = max(abs(np.vdot(am.spherical_basis(q), eps)) for q in (-1, 0, 1))
    amp = component / largest * HBAR * sqrt(2 * J_upper + 1) / transition.reduced_dipole
    I0 = 2.0 * EPS0 * C * amp ** 2
    return I0 * pi * waist ** 2 / 2.0


__all__ = [
    "ComplexField3D", "GaussianBeamSpec", "GridSpec", "SusceptibilityTable", "beam_amplitude_at",
    "drive_beams", "gaussian_peak_amplitude", "local_rabi", "make_table", "peak_reduced_rabi",
    "power_for_rabi", "power_to_peak_rabi", "sample_gain_distribution", "susceptibility_at",
]
