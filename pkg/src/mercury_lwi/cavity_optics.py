"""Fourier optics of the four-mirror ring cavity with an inhomogeneous gain medium."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from math import cos, pi, radians, sqrt

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs
from scipy.special import eval_hermite, factorial

log = logging.getLogger(__name__)


class AliasingWarning(UserWarning):
    pass


class ModeSolverError(RuntimeError):
    pass


@dataclass
class ComplexField2D:
    """Envelope psi(x, y) on an n x n grid centred on the axis."""

    values: np.ndarray
    window: float  # full side length, m
    wavelength: float  # nm

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        n = self.values.shape[0]
        if self.values.shape != (n, n):
            raise ValueError("field must be square")
        if n & (n - 1):
            raise ValueError(f"grid size {n} is not a power of two")
        if self.window <= 0:
            raise ValueError("window must be > 0")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dx(self) -> float:
        return self.window / self.n

    @property
    def k(self) -> float:
        return 2 * pi / (self.wavelength * 1e-9)

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.n) - self.n // 2) * self.dx

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.x, indexing="ij")

    def with_values(self, values) -> "ComplexField2D":
        return ComplexField2D(values, self.window, self.wavelength)

    def power(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2))

    def normalized(self) -> "ComplexField2D":
        return self.with_values(self.values / np.linalg.norm(self.values))


def _kinetic_symbol(psi: ComplexField2D) -> np.ndarray:
    """T in the spatial-frequency domain: (k_x^2 + k_y^2) / (2 k)."""
    kx = 2 * pi * np.fft.fftfreq(psi.n, psi.dx)
    return (kx[:, None] ** 2 + kx[None, :] ** 2) / (2 * psi.k)


def _free(values: np.ndarray, symbol: np.ndarray, dz: float) -> np.ndarray:
    return np.fft.ifft2(np.fft.fft2(values) * np.exp(-1j * symbol * dz))


def fresnel_propagate(psi: ComplexField2D, dz: float) -> ComplexField2D:
    """exp(-i T dz) psi, evaluated with FFTs (negative dz propagates backwards)."""
    if dz == 0:
        return psi.with_values(psi.values.copy())
    limit = psi.n * psi.dx ** 2 / (psi.wavelength * 1e-9)
    if abs(dz) > limit:
        warnings.warn(f"|dz| = {abs(dz):.3g} m exceeds the sampling limit {limit:.3g} m; "
                      "the transfer function aliases", AliasingWarning, stacklevel=2)
    return psi.with_values(_free(psi.values, _kinetic_symbol(psi), dz))


@dataclass(frozen=True)
class MirrorSpec:
    """Spherical mirror at 45 degrees with a square aperture of side ``aperture``."""

    radius: float = 1.0  # m; inf for flat
    aperture: float = 1.38e-3  # m; inf for open
    tilt_deg: float = 45.0

    def __post_init__(self):
        if self.radius <= 0 or self.aperture <= 0:
            raise ValueError("radius and aperture must be > 0")

    @property
    def radii(self) -> tuple[float, float]:
        """(R_x, R_y) = (R cos theta, R / cos theta)."""
        c = cos(radians(self.tilt_deg))
        return self.radius * c, self.radius / c


def apply_mirror(psi: ComplexField2D, mirror: MirrorSpec) -> ComplexField2D:
    X, Y = psi.mesh()
    rx, ry = mirror.radii
    phase = -psi.k * (X ** 2 / rx + Y ** 2 / ry)
    half = mirror.aperture / 2
    mask = (np.abs(X) <= half) & (np.abs(Y) <= half)
    return psi.with_values(psi.values * np.exp(1j * phase) * mask)


@dataclass(frozen=True)
class CavitySpec:
    arm: float = 0.2  # L, m
    mirrors: tuple[MirrorSpec, ...] = field(default_factory=lambda: (MirrorSpec(),) * 4)
    medium_length: float = 0.05  # L_m, m
    slices: int = 32
    loss_factor: float = 1.0  # e^-nu
    grid: int = 256
    window: float | None = None  # default 4 x aperture side
    wavelength: float = 253.7  # nm

    def __post_init__(self):
        if len(self.mirrors) != 4:
            raise ValueError("a ring cavity has four mirrors")
        if not self.arm > self.medium_length >= 0:
            raise ValueError("need L > L_m >= 0")
        if not 0 < self.loss_factor <= 1:
            raise ValueError("loss factor e^-nu must lie in (0, 1]")
        if self.slices < 1:
            raise ValueError("need at least one slice")

    @property
    def grid_window(self) -> float:
        if self.window is not None:
            return self.window
        a = max(m.aperture for m in self.mirrors)
        if not np.isfinite(a):
            raise ValueError("open apertures need an explicit window")
        return 4 * a

    def blank(self) -> ComplexField2D:
        return ComplexField2D(np.zeros((self.grid, self.grid), dtype=complex), self.grid_window, self.wavelength)


def empty_round_trip(psi: ComplexField2D, cavity: CavitySpec, trace: list | None = None) -> ComplexField2D:
    """[M F(L)]^4 psi; ``trace`` collects the operator sequence when given."""
    sym = _kinetic_symbol(psi)
    v = psi.values
    for i, m in enumerate(cavity.mirrors):
        v = _free(v, sym, cavity.arm)
        v = apply_mirror(psi.with_values(v), m).values
        if trace is not None:
            trace.extend([("F", cavity.arm), ("M", i)])
    return psi.with_values(v)


@dataclass
class MediumPotential:
    """Per-slice factors exp(-i V(z_l) dz) on the cavity grid."""

    factors: np.ndarray  # (N, n, n)
    dz: float


def medium_potential(chi, psi: ComplexField2D, length: float, slices: int,
                     sampling: str = "midpoint") -> MediumPotential:
    """Sample V = -(k/2) chi on the slices of a medium centred at z = 0.

    ``chi`` is a ComplexField3D (interpolated, zero outside its box), a
    callable chi(X, Y, z), or a scalar. ``sampling="printed"`` uses
    z_l = z_i + l dz; the default uses slice midpoints z_l + dz / 2.
    """
    if slices < 1 or length < 0:
        raise ValueError("need slices >= 1 and length >= 0")
    dz = length / slices
    offset = 0.5 if sampling == "midpoint" else 0.0
    if sampling not in ("midpoint", "printed"):
        raise ValueError(f"unknown sampling {sampling!r}")
    zs = -length / 2 + (np.arange(slices) + offset) * dz
    X, Y = psi.mesh()
    if np.isscalar(chi):
        slabs = np.full((slices,) + X.shape, complex(chi))
    elif callable(chi):
        slabs = np.stack([np.broadcast_to(chi(X, Y, z), X.shape) for z in zs]).astype(complex)
    else:
        _check_grid(chi, psi)
        interp = RegularGridInterpolator(chi.axes(), chi.values, bounds_error=False, fill_value=0.0)
        slabs = np.stack([interp(np.stack([X, Y, np.full_like(X, z)], axis=-1)) for z in zs])
    V = -(psi.k / 2) * slabs
    return MediumPotential(np.exp(-1j * V * dz), dz)


def _check_grid(chi, psi: ComplexField2D) -> None:
    x0, x1, y0, y1 = chi.extents[:4]
    nx, ny = chi.shape[:2]
    same = (nx == ny == psi.n and np.isclose(x0, psi.x[0]) and np.isclose(x1, psi.x[-1])
            and np.isclose(y0, psi.x[0]) and np.isclose(y1, psi.x[-1]))
    if not same:
        warnings.warn("susceptibility grid differs from the field grid; resampling bilinearly",
                      stacklevel=3)


def medium_propagate(psi: ComplexField2D, chi, length: float, slices: int = 32,
                     sampling: str = "midpoint", potential: MediumPotential | None = None) -> ComplexField2D:
    """Split-operator propagation through the medium from -L_m/2 to L_m/2.

    K = e^{-iT dz/2} (prod_l e^{-iV(z_l) dz} e^{-iT dz}) e^{+iT dz/2}, with the
    product time ordered (slice 0 acts first).
    """
    pot = potential or medium_potential(chi, psi, length, slices, sampling)
    sym = _kinetic_symbol(psi)
    dz = pot.dz
    v = _free(psi.values, sym, -dz / 2)
    for f in pot.factors:
        v = f * _free(v, sym, dz)
    v = _free(v, sym, dz / 2)
    return psi.with_values(v)


def loaded_round_trip(psi: ComplexField2D, cavity: CavitySpec, potential: MediumPotential) -> ComplexField2D:
    """e^-nu M F(L') K F(L') [M F(L)]^3 psi with L' = (L - L_m) / 2."""
    sym = _kinetic_symbol(psi)
    v = psi.values
    for m in cavity.mirrors[:3]:
        v = apply_mirror(psi.with_values(_free(v, sym, cavity.arm)), m).values
    half = (cavity.arm - cavity.medium_length) / 2
    v = _free(v, sym, half)
    v = medium_propagate(psi.with_values(v), None, cavity.medium_length, potential=potential).values
    v = _free(v, sym, half)
    v = apply_mirror(psi.with_values(v), cavity.mirrors[3]).values
    return psi.with_values(cavity.loss_factor * v)


class RoundTrip:
    """Precomputed round-trip map R (empty) or R' (with a medium potential)."""

    def __init__(self, cavity: CavitySpec, chi=None, sampling: str = "midpoint"):
        self.cavity = cavity
        self.blank = cavity.blank()
        sym = _kinetic_symbol(self.blank)
        X, Y = self.blank.mesh()
        k = self.blank.k
        self.mirrors = []
        for m in cavity.mirrors:
            rx, ry = m.radii
            half = m.aperture / 2
            mask = (np.abs(X) <= half) & (np.abs(Y) <= half)
            self.mirrors.append(np.exp(-1j * k * (X ** 2 / rx + Y ** 2 / ry)) * mask)
        self.prop_arm = np.exp(-1j * sym * cavity.arm)
        self.potential = None
        if chi is not None:
            pot = medium_potential(chi, self.blank, cavity.medium_length, cavity.slices, sampling)
            self.potential = pot
            gap = (cavity.arm - cavity.medium_length) / 2
            # F(L') merged with the leading and trailing half steps of K
            self.prop_gap = np.exp(-1j * sym * (gap + pot.dz / 2))
            self.prop_step = np.exp(-1j * sym * pot.dz)

    def __call__(self, values: np.ndarray) -> np.ndarray:
        fft2, ifft2 = np.fft.fft2, np.fft.ifft2
        v = values
        loaded = self.potential is not None
        for mask in self.mirrors[:3] if loaded else self.mirrors:
            v = mask * ifft2(fft2(v) * self.prop_arm)
        if loaded:
            factors = self.potential.factors
            v = factors[0] * ifft2(fft2(v) * self.prop_gap)
            for factor in factors[1:]:
                v = factor * ifft2(fft2(v) * self.prop_step)
            v = self.mirrors[3] * ifft2(fft2(v) * self.prop_gap)
        return self.cavity.loss_factor * v

    def apply(self, psi: ComplexField2D) -> ComplexField2D:
        return psi.with_values(self(psi.values))


def round_trip_operator(cavity: CavitySpec, chi=None, sampling: str = "midpoint"):
    """Callable psi -> R psi on ComplexField2D (empty when ``chi`` is None)."""
    return RoundTrip(cavity, chi, sampling).apply


@dataclass
class ModeResult:
    gamma: complex
    profile: ComplexField2D
    residual: float
    m2: tuple[float, float] | None = None

    @property
    def gain(self) -> float:
        return abs(self.gamma) ** 2


def _start_vector(cavity: CavitySpec, offset: float = 0.2) -> np.ndarray:
    """Deterministic start: the ABCD fundamental mode, displaced by ``offset`` waists.

    Low-loss modes of an aperture much larger than the mode have nearly equal
    |gamma| and differ only in Gouy phase. A start vector with matched waist
    and curvature holds order-m content ~ offset^m / sqrt(m!), which keeps the
    Krylov space on the lowest orders; the displacement excites both parities.
    """
    psi = cavity.blank()
    try:
        wx, wy = cavity_waists(cavity)
        v = hermite_gauss_mode(0, 0, wx, -cavity.arm / 2, psi, waist_y=wy).values
    except ValueError:
        wx = wy = cavity.grid_window / 12
        X, Y = psi.mesh()
        v = np.exp(-(X / wx) ** 2 - (Y / wy) ** 2).astype(complex)
    kx = 2 * pi * np.fft.fftfreq(psi.n, psi.dx)
    shift = np.exp(-1j * (kx[:, None] * offset * wx + kx[None, :] * offset * wy))
    v = np.fft.ifft2(np.fft.fft2(v) * shift)
    return (v / np.linalg.norm(v)).ravel()


def cavity_waists(cavity: CavitySpec) -> tuple[float, float]:
    """Fundamental-mode waists (x, y) at mid-arm of the symmetric empty ring."""
    lam = cavity.wavelength * 1e-9
    out = []
    for idx in (0, 1):
        f = cavity.mirrors[0].radii[idx] / 2
        if any(m.radii[idx] != cavity.mirrors[0].radii[idx] for m in cavity.mirrors):
            raise ValueError("mirrors differ; no symmetric waist")
        half = np.array([[1, cavity.arm / 2], [0, 1]])
        A, B, _, D = (half @ np.array([[1, 0], [-1 / f, 1]]) @ half).ravel()
        m = (A + D) / 2
        if abs(m) >= 1:
            raise ValueError("cavity is not stable")
        out.append(sqrt(lam * abs(B) / (pi * sqrt(1 - m * m))))
    return out[0], out[1]


def dominant_modes(cavity: CavitySpec, chi=None, count: int = 4, ncv: int = 60, restarts: int = 20,
                   tol: float = 1e-8, with_m2: bool = False, sampling: str = "midpoint",
                   candidates: int | None = None) -> list[ModeResult]:
    """Largest-|gamma| eigenpairs of the round-trip operator by implicitly restarted Arnoldi.

    With a wide aperture many low-order modes have |gamma| equal to within
    rounding, so ``candidates`` (default 3 * count) pairs are computed and the
    ``count`` best are kept, ties in |gamma| (to 1e-9) going to the smaller mode.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    k = max(count, candidates or 3 * count)
    op = RoundTrip(cavity, chi, sampling)
    blank = op.blank
    n = cavity.grid

    def matvec(x):
        return op(np.asarray(x).reshape(n, n)).ravel()

    A = LinearOperator((n * n, n * n), matvec=matvec, dtype=complex)
    k = min(k, n * n - 2)
    ncv = min(max(ncv, 2 * k + 1), n * n)
    try:
        vals, vecs = eigs(A, k=k, which="LM", ncv=ncv, maxiter=restarts,
                          tol=tol * 1e-2, v0=_start_vector(cavity))
    except ArpackNoConvergence as exc:
        # the extra candidates only break ties; enough converged pairs will do
        if len(exc.eigenvalues) < count:
            raise ModeSolverError(f"Arnoldi did not converge: {len(exc.eigenvalues)} of {count} pairs") from exc
        vals, vecs = exc.eigenvalues, exc.eigenvectors
    out = []
    for g, v in zip(vals, vecs.T):
        prof = blank.with_values(v.reshape(n, n)).normalized()
        res = np.linalg.norm(matvec(prof.values.ravel()) - g * prof.values.ravel()) / max(abs(g), 1e-300)
        if res > tol:
            log.warning("mode gamma=%.6g residual %.2e exceeds %.0e", abs(g), res, tol)
        out.append(ModeResult(complex(g), prof, float(res)))
    out.sort(key=lambda m: (-round(abs(m.gamma), 9), _rms_size(m.profile)))
    out = out[:count]
    if with_m2:
        for m in out:
            m.m2 = beam_quality_m2(m.profile)
    return out


def _rms_size(psi: ComplexField2D) -> float:
    X, Y = psi.mesh()
    p = np.abs(psi.values) ** 2
    return float(np.sqrt(np.sum((X ** 2 + Y ** 2) * p) / np.sum(p)))


def hermite_gauss_mode(m: int, n: int, waist: float, z: float, grid: ComplexField2D,
                       waist_y: float | None = None) -> ComplexField2D:
    """HG_mn at distance ``z`` from its waist, unit discrete 2-norm."""
    if m < 0 or n < 0:
        raise ValueError("mode indices must be >= 0")
    X, Y = grid.mesh()
    k = grid.k

    def axis(u, idx, w0):
        zr = k * w0 ** 2 / 2
        w = w0 * sqrt(1 + (z / zr) ** 2)
        inv_r = z / (z ** 2 + zr ** 2)
        gouy = np.arctan(z / zr)
        norm = (2 / pi) ** 0.25 / sqrt(2.0 ** idx * factorial(idx) * w)
        # envelope of a field with carrier exp(+ikz): curvature +k u^2 / 2R, Gouy -(idx + 1/2) psi
        return (norm * eval_hermite(idx, sqrt(2) * u / w) * np.exp(-u ** 2 / w ** 2 + 1j * k * u ** 2 * inv_r / 2)
                * np.exp(-1j * (idx + 0.5) * gouy))

    v = axis(X, m, waist) * axis(Y, n, waist_y or waist)
    return grid.with_values(v).normalized()


def second_moments(psi: ComplexField2D) -> tuple[float, float, float, float]:
    """(x0, y0, sigma_x^2, sigma_y^2) of the intensity."""
    X, Y = psi.mesh()
    p = np.abs(psi.values) ** 2
    p = p / p.sum()
    x0, y0 = np.sum(X * p), np.sum(Y * p)
    return float(x0), float(y0), float(np.sum((X - x0) ** 2 * p)), float(np.sum((Y - y0) ** 2 * p))


def caustic(psi: ComplexField2D, zs) -> np.ndarray:
    """sigma_x^2, sigma_y^2 at propagation distances ``zs``, shape (len(zs), 2)."""
    sym = _kinetic_symbol(psi)
    spec = np.fft.fft2(psi.values)
    out = []
    for z in zs:
        f = psi.with_values(np.fft.ifft2(spec * np.exp(-1j * sym * z)))
        out.append(second_moments(f)[2:])
    return np.array(out)


def _fit_axis(zs, s2, lam):
    """Fit sigma^2(z) = a + b z + c z^2; return (M^2, z0, zR)."""
    c, b, a = np.polyfit(zs, s2, 2)
    if c <= 0:
        raise ValueError("non-convergent caustic fit (no positive curvature)")
    z0 = -b / (2 * c)
    s0 = a - b * b / (4 * c)
    if s0 <= 0:
        raise ValueError("non-convergent caustic fit (negative waist)")
    # M^2 = pi theta d / (4 lambda) with d = 4 sigma_0, theta = 4 sqrt(c)
    return 4 * pi * sqrt(s0) * sqrt(c) / lam, z0, sqrt(s0 / c)


def beam_quality_m2(psi: ComplexField2D, planes: int = 9, span: float = 2.0) -> tuple[float, float]:
    """(M^2_x, M^2_y) from second-moment widths fitted over ``planes`` planes.

    Waist position and Rayleigh range per axis come from the exact moments of
    the field; the fit then samples ``planes`` propagated planes across
    +-``span`` Rayleigh ranges of that waist.
    """
    if planes < 5:
        raise ValueError("need at least 5 planes")
    lam = psi.wavelength * 1e-9
    result = []
    for axis in (0, 1):
        var_x, cross, var_k = _moment_caustic(psi, axis)
        k = psi.k
        # sigma^2(z) = var_x + 2 z cross / k + z^2 var_k / k^2
        z0 = -cross * k / var_k
        s0 = max(var_x - cross ** 2 / var_k, psi.dx ** 2 / 12)
        zr = k * sqrt(s0 / var_k)
        zs = z0 + np.linspace(-span * zr, span * zr, planes)
        m2, _, _ = _fit_axis(zs, caustic(psi, zs)[:, axis], lam)
        result.append(m2)
    return result[0], result[1]


def _moment_caustic(psi: ComplexField2D, axis: int) -> tuple[float, float, float]:
    """(var_x, <x k_x> cross term, var_k) of one axis; the caustic is quadratic in these."""
    X, Y = psi.mesh()
    coord = X if axis == 0 else Y
    p = np.abs(psi.values) ** 2
    p = p / p.sum()
    c0 = np.sum(coord * p)
    grad = np.gradient(psi.values, psi.dx, axis=axis)
    kk = 2 * pi * np.fft.fftfreq(psi.n, psi.dx)
    KK = kk[:, None] if axis == 0 else kk[None, :]
    q = np.abs(np.fft.fft2(psi.values)) ** 2
    q = q / q.sum()
    k0 = np.sum(KK * q)
    var_k = float(np.sum((KK - k0) ** 2 * q))
    var_x = float(np.sum((coord - c0) ** 2 * p))
    cross = float(np.sum((coord - c0) * np.imag(np.conj(psi.values) * grad)) / np.sum(np.abs(psi.values) ** 2))
    return var_x, cross, var_k


def moment_m2(psi: ComplexField2D) -> tuple[float, float]:
    """M^2 from exact near- and far-field second moments (no propagation)."""
    out = []
    for axis in (0, 1):
        var_x, cross, var_k = _moment_caustic(psi, axis)
        s0 = var_x - cross ** 2 / var_k
        out.append(2 * sqrt(max(s0, 0.0) * var_k))
    return out[0], out[1]


def empty_cavity_waists(cavity: CavitySpec) -> tuple[float, float]:
    """Fundamental-mode waist radii (x, y) at the mirrors from ABCD optics."""
    out = []
    for idx in (0, 1):
        M = np.eye(2)
        for m in cavity.mirrors:
            f = m.radii[idx] / 2
            M = np.array([[1, 0], [-1 / f, 1]]) @ np.array([[1, cavity.arm], [0, 1]]) @ M
        A, B, Cc, D = M.ravel()
        half = (A + D) / 2
        if abs(half) >= 1:
            raise ValueError("cavity is not stable")
        lam = cavity.wavelength * 1e-9
        # q-parameter at the reference plane: 1/q = (D - A)/(2B) - i sqrt(1 - half^2)/|B|
        im = sqrt(1 - half ** 2) / abs(B)
        out.append(sqrt(lam / (pi * im)))
    return out[0], out[1]


__all__ = [
    "AliasingWarning", "CavitySpec", "ComplexField2D", "MediumPotential", "MirrorSpec", "ModeResult",
    "ModeSolverError", "apply_mirror", "beam_quality_m2", "caustic", "dominant_modes", "empty_cavity_waists",
    "empty_round_trip", "fresnel_propagate", "hermite_gauss_mode", "loaded_round_trip", "medium_potential",
    "medium_propagate", "moment_m2", "round_trip_operator", "second_moments",
]
