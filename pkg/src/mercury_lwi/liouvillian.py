"""Master-equation generators, stationary states and linear susceptibility.

Density matrices are vectorized column-major, ``vec(rho) = rho.flatten("F")``,
so that ``vec(A rho B) = (B.T kron A) vec(rho)``.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import atom_model as am
from .constants import EA0, EPS0, HBAR, khz

log = logging.getLogger(__name__)

#: rows s, w, r; columns a, b, c, d, e
XI = np.array([[-1, -1, 1, 1, 1],
               [1, 1, 1, -1, 1],
               [1, 1, 1, 1, -1]])

DEGENERACY_THRESHOLD = 1e-8


class SteadyStateError(RuntimeError):
    pass


def vec(rho: np.ndarray) -> np.ndarray:
    return rho.flatten(order="F")


def unvec(v: np.ndarray, dim: int | None = None) -> np.ndarray:
    if dim is None:
        dim = int(round(np.sqrt(v.shape[-1])))
    return v.reshape(v.shape[:-1] + (dim, dim))[..., :, :].swapaxes(-1, -2)


def trace_row(dim: int) -> np.ndarray:
    """Row vector t with t @ vec(rho) = Tr rho."""
    return vec(np.eye(dim))


def apply(L: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return unvec(L @ vec(rho), rho.shape[0])


def coherent_liouvillian(H: np.ndarray) -> np.ndarray:
    """Superoperator of rho -> -i [H, rho] (H in rad/s)."""
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("Hamiltonian must be a square matrix")
    eye = np.eye(H.shape[0])
    return -1j * (np.kron(eye, H) - np.kron(H.T, eye))


@dataclass
class DecayChannel:
    """Lindblad channel with lowering operator ``s``, rate and mean photon number."""

    s: np.ndarray
    rate: float
    photons: float = 0.0

    def __post_init__(self):
        if self.rate < 0 or self.photons < 0:
            raise ValueError("decay rate and photon number must be non-negative")


def _lindblad(s: np.ndarray) -> np.ndarray:
    """Superoperator of s rho s^+ - (s^+ s rho + rho s^+ s)/2."""
    eye = np.eye(s.shape[0])
    sds = s.conj().T @ s
    return np.kron(s.conj(), s) - 0.5 * (np.kron(eye, sds) + np.kron(sds.T, eye))


def dissipator(channels, dim: int | None = None) -> np.ndarray:
    """Radiative damping with thermal-like photon numbers (incoherent pumping)."""
    channels = list(channels)
    if dim is None:
        dim = channels[0].s.shape[0]
    L = np.zeros((dim * dim, dim * dim), dtype=complex)
    for ch in channels:
        if ch.rate == 0:
            continue
        L += ch.rate * (ch.photons + 1) * _lindblad(ch.s)
        if ch.photons:
            L += ch.rate * ch.photons * _lindblad(ch.s.conj().T)
    return L


def scheme_channels(scheme: am.LevelScheme, pump_r: float = 0.0, pump_cd: float = 0.0):
    """Decay channels of every transition and polarization in ``scheme``.

    The probe pump enters as n_ab = r / Gamma_ab on all ab channels and the
    c-d pump as n_cd = r_cd / Gamma_cd on the Delta m = 0 channel only.
    """
    channels = []
    for key, tr in scheme.transitions.items():
        for q in (-1, 0, 1):
            s = am.lowering_operator(scheme, tr.upper, tr.lower, q)
            if not s.any():
                continue
            n = 0.0
            if key == "ab":
                n = pump_r / tr.gamma
            elif key == "cd" and q == 0:
                n = pump_cd / tr.gamma
            channels.append(DecayChannel(s, tr.gamma, n))
    return channels


def manifold_signs(scheme: am.LevelScheme, xi: np.ndarray = XI) -> np.ndarray:
    """Diagonal of sum_j xi_kj s_jj per noisy field k, shape (3, dim)."""
    cols = {label: i for i, label in enumerate(am.MANIFOLDS)}
    return np.array([[xi[k, cols[lev.manifold]] for lev in scheme.levels] for k in range(xi.shape[0])],
                    dtype=float)


def phase_diffusion_liouvillian(b_s: float, b_w: float, b_r: float, scheme: am.LevelScheme,
                                xi: np.ndarray = XI) -> np.ndarray:
    """Stochastically averaged phase-diffusion generator (diagonal superoperator).

    sum_k b_k/2 P_k rho P_k - sum_k b_k/2 rho, with P_k = sum_j xi_kj s_jj.
    A coherence between manifolds with opposite xi_k entries decays at b_k.
    """
    rates = np.array([b_s, b_w, b_r], dtype=float)
    if np.any(rates < 0):
        raise ValueError("linewidths must be non-negative")
    signs = manifold_signs(scheme, xi)
    d = np.zeros(scheme.dimension ** 2)
    for b, p in zip(rates, signs):
        d += 0.5 * b * (vec(np.outer(p, p)) - 1.0)
    return np.diag(d).astype(complex)


def dephasing_liouvillian(scheme: am.LevelScheme, rates: dict[str, float]) -> np.ndarray:
    """Extra pure dephasing: coherences between manifolds ``XY`` decay at rates["XY"]."""
    dim = scheme.dimension
    gam = np.zeros((dim, dim))
    for key, g in rates.items():
        if g < 0:
            raise ValueError("dephasing rates must be non-negative")
        for i in scheme.indices(key[0]):
            for j in scheme.indices(key[1]):
                gam[i, j] = gam[j, i] = g
    return np.diag(-vec(gam)).astype(complex)


@dataclass
class StationaryState:
    rho: np.ndarray
    residual: float
    degenerate: bool


def steady_state(L: np.ndarray) -> StationaryState:
    """Stationary density matrix by least squares on L with a trace row.

    The degeneracy flag is set when more than one singular value of L falls
    below 1e-8 of the largest.
    """
    n = L.shape[0]
    dim = int(round(np.sqrt(n)))
    sv = np.linalg.svd(L, compute_uv=False)
    degenerate = int(np.sum(sv < DEGENERACY_THRESHOLD * sv[0])) > 1
    scale = sv[0]
    A = np.vstack([L, scale * trace_row(dim)[None, :]])
    rhs = np.zeros(n + 1, dtype=complex)
    rhs[-1] = scale
    x, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    rho = unvec(x, dim)
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    residual = float(np.linalg.norm(L @ vec(rho)))
    if not np.all(np.isfinite(rho)):
        raise SteadyStateError("linear solve for the stationary state failed")
    if residual > 1e-6 * scale and not degenerate:
        raise SteadyStateError(f"stationary residual {residual:.3e} too large")
    return StationaryState(rho, residual, degenerate)


def steady_state_batch(Ls: np.ndarray) -> np.ndarray:
    """Stationary states of a stack of generators, shape (n, d^2, d^2) -> (n, d, d).

    Solves (L + s u t) x = s u with t the trace row and u = vec(1)/d, which is
    equivalent to L x = 0, t x = 1 whenever the null space is one-dimensional.
    """
    n2 = Ls.shape[-1]
    dim = int(round(np.sqrt(n2)))
    t = trace_row(dim)
    u = t / dim
    scale = np.abs(Ls).max(axis=(-2, -1))[:, None, None]
    A = Ls + scale * np.outer(u, t)[None]
    b = np.broadcast_to((scale[:, :, 0] * u[None, :]), Ls.shape[:-1])
    x = np.linalg.solve(A, b[..., None])[..., 0]
    rho = unvec(x, dim)
    return 0.5 * (rho + rho.conj().swapaxes(-1, -2))


def probe_operator(scheme: am.LevelScheme, polarization) -> np.ndarray:
    """D = sum_q (e_q^* . eps_p) s_ab^q; <D> generalizes rho_ab."""
    eps = np.asarray(polarization, dtype=complex)
    eps = eps / np.linalg.norm(eps)
    D = np.zeros((scheme.dimension, scheme.dimension), dtype=complex)
    for q in (-1, 0, 1):
        D += np.vdot(am.spherical_basis(q), eps) * am.lowering_operator(scheme, "a", "b", q)
    return D


def probe_coherence(rho: np.ndarray, D: np.ndarray) -> np.ndarray:
    """<D> = Tr(D rho), vectorized over leading axes of ``rho``."""
    return np.einsum("ij,...ji->...", D, rho)


def probe_dipole(scheme: am.LevelScheme) -> float:
    """d_ab = sqrt(S_ab / (2 J_a + 1)) e a0 in C m."""
    tr = scheme.transitions["ab"]
    return float(np.sqrt(tr.strength / (2 * scheme.J("a") + 1)) * EA0)


def susceptibility_prefactor(scheme: am.LevelScheme, density: float) -> float:
    """d_ab^2 N / (eps0 hbar) in s^-1."""
    return probe_dipole(scheme) ** 2 * density / (EPS0 * HBAR)


def susceptibility(state, omega_p: complex, density: float, scheme: am.LevelScheme,
                   polarization=am.E_X) -> complex:
    """Linear susceptibility chi = |d_ab|^2 N rho_ab / (eps0 hbar Omega_p).

    ``state`` is a StationaryState or density matrix; ``omega_p`` is the
    reduced probe Rabi frequency used to compute it. The conjugate of
    ``omega_p`` is used so the result does not depend on the probe phase.
    """
    if omega_p == 0:
        raise ValueError("probe Rabi frequency must be non-zero")
    rho = state.rho if isinstance(state, StationaryState) else state
    if scheme.scalar:
        polarization = am.E_Z
    rho_ab = probe_coherence(rho, probe_operator(scheme, polarization))
    return complex(susceptibility_prefactor(scheme, density) * rho_ab / np.conj(omega_p))


@dataclass
class AtomSystem:
    """All atomic-side parameters that define one stationary problem.

    Frequencies are angular (rad/s); pump rates are in s^-1. Drives are
    reduced Rabi frequencies with Table-I polarizations by default.
    """

    scheme: am.LevelScheme
    drives: dict[str, am.DriveField]
    probe_rabi: float = khz(1.0)
    pump_r: float = 0.0
    pump_cd: float = 0.0
    linewidths: tuple[float, float, float] = (0.0, 0.0, 0.0)
    density: float = 9.2e19
    dephasing: dict[str, float] = field(default_factory=dict)
    probe_polarization: np.ndarray = field(default_factory=lambda: am.E_X.copy())

    def with_(self, **kw) -> "AtomSystem":
        return replace(self, **kw)

    def with_drive(self, name: str, **kw) -> "AtomSystem":
        drives = dict(self.drives)
        drives[name] = replace(drives[name], **kw)
        return replace(self, drives=drives)

    def _probe(self, probe_rabi=None) -> am.DriveField:
        pol = am.E_Z if self.scheme.scalar else self.probe_polarization
        return am.DriveField("p", detuning=0.0, polarization=pol,
                             rabi=self.probe_rabi if probe_rabi is None else probe_rabi)

    def hamiltonian(self, delta_p: float = 0.0, probe_rabi=None) -> np.ndarray:
        probe = self._probe(probe_rabi)
        probe.detuning = delta_p
        return am.build_hamiltonian(self.scheme, [probe, *self.drives.values()])

    def incoherent(self) -> np.ndarray:
        """Damping, pumping, phase-diffusion and dephasing parts of the generator."""
        L = dissipator(scheme_channels(self.scheme, self.pump_r, self.pump_cd), self.scheme.dimension)
        if any(self.linewidths):
            L = L + phase_diffusion_liouvillian(*self.linewidths, self.scheme)
        if self.dephasing:
            L = L + dephasing_liouvillian(self.scheme, self.dephasing)
        return L

    def liouvillian(self, delta_p: float = 0.0, probe_rabi=None) -> np.ndarray:
        return coherent_liouvillian(self.hamiltonian(delta_p, probe_rabi)) + self.incoherent()

    def detuning_weights(self) -> np.ndarray:
        """Per-level coefficients of (Delta_p, Delta_s, Delta_w, Delta_r) in H0, shape (dim, 4)."""
        rows = {"a": (0, 0, 0, 0), "b": (1, 0, 0, 0), "c": (0, -1, 0, 0),
                "d": (0, -1, 1, 0), "e": (0, 0, 1, -1)}
        return np.array([rows[lev.manifold] for lev in self.scheme.levels], dtype=float)

    def susceptibility(self, delta_p: float = 0.0, probe_rabi=None) -> complex:
        om = self.probe_rabi if probe_rabi is None else probe_rabi
        state = steady_state(self.liouvillian(delta_p, om))
        return susceptibility(state, om, self.density, self.scheme, self.probe_polarization)

    def chi_prefactor(self) -> float:
        return susceptibility_prefactor(self.scheme, self.density)

    def probe_D(self) -> np.ndarray:
        pol = am.E_Z if self.scheme.scalar else self.probe_polarization
        return probe_operator(self.scheme, pol)


def batch_probe_coherence(system: AtomSystem, shifts: np.ndarray, probe_rabi=None,
                          chunk: int = 64) -> np.ndarray:
    """<D> for a stack of detuning vectors.

    ``shifts`` has shape (n, 4) holding (Delta_p, Delta_s, Delta_w, Delta_r)
    *added* to the drives' own detunings (Delta_p of the system is 0).
    """
    shifts = np.atleast_2d(np.asarray(shifts, dtype=float))
    base = system.liouvillian(0.0, probe_rabi)
    dim = system.scheme.dimension
    levels = system.detuning_weights() @ shifts.T  # (dim, n)
    D = system.probe_D()
    out = np.empty(len(shifts), dtype=complex)
    for start in range(0, len(shifts), chunk):
        h = levels[:, start:start + chunk].T  # (m, dim)
        # -i [H0, rho]_{ij} = -i (h_i - h_j) rho_ij, column-major index i + dim j
        diff = (h[:, :, None] - h[:, None, :]).transpose(0, 2, 1).reshape(len(h), -1)
        Ls = np.repeat(base[None], len(h), axis=0)
        idx = np.arange(dim * dim)
        Ls[:, idx, idx] += -1j * diff
        rho = steady_state_batch(Ls)
        out[start:start + chunk] = probe_coherence(rho, D)
    return out


def batch_susceptibility(system: AtomSystem, shifts: np.ndarray, probe_rabi=None,
                         chunk: int = 64) -> np.ndarray:
    om = system.probe_rabi if probe_rabi is None else probe_rabi
    coh = batch_probe_coherence(system, shifts, om, chunk)
    return system.chi_prefactor() * coh / np.conj(om)


def spectrum_scan(system: AtomSystem, detunings, quadrature=None, geometry=None,
                  check_linear: bool = False) -> np.ndarray:
    """chi(Delta_p) over a detuning grid, optionally velocity averaged.

    With ``quadrature`` and ``geometry`` (see :mod:`doppler`) every grid point
    is the Maxwell-Boltzmann average; otherwise atoms are at rest.
    """
    detunings = np.atleast_1d(np.asarray(detunings, dtype=float))
    if detunings.size == 0:
        raise ValueError("empty detuning grid")
    out = np.empty(detunings.size, dtype=complex)
    for i, dp in enumerate(detunings):
        out[i] = averaged_susceptibility(system, dp, quadrature, geometry)
        if check_linear:
            half = averaged_susceptibility(system, dp, quadrature, geometry, system.probe_rabi / 2)
            if abs(half - out[i]) > 1e-3 * abs(out[i]):
                log.warning("probe Rabi %.3g rad/s not in the linear regime at Delta_p=%.4g", system.probe_rabi, dp)
    return out


def averaged_susceptibility(system: AtomSystem, delta_p: float = 0.0, quadrature=None,
                            geometry=None, probe_rabi=None) -> complex:
    """chi at one probe detuning, averaged over ``quadrature`` when given."""
    om = system.probe_rabi if probe_rabi is None else probe_rabi
    coh = averaged_coherence(system, delta_p, quadrature, geometry, om)
    return complex(system.chi_prefactor() * coh / np.conj(om))


def averaged_coherence(system: AtomSystem, delta_p: float = 0.0, quadrature=None,
                       geometry=None, probe_rabi=None) -> complex:
    """<D> at one probe detuning, averaged over ``quadrature`` when given."""
    om = system.probe_rabi if probe_rabi is None else probe_rabi
    if quadrature is not None and geometry is None:
        raise ValueError("a velocity quadrature needs the beam geometry")
    shifts = _node_shifts(delta_p, quadrature, geometry)
    if quadrature is not None and quadrature.line_axis is not None:
        k_line = geometry.matrix @ quadrature.line_axis
        coh = np.array([line_averaged_coherence(system, sh, k_line, quadrature.sigma, om) for sh in shifts])
    else:
        coh = batch_probe_coherence(system, shifts, om)
    return complex(coh @ _node_weights(quadrature))


def line_averaged_coherence(system: AtomSystem, shift: np.ndarray, k_line: np.ndarray,
                            sigma: float, probe_rabi=None, check: bool = True) -> complex:
    """<D> averaged over a Gaussian velocity component u ~ N(0, sigma^2).

    The field detunings are ``shift - k_line * u``. The generator is A + u B
    with B diagonal, so <D>(u) = sum_k c_k / (u - z_k) plus a constant, and
    the average follows from the Faddeeva function.
    """
    from .doppler import gaussian_pole_average

    dim = system.scheme.dimension
    A = system.liouvillian(0.0, probe_rabi)
    idx = np.arange(dim * dim)
    A[idx, idx] += _diag_detuning(system, shift)
    B = _diag_detuning(system, -np.asarray(k_line, dtype=float))
    t = trace_row(dim)
    u = t / dim
    scale = np.abs(A).max()
    A += scale * np.outer(u, t)
    x0 = np.linalg.solve(A, scale * u)
    M = np.linalg.solve(A, np.diag(B))
    lam, V = np.linalg.eig(M)
    c = np.linalg.solve(V, x0)
    p = system.probe_D().T.reshape(-1, order="F")
    g = (p @ V) * c  # <D>(u) = sum_k g_k / (1 + u lam_k)
    tiny = np.abs(lam) * sigma < 1e-12
    value = complex(g[tiny].sum()) + gaussian_pole_average(g[~tiny] / lam[~tiny], -1.0 / lam[~tiny], sigma)
    if check:
        # spot check of the rational form at u = sigma
        direct = p @ np.linalg.solve(A + sigma * np.diag(B), scale * u)
        approx = np.sum(g / (1 + sigma * lam))
        if abs(direct - approx) > 1e-6 * max(abs(direct), np.abs(g).max()):
            log.warning("ill-conditioned eigenbasis in the line average (error %.2e)", abs(direct - approx))
    return value


def _diag_detuning(system: AtomSystem, shift) -> np.ndarray:
    """Diagonal of -i[H0, .] for detunings ``shift`` = (Delta_p, Delta_s, Delta_w, Delta_r)."""
    h = system.detuning_weights() @ np.asarray(shift, dtype=float)
    return -1j * (h[:, None] - h[None, :]).reshape(-1, order="F")


def _node_shifts(delta_p, quadrature, geometry):
    base = np.array([delta_p, 0.0, 0.0, 0.0])
    if quadrature is None:
        return base[None, :]
    from .doppler import detuning_shifts

    return base[None, :] + detuning_shifts(geometry, quadrature.velocities)


def _node_weights(quadrature):
    return np.ones(1) if quadrature is None else quadrature.weights


def dump_superoperator(L: np.ndarray, path) -> None:
    """Binary dump: int64 dimension header then row-major complex128 data."""
    L = np.ascontiguousarray(L, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<q", L.shape[0]))
        fh.write(L.tobytes(order="C"))


def load_superoperator(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (n,) = struct.unpack("<q", raw[:8])
    return np.frombuffer(raw[8:], dtype="<c16").reshape(n, n).copy()
