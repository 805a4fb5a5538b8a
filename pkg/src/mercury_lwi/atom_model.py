"""Level structure, angular-momentum algebra and RWA Hamiltonians.

Two schemes are provided. The mercury scheme has 13 Zeeman sublevels in the
manifolds ``a`` (6 3P1), ``b`` (6 1S0), ``c`` (7 3S1), ``d`` (6 3P2) and
``e`` (6 3P0). The four-level scheme keeps one sublevel per manifold
``a``-``d`` and uses unit geometric factors (scalar couplings).

All Hamiltonians are stored in angular-frequency units, i.e. divided by hbar.
Basis order: manifolds a, b, c, d, e, ascending m inside each manifold.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import factorial, sqrt

import numpy as np

from .constants import EA0, HBAR, mhz

MANIFOLDS = "abcde"

#: drive name -> transition key (upper manifold first)
DRIVE_TRANSITIONS = {"p": "ab", "s": "ca", "w": "cd", "r": "ce"}


@dataclass(frozen=True)
class Level:
    manifold: str
    n: int
    J: int
    m: int

    def __post_init__(self):
        if self.manifold not in MANIFOLDS:
            raise ValueError(f"unknown manifold label {self.manifold!r}")
        if self.J < 0 or abs(self.m) > self.J:
            raise ValueError(f"invalid quantum numbers J={self.J}, m={self.m}")


@dataclass(frozen=True)
class Transition:
    """Dipole transition between two manifolds.

    ``gamma`` is the radiative decay rate in rad/s and ``strength`` the line
    strength S = <i||d||j>^2 in units of (e a0)^2.
    """

    upper: str
    lower: str
    wavelength: float  # nm
    gamma: float
    strength: float

    def __post_init__(self):
        if self.wavelength <= 0 or self.gamma <= 0 or self.strength <= 0:
            raise ValueError(f"transition {self.key} needs positive wavelength, gamma and strength")

    @property
    def key(self) -> str:
        return self.upper + self.lower

    @property
    def reduced_dipole(self) -> float:
        """Reduced dipole element in C m (positive root of S)."""
        return sqrt(self.strength) * EA0

    @property
    def omega(self) -> float:
        """Transition angular frequency in rad/s."""
        from .constants import C, TWO_PI

        return TWO_PI * C / (self.wavelength * 1e-9)


#: wavelength (nm), natural linewidth (rad/s), line strength (e a0)^2
MERCURY_TRANSITIONS = {
    "ab": Transition("a", "b", 253.7, mhz(1.27), 0.19),
    "ca": Transition("c", "a", 435.8, mhz(8.86), 6.83),
    "cd": Transition("c", "d", 546.1, mhz(7.75), 11.8),
    "ce": Transition("c", "e", 404.7, mhz(3.45), 2.1),
}

_MERCURY_MANIFOLDS = {"a": (6, 1), "b": (6, 0), "c": (7, 1), "d": (6, 2), "e": (6, 0)}


@dataclass(frozen=True)
class LevelScheme:
    levels: tuple[Level, ...]
    transitions: dict[str, Transition]
    scalar: bool = False

    def __post_init__(self):
        seen = set()
        for lev in self.levels:
            if (lev.manifold, lev.m) in seen:
                raise ValueError(f"duplicate level ({lev.manifold}, m={lev.m})")
            seen.add((lev.manifold, lev.m))
        labels = self.manifolds
        for key, tr in self.transitions.items():
            if tr.upper not in labels or tr.lower not in labels:
                raise ValueError(f"transition {key} references a missing manifold")

    @property
    def dimension(self) -> int:
        return len(self.levels)

    @property
    def manifolds(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(lev.manifold for lev in self.levels))

    def indices(self, manifold: str) -> list[int]:
        idx = [i for i, lev in enumerate(self.levels) if lev.manifold == manifold]
        if not idx:
            raise KeyError(f"unknown manifold {manifold!r}")
        return idx

    def J(self, manifold: str) -> int:
        return self.levels[self.indices(manifold)[0]].J

    def projector(self, manifold: str) -> np.ndarray:
        """Projector onto a Zeeman manifold."""
        p = np.zeros((self.dimension, self.dimension))
        for i in self.indices(manifold):
            p[i, i] = 1.0
        return p

    def with_transitions(self, **overrides: Transition) -> "LevelScheme":
        return replace(self, transitions={**self.transitions, **overrides})


def mercury_scheme(transitions: dict[str, Transition] | None = None) -> LevelScheme:
    """The 13-level mercury scheme with Table-I transition data by default."""
    levels = []
    for label in MANIFOLDS:
        n, J = _MERCURY_MANIFOLDS[label]
        levels.extend(Level(label, n, J, m) for m in range(-J, J + 1))
    return LevelScheme(tuple(levels), dict(transitions or MERCURY_TRANSITIONS))


def four_level_scheme(transitions: dict[str, Transition] | None = None) -> LevelScheme:
    """Pedagogical scheme a, b, c, d with scalar couplings on ab, ca and cd."""
    trs = dict(transitions or MERCURY_TRANSITIONS)
    trs.pop("ce", None)
    levels = tuple(Level(label, _MERCURY_MANIFOLDS[label][0], _MERCURY_MANIFOLDS[label][1], 0)
                   for label in "abcd")
    return LevelScheme(levels, trs, scalar=True)


def wigner_3j(j1: int, j2: int, j3: int, m1: int, m2: int, m3: int) -> float:
    """Wigner 3-j symbol for integer angular momenta (Racah formula).

    Returns 0 whenever a selection rule is violated.
    """
    if min(j1, j2, j3) < 0:
        raise ValueError("angular momenta must be non-negative")
    if m1 + m2 + m3 != 0:
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(m3) > j3:
        return 0.0
    if j3 > j1 + j2 or j3 < abs(j1 - j2):
        return 0.0
    tri = (factorial(j1 + j2 - j3) * factorial(j1 - j2 + j3) * factorial(-j1 + j2 + j3)
           / factorial(j1 + j2 + j3 + 1))
    pref = sqrt(tri * factorial(j1 + m1) * factorial(j1 - m1) * factorial(j2 + m2)
                * factorial(j2 - m2) * factorial(j3 + m3) * factorial(j3 - m3))
    kmin = max(0, j2 - j3 - m1, j1 - j3 + m2)
    kmax = min(j1 + j2 - j3, j1 - m1, j2 + m2)
    total = 0
    for k in range(kmin, kmax + 1):
        total += (-1) ** k / (factorial(k) * factorial(j1 + j2 - j3 - k) * factorial(j1 - m1 - k)
                              * factorial(j2 + m2 - k) * factorial(j3 - j2 + m1 + k)
                              * factorial(j3 - j1 - m2 + k))
    return float((-1) ** (j1 - j2 - m3) * pref * total)


def lowering_operator(scheme: LevelScheme, upper: str, lower: str, q: int) -> np.ndarray:
    """Spherical lowering operator s^q from manifold ``upper`` to ``lower``.

    Entry (j, i) with i in ``upper`` and j in ``lower`` equals
    (-1)^(J_i - m_i) sqrt(2 J_i + 1) * 3j(J_i 1 J_j; -m_i q m_j).
    In a scalar scheme the single q = 0 entry is 1.
    """
    if q not in (-1, 0, 1):
        raise ValueError(f"q must be 0 or +-1, got {q}")
    up, lo = scheme.indices(upper), scheme.indices(lower)
    s = np.zeros((scheme.dimension, scheme.dimension), dtype=complex)
    if scheme.scalar:
        if q == 0:
            s[lo[0], up[0]] = 1.0
        return s
    for i in up:
        li = scheme.levels[i]
        for j in lo:
            lj = scheme.levels[j]
            w = wigner_3j(li.J, 1, lj.J, -li.m, q, lj.m)
            if w:
                s[j, i] = (-1) ** (li.J - li.m) * sqrt(2 * li.J + 1) * w
    return s


def spherical_basis(q: int) -> np.ndarray:
    """Spherical unit vector e_q (e_0 = e_z, e_+-1 = -+(e_x +- i e_y)/sqrt 2)."""
    if q == 0:
        return np.array([0.0, 0.0, 1.0], dtype=complex)
    return -q * np.array([1.0, 1j * q, 0.0]) / sqrt(2.0)


E_X = np.array([1.0, 0.0, 0.0], dtype=complex)
E_Y = np.array([0.0, 1.0, 0.0], dtype=complex)
E_Z = np.array([0.0, 0.0, 1.0], dtype=complex)


@dataclass
class DriveField:
    """A coherent drive on one of the transitions p, s, w, r.

    The field strength is given either as the reduced Rabi frequency
    ``rabi`` = <u||d||l> E / (hbar sqrt(2 J_u + 1)) in rad/s, or as a Gaussian
    beam ``power`` (W) and ``waist`` (m), in which case the peak value is used.
    """

    name: str
    detuning: float = 0.0
    polarization: np.ndarray = field(default_factory=lambda: E_Z.copy())
    rabi: complex | None = None
    power: float | None = None
    waist: float | None = None
    linewidth: float = 0.0

    def __post_init__(self):
        if self.name not in DRIVE_TRANSITIONS:
            raise ValueError(f"unknown drive {self.name!r}")
        eps = np.asarray(self.polarization, dtype=complex)
        norm = np.linalg.norm(eps)
        if norm == 0:
            raise ValueError("polarization vector has zero norm")
        self.polarization = eps / norm
        if self.linewidth < 0:
            raise ValueError("linewidth must be >= 0")
        if self.rabi is None and (self.power is None or self.waist is None):
            self.rabi = 0.0

    @property
    def transition_key(self) -> str:
        return DRIVE_TRANSITIONS[self.name]

    @classmethod
    def from_component(cls, name, component, polarization, **kw) -> "DriveField":
        """Build a drive whose largest spherical component has magnitude ``component``."""
        eps = np.asarray(polarization, dtype=complex)
        eps = eps / np.linalg.norm(eps)
        largest = max(abs(np.vdot(spherical_basis(q), eps)) for q in (-1, 0, 1))
        return cls(name, polarization=eps, rabi=component / largest, **kw)


def rabi_components(drive: DriveField, transition: Transition) -> dict[int, complex]:
    """Spherical Rabi components Omega^q = (e_q^* . eps) * reduced Rabi."""
    if drive.rabi is not None:
        reduced = drive.rabi
    else:
        from .gain_field import gaussian_peak_amplitude

        amp = gaussian_peak_amplitude(drive.power, drive.waist)
        reduced = reduced_rabi(amp, transition, J_upper=_J_upper(transition))
    return {q: complex(np.vdot(spherical_basis(q), drive.polarization) * reduced) for q in (-1, 0, 1)}


def _J_upper(transition: Transition) -> int:
    return _MERCURY_MANIFOLDS[transition.upper][1]


def reduced_rabi(amplitude: float, transition: Transition, J_upper: int) -> float:
    """<u||d||l> E / (hbar sqrt(2 J_u + 1)) for a slowly varying amplitude E in V/m."""
    return transition.reduced_dipole * amplitude / (HBAR * sqrt(2 * J_upper + 1))


def build_hamiltonian(scheme: LevelScheme, drives) -> np.ndarray:
    """RWA Hamiltonian (rad/s) for the given drives.

    ``drives`` is an iterable of DriveField or a mapping name -> DriveField.
    Missing drives are treated as off with zero detuning.
    """
    if isinstance(drives, dict):
        drives = list(drives.values())
    by_name = {}
    for d in drives:
        if d.name in by_name:
            raise ValueError(f"drive {d.name!r} given twice")
        by_name[d.name] = d
    det = {k: (by_name[k].detuning if k in by_name else 0.0) for k in "pswr"}
    dim = scheme.dimension
    H = np.zeros((dim, dim), dtype=complex)
    diag = {"b": det["p"], "c": -det["s"], "d": det["w"] - det["s"], "e": det["w"] - det["r"]}
    for label, value in diag.items():
        if label in scheme.manifolds:
            for i in scheme.indices(label):
                H[i, i] = value
    for name, d in by_name.items():
        key = d.transition_key
        if key not in scheme.transitions:
            if d.rabi == 0 and d.power in (None, 0):
                continue
            raise ValueError(f"drive {name!r} has no transition {key} in this scheme")
        tr = scheme.transitions[key]
        for q, om in rabi_components(d, tr).items():
            if om == 0:
                continue
            H -= om * lowering_operator(scheme, tr.upper, tr.lower, q)
    return H + H.conj().T - np.diag(np.diag(H).real)


def dressed_states(omega_s: complex, omega_w: complex):
    """Dressed states of the resonant four-level scheme to first order in omega_w.

    Returns a list of (normalized state vector in basis a, b, c, d, energy in
    rad/s) for the states |0>, |+>, |->.
    """
    if omega_s == 0:
        raise ValueError("omega_s must be non-zero")
    a, c, d = np.eye(4, dtype=complex)[[0, 2, 3]]
    phase = abs(omega_s) / omega_s
    zero = d - (np.conj(omega_w) / np.conj(omega_s)) * a
    plus = (a - phase * c + (omega_w / omega_s) * d) / sqrt(2)
    minus = (a + phase * c + (omega_w / omega_s) * d) / sqrt(2)
    out = []
    for vec, energy in ((zero, 0.0), (plus, abs(omega_s)), (minus, -abs(omega_s))):
        out.append((vec / np.linalg.norm(vec), energy))
    return out
