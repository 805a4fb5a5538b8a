"""Physical constants and mercury data used across the package."""

from scipy import constants as _c

HBAR = _c.hbar
EPS0 = _c.epsilon_0
C = _c.c
KB = _c.k
AMU = _c.atomic_mass
#: dipole unit e*a0 in C m
EA0 = _c.e * _c.physical_constants["Bohr radius"][0]

#: atomic mass of mercury in u
HG_MASS_U = 200.6

TWO_PI = 2.0 * _c.pi


def mhz(f):
    """Convert a frequency in MHz to angular frequency in rad/s."""
    return TWO_PI * 1e6 * f


def khz(f):
    """Convert a frequency in kHz to angular frequency in rad/s."""
    return TWO_PI * 1e3 * f
