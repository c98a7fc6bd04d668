"""
Physical constants and spin species.

Default units used across the package:

- Distance: nm
- Time: µs
- Angular frequency / couplings: rad/µs
- Magnetic field: Gauss at the interface (Tesla only inside SI arithmetic)
- Gyromagnetic ratio: rad/s/T (signed, CODATA convention)
"""

from dataclasses import dataclass
from typing import Optional

import scipy.constants as sc

# Multiply a gyromagnetic ratio in rad/s/T by this to get rad/µs/G.
GYRO_TO_RAD_US_G = 1e-6 * 1e-4

# (mu0 / 4pi) * hbar in rad/µs * nm^3 per (rad/s/T)^2.
# Dipolar coupling in rad/µs = DIPOLAR_PREFACTOR * gamma1 * gamma2 / r_nm^3.
DIPOLAR_PREFACTOR = sc.mu_0 / (4 * sc.pi) * sc.hbar / 1e-27 * 1e-6

DIAMOND_LATTICE_CONSTANT = 0.3567  # nm
C13_SITE_DENSITY = 8 / DIAMOND_LATTICE_CONSTANT**3  # nm^-3


@dataclass(frozen=True)
class PhysicalConstants:
    mu0: float = sc.mu_0
    eps0: float = sc.epsilon_0
    hbar: float = sc.hbar
    kb: float = sc.k
    gamma_e: float = -sc.physical_constants["electron gyromag. ratio"][0]
    eps_d: float = 5.7


CONSTANTS = PhysicalConstants()
ELECTRON_GYRO = CONSTANTS.gamma_e


@dataclass(frozen=True)
class SpinSpecies:
    """Isotope or electron species.

    Parameters
    ----------
    name : str
        Label, e.g. ``"13C"`` or ``"e"``.
    spin : float
        Spin quantum number (1/2, 1, 3/2 or 5/2).
    gamma : float
        Gyromagnetic ratio in rad/s/T, signed.
    quadrupole_moment : float, optional
        Nuclear quadrupole moment in m^2, only for spin >= 1.
    natural_abundance : float
        Fraction in [0, 1].
    """

    name: str
    spin: float
    gamma: float
    quadrupole_moment: Optional[float] = None
    natural_abundance: float = 1.0

    def __post_init__(self):
        if self.spin not in (0.5, 1.0, 1.5, 2.5):
            raise ValueError(f"unsupported spin {self.spin} for species {self.name}")
        if (self.quadrupole_moment is not None) != (self.spin >= 1):
            raise ValueError(f"quadrupole moment must be given iff spin >= 1 ({self.name})")
        if not 0.0 <= self.natural_abundance <= 1.0:
            raise ValueError("natural abundance must lie in [0, 1]")

    @property
    def dim(self) -> int:
        return int(round(2 * self.spin + 1))

    @property
    def gamma_rad_us_g(self) -> float:
        return self.gamma * GYRO_TO_RAD_US_G


SPECIES = {
    "13C": SpinSpecies("13C", 0.5, 6.728284e7, None, 0.011),
    "1H": SpinSpecies("1H", 0.5, 2.6752218744e8, None, 0.999885),
    "19F": SpinSpecies("19F", 0.5, 2.518148e8, None, 1.0),
    "14N": SpinSpecies("14N", 1.0, 1.9337792e7, 2.044e-30, 0.99636),
    "17O": SpinSpecies("17O", 2.5, -3.62808e7, -2.558e-30, 0.00038),
    "e": SpinSpecies("e", 0.5, ELECTRON_GYRO, None, 1.0),
}


def get_species(name) -> SpinSpecies:
    if isinstance(name, SpinSpecies):
        return name
    try:
        return SPECIES[name]
    except KeyError:
        raise ValueError(f"unknown species {name!r}; known: {sorted(SPECIES)}") from None
