"""Spin operators and the basic model types: coupling tensors, central spin, bath spins, field."""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .constants import ELECTRON_GYRO, SpinSpecies, get_species
from .units import unit_convert


@dataclass(frozen=True)
class SpinMatrices:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    plus: np.ndarray
    minus: np.ndarray

    @property
    def eye(self):
        return np.eye(self.z.shape[0], dtype=complex)

    @property
    def xyz(self):
        return np.stack([self.x, self.y, self.z])


@lru_cache(maxsize=None)
def _spin_matrices(two_s: int) -> SpinMatrices:
    s = two_s / 2
    m = s - np.arange(two_s + 1)  # +s ... -s
    plus = np.zeros((two_s + 1, two_s + 1), dtype=complex)
    for k in range(1, two_s + 1):
        # <m+1|S+|m> = sqrt(s(s+1) - m(m+1))
        plus[k - 1, k] = np.sqrt(s * (s + 1) - m[k] * (m[k] + 1))
    minus = plus.conj().T
    x = (plus + minus) / 2
    y = (plus - minus) / 2j
    z = np.diag(m).astype(complex)
    for a in (x, y, z, plus, minus):
        a.setflags(write=False)
    return SpinMatrices(x, y, z, plus, minus)


def spin_operators(s: float) -> SpinMatrices:
    """Angular momentum matrices for spin ``s`` in the ``|+s>, ..., |-s>`` basis."""
    two_s = int(round(2 * s))
    if abs(two_s - 2 * s) > 1e-12 or two_s not in (1, 2, 3, 5):
        raise ValueError(f"unsupported spin quantum number {s}")
    return _spin_matrices(two_s)


@dataclass(frozen=True)
class CouplingTensor:
    """Symmetric 3x3 coupling tensor in rad/µs."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float).reshape(3, 3)
        scale = max(np.abs(m).max(), 1e-300)
        if np.abs(m - m.T).max() > 1e-10 * scale:
            raise ValueError("coupling tensor must be symmetric")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @property
    def trace(self) -> float:
        return float(np.trace(self.m))

    def is_traceless(self, rtol=1e-9) -> bool:
        return abs(self.trace) <= rtol * max(np.linalg.norm(self.m), 1e-300)


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero-length axis")
    return v / n


# Stark susceptibilities in Hz per V/m (0.00035 and 0.017 kHz per V/cm).
D_PARALLEL_DEFAULT = 0.00035e3 / 100
D_PERP_DEFAULT = 0.017e3 / 100


@dataclass(frozen=True)
class CentralSpin:
    """The sensed spin-1 defect.

    ``D_axial`` and ``E_transverse`` are in rad/µs, Stark susceptibilities in
    Hz per V/m, ``gamma`` in rad/s/T.
    """

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    spin: float = 1.0
    D_axial: float = unit_convert(2870.0, "MHz", "rad/us")
    E_transverse: float = 0.0
    d_parallel: float = D_PARALLEL_DEFAULT
    d_perp: float = D_PERP_DEFAULT
    gamma: float = ELECTRON_GYRO

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "axis", _unit(self.axis))
        if self.spin != 1.0:
            raise ValueError("central spin must be spin-1")

    def frame(self, reference=None):
        """Orthonormal NV frame as rows (e_x, e_y, e_z) with e_z along the axis.

        ``e_x`` is the part of ``reference`` (default: lab z, else lab x)
        perpendicular to the axis.
        """
        ez = self.axis
        candidates = [reference] if reference is not None else []
        candidates += [np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0])]
        for ref in candidates:
            ref = np.asarray(ref, dtype=float)
            ex = ref - ez * (ref @ ez)
            if np.linalg.norm(ex) > 1e-8:
                ex = ex / np.linalg.norm(ex)
                break
        ey = np.cross(ez, ex)
        return np.stack([ex, ey, ez])


@dataclass(frozen=True)
class BathSpin:
    id: int
    species: SpinSpecies
    position: np.ndarray
    hyperfine_to_central: Optional[CouplingTensor] = None
    quadrupole: Optional[CouplingTensor] = None

    def __post_init__(self):
        object.__setattr__(self, "species", get_species(self.species))
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))


@dataclass(frozen=True)
class ExternalField:
    """Static magnetic field ``B`` (Gauss, lab frame) and electric field at the central spin (V/m)."""

    B: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 400.0]))
    electric_field_at_central: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "B", np.asarray(self.B, dtype=float).reshape(3))
        object.__setattr__(
            self, "electric_field_at_central", np.asarray(self.electric_field_at_central, dtype=float).reshape(3)
        )

    @classmethod
    def along(cls, axis, magnitude=400.0, electric_field=None):
        B = _unit(axis) * magnitude
        return cls(B, np.zeros(3) if electric_field is None else electric_field)
