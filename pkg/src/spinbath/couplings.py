"""
Point-dipole couplings, pseudo-spin scalar couplings, the charged-disk static
field and effective central-spin transition parameters.
"""

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .constants import CONSTANTS, DIPOLAR_PREFACTOR, get_species
from .spins import CentralSpin, CouplingTensor, ExternalField

# Closer than this is treated as a singular geometry (nm).
SINGULAR_DISTANCE = 1e-6


class SingularGeometryError(ValueError):
    pass


def dipolar_kernel(R, exclusion=SINGULAR_DISTANCE):
    """K_ij = (R^2 delta_ij - 3 R_i R_j) / R^5 in nm^-3. Accepts (..., 3) arrays."""
    R = np.asarray(R, dtype=float)
    r2 = np.einsum("...i,...i->...", R, R)
    if np.any(r2 < exclusion**2):
        raise SingularGeometryError(f"separation below {exclusion} nm")
    r = np.sqrt(r2)
    eye = np.eye(3)
    outer = R[..., :, None] * R[..., None, :]
    return (r2[..., None, None] * eye - 3 * outer) / (r2 * r2 * r)[..., None, None]


def dipolar_prefactor(gamma1, gamma2):
    """(mu0/4pi) gamma1 gamma2 hbar in rad/µs nm^3 (gammas in rad/s/T)."""
    return DIPOLAR_PREFACTOR * gamma1 * gamma2


def dipolar_tensor_array(gamma1, gamma2, r1, r2):
    """Vectorized point-dipole tensors for broadcastable position arrays."""
    R = np.asarray(r2, dtype=float) - np.asarray(r1, dtype=float)
    pref = dipolar_prefactor(np.asarray(gamma1, dtype=float), np.asarray(gamma2, dtype=float))
    return pref[..., None, None] * dipolar_kernel(R)


def dipolar_tensor(s1, s2, r1, r2) -> CouplingTensor:
    """Point-dipole coupling tensor between two spins, rad/µs."""
    g1, g2 = get_species(s1).gamma, get_species(s2).gamma
    return CouplingTensor(dipolar_tensor_array(g1, g2, r1, r2))


def _scalar_coupling(gamma1, gamma2, r1, r2, field_dir):
    d = np.asarray(r2, dtype=float) - np.asarray(r1, dtype=float)
    r = np.linalg.norm(d, axis=-1)
    if np.any(r < SINGULAR_DISTANCE):
        raise SingularGeometryError("coincident positions")
    n = np.asarray(field_dir, dtype=float)
    n = n / np.linalg.norm(n)
    cos = (d @ n) / r
    return dipolar_prefactor(gamma1, gamma2) * (3 * cos**2 - 1) / (2 * r**3)


def axial_coupling(nv: CentralSpin, b, field_dir=None):
    """Axial coupling hbar g_i g_NV (3cos^2 theta - 1) / (2 |d|^3) of a bath spin, rad/µs.

    Equal to minus one half of the (n, n) component of the point-dipole tensor.
    """
    n = nv.axis if field_dir is None else field_dir
    return float(_scalar_coupling(b.species.gamma, nv.gamma, nv.position, b.position, n))


def flipflop_coupling(i, j, field_dir):
    """Flip-flop coupling hbar g_i g_j (3cos^2 phi - 1) / (2 |d_ij|^3), rad/µs."""
    return float(_scalar_coupling(i.species.gamma, j.species.gamma, i.position, j.position, field_dir))


# ---------------------------------------------------------------------------
# Static field from a uniformly charged disk


@dataclass(frozen=True)
class DiskChargeModel:
    sigma: float  # C/m^2
    radius: float  # nm
    center: np.ndarray = np.zeros(3)
    normal: np.ndarray = np.array([0.0, 0.0, 1.0])
    eps_d: float = CONSTANTS.eps_d

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("disk radius must be positive")
        n = np.asarray(self.normal, dtype=float)
        object.__setattr__(self, "normal", n / np.linalg.norm(n))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))

    @property
    def sheet_field(self) -> float:
        """sigma / (eps0 (eps_d + 1)) in V/m."""
        return self.sigma / (CONSTANTS.eps0 * (self.eps_d + 1))


def _in_plane_basis(n):
    ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = ref - n * (ref @ n)
    u /= np.linalg.norm(u)
    return u, np.cross(n, u)


def disk_field_quadrature(model: DiskChargeModel, point, rtol=1e-8):
    """Field at ``point`` (nm) by 2-D adaptive quadrature over the disk, V/m."""
    p = np.asarray(point, dtype=float) - model.center
    u, v = _in_plane_basis(model.normal)
    out = np.zeros(3)
    for k in range(3):

        def integrand(r, phi, k=k):
            rho = r * (np.cos(phi) * u + np.sin(phi) * v)
            d = p - rho
            return d[k] / np.linalg.norm(d) ** 3 * r

        val, _ = integrate.dblquad(integrand, 0, 2 * np.pi, 0, model.radius, epsabs=0, epsrel=rtol)
        out[k] = val
    # Coulomb prefactor sigma / (4 pi eps0 (eps_d+1)/2); the integral is dimensionless
    return model.sheet_field / (2 * np.pi) * out


def disk_field(model: DiskChargeModel, nv_position, rtol=1e-8):
    """Electric field (V/m) of the charged disk at the NV position.

    On the symmetry axis the closed form
    E = sigma/(eps0 (eps_d+1)) (1 - z/sqrt(z^2+a^2)) along the normal is used,
    with z the signed distance |n . (r_nv - r_c)|; off-axis points fall back
    to adaptive quadrature.
    """
    p = np.asarray(nv_position, dtype=float) - model.center
    z_signed = p @ model.normal
    lateral = p - z_signed * model.normal
    if np.linalg.norm(lateral) > 1e-9 * max(1.0, abs(z_signed)):
        return disk_field_quadrature(model, nv_position, rtol)
    z = abs(z_signed)
    mag = model.sheet_field * (1 - z / np.hypot(z, model.radius))
    # field points away from a positive sheet on either side
    direction = model.normal if z_signed >= 0 else -model.normal
    return mag * direction


def field_in_nv_frame(nv: CentralSpin, vector, reference=None):
    """Components of a lab vector along the NV frame axes (x, y, z)."""
    return nv.frame(reference) @ np.asarray(vector, dtype=float)


# ---------------------------------------------------------------------------
# Effective transition parameters


@dataclass(frozen=True)
class EffectiveCentralParams:
    E_eff: float
    f_plus: float
    f_minus: float
    slope_plus: float
    slope_minus: float


def hz_per_vm_to_rad_us(value):
    return value * 2 * np.pi * 1e-6


def effective_params(nv: CentralSpin, field: ExternalField, reference=None) -> EffectiveCentralParams:
    """Transition frequencies of |0> <-> |+/-> after diagonalizing the |+/-1> subspace.

    Frequencies in rad/µs, slopes in rad/µs per Gauss.
    """
    eps = field_in_nv_frame(nv, field.electric_field_at_central, reference)
    d_perp = hz_per_vm_to_rad_us(nv.d_perp)
    d_par = hz_per_vm_to_rad_us(nv.d_parallel)
    E_eff = np.hypot(nv.E_transverse - d_perp * eps[1], d_perp * eps[0])
    g = abs(nv.gamma) * 1e-10  # rad/µs/G
    Bz = field.B @ nv.axis
    zeeman = g * Bz
    root = np.hypot(zeeman, E_eff)
    base = nv.D_axial - d_par * eps[2]
    slope = g * zeeman / root if root > 0 else g
    return EffectiveCentralParams(float(E_eff), base + root, base - root, slope, -slope)
