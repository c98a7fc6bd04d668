import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spinbath.constants import ELECTRON_GYRO, SPECIES
from spinbath.couplings import (
    DiskChargeModel,
    SingularGeometryError,
    axial_coupling,
    dipolar_kernel,
    dipolar_tensor,
    disk_field,
    disk_field_quadrature,
    effective_params,
    flipflop_coupling,
)
from spinbath.spins import BathSpin, CentralSpin, CouplingTensor, ExternalField, spin_operators

vec = st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=3).map(np.array)
far = vec.filter(lambda v: np.linalg.norm(v) > 0.2)


@pytest.mark.parametrize("s", [0.5, 1.0, 1.5, 2.5])
def test_spin_algebra(s):
    S = spin_operators(s)
    assert np.allclose(S.x @ S.y - S.y @ S.x, 1j * S.z)
    assert np.allclose(S.x @ S.x + S.y @ S.y + S.z @ S.z, s * (s + 1) * S.eye)
    assert np.allclose(S.plus, S.x + 1j * S.y)
    assert np.real(S.z[0, 0]) == s  # basis starts at +s


def test_spin_operators_reject():
    with pytest.raises(ValueError):
        spin_operators(2.0)


def test_coupling_tensor_symmetric():
    with pytest.raises(ValueError, match="symmetric"):
        CouplingTensor(np.arange(9.0).reshape(3, 3))
    T = CouplingTensor(np.diag([1.0, 1.0, -2.0]))
    assert T.is_traceless()


@given(far)
def test_central_frame_orthonormal(axis):
    nv = CentralSpin(axis=axis)
    F = nv.frame()
    assert np.allclose(F @ F.T, np.eye(3), atol=1e-12)
    assert np.allclose(F[2], axis / np.linalg.norm(axis))
    assert np.linalg.det(F) == pytest.approx(1.0)


def test_central_spin_validation():
    with pytest.raises(ValueError):
        CentralSpin(axis=[0, 0, 0])
    with pytest.raises(ValueError):
        CentralSpin(spin=0.5)


@given(far)
def test_kernel_symmetric_traceless(r):
    K = dipolar_kernel(r)
    assert np.allclose(K, K.T)
    assert abs(np.trace(K)) < 1e-9 * np.abs(K).max()


@given(far, st.floats(0.3, 3.0))
def test_kernel_scaling(r, k):
    # K(k r) = K(r) / k^3
    assert np.allclose(dipolar_kernel(k * r), dipolar_kernel(r) / k**3, rtol=1e-9, atol=1e-12)


def test_singular_geometry():
    with pytest.raises(SingularGeometryError):
        dipolar_kernel([0.0, 0.0, 1e-9])
    a = BathSpin(0, "e", [0, 0, 0])
    with pytest.raises(SingularGeometryError):
        flipflop_coupling(a, BathSpin(1, "e", [0, 0, 0]), [0, 0, 1])


@given(far)
def test_axial_coupling_is_half_nn_component(r):
    nv = CentralSpin(axis=[0, 0, 1])
    b = BathSpin(0, "13C", r)
    T = dipolar_tensor("e", "13C", np.zeros(3), r).m
    assert axial_coupling(nv, b) == pytest.approx(-0.5 * T[2, 2], rel=1e-9, abs=1e-15)


def test_flipflop_magic_angle_and_on_axis():
    a = BathSpin(0, "e", [0, 0, 0])
    magic = np.arccos(1 / np.sqrt(3))
    b = BathSpin(1, "e", [np.sin(magic), 0, np.cos(magic)])
    assert abs(flipflop_coupling(a, b, [0, 0, 1])) < 1e-9
    c = BathSpin(1, "e", [0, 0, 2.0])
    # (3 - 1) / (2 r^3) times the prefactor at 2 nm: 52.04 MHz / 8
    assert flipflop_coupling(a, c, [0, 0, 1]) / (2 * np.pi) == pytest.approx(52.04 / 8, rel=1e-3)


def test_disk_field_closed_form_matches_quadrature():
    model = DiskChargeModel(sigma=1e-3, radius=3.0)
    p = np.array([0.0, 0.0, -2.0])
    closed = disk_field(model, p)
    quad = disk_field_quadrature(model, p)
    assert np.allclose(closed, quad, rtol=1e-6)
    assert closed[2] < 0  # points away from a positive sheet


def test_disk_field_limits():
    model = DiskChargeModel(sigma=1e-3, radius=1e4)
    assert np.linalg.norm(disk_field(model, [0, 0, -1e-3])) == pytest.approx(model.sheet_field, rel=1e-4)
    small = DiskChargeModel(sigma=1e-3, radius=0.1)
    z = 50.0
    # far away the disk acts as a point charge q / (4 pi eps0 (eps_d+1)/2 z^2)
    point = model.sheet_field * (np.pi * 0.1**2) / (2 * np.pi * z**2)
    assert np.linalg.norm(disk_field(small, [0, 0, -z])) == pytest.approx(point, rel=1e-3)


def test_disk_off_axis_uses_quadrature():
    model = DiskChargeModel(sigma=1e-3, radius=3.0)
    a = disk_field(model, [0.5, 0.0, -2.0])
    assert a[0] > 0 and a[2] < 0  # away from the disk on both axes


def test_effective_params_zero_strain():
    nv = CentralSpin()
    field = ExternalField.along([0, 0, 1], 400.0)
    p = effective_params(nv, field)
    zeeman = abs(ELECTRON_GYRO) * 1e-10 * 400
    assert p.E_eff == 0
    assert p.f_plus - p.f_minus == pytest.approx(2 * zeeman)
    assert p.slope_plus == pytest.approx(abs(ELECTRON_GYRO) * 1e-10)


def test_effective_params_strain():
    E = 2 * np.pi * 40
    p = effective_params(CentralSpin(E_transverse=E), ExternalField.along([0, 0, 1], 0.0))
    assert p.E_eff == pytest.approx(E)
    assert p.f_plus - p.f_minus == pytest.approx(2 * E)
    assert SPECIES["e"].gamma == ELECTRON_GYRO
