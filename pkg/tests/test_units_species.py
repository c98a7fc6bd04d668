import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spinbath.constants import DIPOLAR_PREFACTOR, ELECTRON_GYRO, GYRO_TO_RAD_US_G, SPECIES, SpinSpecies, get_species
from spinbath.couplings import dipolar_prefactor
from spinbath.units import unit_convert

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


def test_megahertz_is_angular():
    assert unit_convert(1.0, "MHz", "rad/us") == pytest.approx(2 * math.pi)
    assert unit_convert(2 * math.pi * 1e3, "rad/us", "MHz") == pytest.approx(1e3)


def test_mixed_dimensions_rejected():
    with pytest.raises(ValueError, match="cannot convert"):
        unit_convert(1.0, "nm", "us")
    with pytest.raises(ValueError, match="unknown unit"):
        unit_convert(1.0, "furlong", "nm")


@given(finite, st.sampled_from([("nm", "A"), ("us", "ns"), ("G", "T"), ("MHz", "kHz"), ("K", "mK")]))
def test_round_trip(value, pair):
    a, b = pair
    assert unit_convert(unit_convert(value, a, b), b, a) == pytest.approx(value, rel=1e-12, abs=1e-12)


def test_species_dimensions():
    assert get_species("13C").dim == 2
    assert get_species("14N").dim == 3
    assert get_species("17O").dim == 6
    assert get_species(SPECIES["1H"]) is SPECIES["1H"]
    with pytest.raises(ValueError, match="unknown species"):
        get_species("99X")


def test_species_validation():
    with pytest.raises(ValueError):
        SpinSpecies("bad", 0.7, 1.0)
    with pytest.raises(ValueError, match="quadrupole"):
        SpinSpecies("bad", 1.0, 1.0)  # spin 1 needs a quadrupole moment
    with pytest.raises(ValueError, match="abundance"):
        SpinSpecies("bad", 0.5, 1.0, None, 1.5)


def test_electron_gyro_sign_and_scale():
    # negative in the signed convention, 2.8025 MHz/G in magnitude
    assert ELECTRON_GYRO < 0
    assert abs(ELECTRON_GYRO) * GYRO_TO_RAD_US_G / (2 * np.pi) == pytest.approx(2.8025, rel=1e-4)
    assert SPECIES["13C"].gamma_rad_us_g / (2 * np.pi) * 1e3 == pytest.approx(1.0708, rel=1e-4)  # kHz/G


def test_dipolar_scale():
    # electron pair at 1 nm: 52.04 MHz; 13C-electron at 1 nm: 19.88 kHz
    ee = dipolar_prefactor(ELECTRON_GYRO, ELECTRON_GYRO) / (2 * np.pi)
    assert ee == pytest.approx(52.04, rel=1e-3)
    ce = abs(dipolar_prefactor(ELECTRON_GYRO, SPECIES["13C"].gamma)) / (2 * np.pi) * 1e3
    assert ce == pytest.approx(19.88, rel=1e-3)
    assert DIPOLAR_PREFACTOR > 0
