import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import bisect

from spinbath.cce import CCEOptions, cce_coherence
from spinbath.geometry import BathRealization
from spinbath.hamiltonian import PulseSequence
from spinbath.pseudospin import (
    PseudoSpinPair,
    crossing_ratios,
    depth_scan,
    nearest_pairs,
    omega_crossings,
    pair_coherence,
    pair_params,
    pair_values,
    product_coherence,
    write_scan,
)
from spinbath.spins import BathSpin, CentralSpin, ExternalField

NV = CentralSpin()
FIELD = ExternalField([0, 0, 400.0])
TIMES = np.linspace(0.01, 20, 50)


@pytest.mark.parametrize("seed", range(6))
def test_exact_reading_matches_pair_propagation(seed):
    rng = np.random.default_rng(seed)
    pos = np.column_stack([rng.uniform(-3, 3, (2, 2)), [4.0, 4.0]])
    bath = BathRealization(np.array(["e", "e"], dtype=object), pos)
    opts = CCEOptions(order=2, r_connect=np.inf, secular=True)
    full = cce_coherence(bath, NV, FIELD, PulseSequence.hahn(), TIMES, opts).values
    p = pair_params(NV, BathSpin(0, "e", pos[0]), BathSpin(1, "e", pos[1]))
    assert np.abs(full - pair_values(p.omega, p.delta, TIMES)).max() < 1e-9


def test_readings_differ_and_validate():
    a = pair_values(3.0, 2.0, TIMES, "standard")
    b = pair_values(3.0, 2.0, TIMES, "printed")
    assert not np.allclose(a, b)
    # standard: 1 - kappa sin^2(W t/2) sin^2(delta t/2)
    k = 9 / 13
    assert np.allclose(a, 1 - k * np.sin(np.sqrt(13) * TIMES / 2) ** 2 * np.sin(TIMES) ** 2)
    with pytest.raises(ValueError):
        pair_values(1.0, 1.0, TIMES, "other")


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_pair_values_bounded(omega, delta):
    for reading in ("exact", "standard", "printed"):
        v = pair_values(omega, delta, TIMES, reading)
        assert np.all(v <= 1 + 1e-12) and np.all(v >= -1e-12)


def test_pair_basics():
    p = PseudoSpinPair(1, 2, 3.0, 4.0)
    assert p.kappa == pytest.approx(9 / 25)
    assert p.swapped() == PseudoSpinPair(2, 1, -3.0, 4.0)
    assert PseudoSpinPair(0, 1, 0.0, 0.0).kappa == 0
    assert np.allclose(pair_values(0.0, 5.0, TIMES), 1)


def test_product_coherence():
    pairs = [PseudoSpinPair(0, 1, 3.0, 2.0), PseudoSpinPair(2, 3, 1.0, 5.0)]
    prod = product_coherence(pairs, TIMES)
    want = pair_coherence(pairs[0], TIMES).values * pair_coherence(pairs[1], TIMES).values
    assert np.allclose(prod.values, want) and prod.metadata["pairs"] == 2
    assert np.all(product_coherence([], TIMES).values == 1)


def test_nearest_pairs_order():
    rng = np.random.default_rng(3)
    spins = [BathSpin(k, "e", p) for k, p in enumerate(np.column_stack([rng.uniform(-8, 8, (30, 2)), np.full(30, 5)]))]
    pairs = nearest_pairs(NV, spins, 10)
    assert len(pairs) == 10
    d = [abs(p.delta) for p in pairs]
    assert d == sorted(d, reverse=True)
    assert nearest_pairs(NV, spins[:1], 10) == []


def test_crossing_against_direct_solve():
    # two spins on a line through the point above the NV, axis normal to the surface
    a, b = 1.0, 3.0

    def profile(d, rho):
        r2 = d * d + rho * rho
        return (3 * d * d / r2 - 1) / (2 * r2**1.5)

    want = bisect(lambda d: profile(d, a) - profile(d, b), 0.05, 8.0, xtol=1e-14)
    got = omega_crossings([a, 0.0], [b, 0.0], [0, 0, 1], 4 * (b - a))
    assert len(got) == 1 and got[0] == pytest.approx(want, rel=1e-8)
    # the spin directly above always dominates
    assert omega_crossings([0.0, 0.0], [2.0, 0.0], [0, 0, 1], 8.0) == []


def test_symmetric_pair_has_no_crossing():
    assert omega_crossings([1.0, 0.5], [-1.0, -0.5], [0, 0, 1], 10) == []


def test_crossing_ratios_scale_free():
    rng = np.random.default_rng(5)
    xy = rng.uniform(-5, 5, (12, 2))
    axis = np.array([1, 1, 1]) / np.sqrt(3)
    a = crossing_ratios(xy, axis, 10)
    b = crossing_ratios(3 * xy, axis, 10)
    assert len(a) and np.allclose(a, b, rtol=1e-6)


def test_depth_scan_and_write(tmp_path):
    rng = np.random.default_rng(2)
    xy = rng.uniform(-6, 6, (20, 2))
    rows = depth_scan(xy, [0, 0, 1], [2.0, 4.0], np.geomspace(0.01, 100, 60), n_pairs=20)
    assert [r.d_nv for r in rows] == [2.0, 4.0]
    write_scan(tmp_path / "scan.csv", rows)
    with open(tmp_path / "scan.csv") as fh:
        data = list(csv.reader(fh))
    assert data[0] == ["d_nv_nm", "omega_signed", "t2_us"] and len(data) == 3
