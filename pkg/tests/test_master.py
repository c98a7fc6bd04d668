import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles as O
from spinbath.cce import cce_coherence
from spinbath.geometry import BathRealization
from spinbath.hamiltonian import PulseSequence
from spinbath.master import (
    HoppingModel,
    IntegratorError,
    LindbladChannel,
    MEOptions,
    build_channels,
    dissipator_super,
    dump_channels,
    gibbs_state,
    hop_channels,
    hop_pairs,
    hop_rate,
    lindblad_propagate,
    load_channels,
    mecce_coherence,
    relaxation_rate,
)
from spinbath.spins import CentralSpin, ExternalField

B = 400.0
NV = CentralSpin()
FIELD = ExternalField([0, 0, B])


def electron_bath(pos, holes):
    return BathRealization(np.array(["e"] * len(pos), dtype=object), pos, np.asarray(holes, bool))


def test_hop_rate_values():
    m = HoppingModel()
    assert hop_rate(5.0, m) == pytest.approx(100 * np.exp(-1))
    assert hop_rate(0.0, m) == pytest.approx(100)
    ang = HoppingModel(prefactor="angular")
    assert hop_rate(5.0, ang) == pytest.approx(100 * np.exp(-1) / (2 * np.pi))
    assert m.cutoff == 15.0
    for bad in ({"t_hop": 0}, {"r_hop": -1}, {"prefactor": "other"}):
        with pytest.raises(ValueError):
            HoppingModel(**bad)


def test_relaxation_rate():
    assert relaxation_rate(10.0) == pytest.approx(1 / (20 * np.pi))
    assert relaxation_rate(None) == 0 and relaxation_rate(np.inf) == 0
    with pytest.raises(ValueError):
        relaxation_rate(0)


def test_channel_validation():
    with pytest.raises(ValueError):
        LindbladChannel("teleport", (0,), 1.0)
    with pytest.raises(ValueError):
        LindbladChannel("spin_raise", (0,), -1.0)
    with pytest.raises(ValueError):
        LindbladChannel("spin_raise", (0, 1), 1.0)
    with pytest.raises(ValueError):
        LindbladChannel("hop", (0, 1), 1.0)
    assert LindbladChannel("hop", (0, 1), 1.0, -1).spin == -1


def test_channels_roundtrip(tmp_path):
    bath = electron_bath([[0, 0, 5], [3, 0, 5], [0, 4, 5]], [False, False, True])
    chans = build_channels(bath, T1=10, pair_rate=0.2) + hop_channels(bath, HoppingModel())
    dump_channels(tmp_path / "ch.json", chans)
    assert load_channels(tmp_path / "ch.json") == chans


def test_build_channels_counts():
    bath = electron_bath([[0, 0, 5], [3, 0, 5], [0, 40, 5]], [False, False, False])
    chans = build_channels(bath, T1=10, pair_rate=0.2, pair_cutoff=10)
    kinds = [c.kind for c in chans]
    assert kinds.count("spin_raise") == kinds.count("spin_lower") == 3
    assert kinds.count("pair_exchange_up") == 1
    assert build_channels(bath) == []


def test_one_spin_one_hole_has_four_hop_channels():
    bath = electron_bath([[0, 0, 5], [5, 0, 5]], [False, True])
    chans = hop_channels(bath, HoppingModel())
    assert len(chans) == 4
    assert {(c.targets, c.spin) for c in chans} == {((0, 1), 1), ((0, 1), -1), ((1, 0), 1), ((1, 0), -1)}
    assert all(c.rate == pytest.approx(100 * np.exp(-1)) for c in chans)


def test_hop_pairs_only_spin_hole_within_cutoff():
    pos = [[0, 0, 5], [4, 0, 5], [8, 0, 5], [30, 0, 5]]
    bath = electron_bath(pos, [False, False, True, True])
    pairs = {(i, j) for i, j, _ in hop_pairs(bath, HoppingModel())}
    assert pairs == {(0, 2), (1, 2)}


def test_gibbs_state():
    assert np.allclose(gibbs_state("e", None, B), np.eye(2) / 2)
    rho = gibbs_state("e", 0.05, B)
    assert np.trace(rho).real == pytest.approx(1) and rho[1, 1].real > 0.5


@given(st.integers(0, 1000), st.floats(0.0, 2.0))
def test_lindblad_preserves_trace_and_positivity(seed, rate):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    H = X + X.conj().T
    L = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho0 = np.diag([0.4, 0.3, 0.2, 0.1]).astype(complex)
    rho = lindblad_propagate(H, [(rate, L)], rho0, PulseSequence.hahn(), [0.1, 1.0])
    for r in rho:
        assert np.trace(r) == pytest.approx(1.0, abs=1e-8)
        assert np.linalg.eigvalsh((r + r.conj().T) / 2).min() > -1e-8


def test_lindblad_rejects_negative_rate():
    with pytest.raises(ValueError):
        lindblad_propagate(np.eye(2), [(-1.0, np.eye(2))], np.eye(2) / 2, PulseSequence.fid(), [1.0])


def test_dissipator_column_stacking():
    rng = np.random.default_rng(0)
    L = rng.normal(size=(3, 3))
    X = rng.normal(size=(3, 3))
    want = L @ X @ L.T - 0.5 * (L.T @ L @ X + X @ L.T @ L)
    got = (dissipator_super([(1.0, L)], 3) @ X.reshape(-1, order="F")).reshape(3, 3, order="F")
    assert np.allclose(got, want)


def test_integrator_error_type():
    assert issubclass(IntegratorError, RuntimeError)


@pytest.mark.parametrize("seed", range(8))
def test_hopping_matches_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    n = 2
    while True:
        pos = rng.normal(size=(n, 3))
        pos = pos / np.linalg.norm(pos, axis=1)[:, None] * rng.uniform(2, 4, size=(n, 1))
        if np.linalg.norm(pos[0] - pos[1]) > 0.5:
            break
    holes = np.zeros(n, bool)
    holes[rng.integers(n)] = True
    model = HoppingModel(t_hop=rng.uniform(0.5, 5), r_hop=2.0)
    times = np.geomspace(0.01, 3, 6)
    seq = PulseSequence.from_name(["hahn", "xy4"][seed % 2])
    bath = electron_bath(pos, holes)
    got = mecce_coherence(bath, NV, FIELD, seq, times, (), MEOptions(order=n, r_connect=np.inf), hopping=model).values
    ob = O.Bath(["e"] * n, pos, holes, three_level=True)
    rates = {(i, j): float(hop_rate(r, model)) for i, j, r in hop_pairs(bath, model)}
    want = O.full_space_coherence(
        ob, B, seq.pulse_times, seq.axes, times, secular=True, channels=O.hop_ops(ob, rates)
    )
    assert np.abs(got - want).max() < 1e-7


def test_slow_hopping_matches_static():
    pos = np.array([[0, 0, 3.0], [2.5, 0, 3.0], [0, 2.5, 3.0], [6, 6, 3.0]])
    holes = [False, False, False, True]
    times = np.geomspace(0.01, 5, 8)
    seq = PulseSequence.hahn()
    opts = MEOptions(order=2, r_connect=np.inf, secular=True)
    slow = mecce_coherence(
        electron_bath(pos, holes), NV, FIELD, seq, times, (), opts, hopping=HoppingModel(t_hop=1e9)
    ).values
    static = cce_coherence(electron_bath(pos[:3], [False] * 3), NV, FIELD, seq, times, opts).values
    assert np.allclose(slow, static, atol=1e-6)


def test_all_holes_is_flat():
    bath = electron_bath([[0, 0, 5], [5, 0, 5]], [True, True])
    c = mecce_coherence(bath, NV, FIELD, PulseSequence.hahn(), [0.1, 1.0], hopping=HoppingModel())
    assert np.allclose(c.values, 1)


def test_central_dephasing_factor():
    bath = BathRealization.empty()
    t = np.array([0.5, 1.0, 2.0])
    c = mecce_coherence(bath, NV, FIELD, PulseSequence.hahn(), t, options=MEOptions(gamma_nv=0.3))
    assert np.allclose(c.values, np.exp(-0.15 * t))
