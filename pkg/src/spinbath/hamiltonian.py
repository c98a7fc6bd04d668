"""
Cluster Hamiltonians and pulse sequences.

Everything is assembled in the central-spin frame: z along the NV axis, x
from :meth:`CentralSpin.frame`. Bath Zeeman terms follow ``H = -gamma B . I``
with signed gyromagnetic ratios, so the NV term reads ``|gamma_e| B_z S_z``.

Batched builders work on arrays of clusters that share one tuple of local
dimensions; the single-cluster operations are thin wrappers around them.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .constants import GYRO_TO_RAD_US_G
from .couplings import dipolar_tensor_array, hz_per_vm_to_rad_us
from .spins import BathSpin, CentralSpin, ExternalField, spin_operators

HERMITIAN_TOL = 1e-12


class NonHermitianError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Pulse sequences


@dataclass(frozen=True)
class PulseSequence:
    """Ideal instantaneous pi pulses at fixed fractions of the total time.

    ``axes`` holds one of ``"x"``/``"y"`` per pulse. Use the constructors
    :meth:`fid`, :meth:`hahn`, :meth:`cpmg` and :meth:`xy4`.
    """

    kind: str
    pulse_times: tuple = ()
    axes: tuple = ()

    def __post_init__(self):
        times = tuple(float(f) for f in self.pulse_times)
        if len(self.axes) != len(times):
            raise ValueError("one axis per pulse required")
        if any(not 0 < f < 1 for f in times) or list(times) != sorted(times):
            raise ValueError("pulse times must be increasing fractions in (0, 1)")
        if any(a not in ("x", "y") for a in self.axes):
            raise ValueError("pulse axes must be 'x' or 'y'")
        object.__setattr__(self, "pulse_times", times)
        object.__setattr__(self, "axes", tuple(self.axes))

    @classmethod
    def fid(cls):
        return cls("FID")

    @classmethod
    def hahn(cls):
        return cls("HahnEcho", (0.5,), ("x",))

    @classmethod
    def cpmg(cls, n):
        if n < 1:
            raise ValueError("CPMG needs at least one pulse")
        return cls(f"CPMG{n}", tuple((k + 0.5) / n for k in range(n)), ("x",) * n)

    @classmethod
    def xy4(cls, repeats=1):
        if repeats < 1:
            raise ValueError("XY4 needs at least one repetition")
        n = 4 * repeats
        return cls(f"XY4-{repeats}", tuple((k + 0.5) / n for k in range(n)), ("x", "y") * (2 * repeats))

    @classmethod
    def from_name(cls, name):
        key = str(name).strip().lower().replace("_", "").replace("-", "")
        if key == "fid":
            return cls.fid()
        if key in ("hahn", "hahnecho", "echo", "he"):
            return cls.hahn()
        if key.startswith("cpmg"):
            return cls.cpmg(int(key[4:] or 1))
        if key.startswith("xy4"):
            return cls.xy4(int(key[3:] or 1))
        raise ValueError(f"unknown pulse sequence {name!r}")

    @property
    def n_pulses(self) -> int:
        return len(self.pulse_times)

    @property
    def segments(self) -> np.ndarray:
        """Free-evolution durations as fractions of the total time."""
        return np.diff(np.concatenate([[0.0], self.pulse_times, [1.0]]))


# ---------------------------------------------------------------------------
# Local and embedded operators

_HOP_LEVELS = 3  # |+1/2>, |-1/2>, |hole>


@lru_cache(maxsize=None)
def local_spin_vector(dim: int, three_level: bool = False) -> np.ndarray:
    """(3, dim, dim) spin-vector operators of one site.

    A three-level site embeds spin-1/2 operators in its first two levels and
    annihilates the third (hole) level.
    """
    if three_level:
        ops = np.zeros((3, _HOP_LEVELS, _HOP_LEVELS), dtype=complex)
        ops[:, :2, :2] = spin_operators(0.5).xyz
    else:
        ops = spin_operators((dim - 1) / 2).xyz.copy()
    ops.setflags(write=False)
    return ops


def _embed(op, k, dims):
    left = int(np.prod(dims[:k], dtype=int))
    right = int(np.prod(dims[k + 1 :], dtype=int))
    return np.kron(np.kron(np.eye(left), op), np.eye(right))


@lru_cache(maxsize=256)
def embedded_operators(dims: tuple, three_level: tuple) -> np.ndarray:
    """Spin vectors of every site embedded in the cluster space, shape (k, 3, D, D)."""
    out = []
    for k, (d, t) in enumerate(zip(dims, three_level)):
        loc = local_spin_vector(d, t)
        out.append([_embed(loc[a], k, dims) for a in range(3)])
    arr = np.array(out, dtype=complex).reshape(len(dims), 3, *(2 * [int(np.prod(dims))]))
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=256)
def _pair_products(dims: tuple, three_level: tuple):
    """Ops[k, a] @ Ops[l, b] for k <= l, as (pairs, 3, 3, D, D) with the pair index list."""
    ops = embedded_operators(dims, three_level)
    n = len(dims)
    pairs = [(k, l) for k in range(n) for l in range(k, n)]
    prods = np.einsum("kaij,kbjl->kabil", ops[[p[0] for p in pairs]], ops[[p[1] for p in pairs]])
    prods.setflags(write=False)
    return pairs, prods


# ---------------------------------------------------------------------------
# Bath arrays in the NV frame


@dataclass
class PreparedBath:
    """Per-site quantities in the central-spin frame, ready for batched assembly.

    ``hyperfine[i]`` is the tensor in ``S . A . I`` (rad/µs); positions are
    relative to the central spin. ``three_level`` sites carry the spin/hole
    mapping and ``occupied`` tells whether a three-level site starts with a
    spin on it.
    """

    species: np.ndarray
    positions: np.ndarray
    gammas: np.ndarray
    dims: np.ndarray
    hyperfine: np.ndarray
    quadrupole: np.ndarray
    three_level: np.ndarray
    occupied: np.ndarray
    field_nv: np.ndarray
    ids: np.ndarray
    interactions: bool = True
    secular: bool = False
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.positions)

    def zeeman_vectors(self) -> np.ndarray:
        """(n, 3) coefficient vectors h with H_Z = h . I, rad/µs."""
        return -(self.gammas * GYRO_TO_RAD_US_G)[:, None] * self.field_nv[None, :]


def prepare_bath(
    bath, nv: CentralSpin, field: ExternalField, hopping=False, reference=None, interactions=True, secular=False
):
    """Rotate a :class:`BathRealization` (or list of :class:`BathSpin`) into the NV frame.

    Without ``hopping`` holes are dropped; with it every site becomes a
    three-level spin/hole site. ``secular`` keeps only the zz hyperfine
    component and the energy-conserving part of bath-bath couplings.
    """
    from .geometry import BathRealization

    if isinstance(bath, BathRealization):
        sites = bath if hopping else bath.spins_only()
        species = np.asarray(sites.species, dtype=object)
        pos_lab = sites.positions
        hf_lab = sites.hyperfine
        q_lab = sites.quadrupole
        occupied = ~sites.is_hole
        ids = np.arange(sites.n_sites) if hopping else np.flatnonzero(~bath.is_hole)
    else:
        spins = list(bath)
        species = np.array([b.species.name for b in spins], dtype=object)
        pos_lab = np.array([b.position for b in spins], dtype=float).reshape(-1, 3)
        hf_lab = np.array(
            [b.hyperfine_to_central.m if b.hyperfine_to_central is not None else np.full((3, 3), np.nan) for b in spins]
        ).reshape(-1, 3, 3)
        q_lab = np.array(
            [b.quadrupole.m if b.quadrupole is not None else np.full((3, 3), np.nan) for b in spins]
        ).reshape(-1, 3, 3)
        occupied = np.ones(len(spins), dtype=bool)
        ids = np.array([b.id for b in spins], dtype=int)

    from .constants import get_species

    n = len(species)
    frame = nv.frame(reference)
    pos = (pos_lab - nv.position) @ frame.T
    gammas = np.array([get_species(s).gamma for s in species], dtype=float)
    dims = np.array([get_species(s).dim for s in species], dtype=int)
    three = np.full(n, bool(hopping))
    if hopping and np.any(dims[three] != 2):
        raise ValueError("the spin/hole mapping needs spin-1/2 sites")
    dims = np.where(three, _HOP_LEVELS, dims)

    hyperfine = dipolar_tensor_array(nv.gamma, gammas, np.zeros(3), pos) if n else np.zeros((0, 3, 3))
    if hf_lab is not None and n:
        given = np.all(np.isfinite(hf_lab.reshape(n, 9)), axis=1)
        hyperfine[given] = frame @ hf_lab[given] @ frame.T
    if secular:
        zz = hyperfine[:, 2, 2].copy()
        hyperfine = np.zeros_like(hyperfine)
        hyperfine[:, 2, 2] = zz
    quad = np.zeros((n, 3, 3))
    if q_lab is not None and n:
        given = np.all(np.isfinite(q_lab.reshape(n, 9)), axis=1)
        quad[given] = frame @ q_lab[given] @ frame.T
    return PreparedBath(
        species=species,
        positions=pos,
        gammas=gammas,
        dims=dims,
        hyperfine=hyperfine,
        quadrupole=quad,
        three_level=three,
        occupied=np.asarray(occupied, dtype=bool),
        field_nv=frame @ field.B,
        ids=np.asarray(ids, dtype=int),
        interactions=interactions,
        secular=secular,
    )


def secular_part(tensors, same_species):
    """Energy-conserving part of pair tensors (z = field axis).

    Like spins keep P_zz Iz Iz and the flip-flop term; unlike spins keep
    only P_zz.
    """
    out = np.zeros_like(tensors)
    zz = tensors[..., 2, 2]
    out[..., 2, 2] = zz
    flip = np.where(same_species, 0.5 * (tensors[..., 0, 0] + tensors[..., 1, 1]), 0.0)
    out[..., 0, 0] = flip
    out[..., 1, 1] = flip
    return out


def cluster_signature(prep: PreparedBath, members) -> tuple:
    members = np.asarray(members)
    return tuple(int(d) for d in prep.dims[members]), tuple(bool(t) for t in prep.three_level[members])


# ---------------------------------------------------------------------------
# Batched builders


def _check_batch(prep, clusters):
    clusters = np.asarray(clusters, dtype=int)
    if clusters.ndim != 2:
        raise ValueError("clusters must be an (n_clusters, order) index array")
    if len(clusters):
        sigs = {cluster_signature(prep, c) for c in clusters}
        if len(sigs) != 1:
            raise ValueError("a batch must share one signature")
    return clusters


def batch_bath_hamiltonians(prep: PreparedBath, clusters) -> np.ndarray:
    """Bath Hamiltonians (Zeeman, quadrupole, pairwise dipolar) for a batch, (nc, D, D)."""
    clusters = _check_batch(prep, clusters)
    nc, k = clusters.shape
    dims, three = cluster_signature(prep, clusters[0])
    ops = embedded_operators(dims, three)
    pairs, prods = _pair_products(dims, three)
    D = ops.shape[-1]
    h = prep.zeeman_vectors()[clusters]  # (nc, k, 3)
    H = np.einsum("cka,kaij->cij", h.astype(complex), ops)
    coeff = np.zeros((nc, len(pairs), 3, 3))
    for p, (a, b) in enumerate(pairs):
        if a == b:
            coeff[:, p] = prep.quadrupole[clusters[:, a]]
        elif prep.interactions:
            ia, ib = clusters[:, a], clusters[:, b]
            P = dipolar_tensor_array(prep.gammas[ia], prep.gammas[ib], prep.positions[ia], prep.positions[ib])
            if prep.secular:
                P = secular_part(P, prep.species[ia] == prep.species[ib])
            coeff[:, p] = P
    H += np.einsum("cpab,pabij->cij", coeff.astype(complex), prods)
    return 0.5 * (H + np.conj(np.swapaxes(H, -1, -2))).reshape(nc, D, D)


def batch_conditioning_terms(prep: PreparedBath, clusters) -> np.ndarray:
    """Operators V with H_alpha = H_bath + m_alpha V, i.e. sum_k (A_k row z) . I_k."""
    clusters = _check_batch(prep, clusters)
    dims, three = cluster_signature(prep, clusters[0])
    ops = embedded_operators(dims, three)
    rows = prep.hyperfine[clusters][:, :, 2, :]  # (nc, k, 3)
    return np.einsum("cka,kaij->cij", rows.astype(complex), ops)


def batch_interaction_blocks(prep: PreparedBath, clusters) -> np.ndarray:
    """Bath operators B_a = sum_k A_k[a, :] . I_k so that H_int = sum_a S_a (x) B_a; (nc, 3, D, D)."""
    clusters = _check_batch(prep, clusters)
    dims, three = cluster_signature(prep, clusters[0])
    ops = embedded_operators(dims, three)
    return np.einsum("ckab,kbij->caij", prep.hyperfine[clusters].astype(complex), ops)


def nv_spin_vector() -> np.ndarray:
    return spin_operators(1.0).xyz


def build_central(nv: CentralSpin, field: ExternalField, reference=None) -> np.ndarray:
    """3x3 central-spin Hamiltonian in rad/µs: Zeeman, zero-field splitting and Stark terms."""
    s = spin_operators(1.0)
    eye = np.eye(3)
    frame = nv.frame(reference)
    Bz = field.B @ nv.axis
    eps = frame @ field.electric_field_at_central
    d_par = hz_per_vm_to_rad_us(nv.d_parallel)
    d_perp = hz_per_vm_to_rad_us(nv.d_perp)
    zfs = s.z @ s.z - 2.0 / 3.0 * eye
    transverse = s.x @ s.x - s.y @ s.y
    H = -nv.gamma * GYRO_TO_RAD_US_G * Bz * s.z
    H = H + nv.D_axial * zfs + nv.E_transverse * transverse
    H = H - d_par * eps[2] * zfs - d_perp * eps[1] * transverse
    H = H - d_perp * eps[0] * (s.x @ s.y + s.y @ s.x)
    return H


def batch_full_hamiltonians(prep: PreparedBath, clusters, H_central) -> np.ndarray:
    """Central spin plus cluster, (nc, 3D, 3D), central spin as the first factor."""
    clusters = np.asarray(clusters, dtype=int)
    HB = batch_bath_hamiltonians(prep, clusters)
    blocks = batch_interaction_blocks(prep, clusters)
    S = nv_spin_vector()
    nc, D = HB.shape[0], HB.shape[-1]
    H = np.einsum("aij,cakl->cikjl", S, blocks).reshape(nc, 3 * D, 3 * D)
    H += np.kron(H_central, np.eye(D))[None]
    H += np.einsum("ij,ckl->cikjl", np.eye(3), HB).reshape(nc, 3 * D, 3 * D)
    return H


# ---------------------------------------------------------------------------
# Single-cluster wrappers


def _prepared(spins, nv, field, three_level=False):
    return prepare_bath(list(spins), nv, field, hopping=three_level)


def build_bath(spins: Sequence[BathSpin], field: ExternalField, nv: Optional[CentralSpin] = None) -> np.ndarray:
    """Bath Hamiltonian of one cluster. ``nv`` only fixes the frame (default: lab z axis)."""
    nv = nv or CentralSpin()
    spins = list(spins)
    if not spins:
        return np.zeros((1, 1), dtype=complex)
    prep = _prepared(spins, nv, field)
    return batch_bath_hamiltonians(prep, [np.arange(len(spins))])[0]


def build_interaction(nv: CentralSpin, spins: Sequence[BathSpin], field: Optional[ExternalField] = None):
    """Central-bath coupling sum S . A_i . I_i on the (central (x) cluster) space."""
    spins = list(spins)
    field = field or ExternalField.along(nv.axis)
    if not spins:
        return np.zeros((3, 3), dtype=complex)
    prep = _prepared(spins, nv, field)
    blocks = batch_interaction_blocks(prep, [np.arange(len(spins))])[0]
    D = blocks.shape[-1]
    return np.einsum("aij,akl->ikjl", nv_spin_vector(), blocks).reshape(3 * D, 3 * D)


@dataclass
class ClusterHamiltonian:
    basis: tuple
    H: np.ndarray
    conditioned_on: Optional[int] = None

    def __post_init__(self):
        check_hermitian(self.H)


def conditioned_bath_hamiltonian(nv, spins, field, level: int) -> ClusterHamiltonian:
    """Bath Hamiltonian with the central spin frozen in its S_z eigenstate ``level``."""
    if level not in (-1, 0, 1):
        raise ValueError("central level must be -1, 0 or +1")
    spins = list(spins)
    prep = _prepared(spins, nv, field)
    idx = [np.arange(len(spins))]
    H = batch_bath_hamiltonians(prep, idx)[0] + level * batch_conditioning_terms(prep, idx)[0]
    return ClusterHamiltonian(tuple(b.id for b in spins), H, level)


# ---------------------------------------------------------------------------
# Propagators


def check_hermitian(H, tol=HERMITIAN_TOL):
    H = np.asarray(H)
    scale = max(1.0, float(np.abs(H).max(initial=0.0)))
    if np.abs(H - np.conj(np.swapaxes(H, -1, -2))).max(initial=0.0) > tol * scale:
        raise NonHermitianError("Hamiltonian is not Hermitian")


def segment_propagators(evals, evecs, durations):
    """exp(-i H tau) for every duration from an eigendecomposition; (..., nt, D, D)."""
    phase = np.exp(-1j * evals[..., None, :] * np.asarray(durations)[:, None])
    return np.einsum("...ij,...tj,...kj->...tik", evecs, phase, evecs.conj())


def pulse_operator(axis: str, levels=(1, 2), dim=3) -> np.ndarray:
    """Ideal pi rotation about ``axis`` between two levels; other levels untouched."""
    a, b = levels
    P = np.eye(dim, dtype=complex)
    P[a, a] = P[b, b] = 0
    if axis == "x":
        P[a, b] = P[b, a] = -1j
    else:
        P[a, b], P[b, a] = -1.0, 1.0
    return P


def sequence_propagator(H, seq: PulseSequence, times, pulses=None):
    """Propagator of a static Hamiltonian under ``seq`` for every total time.

    ``H`` may carry leading batch axes; ``pulses`` maps axis name to a unitary
    on the same space (omit for a bath-only Hamiltonian, where pulses act
    trivially). Returns (..., nt, D, D).
    """
    H = np.asarray(H, dtype=complex)
    check_hermitian(H)
    times = np.asarray(times, dtype=float)
    evals, evecs = np.linalg.eigh(H)
    D = H.shape[-1]
    U = np.broadcast_to(np.eye(D, dtype=complex), H.shape[:-2] + (len(times), D, D))
    cache = {}
    for s, frac in enumerate(seq.segments):
        if frac not in cache:
            cache[frac] = segment_propagators(evals, evecs, frac * times)
        U = cache[frac] @ U
        if s < seq.n_pulses and pulses is not None:
            U = pulses[seq.axes[s]] @ U
    return U


def conditioned_propagators(H_levels, seq: PulseSequence, times):
    """Branch propagators for two conditioned Hamiltonians ``H_levels[..., 0/1, :, :]``.

    Each pi pulse swaps the conditioning level. The first returned branch
    ends in level 0, so the pair reproduces the final (0, 1) coherence.
    Returns ``(U_a, U_b)`` with shape (..., nt, D, D).
    """
    H_levels = np.asarray(H_levels, dtype=complex)
    evals, evecs = np.linalg.eigh(H_levels)
    times = np.asarray(times, dtype=float)
    start_a = seq.n_pulses % 2
    cache = {}
    branches = []
    for start in (start_a, 1 - start_a):
        level = start
        U = None
        for s, frac in enumerate(seq.segments):
            key = (level, frac)
            if key not in cache:
                cache[key] = segment_propagators(evals[..., level, :], evecs[..., level, :, :], frac * times)
            U = cache[key] if U is None else cache[key] @ U
            level = 1 - level
        branches.append(U)
    return branches[0], branches[1]
