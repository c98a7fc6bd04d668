"""
Dissipative cluster dynamics.

Lindblad channels (relaxation, incoherent pair exchange, hopping between a
spin and a vacant site), thermal single-spin states, dense Liouvillian
propagation and the master-equation variants of CCE and gCCE.

Superoperators use column stacking: ``vec(A X B) = (B^T kron A) vec(X)``.
"""

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.spatial import cKDTree

from .cce import (
    AssemblyDiagnostics,
    CCEOptions,
    CoherenceCurve,
    _clip,
    _group_by_signature,
    _nv_eigenframe,
    _subset_prepared,
    assemble,
    batch_density,
    enumerate_clusters,
    full_space_coherence,
    gibbs_matrix,
    site_states,
)
from .constants import get_species
from .hamiltonian import (
    PreparedBath,
    PulseSequence,
    batch_bath_hamiltonians,
    batch_conditioning_terms,
    batch_full_hamiltonians,
    check_hermitian,
    prepare_bath,
    pulse_operator,
)
from .spins import spin_operators

CHANNEL_KINDS = ("central_dephase", "spin_raise", "spin_lower", "pair_exchange_up", "pair_exchange_down", "hop")
HOP_CUTOFF_FACTOR = 3.0
TRACE_TOLERANCE = 1e-6
COND_LIMIT = 1e8


class IntegratorError(RuntimeError):
    pass


@dataclass(frozen=True)
class LindbladChannel:
    """One incoherent process. ``targets`` are bath site ids; ``spin`` picks the hopping projection (+1/-1)."""

    kind: str
    targets: tuple
    rate: float
    spin: Optional[int] = None

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if not self.rate >= 0:
            raise ValueError("channel rates must be non-negative")
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        want = {"central_dephase": 0, "spin_raise": 1, "spin_lower": 1}.get(self.kind, 2)
        if len(self.targets) != want:
            raise ValueError(f"{self.kind} needs {want} targets")
        if self.kind == "hop" and self.spin not in (1, -1):
            raise ValueError("hop channels need spin = +1 or -1")

    def as_dict(self):
        d = {"kind": self.kind, "targets": list(self.targets), "rate": self.rate}
        if self.spin is not None:
            d["spin"] = self.spin
        return d


def dump_channels(path, channels: Sequence[LindbladChannel]):
    with open(path, "w") as fh:
        json.dump([c.as_dict() for c in channels], fh, indent=1)


def load_channels(path):
    with open(path) as fh:
        return [LindbladChannel(d["kind"], tuple(d["targets"]), d["rate"], d.get("spin")) for d in json.load(fh)]


# ---------------------------------------------------------------------------
# Rates and channel construction


@dataclass(frozen=True)
class HoppingModel:
    """Spin-conserving symmetric hopping. ``t_hop`` in µs (10 ns default), ``r_hop`` in nm.

    ``prefactor="inverse"`` gives rate exp(-r/r_hop)/t_hop; ``"angular"``
    divides that by 2 pi.
    """

    t_hop: float = 0.01
    r_hop: float = 5.0
    prefactor: str = "inverse"
    cutoff_factor: float = HOP_CUTOFF_FACTOR
    symmetric: bool = True
    spin_conserving: bool = True

    def __post_init__(self):
        if self.t_hop <= 0 or self.r_hop <= 0:
            raise ValueError("t_hop and r_hop must be positive")
        if self.prefactor not in ("inverse", "angular"):
            raise ValueError("prefactor must be 'inverse' or 'angular'")

    @property
    def cutoff(self) -> float:
        return self.cutoff_factor * self.r_hop


def hop_rate(r, model: HoppingModel):
    """Hop rate in 1/µs at separation ``r`` (nm)."""
    base = 1.0 / model.t_hop
    if model.prefactor == "angular":
        base /= 2 * np.pi
    return base * np.exp(-np.asarray(r, dtype=float) / model.r_hop)


def relaxation_rate(T1):
    """Single-spin rate 1 / (2 pi T1) in 1/µs; zero for infinite T1."""
    if T1 is None or np.isinf(T1):
        return 0.0
    if T1 <= 0:
        raise ValueError("T1 must be positive")
    return 1.0 / (2 * np.pi * T1)


def gibbs_state(species, temperature, B_z):
    """Diagonal thermal state of one spin with Zeeman levels along the field, basis |+s> ... |-s>."""
    sp = get_species(species)
    return gibbs_matrix(sp.gamma, np.array([0.0, 0.0, float(B_z)]), temperature, sp.dim)


def _site_ids(bath):
    from .geometry import BathRealization

    if isinstance(bath, BathRealization):
        return np.arange(bath.n_sites), bath.positions, ~bath.is_hole
    return bath.ids, bath.positions, bath.occupied


def build_channels(bath, T1=None, pair_rate=0.0, pair_cutoff=np.inf):
    """Relaxation (S+ and S- per spin) and pairwise exchange channels.

    Pair exchange S+_i S-_j and its conjugate are added with equal rates for
    spin pairs closer than ``pair_cutoff``.
    """
    ids, pos, occupied = _site_ids(bath)
    out = []
    gamma = relaxation_rate(T1)
    if gamma > 0:
        for i in ids[occupied]:
            out.append(LindbladChannel("spin_raise", (i,), gamma))
            out.append(LindbladChannel("spin_lower", (i,), gamma))
    if pair_rate > 0:
        spin_idx = np.flatnonzero(occupied)
        sub = pos[spin_idx]
        if np.isinf(pair_cutoff):
            pairs = [(a, b) for a in range(len(sub)) for b in range(a + 1, len(sub))]
        else:
            pairs = sorted(cKDTree(sub).query_pairs(pair_cutoff))
        for a, b in pairs:
            i, j = ids[spin_idx[a]], ids[spin_idx[b]]
            out.append(LindbladChannel("pair_exchange_up", (i, j), pair_rate))
            out.append(LindbladChannel("pair_exchange_down", (i, j), pair_rate))
    return out


@dataclass
class ThreeLevelBath:
    """Sites with levels |+1>, |-1>, |hole>; spin operators vanish on the hole level."""

    positions: np.ndarray
    occupied: np.ndarray
    ids: np.ndarray

    @property
    def spin_ops(self) -> np.ndarray:
        ops = np.zeros((3, 3, 3), dtype=complex)
        ops[:, :2, :2] = spin_operators(0.5).xyz
        return ops

    def initial_state(self, k, temperature=None, gamma=None, B_z=0.0) -> np.ndarray:
        rho = np.zeros((3, 3), dtype=complex)
        if self.occupied[k]:
            if temperature is None:
                rho[:2, :2] = np.eye(2) / 2
            else:
                rho[:2, :2] = gibbs_matrix(gamma, np.array([0, 0, B_z]), temperature, 2)
        else:
            rho[2, 2] = 1.0
        return rho


def hopping_bath_map(bath) -> ThreeLevelBath:
    ids, pos, occupied = _site_ids(bath)
    return ThreeLevelBath(np.asarray(pos, dtype=float), np.asarray(occupied, dtype=bool), np.asarray(ids))


def hop_pairs(bath, model: HoppingModel):
    """(spin site id, hole site id, distance) for every spin-hole pair within the cutoff."""
    ids, pos, occupied = _site_ids(bath)
    spins, holes = np.flatnonzero(occupied), np.flatnonzero(~occupied)
    if not len(spins) or not len(holes):
        return []
    tree = cKDTree(pos[holes])
    out = []
    for a, near in zip(spins, tree.query_ball_point(pos[spins], model.cutoff)):
        for b in sorted(near):
            h = holes[b]
            out.append((int(ids[a]), int(ids[h]), float(np.linalg.norm(pos[a] - pos[h]))))
    return out


def hop_channels(bath, model: HoppingModel):
    """Both hop directions and both spin projections for every spin-hole pair within the cutoff."""
    out = []
    for i, j, r in hop_pairs(bath, model):
        rate = float(hop_rate(r, model))
        for src, dst in ((i, j), (j, i)):
            for s in (1, -1):
                out.append(LindbladChannel("hop", (src, dst), rate, s))
    return out


# ---------------------------------------------------------------------------
# Operators and superoperators


def _local_ops(dim, three_level):
    if three_level:
        ops = np.zeros((3, 3, 3), dtype=complex)
        s = spin_operators(0.5)
        ops[0, :2, :2] = s.plus
        ops[1, :2, :2] = s.minus
        return ops[0], ops[1]
    s = spin_operators((dim - 1) / 2)
    return s.plus, s.minus


def _embed_local(op, k, dims):
    left = int(np.prod(dims[:k], dtype=int))
    right = int(np.prod(dims[k + 1 :], dtype=int))
    return np.kron(np.kron(np.eye(left), op), np.eye(right))


def channel_operator(channel: LindbladChannel, slots, dims, three_level):
    """Jump operator of ``channel`` on a cluster space; ``slots`` maps site id to slot index."""
    k = [slots[t] for t in channel.targets]
    if channel.kind in ("spin_raise", "spin_lower"):
        plus, minus = _local_ops(dims[k[0]], three_level[k[0]])
        return _embed_local(plus if channel.kind == "spin_raise" else minus, k[0], dims)
    if channel.kind in ("pair_exchange_up", "pair_exchange_down"):
        pi, mi = _local_ops(dims[k[0]], three_level[k[0]])
        pj, mj = _local_ops(dims[k[1]], three_level[k[1]])
        if channel.kind == "pair_exchange_up":
            return _embed_local(pi, k[0], dims) @ _embed_local(mj, k[1], dims)
        return _embed_local(mi, k[0], dims) @ _embed_local(pj, k[1], dims)
    if channel.kind == "hop":
        if not (three_level[k[0]] and three_level[k[1]]):
            raise ValueError("hop channels need three-level sites")
        level = 0 if channel.spin == 1 else 1
        out_i = np.zeros((3, 3))
        out_i[2, level] = 1.0  # |hole><s| on the source
        in_j = np.zeros((3, 3))
        in_j[level, 2] = 1.0  # |s><hole| on the destination
        return _embed_local(out_i, k[0], dims) @ _embed_local(in_j, k[1], dims)
    raise ValueError(f"{channel.kind} does not act on bath sites")


def dissipator_super(ops_rates, D):
    """Sum of rate * D[L] as a (D^2, D^2) superoperator."""
    eye = np.eye(D)
    out = np.zeros((D * D, D * D), dtype=complex)
    for rate, L in ops_rates:
        if rate == 0:
            continue
        LdL = L.conj().T @ L
        out += rate * (np.kron(L.conj(), L) - 0.5 * np.kron(eye, LdL) - 0.5 * np.kron(LdL.T, eye))
    return out


def block_generator(H_left, H_right, dissipator):
    """Generator of X -> -i (H_left X - X H_right) + dissipator(X)."""
    D = H_left.shape[-1]
    eye = np.eye(D)
    gen = -1j * (np.kron(eye, H_left) - np.kron(H_right.T, eye))
    return gen + dissipator


class _Exponentiator:
    """exp(M tau) applied to vectors, for a batch of generators and many durations."""

    def __init__(self, M):
        self.M = M
        lam, V = np.linalg.eig(M)
        ok = np.linalg.cond(V) < COND_LIMIT
        self.lam, self.V = lam, V
        self.Vinv = np.zeros_like(V)
        self.Vinv[ok] = np.linalg.inv(V[ok])
        self.ok = ok

    def apply(self, x, taus):
        """x has shape (nc, nt, N); taus (nt,)."""
        out = np.empty(x.shape, dtype=complex)
        ok = self.ok
        if ok.any():
            y = np.einsum("cij,ctj->cti", self.Vinv[ok], x[ok])
            y *= np.exp(self.lam[ok][:, None, :] * taus[None, :, None])
            out[ok] = np.einsum("cij,ctj->cti", self.V[ok], y)
        for c in np.flatnonzero(~ok):
            E = expm(self.M[c][None] * taus[:, None, None])
            out[c] = np.einsum("tij,tj->ti", E, x[c])
        return out


def lindblad_propagate(H, channels, rho0, seq: PulseSequence, times, pulses=None):
    """Density matrices rho(t) after ``seq`` for every total time, (nt, D, D).

    ``channels`` is a list of ``(rate, L)`` with operators on the same space
    as ``H``; ``pulses`` maps axis names to unitaries (omit for none).
    """
    H = np.asarray(H, dtype=complex)
    check_hermitian(H)
    rho0 = np.asarray(rho0, dtype=complex)
    for rate, _ in channels:
        if rate < 0:
            raise ValueError("negative rate")
    D = H.shape[0]
    times = np.asarray(times, dtype=float)
    M = block_generator(H, H, dissipator_super(channels, D))
    ex = _Exponentiator(M[None])
    x = np.broadcast_to(rho0.reshape(-1, order="F"), (1, len(times), D * D)).copy()
    for s, frac in enumerate(seq.segments):
        x = ex.apply(x, frac * times)
        if s < seq.n_pulses and pulses is not None:
            P = pulses[seq.axes[s]]
            x = np.einsum("ij,ctj->cti", np.kron(P.conj(), P), x)
    rho = x[0].reshape(len(times), D, D).transpose(0, 2, 1)  # undo column stacking
    drift = np.abs(np.trace(rho, axis1=1, axis2=2) - np.trace(rho0)).max(initial=0)
    if drift > TRACE_TOLERANCE:
        raise IntegratorError(f"trace drift {drift:.2e} exceeds {TRACE_TOLERANCE}")
    return rho


# ---------------------------------------------------------------------------
# ME-CCE and ME-gCCE


@dataclass
class MEOptions(CCEOptions):
    mode: str = "cce"  # "cce" (conditioned block) or "gcce" (full central spin)
    gamma_nv: float = 0.0


def _channels_by_cluster(channels, clusters, slots_for):
    """For each cluster row, the channels whose targets all lie inside it."""
    by_target = {}
    for ch in channels:
        by_target.setdefault(frozenset(ch.targets), []).append(ch)
    out = []
    for c in clusters:
        ids = set(slots_for(c))
        found = []
        for key, chs in by_target.items():
            if key <= ids:
                found.extend(chs)
        out.append(found)
    return out


def _cluster_dissipators(prep, cl, channel_lists, D, sig, full=False):
    dims, three = sig
    diss = []
    for row, chs in zip(cl, channel_lists):
        slots = {int(prep.ids[m]): k for k, m in enumerate(row)}
        ops = [(ch.rate, channel_operator(ch, slots, dims, three)) for ch in chs]
        if full:
            ops = [(r, np.kron(np.eye(3), L)) for r, L in ops]
        diss.append(dissipator_super(ops, 3 * D if full else D))
    return np.array(diss)


def _conditioned_me(prep, cl, seq, times, states, levels, channel_lists, sig):
    nc = len(cl)
    D = int(np.prod(sig[0]))
    HB = batch_bath_hamiltonians(prep, cl)
    V = batch_conditioning_terms(prep, cl)
    Hs = [HB + m * V for m in levels]
    diss = _cluster_dissipators(prep, cl, channel_lists, D, sig)
    gens = {
        (a, b): _Exponentiator(np.array([block_generator(Hs[a][c], Hs[b][c], diss[c]) for c in range(nc)]))
        for a, b in ((0, 1), (1, 0))
    }
    rho = np.broadcast_to(np.eye(D) / D, (nc, D, D)) if states is None else batch_density(states, cl)
    x = np.broadcast_to(rho.reshape(nc, -1, order="F")[:, None, :], (nc, len(times), D * D)).copy()
    a = seq.n_pulses % 2
    for frac in seq.segments:
        x = gens[(a, 1 - a)].apply(x, frac * times)
        a = 1 - a
    # trace of the block: diagonal entries of the column-stacked vector
    return x[:, :, :: D + 1].sum(axis=-1)


def _full_me(prep, cl, seq, times, states, channel_lists, sig, Hc, W, pair):
    nc = len(cl)
    D = int(np.prod(sig[0]))
    N = 3 * D
    T = np.kron(W, np.eye(D))
    H = T.conj().T @ batch_full_hamiltonians(prep, cl, Hc) @ T
    diss = _cluster_dissipators(prep, cl, channel_lists, D, sig, full=True)
    ex = _Exponentiator(np.array([block_generator(H[c], H[c], diss[c]) for c in range(nc)]))
    rhoB = np.broadcast_to(np.eye(D) / D, (nc, D, D)) if states is None else batch_density(states, cl)
    psi = np.zeros(3, dtype=complex)
    psi[list(pair)] = 1 / np.sqrt(2)
    rho0 = np.einsum("ij,ckl->cikjl", np.outer(psi, psi.conj()), rhoB).reshape(nc, N, N)
    x = np.broadcast_to(rho0.reshape(nc, -1, order="F")[:, None, :], (nc, len(times), N * N)).copy()
    sup = {}
    for ax in ("x", "y"):
        P = np.kron(pulse_operator(ax, pair), np.eye(D))
        sup[ax] = np.kron(P.conj(), P)
    for s, frac in enumerate(seq.segments):
        x = ex.apply(x, frac * times)
        if s < seq.n_pulses:
            x = np.einsum("ij,ctj->cti", sup[seq.axes[s]], x)
    rho = x.reshape(nc, len(times), N, N).transpose(0, 1, 3, 2)  # undo column stacking
    rho = rho.reshape(nc, len(times), 3, D, 3, D)
    a, b = pair
    return 2 * np.trace(rho[:, :, a, :, b, :], axis1=2, axis2=3)


def mecce_coherence(
    bath,
    nv,
    field,
    seq: PulseSequence,
    times,
    channels: Sequence[LindbladChannel] = (),
    options: MEOptions = None,
    hopping: Optional[HoppingModel] = None,
    **meta,
) -> CoherenceCurve:
    """Master-equation CCE.

    ``channels`` target bath site ids (indices into the bath realization).
    With ``hopping`` the bath is mapped onto spin/hole sites, hop channels
    are added and spin-hole pairs within the hop cutoff are connected.
    """
    options = options or MEOptions()
    times = np.asarray(times, dtype=float)
    channels = list(channels)
    if isinstance(bath, PreparedBath):
        prep = bath
    else:
        prep = prepare_bath(bath, nv, field, hopping=hopping is not None, secular=options.secular)
        if hopping is not None:
            channels += hop_channels(bath, hopping)
    if options.r_bath is not None and len(prep):
        prep = _subset_prepared(prep, np.linalg.norm(prep.positions, axis=1) <= options.r_bath)
    diag = AssemblyDiagnostics()
    values = np.ones(len(times), dtype=complex)
    r_connect = None
    if prep.three_level.any() and not prep.occupied.any():
        prep = _subset_prepared(prep, np.zeros(len(prep), dtype=bool))
    if len(prep):
        r_connect = options.resolve_r_connect(prep)
        index = {int(i): k for k, i in enumerate(prep.ids)}
        extra = []
        for ch in channels:
            if len(ch.targets) == 2 and all(t in index for t in ch.targets):
                extra.append(tuple(index[t] for t in ch.targets))
        clusters = enumerate_clusters(prep.positions, options.order, r_connect, options.budget, extra)
        # clusters without any spin cannot decohere the central spin
        clusters = {k: v[prep.occupied[v].any(axis=1)] for k, v in clusters.items()}
        clusters = {k: v for k, v in clusters.items() if len(v)}
        states = site_states(prep, options.temperature)
        if not prep.three_level.any() and all(np.allclose(s, np.eye(len(s)) / len(s)) for s in states):
            states = None
        pair = None
        if options.mode == "gcce":
            Hc, W, pair = _nv_eigenframe(nv, field, options.levels)
        coh = {}
        for k, members in clusters.items():
            out = np.empty((len(members), len(times)), dtype=complex)
            for sig, rows in _group_by_signature(prep, members).items():
                rows = np.asarray(rows)
                D = int(np.prod(sig[0]))
                size = max(1, 400_000 // max(1, len(times) * (9 if options.mode == "gcce" else 1) * D * D))
                for start in range(0, len(rows), size):
                    chunk = rows[start : start + size]
                    cl = members[chunk]
                    lists = _channels_by_cluster(channels, cl, lambda c: prep.ids[c])
                    if options.mode == "gcce":
                        out[chunk] = _full_me(prep, cl, seq, times, states, lists, sig, Hc, W, pair)
                    else:
                        out[chunk] = _conditioned_me(prep, cl, seq, times, states, options.levels, lists, sig)
            coh[k] = out
        if options.mode == "gcce":
            L0 = full_space_coherence((W.conj().T @ Hc @ W)[None], seq, times, pair, np.ones((1, 1, 1)))[0]
            coh = {k: v / L0 for k, v in coh.items()}
        total, _ = assemble(clusters, coh, options.divisor_threshold, diag)
        if total is not None:
            values = total
    if options.gamma_nv > 0:
        gap = abs(options.levels[0] - options.levels[1])
        values = values * np.exp(-0.5 * options.gamma_nv * gap**2 * times)
    if options.clip:
        values = _clip(values, diag)
    meta = {
        "method": "me" + options.mode,
        "order": options.order,
        "sequence": seq.kind,
        "n_sites": len(prep),
        "n_channels": len(channels),
        "r_connect": r_connect,
        "guarded": diag.guarded,
        "clipped": diag.clipped,
        "n_clusters": diag.n_clusters,
        **meta,
    }
    return CoherenceCurve(times, values, meta)
