"""
Cluster enumeration and coherence assembly for conventional and generalized CCE.

A coherence curve is the product of irreducible cluster contributions. Each
cluster contribution is normalized by the central-spin-only value, so the
empty cluster contributes exactly one.
"""

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .constants import CONSTANTS
from .geometry import SizeError
from .hamiltonian import (
    PreparedBath,
    PulseSequence,
    batch_bath_hamiltonians,
    batch_conditioning_terms,
    batch_full_hamiltonians,
    build_central,
    cluster_signature,
    local_spin_vector,
    prepare_bath,
    pulse_operator,
    segment_propagators,
)

log = logging.getLogger(__name__)

DIVISOR_THRESHOLD = 1e-6
DEFAULT_CLUSTER_BUDGET = 2_000_000
R_CONNECT_NUCLEAR = 0.9  # nm
R_CONNECT_ELECTRON = 8.0  # nm
# Entries of (clusters x times x D x D) complex arrays per evaluation chunk.
_CHUNK_ENTRIES = 2_000_000


@dataclass(frozen=True)
class Cluster:
    members: tuple

    def __post_init__(self):
        m = tuple(sorted(int(i) for i in self.members))
        if not m:
            raise ValueError("a cluster needs at least one member")
        if len(set(m)) != len(m):
            raise ValueError("cluster members must be unique")
        object.__setattr__(self, "members", m)

    @property
    def order(self) -> int:
        return len(self.members)


@dataclass
class CoherenceCurve:
    times: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly ascending")

    @property
    def abs(self) -> np.ndarray:
        return np.abs(self.values)

    def __mul__(self, other: "CoherenceCurve") -> "CoherenceCurve":
        if not np.array_equal(self.times, other.times):
            raise ValueError("curves live on different time grids")
        meta = {**other.metadata, **self.metadata, "factors": [self.metadata, other.metadata]}
        return CoherenceCurve(self.times, self.values * other.values, meta)

    def to_csv(self, path, metadata_path=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_us", "re_L", "im_L"])
            for t, v in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(v.real)), repr(float(v.imag))])
        meta_path = metadata_path or str(path).rsplit(".", 1)[0] + ".json"
        with open(meta_path, "w") as fh:
            json.dump(_jsonable(self.metadata), fh, indent=2, sort_keys=True)
        return meta_path

    @classmethod
    def from_csv(cls, path, metadata_path=None):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta = {}
        meta_path = metadata_path or str(path).rsplit(".", 1)[0] + ".json"
        try:
            with open(meta_path) as fh:
                meta = json.load(fh)
        except FileNotFoundError:
            pass
        return cls(data[:, 0], data[:, 1] + 1j * data[:, 2], meta)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def config_hash(obj) -> str:
    blob = json.dumps(_jsonable(obj), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def time_grid(t_min=0.1, t_max=1e4, per_decade=64, include_zero=False):
    """Logarithmic grid in µs, ``per_decade`` points per decade."""
    n = max(2, int(round(per_decade * np.log10(t_max / t_min))) + 1)
    t = np.logspace(np.log10(t_min), np.log10(t_max), n)
    return np.concatenate([[0.0], t]) if include_zero else t


# ---------------------------------------------------------------------------
# Cluster enumeration


def _edges(positions, r_connect, extra_edges=None):
    n = len(positions)
    adj = [set() for _ in range(n)]
    if n > 1 and r_connect > 0:
        if np.isinf(r_connect):
            pairs = combinations(range(n), 2)
        else:
            pairs = cKDTree(positions).query_pairs(r_connect)
        for i, j in pairs:
            adj[i].add(j)
            adj[j].add(i)
    for i, j in extra_edges or ():
        adj[i].add(j)
        adj[j].add(i)
    return adj


def enumerate_clusters(positions, max_order, r_connect, budget=DEFAULT_CLUSTER_BUDGET, extra_edges=None):
    """All connected subsets up to ``max_order`` as ``{order: (n, order) int array}``.

    ``positions`` is an (n, 3) array or anything with a ``positions``
    attribute. Two sites are connected when closer than ``r_connect``
    (``inf`` connects everything) or listed in ``extra_edges``. Rows are
    sorted and lexicographically ordered.
    """
    positions = np.asarray(getattr(positions, "positions", positions), dtype=float).reshape(-1, 3)
    if not 1 <= max_order <= 4:
        raise ValueError("cluster order must lie in [1, 4]")
    if not r_connect > 0:
        raise ValueError("r_connect must be positive")
    n = len(positions)
    adj = _edges(positions, r_connect, extra_edges)
    tiers = {1: [(i,) for i in range(n)]}
    total = n
    for order in range(2, max_order + 1):
        grown = set()
        for c in tiers[order - 1]:
            members = set(c)
            for i in c:
                for j in adj[i]:
                    if j not in members:
                        grown.add(tuple(sorted(c + (j,))))
            if len(grown) + total > budget:
                raise SizeError(f"cluster count exceeds the budget of {budget} at order {order}")
        tiers[order] = sorted(grown)
        total += len(grown)
    return {k: np.array(v, dtype=int).reshape(-1, k) for k, v in tiers.items()}


def count_clusters(clusters) -> int:
    return sum(len(v) for v in clusters.values())


# ---------------------------------------------------------------------------
# Options and bath states


@dataclass
class CCEOptions:
    order: int = 2
    r_connect: Optional[float] = None
    r_bath: Optional[float] = None
    temperature: Optional[float] = None  # K; None = infinite temperature
    levels: tuple = (0, -1)
    divisor_threshold: float = DIVISOR_THRESHOLD
    budget: int = DEFAULT_CLUSTER_BUDGET
    clip: bool = True
    secular: bool = False

    def resolve_r_connect(self, prep: PreparedBath) -> float:
        if self.r_connect is not None:
            return float(self.r_connect)
        return default_r_connect(prep)


def default_r_connect(prep: PreparedBath) -> float:
    """0.9 nm for nuclear baths.

    For electrons the largest of 8 nm, two mean spacings and 1.5 times the
    central-spin distance to the electron layer; pairs separated by about
    the layer distance flip-flop on the scale of their differential
    coupling to the central spin.
    """
    electrons = np.array([s == "e" for s in prep.species], dtype=bool)
    if not electrons.any():
        return R_CONNECT_NUCLEAR
    pos = prep.positions[electrons]
    return max(R_CONNECT_ELECTRON, 2.0 * mean_spacing(pos), 1.5 * layer_distance(pos))


def mean_spacing(positions) -> float:
    """1 / sqrt(areal density) over the bounding box of the layer projected on its own plane; 0 if undefined."""
    pos = np.asarray(positions, dtype=float)
    if len(pos) < 3:
        return 0.0
    centered = pos - pos.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    inplane = centered @ vt[:2].T
    area = float(np.prod(np.ptp(inplane, axis=0)))
    return 1.0 / np.sqrt(len(pos) / area) if area > 0 else 0.0


def layer_distance(positions) -> float:
    """Distance from the origin to the plane through ``positions``; the nearest point if they are not coplanar."""
    pos = np.asarray(positions, dtype=float)
    nearest = float(np.linalg.norm(pos, axis=1).min())
    if len(pos) < 3:
        return nearest
    centroid = pos.mean(axis=0)
    _, s, vt = np.linalg.svd(pos - centroid)
    if s[-1] > 1e-6 * max(s[0], 1e-12):
        return nearest
    return float(abs(vt[-1] @ centroid))


def gibbs_matrix(gamma, field_nv, temperature, dim):
    """Thermal state of one spin in its Zeeman Hamiltonian ``-gamma B . I``."""
    ops = local_spin_vector(dim)
    if temperature is None or np.isinf(temperature):
        return np.eye(dim, dtype=complex) / dim
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    h = -gamma * 1e-10 * np.asarray(field_nv, dtype=float)  # rad/µs
    Hz = np.einsum("a,aij->ij", h, ops)
    beta = CONSTANTS.hbar * 1e6 / (CONSTANTS.kb * temperature)  # per (rad/µs)
    e, v = np.linalg.eigh(Hz)
    w = np.exp(-beta * (e - e.min()))
    return (v * (w / w.sum())) @ v.conj().T


def site_states(prep: PreparedBath, temperature=None):
    """Initial single-site density matrices (list, one per site)."""
    out = []
    cache = {}
    for i in range(len(prep)):
        key = (prep.species[i], bool(prep.three_level[i]), bool(prep.occupied[i]))
        if key not in cache:
            if prep.three_level[i]:
                rho = np.zeros((3, 3), dtype=complex)
                if prep.occupied[i]:
                    rho[:2, :2] = gibbs_matrix(prep.gammas[i], prep.field_nv, temperature, 2)
                else:
                    rho[2, 2] = 1.0
            else:
                rho = gibbs_matrix(prep.gammas[i], prep.field_nv, temperature, int(prep.dims[i]))
            cache[key] = rho
        out.append(cache[key])
    return out


def batch_density(states, clusters):
    """Product states for a batch of clusters, (nc, D, D)."""
    clusters = np.asarray(clusters, dtype=int)
    rho = np.stack([states[i] for i in clusters[:, 0]])
    for k in range(1, clusters.shape[1]):
        nxt = np.stack([states[i] for i in clusters[:, k]])
        nc, a, _ = rho.shape
        b = nxt.shape[1]
        rho = np.einsum("cij,ckl->cikjl", rho, nxt).reshape(nc, a * b, a * b)
    return rho


def _is_maximally_mixed(states):
    return all(np.allclose(s, np.eye(len(s)) / len(s), atol=0, rtol=0) for s in states)


# ---------------------------------------------------------------------------
# Per-cluster coherences


def _group_by_signature(prep, clusters):
    groups = {}
    for row, c in enumerate(clusters):
        groups.setdefault(cluster_signature(prep, c), []).append(row)
    return groups


def _chunks(rows, D, nt):
    size = max(1, _CHUNK_ENTRIES // max(1, nt * D * D))
    for start in range(0, len(rows), size):
        yield rows[start : start + size]


def conventional_cluster_coherences(prep, clusters, seq, times, states, levels=(0, -1)):
    """Tr[U_a rho U_b^dagger] for every cluster, (nc, nt)."""
    from .hamiltonian import conditioned_propagators

    clusters = np.asarray(clusters, dtype=int)
    out = np.empty((len(clusters), len(times)), dtype=complex)
    mixed = states is None
    m = np.asarray(levels, dtype=float)
    for _, rows in _group_by_signature(prep, clusters).items():
        rows = np.asarray(rows)
        D = int(np.prod(prep.dims[clusters[rows[0]]]))
        for chunk in _chunks(rows, D, len(times)):
            cl = clusters[chunk]
            HB = batch_bath_hamiltonians(prep, cl)
            V = batch_conditioning_terms(prep, cl)
            H = HB[:, None] + m[None, :, None, None] * V[:, None]
            Ua, Ub = conditioned_propagators(H, seq, times)
            if mixed:
                out[chunk] = np.einsum("ctij,ctij->ct", Ua, Ub.conj()) / D
            else:
                rho = batch_density(states, cl)
                out[chunk] = np.einsum("ctij,cjk,ctik->ct", Ua, rho, Ub.conj())
    return out


def _nv_eigenframe(nv, field, levels):
    """Central eigenvectors ordered like |+1>, |0>, |-1> plus the coherence level indices."""
    Hc = build_central(nv, field)
    e, v = np.linalg.eigh(Hc)
    order = np.argmax(np.abs(v) ** 2, axis=1)  # eigenvector with the largest weight on each basis state
    if len(set(order)) != 3:
        order = np.argsort(-np.real(np.diag(Hc)))
    W = v[:, order]
    W = W * np.exp(-1j * np.angle(np.diag(W)))[None, :]
    index = {1: 0, 0: 1, -1: 2}
    return Hc, W, (index[levels[0]], index[levels[1]])


def full_space_coherence(H, seq, times, pair, sqrt_rho):
    """2 Tr[W_a W_b^dagger] with W = U (psi (x) sqrt(rho_B)) for Hamiltonians (nc, 3D, 3D) in the NV eigenframe."""
    nc, N, _ = H.shape
    D = N // 3
    a, b = pair
    evals, evecs = np.linalg.eigh(H)
    pulses = {ax: np.kron(pulse_operator(ax, pair), np.eye(D)) for ax in ("x", "y")}
    psi = np.zeros(3, dtype=complex)
    psi[[a, b]] = 1 / np.sqrt(2)
    X = np.einsum("i,cjk->cijk", psi, sqrt_rho).reshape(nc, N, D)
    X = np.broadcast_to(X[:, None], (nc, len(times), N, D))
    cache = {}
    for s, frac in enumerate(seq.segments):
        if frac not in cache:
            cache[frac] = segment_propagators(evals, evecs, frac * times)
        X = cache[frac] @ X
        if s < seq.n_pulses:
            X = pulses[seq.axes[s]] @ X
    X = X.reshape(nc, len(times), 3, D, D)
    return 2 * np.einsum("ctij,ctij->ct", X[:, :, a], X[:, :, b].conj())


def _sqrt_psd(rho):
    e, v = np.linalg.eigh(rho)
    return (v * np.sqrt(np.clip(e, 0, None))[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def generalized_cluster_coherences(prep, clusters, seq, times, states, nv, field, levels=(0, -1)):
    """Full central-spin-space cluster coherences normalized by the empty cluster, (nc, nt)."""
    clusters = np.asarray(clusters, dtype=int)
    Hc, W, pair = _nv_eigenframe(nv, field, levels)
    Hc_eig = W.conj().T @ Hc @ W
    L0 = full_space_coherence(Hc_eig[None], seq, times, pair, np.ones((1, 1, 1)))[0]
    out = np.empty((len(clusters), len(times)), dtype=complex)
    for _, rows in _group_by_signature(prep, clusters).items():
        rows = np.asarray(rows)
        D = int(np.prod(prep.dims[clusters[rows[0]]]))
        T = np.kron(W, np.eye(D))
        for chunk in _chunks(rows, 3 * D, len(times)):
            cl = clusters[chunk]
            H = batch_full_hamiltonians(prep, cl, Hc)
            H = T.conj().T @ H @ T
            rho = np.broadcast_to(np.eye(D) / D, (len(cl), D, D)) if states is None else batch_density(states, cl)
            out[chunk] = full_space_coherence(H, seq, times, pair, _sqrt_psd(rho)) / L0
    return out


# ---------------------------------------------------------------------------
# Irreducible assembly


@dataclass
class AssemblyDiagnostics:
    guarded: int = 0
    clipped: int = 0
    n_clusters: dict = field(default_factory=dict)


def assemble(clusters, coherences, threshold=DIVISOR_THRESHOLD, diagnostics=None):
    """Product of irreducible contributions.

    ``clusters`` and ``coherences`` map order to (n, order) members and
    (n, nt) normalized cluster coherences. Subclusters absent from the set
    count as one. Where a divisor falls below ``threshold`` the cluster's
    contribution is set to one and counted in ``diagnostics.guarded``.
    """
    diag = diagnostics if diagnostics is not None else AssemblyDiagnostics()
    irreducible = {}
    total = None
    for order in sorted(clusters):
        members, values = clusters[order], coherences[order]
        diag.n_clusters[order] = len(members)
        for row, c in enumerate(members):
            key = tuple(int(i) for i in c)
            L = values[row]
            divisor = np.ones_like(L)
            for sub in range(1, order):
                for s in combinations(key, sub):
                    contrib = irreducible.get(s)
                    if contrib is not None:
                        divisor = divisor * contrib
            bad = np.abs(divisor) < threshold
            safe = np.where(bad, 1.0, divisor)
            tilde = np.where(bad, 1.0, L / safe)
            diag.guarded += int(bad.sum())
            irreducible[key] = tilde
            total = tilde.copy() if total is None else total * tilde
    return total, irreducible


def _clip(values, diag):
    mag = np.abs(values)
    over = mag > 1.0
    diag.clipped += int(over.sum())
    return np.where(over, values / np.where(over, mag, 1.0), values)


# ---------------------------------------------------------------------------
# Public engines


def _prepare(bath, nv, field, options, hopping=False):
    if isinstance(bath, PreparedBath):
        prep = bath
    else:
        prep = prepare_bath(bath, nv, field, hopping=hopping, secular=options.secular)
    if options.r_bath is not None and len(prep):
        keep = np.linalg.norm(prep.positions, axis=1) <= options.r_bath
        prep = _subset_prepared(prep, keep)
    return prep


def _subset_prepared(prep, mask):
    from dataclasses import replace

    return replace(
        prep,
        species=prep.species[mask],
        positions=prep.positions[mask],
        gammas=prep.gammas[mask],
        dims=prep.dims[mask],
        hyperfine=prep.hyperfine[mask],
        quadrupole=prep.quadrupole[mask],
        three_level=prep.three_level[mask],
        occupied=prep.occupied[mask],
        ids=prep.ids[mask],
    )


def _run(method, bath, nv, field, seq, times, options, **meta):
    options = options or CCEOptions()
    times = np.asarray(times, dtype=float)
    prep = _prepare(bath, nv, field, options)
    diag = AssemblyDiagnostics()
    values = np.ones(len(times), dtype=complex)
    r_connect = None
    if len(prep):
        r_connect = options.resolve_r_connect(prep)
        clusters = enumerate_clusters(prep.positions, options.order, r_connect, options.budget)
        states = site_states(prep, options.temperature)
        if _is_maximally_mixed(states):
            states = None
        coh = {}
        for k, members in clusters.items():
            if not len(members):
                continue
            if method == "cce":
                coh[k] = conventional_cluster_coherences(prep, members, seq, times, states, options.levels)
            else:
                coh[k] = generalized_cluster_coherences(prep, members, seq, times, states, nv, field, options.levels)
        clusters = {k: v for k, v in clusters.items() if len(v)}
        total, _ = assemble(clusters, coh, options.divisor_threshold, diag)
        if total is not None:
            values = total
    if options.clip:
        values = _clip(values, diag)
    meta = {
        "method": method,
        "order": options.order,
        "sequence": seq.kind,
        "n_spins": len(prep),
        "r_connect": r_connect,
        "guarded": diag.guarded,
        "clipped": diag.clipped,
        "n_clusters": diag.n_clusters,
        **meta,
    }
    return CoherenceCurve(times, values, meta)


def cce_coherence(bath, nv, field, seq: PulseSequence, times, options: CCEOptions = None, **meta) -> CoherenceCurve:
    """Conventional CCE: bath propagated conditioned on the two central levels."""
    return _run("cce", bath, nv, field, seq, times, options, **meta)


def gcce_coherence(bath, nv, field, seq: PulseSequence, times, options: CCEOptions = None, **meta) -> CoherenceCurve:
    """Generalized CCE: the full three-level central spin is kept in every cluster."""
    return _run("gcce", bath, nv, field, seq, times, options, **meta)


# ---------------------------------------------------------------------------
# Ensembles


def task_rng(root_seed: int, task_id: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one task, derived from the root seed, the task id and a stream number.

    Stream 0 keeps the plain ``(task_id,)`` spawn key.
    """
    key = (int(task_id),) if stream == 0 else (int(task_id), int(stream))
    ss = np.random.SeedSequence(entropy=int(root_seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class EnsembleResult:
    times: np.ndarray
    mean: np.ndarray
    curves: list
    fits: list

    @property
    def curve(self) -> CoherenceCurve:
        return CoherenceCurve(self.times, self.mean, {"n_configs": len(self.curves)})


def map_tasks(fn: Callable, items, workers=1):
    """``[fn(x) for x in items]``, in order, optionally across processes."""
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def ensemble_coherence(task: Callable, n_configs: int, workers=1, fit=True) -> EnsembleResult:
    """Run ``task(i)`` for ``i < n_configs`` and average the curves pointwise.

    ``task`` must be picklable when ``workers > 1``. Per-configuration fits
    use :func:`spinbath.analysis.fit_stretched`; curves that never decay get
    ``None``.
    """
    from .analysis import InsufficientDecayError, fit_stretched

    if n_configs < 1:
        raise ValueError("need at least one configuration")
    curves = map_tasks(task, range(n_configs), workers)
    times = curves[0].times
    mean = np.zeros(len(times), dtype=complex)
    for c in curves:
        mean += c.values
    mean /= len(curves)
    fits = []
    if fit:
        for c in curves:
            try:
                fits.append(fit_stretched(c))
            except (InsufficientDecayError, ValueError):
                fits.append(None)
    return EnsembleResult(times, mean, curves, fits)


def options_dict(options: CCEOptions) -> dict:
    return asdict(options)
