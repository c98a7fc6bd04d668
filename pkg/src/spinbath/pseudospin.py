"""
Analytic flip-flop pair model.

A bath pair {|ud>, |du>} behaves as a two-level system with pseudo-field
``omega`` (difference of axial couplings) and transverse coupling ``delta``.
Three closed forms for the Hahn-echo pair coherence are available:

``"exact"``
    The echo of the four-state pair with the conditioned pseudo-field
    ``2 * omega`` seen between central levels 0 and -1; agrees with exact
    pair propagation.
``"standard"``
    ``1 - kappa sin^2(sqrt(omega^2 + delta^2) t / 2) sin^2(delta t / 2)``.
``"printed"``
    as ``"standard"`` with ``delta**2`` in the second argument.
"""

import csv
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.optimize import brentq

from .cce import CoherenceCurve
from .couplings import _scalar_coupling
from .spins import BathSpin, CentralSpin

READINGS = ("exact", "standard", "printed")
DEFAULT_PAIRS = 200


@dataclass(frozen=True)
class PseudoSpinPair:
    i: int
    j: int
    omega: float  # signed, rad/µs
    delta: float  # rad/µs

    @property
    def kappa(self) -> float:
        w2 = self.omega**2
        total = w2 + self.delta**2
        return 0.0 if total == 0 else w2 / total

    def swapped(self) -> "PseudoSpinPair":
        return PseudoSpinPair(self.j, self.i, -self.omega, self.delta)


def pair_params(nv: CentralSpin, i: BathSpin, j: BathSpin, field_dir=None) -> PseudoSpinPair:
    n = nv.axis if field_dir is None else field_dir
    a_i = _scalar_coupling(i.species.gamma, nv.gamma, nv.position, i.position, n)
    a_j = _scalar_coupling(j.species.gamma, nv.gamma, nv.position, j.position, n)
    delta = _scalar_coupling(i.species.gamma, j.species.gamma, i.position, j.position, n)
    return PseudoSpinPair(i.id, j.id, float(a_i - a_j), float(delta))


def pair_values(omega, delta, times, reading="exact", level_gap=1):
    """Hahn-echo pair coherence on total times ``t``; broadcasts over pairs.

    ``level_gap`` is |m_a - m_b| of the two central levels.
    """
    if reading not in READINGS:
        raise ValueError(f"unknown reading {reading!r}; choose from {READINGS}")
    omega = np.asarray(omega, dtype=float)[..., None]
    delta = np.asarray(delta, dtype=float)[..., None]
    t = np.asarray(times, dtype=float)
    if reading == "exact":
        field = 2.0 * level_gap * omega
        rabi2 = field**2 + delta**2
        kappa = np.divide(field**2, rabi2, out=np.zeros_like(rabi2), where=rabi2 > 0)
        return 1 - kappa * np.sin(np.sqrt(rabi2) * t / 4) ** 2 * np.sin(delta * t / 4) ** 2
    rabi2 = omega**2 + delta**2
    kappa = np.divide(omega**2, rabi2, out=np.zeros_like(rabi2), where=rabi2 > 0)
    second = delta if reading == "standard" else delta**2
    return 1 - kappa * np.sin(np.sqrt(rabi2) * t / 2) ** 2 * np.sin(second * t / 2) ** 2


def pair_coherence(pair: PseudoSpinPair, times, reading="exact") -> CoherenceCurve:
    vals = pair_values(pair.omega, pair.delta, times, reading)
    return CoherenceCurve(times, vals.astype(complex), {"method": "pseudospin", "reading": reading})


def product_coherence(pairs, times, reading="exact") -> CoherenceCurve:
    times = np.asarray(times, dtype=float)
    if not len(pairs):
        return CoherenceCurve(times, np.ones(len(times), dtype=complex), {"method": "pseudospin", "pairs": 0})
    omega = np.array([p.omega for p in pairs])
    delta = np.array([p.delta for p in pairs])
    vals = np.prod(pair_values(omega, delta, times, reading), axis=0)
    return CoherenceCurve(times, vals.astype(complex), {"method": "pseudospin", "reading": reading, "pairs": len(pairs)})


# ---------------------------------------------------------------------------
# Pair selection and depth scans


def nearest_pairs(nv: CentralSpin, spins, n_pairs=DEFAULT_PAIRS, field_dir=None):
    """The ``n_pairs`` pairs with the largest flip-flop coupling among the spins nearest the NV.

    Candidates are all pairs among the ``m`` nearest spins, with ``m`` the
    smallest number giving at least ``2 * n_pairs`` pairs.
    """
    spins = list(spins)
    if len(spins) < 2:
        return []
    dist = np.array([np.linalg.norm(b.position - nv.position) for b in spins])
    m = 2
    while m < len(spins) and m * (m - 1) // 2 < 2 * n_pairs:
        m += 1
    near = [spins[k] for k in np.argsort(dist, kind="stable")[:m]]
    pairs = [pair_params(nv, a, b, field_dir) for a, b in combinations(near, 2)]
    pairs.sort(key=lambda p: (-abs(p.delta), p.i, p.j))
    return pairs[:n_pairs]


def _axial_profile(depth, lateral, axis):
    """Axial coupling shape (3cos^2 - 1) / (2 r^3) for a surface spin at lateral offset, NV at ``depth``."""
    d = np.array([lateral[0], lateral[1], depth])
    r = np.linalg.norm(d)
    c = d @ axis / r
    return (3 * c * c - 1) / (2 * r**3)


def omega_crossings(p_i, p_j, axis, d_max, n_grid=2000):
    """Depths in (0, d_max) where the signed pseudo-field of a surface pair changes sign.

    ``p_i``, ``p_j`` are lateral positions relative to the point above the NV.
    """
    axis = np.asarray(axis, dtype=float) / np.linalg.norm(axis)

    def f(d):
        return _axial_profile(d, p_i, axis) - _axial_profile(d, p_j, axis)

    grid = np.geomspace(d_max * 1e-4, d_max, n_grid)
    vals = np.array([f(d) for d in grid])
    idx = np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)
    return [brentq(f, grid[k], grid[k + 1], xtol=1e-12) for k in idx]


def crossing_ratios(spins_xy, axis, n_pairs=DEFAULT_PAIRS):
    """First-crossing depth over pair separation for the pairs nearest the origin."""
    xy = np.asarray(spins_xy, dtype=float)[:, :2]
    order = np.argsort(np.hypot(xy[:, 0], xy[:, 1]), kind="stable")
    m = 2
    while m < len(xy) and m * (m - 1) // 2 < n_pairs:
        m += 1
    near = xy[order[:m]]
    ratios = []
    for a, b in list(combinations(range(len(near)), 2))[:n_pairs]:
        d_ij = np.linalg.norm(near[a] - near[b])
        cross = omega_crossings(near[a], near[b], axis, 4 * d_ij)
        if cross:
            ratios.append(cross[0] / d_ij)
    return np.array(ratios)


@dataclass
class ScanRow:
    d_nv: float
    omega_signed: float
    t2: float


def depth_scan(spins_xy, axis, depths, times, pair=(0, 1), n_pairs=DEFAULT_PAIRS, reading="exact"):
    """Signed pseudo-field of one reference pair and the pair-product T2 versus NV depth.

    ``spins_xy`` are surface electron positions (z = 0); the NV sits below
    the origin with quantization ``axis``.
    """
    from .analysis import InsufficientDecayError, fit_stretched

    xy = np.asarray(spins_xy, dtype=float)
    pos = np.column_stack([xy[:, 0], xy[:, 1], np.zeros(len(xy))])
    rows = []
    for d in depths:
        nv = CentralSpin(position=[0.0, 0.0, -float(d)], axis=axis)
        spins = [BathSpin(k, "e", p) for k, p in enumerate(pos)]
        ref = pair_params(nv, spins[pair[0]], spins[pair[1]])
        pairs = nearest_pairs(nv, spins, n_pairs)
        curve = product_coherence(pairs, times, reading)
        try:
            t2 = fit_stretched(curve).T2
        except (InsufficientDecayError, ValueError):
            t2 = float("nan")
        rows.append(ScanRow(float(d), ref.omega, t2))
    return rows


def write_scan(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["d_nv_nm", "omega_signed", "t2_us"])
        for r in rows:
            w.writerow([repr(r.d_nv), repr(r.omega_signed), repr(r.t2)])
