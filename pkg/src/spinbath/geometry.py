"""
Spin-bath geometry generators.

Random bulk 13C baths on the diamond lattice, facet-specific surface nuclear
lattices, random 2-D surface electron ensembles, NV placement and the plain
text bath file format.

The surface plane is z = 0 and the bulk occupies z < 0.
"""

from dataclasses import dataclass, field
from itertools import product
from typing import Optional

import numpy as np

from .constants import DIAMOND_LATTICE_CONSTANT, SPECIES, get_species
from .spins import BathSpin, CentralSpin, CouplingTensor, ExternalField

ORIENTATIONS = ("100", "110", "111", "113")
TERMINATIONS = {"bare": None, "H": "1H", "F": "19F", "O": "17O", "N": "14N"}

MIN_ELECTRON_SEPARATION = 0.25  # nm
NV_EXCLUSION_RADIUS = 0.2  # nm, drops the vacancy-adjacent carbon shell
DEFAULT_SITE_BUDGET = 500_000


class GeometryError(ValueError):
    pass


class SizeError(GeometryError):
    pass


def _orientation_key(orientation) -> str:
    key = str(orientation).strip("()[] ").replace(",", "").replace(" ", "")
    if key not in ORIENTATIONS:
        raise GeometryError(f"unknown surface orientation {orientation!r}; expected one of {ORIENTATIONS}")
    return key


@dataclass
class SurfaceConfig:
    orientation: str = "100"
    termination: str = "bare"
    electron_density: float = 0.0
    hole_fraction: float = 0.0
    lateral_extent: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        self.orientation = _orientation_key(self.orientation)
        if self.termination not in TERMINATIONS:
            raise GeometryError(f"unknown termination {self.termination!r}")
        if not 0.0 <= self.electron_density <= 1.0:
            raise GeometryError("electron density must lie in [0, 1] nm^-2")
        if not 0.0 <= self.hole_fraction <= 1.0:
            raise GeometryError("hole fraction must lie in [0, 1]")

    @property
    def extent(self) -> float:
        """Side of the square patch; defaults to 40 mean inter-spin distances."""
        if self.lateral_extent is not None:
            return float(self.lateral_extent)
        if self.electron_density <= 0:
            return 0.0
        return 40.0 / np.sqrt(self.electron_density)


@dataclass
class BathRealization:
    """A set of bath sites. Holes are vacant sites that carry no spin."""

    species: np.ndarray
    positions: np.ndarray
    is_hole: np.ndarray = None
    hyperfine: Optional[np.ndarray] = None
    quadrupole: Optional[np.ndarray] = None
    seed: Optional[int] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        n = len(self.positions)
        self.species = np.asarray(self.species, dtype=object).reshape(n)
        if self.is_hole is None:
            self.is_hole = np.zeros(n, dtype=bool)
        self.is_hole = np.asarray(self.is_hole, dtype=bool).reshape(n)
        for name in ("hyperfine", "quadrupole"):
            arr = getattr(self, name)
            if arr is not None:
                setattr(self, name, np.asarray(arr, dtype=float).reshape(n, 3, 3))

    @classmethod
    def empty(cls, **kwargs):
        return cls(np.array([], dtype=object), np.zeros((0, 3)), **kwargs)

    def __len__(self):
        return int(np.count_nonzero(~self.is_hole))

    @property
    def n_sites(self) -> int:
        return len(self.positions)

    @property
    def spins(self) -> list:
        out = []
        for i in np.flatnonzero(~self.is_hole):
            hf = q = None
            if self.hyperfine is not None and np.all(np.isfinite(self.hyperfine[i])):
                hf = CouplingTensor(self.hyperfine[i])
            if self.quadrupole is not None and np.all(np.isfinite(self.quadrupole[i])):
                q = CouplingTensor(self.quadrupole[i])
            out.append(BathSpin(int(i), self.species[i], self.positions[i], hf, q))
        return out

    @property
    def holes(self) -> np.ndarray:
        return self.positions[self.is_hole]

    def subset(self, mask) -> "BathRealization":
        mask = np.asarray(mask)
        return BathRealization(
            self.species[mask],
            self.positions[mask],
            self.is_hole[mask],
            None if self.hyperfine is None else self.hyperfine[mask],
            None if self.quadrupole is None else self.quadrupole[mask],
            self.seed,
            dict(self.provenance),
        )

    def spins_only(self) -> "BathRealization":
        return self.subset(~self.is_hole)

    def within(self, center, radius) -> "BathRealization":
        d = np.linalg.norm(self.positions - np.asarray(center, dtype=float), axis=1)
        return self.subset(d <= radius)

    def translated(self, shift) -> "BathRealization":
        out = self.subset(np.ones(self.n_sites, dtype=bool))
        out.positions = self.positions + np.asarray(shift, dtype=float)
        return out

    @staticmethod
    def concat(*baths) -> "BathRealization":
        baths = [b for b in baths if b is not None and b.n_sites]
        if not baths:
            return BathRealization.empty()

        def stack_tensors(name):
            if all(getattr(b, name) is None for b in baths):
                return None
            return np.concatenate(
                [getattr(b, name) if getattr(b, name) is not None else np.full((b.n_sites, 3, 3), np.nan) for b in baths]
            )

        return BathRealization(
            np.concatenate([b.species for b in baths]),
            np.concatenate([b.positions for b in baths]),
            np.concatenate([b.is_hole for b in baths]),
            stack_tensors("hyperfine"),
            stack_tensors("quadrupole"),
            baths[0].seed,
            {"concat": [b.provenance for b in baths]},
        )


# ---------------------------------------------------------------------------
# Diamond lattice

_FCC = np.array([[0, 0, 0], [0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]])
_BASIS = np.concatenate([_FCC, _FCC + 0.25])
# Bond vectors from an A-sublattice atom, in units of a.
_BONDS_A = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]]) / 4.0


def _rotation_to_z(normal, in_plane_hint=None):
    """Rows of the returned matrix are the lab axes expressed in crystal coordinates."""
    ez = np.asarray(normal, dtype=float)
    ez = ez / np.linalg.norm(ez)
    hints = [in_plane_hint] if in_plane_hint is not None else []
    hints += [np.array([1.0, -1.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0])]
    for h in hints:
        h = np.asarray(h, dtype=float)
        ex = h - ez * (h @ ez)
        if np.linalg.norm(ex) > 1e-8:
            ex /= np.linalg.norm(ex)
            break
    ey = np.cross(ez, ex)
    return np.stack([ex, ey, ez])


def facet_rotation(orientation) -> np.ndarray:
    """Rotation (crystal -> lab) that puts the facet normal along lab +z."""
    key = _orientation_key(orientation)
    return _rotation_to_z([int(c) for c in key])


def nv_axis_for_facet(orientation) -> np.ndarray:
    """Lab-frame <111> NV axis with the smallest angle to the surface normal."""
    rot = facet_rotation(orientation)
    best = None
    for signs in product((1, -1), repeat=2):
        v = rot @ np.array([1.0, signs[0], signs[1]]) / np.sqrt(3)
        v = v if v[2] >= 0 else -v
        if best is None or v[2] > best[2] + 1e-12:
            best = v
    return best


def axis_tilt(orientation) -> float:
    """Angle in degrees between the facet normal and its NV axis."""
    return float(np.degrees(np.arccos(np.clip(nv_axis_for_facet(orientation)[2], -1, 1))))


def tilted_axis(orientation, tilt_deg) -> np.ndarray:
    """NV axis with an explicit tilt from the normal, in the same azimuth as the facet's default axis."""
    default = nv_axis_for_facet(orientation)
    lateral = default[:2]
    phi = np.arctan2(lateral[1], lateral[0]) if np.linalg.norm(lateral) > 1e-12 else 0.0
    t = np.radians(tilt_deg)
    return np.array([np.sin(t) * np.cos(phi), np.sin(t) * np.sin(phi), np.cos(t)])


def diamond_sites(rotation, center, radius, lattice_constant=DIAMOND_LATTICE_CONSTANT):
    """All diamond lattice sites within ``radius`` of ``center`` (lab frame, nm).

    The lattice is anchored so that an A-sublattice site sits exactly at ``center``.
    """
    a = lattice_constant
    n = int(np.ceil(radius / a)) + 1
    rng = np.arange(-n, n + 1)
    cells = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    out = []
    # chunk over basis atoms to bound memory
    for b in _BASIS:
        crystal = (cells + b) * a
        lab = crystal @ rotation.T
        keep = np.einsum("ij,ij->i", lab, lab) <= radius * radius
        out.append(lab[keep])
    return np.concatenate(out) + np.asarray(center, dtype=float)


def sample_bulk_c13(
    radius,
    abundance=0.011,
    seed=0,
    nv_position=(0.0, 0.0, 0.0),
    surface=False,
    orientation="100",
    rng=None,
    region="sphere",
):
    """Random 13C bath on the diamond lattice around an NV center.

    Every lattice site inside the region is occupied independently with
    probability ``abundance``. ``region`` is ``"sphere"`` (radius) or
    ``"slab"`` (|dz| <= radius, lateral radius ``radius``). With
    ``surface=True`` only sites below the surface plane z = 0 are eligible.
    """
    if not 0.0 <= abundance <= 1.0:
        raise GeometryError("abundance must lie in [0, 1]")
    if rng is None:
        rng = np.random.default_rng(seed)
    nv_position = np.asarray(nv_position, dtype=float)
    if radius <= 0 or abundance == 0:
        return BathRealization.empty(seed=seed, provenance={"generator": "bulk_c13"})
    rot = facet_rotation(orientation)
    if region == "sphere":
        sites = diamond_sites(rot, nv_position, radius)
    elif region == "slab":
        sites = diamond_sites(rot, nv_position, radius * np.sqrt(2))
        rel = sites - nv_position
        sites = sites[(np.abs(rel[:, 2]) <= radius) & (np.hypot(rel[:, 0], rel[:, 1]) <= radius)]
    else:
        raise GeometryError(f"unknown region {region!r}")
    rel = np.linalg.norm(sites - nv_position, axis=1)
    mask = rel > NV_EXCLUSION_RADIUS
    if surface:
        mask &= sites[:, 2] < 0
    sites = sites[mask]
    occupied = rng.random(len(sites)) < abundance
    pos = sites[occupied]
    return BathRealization(
        np.full(len(pos), "13C", dtype=object),
        pos,
        seed=seed,
        provenance={"generator": "bulk_c13", "radius": radius, "abundance": abundance, "surface": surface},
    )


def expected_c13_count(radius, abundance=0.011):
    """Analytic Poisson mean of the 13C count in a full sphere."""
    from .constants import C13_SITE_DENSITY

    return abundance * C13_SITE_DENSITY * 4.0 / 3.0 * np.pi * radius**3


# ---------------------------------------------------------------------------
# Surface nuclear lattices


@dataclass(frozen=True)
class SurfaceLattice:
    """2-D Bravais lattice (rows of ``vectors``) with a basis, all in nm, lab frame."""

    orientation: str
    vectors: np.ndarray
    basis: np.ndarray

    @property
    def density(self) -> float:
        return len(self.basis) / _cell_area(self.vectors)

    def tile(self, half_extent, center=(0.0, 0.0)):
        """Sites of the lattice within the square |x|, |y| <= half_extent around ``center``."""
        v = self.vectors
        # bound on index range from the smallest height of the primitive cell
        area = _cell_area(v)
        hmin = area / max(np.linalg.norm(v[0]), np.linalg.norm(v[1]))
        n = int(np.ceil(np.sqrt(2) * half_extent / hmin)) + 2
        i = np.arange(-n, n + 1)
        ij = np.stack(np.meshgrid(i, i, indexing="ij"), axis=-1).reshape(-1, 2)
        pts = (ij @ v)[:, None, :] + self.basis[None, :, :]
        pts = pts.reshape(-1, 2) + np.asarray(center, dtype=float)
        keep = np.all(np.abs(pts - np.asarray(center, dtype=float)) <= half_extent + 1e-12, axis=1)
        return pts[keep]


def _cell_area(vectors):
    return abs(float(np.linalg.det(np.asarray(vectors, dtype=float)[:2, :2])))


def _in_plane_translations(normal_int):
    """Shortest reduced pair of fcc translations lying in the plane (units of a)."""
    h = np.asarray(normal_int, dtype=float)
    cands = []
    r = range(-6, 7)
    for i, j, k in product(r, r, r):
        if (i + j + k) % 2 or (i, j, k) == (0, 0, 0):
            continue
        t = np.array([i, j, k]) / 2.0
        if abs(t @ h) < 1e-12:
            cands.append(t)
    cands.sort(key=lambda t: (t @ t, tuple(-t)))
    t1 = cands[0]
    best = None
    for t in cands[1:]:
        area = np.linalg.norm(np.cross(t1, t))
        if area < 1e-9:
            continue
        if best is None or area < best[0] - 1e-9 or (abs(area - best[0]) < 1e-9 and t @ t < best[1] @ best[1] - 1e-12):
            best = (area, t)
    return t1, best[1]


def surface_lattice(orientation, lattice_constant=DIAMOND_LATTICE_CONSTANT) -> SurfaceLattice:
    """Ideal (1x1) lattice of surface carbons carrying dangling bonds.

    The crystal is cut at the plane that leaves the fewest dangling bonds per
    area; each surface carbon holds one ligand. Positions are projected onto
    the surface plane.
    """
    key = _orientation_key(orientation)
    h_int = np.array([int(c) for c in key], dtype=float)
    normal = h_int / np.linalg.norm(h_int)
    rot = _rotation_to_z(h_int)
    t1, t2 = _in_plane_translations(h_int)

    # One period along the normal: heights of every basis atom, modulo the plane spacing.
    n = 4
    rng = np.arange(-n, n + 1)
    cells = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    atoms, subl = [], []
    for s, b in enumerate(_BASIS):
        atoms.append(cells + b)
        subl.append(np.full(len(cells), s >= 4))
    atoms = np.concatenate(atoms)
    subl = np.concatenate(subl)
    heights = atoms @ normal
    bond_dirs = np.where(subl[:, None, None], -_BONDS_A[None], _BONDS_A[None])  # (N,4,3)
    bond_dh = bond_dirs @ normal  # (N,4)

    levels = np.unique(np.round(heights, 9))
    center_idx = len(levels) // 2
    best = None
    for c_lo, c_hi in zip(levels[center_idx - 12 : center_idx + 12], levels[center_idx - 11 : center_idx + 13]):
        cut = 0.5 * (c_lo + c_hi)
        below = heights < cut
        crossing = below[:, None] & (heights[:, None] + bond_dh > cut)
        surf = np.any(crossing, axis=1)
        # dangling bonds per in-plane cell area (periodic, so count within one normal period window)
        n_db = crossing.sum()
        n_surf = surf.sum()
        score = n_db / max(n_surf, 1)
        if best is None or score < best[0] - 1e-9:
            best = (score, cut, surf)
    _, cut, surf = best
    surf_atoms = atoms[surf]
    # reduce into the primitive in-plane cell
    basis_mat = np.stack([t1, t2, normal])  # rows
    frac = np.linalg.solve(basis_mat.T, surf_atoms.T).T
    frac[:, :2] = np.mod(np.round(frac[:, :2], 9), 1.0)
    frac[:, :2] = np.where(frac[:, :2] > 1 - 1e-9, 0.0, frac[:, :2])
    uniq = np.unique(np.round(frac[:, :2], 7), axis=0)
    basis_cryst = uniq @ np.stack([t1, t2])
    vec_lab = (np.stack([t1, t2]) @ rot.T)[:, :2] * lattice_constant
    basis_lab = (basis_cryst @ rot.T)[:, :2] * lattice_constant
    basis_lab -= basis_lab[0]
    return SurfaceLattice(key, vec_lab, basis_lab)


def generate_surface_lattice(orientation, termination, half_extent=10.0, seed=0, rng=None) -> BathRealization:
    """Monolayer of ligand nuclear spins at z = 0 for a given facet and termination.

    Sites of species with natural abundance below one (17O, 14N) are occupied
    independently with that abundance.
    """
    key = _orientation_key(orientation)
    if termination not in TERMINATIONS:
        raise GeometryError(f"unknown termination {termination!r}")
    name = TERMINATIONS[termination]
    prov = {"generator": "surface_lattice", "orientation": key, "termination": termination}
    if name is None:
        return BathRealization.empty(seed=seed, provenance=prov)
    lat = surface_lattice(key)
    xy = lat.tile(half_extent)
    species = SPECIES[name]
    if species.natural_abundance < 1.0:
        if rng is None:
            rng = np.random.default_rng(seed)
        xy = xy[rng.random(len(xy)) < species.natural_abundance]
    pos = np.column_stack([xy, np.zeros(len(xy))])
    return BathRealization(np.full(len(pos), name, dtype=object), pos, seed=seed, provenance=prov)


# ---------------------------------------------------------------------------
# Surface electrons


def sample_surface_electrons(config: SurfaceConfig, rng=None, site_budget=DEFAULT_SITE_BUDGET) -> BathRealization:
    """Random 2-D ensemble of surface electron sites on z = 0.

    The site count is Poisson with mean density x area on a square patch
    centered above the origin; each site is a hole with probability
    ``hole_fraction``. Sites closer than 0.25 nm to an earlier site are
    redrawn.
    """
    rho = config.electron_density
    L = config.extent
    prov = {"generator": "surface_electrons", "density": rho, "extent": L, "hole_fraction": config.hole_fraction}
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if rho <= 0 or L <= 0:
        return BathRealization.empty(seed=config.seed, provenance=prov)
    mean = rho * L * L
    if mean > site_budget:
        raise SizeError(f"surface patch needs ~{mean:.0f} sites, above the budget of {site_budget}")
    n = rng.poisson(mean)
    pts = rng.uniform(-L / 2, L / 2, size=(n, 2))
    pts = _enforce_min_separation(pts, L, rng)
    holes = rng.random(n) < config.hole_fraction
    pos = np.column_stack([pts, np.zeros(n)])
    return BathRealization(np.full(n, "e", dtype=object), pos, holes, seed=config.seed, provenance=prov)


def _enforce_min_separation(pts, L, rng, dmin=MIN_ELECTRON_SEPARATION, max_tries=1000):
    from scipy.spatial import cKDTree

    for _ in range(max_tries):
        if len(pts) < 2:
            return pts
        pairs = cKDTree(pts).query_pairs(dmin, output_type="ndarray")
        if len(pairs) == 0:
            return pts
        bad = np.unique(pairs[:, 1])
        pts[bad] = rng.uniform(-L / 2, L / 2, size=(len(bad), 2))
    raise GeometryError("could not satisfy the minimum electron separation")


# ---------------------------------------------------------------------------
# NV placement


def place_nv(surface: SurfaceConfig, depth, field_gauss=400.0, tilt_deg=None, **central_kwargs):
    """Central spin at (0, 0, -depth) with the facet NV axis and B along it."""
    if depth <= 0:
        raise GeometryError("NV depth must be positive")
    key = surface.orientation if isinstance(surface, SurfaceConfig) else _orientation_key(surface)
    axis = nv_axis_for_facet(key) if tilt_deg is None else tilted_axis(key, tilt_deg)
    nv = CentralSpin(position=np.array([0.0, 0.0, -float(depth)]), axis=axis, **central_kwargs)
    return nv, ExternalField.along(axis, field_gauss)


# ---------------------------------------------------------------------------
# Bath file IO


def write_bath(path, bath: BathRealization, header: Optional[str] = None):
    """Write a bath file: ``id species x_nm y_nm z_nm kind [9 hyperfine] [9 quadrupole]``."""
    extra = bath.hyperfine is not None or bath.quadrupole is not None
    with open(path, "w") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        cols = "id species x_nm y_nm z_nm kind"
        if extra:
            cols += " " + " ".join(f"A{i}{j}" for i in "xyz" for j in "xyz")
            cols += " " + " ".join(f"Q{i}{j}" for i in "xyz" for j in "xyz")
        fh.write(f"# {cols}\n")
        for i in range(bath.n_sites):
            x, y, z = bath.positions[i]
            row = f"{i} {bath.species[i]} {x:.10g} {y:.10g} {z:.10g} {'hole' if bath.is_hole[i] else 'spin'}"
            if extra:
                for arr in (bath.hyperfine, bath.quadrupole):
                    vals = np.full(9, np.nan) if arr is None else arr[i].ravel()
                    row += " " + " ".join(f"{v:.12g}" for v in vals)
            fh.write(row + "\n")


def read_bath(path) -> BathRealization:
    species, pos, holes, hf, qd = [], [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (6, 15, 24):
                raise GeometryError(f"{path}:{lineno}: expected 6, 15 or 24 columns, got {len(parts)}")
            name = parts[1]
            get_species(name)
            if parts[5] not in ("spin", "hole"):
                raise GeometryError(f"{path}:{lineno}: kind must be 'spin' or 'hole'")
            species.append(name)
            pos.append([float(v) for v in parts[2:5]])
            holes.append(parts[5] == "hole")
            vals = [float(v) for v in parts[6:]] + [np.nan] * (24 - len(parts))
            hf.append(np.reshape(vals[:9], (3, 3)))
            qd.append(np.reshape(vals[9:18], (3, 3)))
    hf = np.array(hf).reshape(-1, 3, 3)
    qd = np.array(qd).reshape(-1, 3, 3)
    return BathRealization(
        np.array(species, dtype=object),
        np.array(pos).reshape(-1, 3),
        np.array(holes, dtype=bool),
        hf if np.isfinite(hf).any() else None,
        qd if np.isfinite(qd).any() else None,
        provenance={"generator": "file", "path": str(path)},
    )
