"""
Experiment orchestration.

An :class:`ExperimentConfig` describes one scenario, a sweep grid over any
of its fields and an ensemble size. :func:`run` expands the grid into
cells, simulates every (cell, configuration) task, and writes curves, fit
reports, aggregates and a manifest that makes reruns resumable.

Configuration ``i`` draws its 13C bath from ``task_rng(seed, i)`` and its
surface electrons from stream 1 of the same task in every cell, so sweep
cells, and scenarios with and without electrons, share bath realizations.
"""

import csv
import hashlib
import json
import logging
import os
import traceback
from dataclasses import asdict, dataclass, field, fields, replace
from itertools import product
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .analysis import InsufficientDecayError, aggregate, fit_stretched, write_fit_report
from .cce import CCEOptions, CoherenceCurve, cce_coherence, config_hash, gcce_coherence, map_tasks, task_rng, time_grid
from .geometry import (
    SurfaceConfig,
    generate_surface_lattice,
    nv_axis_for_facet,
    place_nv,
    sample_bulk_c13,
    sample_surface_electrons,
)
from .hamiltonian import PulseSequence
from .master import HoppingModel, MEOptions, build_channels, mecce_coherence
from .spins import CentralSpin, ExternalField

log = logging.getLogger("spinbath")

SCENARIOS = (
    "bulk",
    "nuclear_surface",
    "static_electrons",
    "relaxing_electrons",
    "hopping_electrons",
    "pseudospin_scan",
    "temperature_scan",
)
METHODS = ("cce", "gcce", "mecce", "megcce", "pseudospin")
ELECTRON_SCENARIOS = ("static_electrons", "relaxing_electrons", "hopping_electrons", "temperature_scan")


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


@dataclass
class GeometrySpec:
    orientation: str = "100"
    termination: str = "bare"
    depth: Optional[float] = None  # nm; None places the NV in bulk
    bulk_radius: float = 5.0
    region: str = "sphere"
    abundance: float = 0.011
    electron_density: float = 0.0
    hole_fraction: float = 0.0
    lateral_extent: Optional[float] = None
    surface_half_extent: float = 4.0
    include_c13: bool = False
    field_gauss: float = 400.0
    tilt_deg: Optional[float] = None
    electric_field: Optional[list] = None  # V/m at the NV, lab frame
    transverse_splitting_mhz: float = 0.0  # static strain splitting of the NV


@dataclass
class ChannelSpec:
    T1: Optional[float] = None  # µs
    pair_rate: float = 0.0  # 1/µs
    t_hop: Optional[float] = None  # ns
    r_hop: float = 5.0  # nm
    hop_prefactor: str = "inverse"
    temperature: Optional[float] = None  # K


@dataclass
class EngineSpec:
    order: int = 2
    r_connect: Optional[float] = None
    r_bath: Optional[float] = None
    nuclear_r_connect: Optional[float] = None
    secular: bool = False


@dataclass
class TimeSpec:
    t_min: float = 0.1
    t_max: float = 1e4
    per_decade: int = 32

    def grid(self):
        return time_grid(self.t_min, self.t_max, self.per_decade)


_SECTIONS = {"geometry": GeometrySpec, "channels": ChannelSpec, "engine": EngineSpec, "times": TimeSpec}


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    scenario: str = "bulk"
    method: str = "cce"
    sequence: str = "hahn"
    n_configs: int = 10
    seed: int = 0
    geometry: GeometrySpec = field(default_factory=GeometrySpec)
    channels: ChannelSpec = field(default_factory=ChannelSpec)
    engine: EngineSpec = field(default_factory=EngineSpec)
    times: TimeSpec = field(default_factory=TimeSpec)
    sweep: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if (self.method == "pseudospin") != (self.scenario == "pseudospin_scan"):
            raise ConfigError("the pseudospin method goes with the pseudospin_scan scenario only")
        if self.scenario == "hopping_electrons" and self.method not in ("mecce", "megcce"):
            raise ConfigError("hopping needs a master-equation method (mecce or megcce)")
        if self.scenario == "relaxing_electrons" and self.method not in ("mecce", "megcce"):
            raise ConfigError("finite T1 needs a master-equation method (mecce or megcce)")
        if self.n_configs < 1:
            raise ConfigError("n_configs must be at least 1")
        try:
            PulseSequence.from_name(self.sequence)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for key, values in self.sweep.items():
            section, _, name = key.partition(".")
            if section not in _SECTIONS or name not in {f.name for f in fields(_SECTIONS[section])}:
                raise ConfigError(f"cannot sweep {key!r}; use section.field, e.g. geometry.depth")
            if not isinstance(values, (list, tuple)) or not len(values):
                raise ConfigError(f"sweep grid for {key!r} must be a non-empty list")

    # -- serialization

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for section, typ in _SECTIONS.items():
            raw = data.get(section) or {}
            if isinstance(raw, typ):
                continue
            bad = set(raw) - {f.name for f in fields(typ)}
            if bad:
                raise ConfigError(f"unknown keys in {section}: {sorted(bad)}")
            data[section] = typ(**raw)
        return cls(**data)

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        try:
            return cls.from_dict(data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_yaml(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    def hash(self) -> str:
        return config_hash(self.to_dict())

    # -- sweeps

    def cells(self):
        """(cell id, overrides, cell config) for every point of the sweep grid."""
        keys = list(self.sweep)
        out = []
        for idx, combo in enumerate(product(*(self.sweep[k] for k in keys))):
            cfg = self
            overrides = dict(zip(keys, combo))
            for key, value in overrides.items():
                section, _, name = key.partition(".")
                cfg = replace(cfg, **{section: replace(getattr(cfg, section), **{name: value})})
            cfg = replace(cfg, sweep={})
            out.append((f"cell{idx:03d}", overrides, cfg))
        return out


# ---------------------------------------------------------------------------
# One configuration


def _central(cfg: ExperimentConfig):
    g = cfg.geometry
    if g.depth is None:
        axis = nv_axis_for_facet(g.orientation)
        nv = CentralSpin(position=np.zeros(3), axis=axis)
        field_ = ExternalField.along(axis, g.field_gauss)
    else:
        nv, field_ = place_nv(g.orientation, g.depth, g.field_gauss, g.tilt_deg)
    if g.electric_field is not None:
        field_ = ExternalField(field_.B, np.asarray(g.electric_field, dtype=float))
    if g.transverse_splitting_mhz:
        nv = replace(nv, E_transverse=2 * np.pi * g.transverse_splitting_mhz)
    return nv, field_


def _c13_bath(cfg, nv, rng):
    g = cfg.geometry
    return sample_bulk_c13(
        g.bulk_radius,
        g.abundance,
        nv_position=nv.position,
        surface=g.depth is not None,
        orientation=g.orientation,
        rng=rng,
        region=g.region,
    )


def _closed(cfg, bath, nv, field_, seq, times, options):
    engine = gcce_coherence if cfg.method in ("gcce", "megcce") else cce_coherence
    return engine(bath, nv, field_, seq, times, options)


def _nuclear_options(cfg, temperature=None):
    e = cfg.engine
    return CCEOptions(order=e.order, r_connect=e.nuclear_r_connect, secular=e.secular, temperature=temperature)


def electron_r_bath(depth, density):
    """Electrons farther than this from the NV are dropped: 2.5 depths, 4 mean spacings, at least 25 nm."""
    spacing = 1.0 / np.sqrt(density) if density > 0 else 0.0
    return max(25.0, 2.5 * (depth or 0.0), 4.0 * spacing)


def simulate(cfg: ExperimentConfig, index: int) -> CoherenceCurve:
    """Coherence curve of configuration ``index`` of a single-cell config."""
    rng = task_rng(cfg.seed, index)
    g, ch, e = cfg.geometry, cfg.channels, cfg.engine
    seq = PulseSequence.from_name(cfg.sequence)
    times = cfg.times.grid()
    nv, field_ = _central(cfg)
    meta = {"config_index": index, "seed": cfg.seed}

    if cfg.scenario == "bulk":
        bath = sample_bulk_c13(g.bulk_radius, g.abundance, orientation=g.orientation, rng=rng, region=g.region)
        curve = _closed(cfg, bath, nv, field_, seq, times, _nuclear_options(cfg))
        curve.metadata.update(meta, n_c13=len(bath))
        return curve

    if cfg.scenario == "nuclear_surface":
        if g.depth is None:
            raise ConfigError("nuclear_surface needs geometry.depth")
        c13 = _c13_bath(cfg, nv, rng)
        ligands = generate_surface_lattice(g.orientation, g.termination, g.surface_half_extent, rng=rng)
        bath = c13.concat(ligands) if ligands.n_sites else c13
        curve = _closed(cfg, bath, nv, field_, seq, times, _nuclear_options(cfg))
        curve.metadata.update(meta, n_c13=len(c13), n_ligands=len(ligands))
        return curve

    if cfg.scenario in ELECTRON_SCENARIOS:
        if g.depth is None:
            raise ConfigError(f"{cfg.scenario} needs geometry.depth")
        surface = SurfaceConfig(g.orientation, "bare", g.electron_density, g.hole_fraction, g.lateral_extent)
        electrons = sample_surface_electrons(surface, task_rng(cfg.seed, index, stream=1))
        r_bath = e.r_bath if e.r_bath is not None else electron_r_bath(g.depth, g.electron_density)
        temperature = ch.temperature if cfg.scenario == "temperature_scan" else None
        if cfg.method in ("mecce", "megcce"):
            options = MEOptions(
                order=e.order,
                r_connect=e.r_connect,
                r_bath=r_bath,
                temperature=temperature,
                secular=e.secular,
                mode="gcce" if cfg.method == "megcce" else "cce",
            )
            channels = build_channels(electrons, T1=ch.T1, pair_rate=ch.pair_rate)
            hopping = None
            if cfg.scenario == "hopping_electrons" and ch.t_hop is not None:
                hopping = HoppingModel(t_hop=ch.t_hop * 1e-3, r_hop=ch.r_hop, prefactor=ch.hop_prefactor)
            curve = mecce_coherence(electrons, nv, field_, seq, times, channels, options, hopping=hopping)
        else:
            options = CCEOptions(
                order=e.order, r_connect=e.r_connect, r_bath=r_bath, temperature=temperature, secular=e.secular
            )
            curve = _closed(cfg, electrons.spins_only(), nv, field_, seq, times, options)
        curve.metadata.update(meta, n_electrons=len(electrons), n_holes=int(electrons.is_hole.sum()))
        if g.include_c13:
            c13 = _c13_bath(cfg, nv, rng)
            nuclear = _closed(cfg, c13, nv, field_, seq, times, _nuclear_options(cfg))
            curve = CoherenceCurve(times, curve.values * nuclear.values, {**curve.metadata, "n_c13": len(c13)})
        return curve

    raise ConfigError(f"scenario {cfg.scenario!r} is not an ensemble scenario")


def _task(args):
    cfg_dict, index = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    try:
        return index, simulate(cfg, index), None
    except ConfigError:
        raise
    except Exception as exc:  # recorded in the manifest, the other tasks go on
        return index, None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"


# ---------------------------------------------------------------------------
# Manifest and outputs


@dataclass
class RunManifest:
    config_hash: str
    engine_version: str = __version__
    tasks: dict = field(default_factory=dict)  # task key -> {"status", "path", "error"}
    artifacts: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> Optional["RunManifest"]:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError):
            return None
        return cls(**data)

    def save(self, path):
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            json.dump(asdict(self), fh, indent=1, sort_keys=True)
        os.replace(tmp, path)

    def pending(self):
        return [k for k, v in self.tasks.items() if v.get("status") != "done"]


@dataclass
class CellResult:
    cell_id: str
    overrides: dict
    curves: list
    mean: Optional[CoherenceCurve]
    fit: object  # FitResult of the ensemble-mean curve or None
    stats: object  # EnsembleStats or None
    failed: list


def _key(cell_id, index):
    return f"{cell_id}/config_{index:04d}"


def _atomic_text(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def run(config: ExperimentConfig, out, workers=1, resume=False) -> list:
    """Execute the sweep grid; returns one :class:`CellResult` per cell."""
    if config.scenario == "pseudospin_scan":
        raise ConfigError("pseudospin scans are driven by the reproduce recipes, not run()")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    h = config.hash()
    manifest_path = out / "manifest.json"
    manifest = RunManifest.load(manifest_path) if resume else None
    if manifest is not None and manifest.config_hash != h:
        log.warning("config changed since the previous run; recomputing everything")
        manifest = None
    if manifest is None:
        manifest = RunManifest(h)
    config.to_yaml(out / "config.yaml")

    cells = config.cells()
    todo = []
    for cell_id, _, cfg in cells:
        (out / cell_id / "curves").mkdir(parents=True, exist_ok=True)
        for i in range(cfg.n_configs):
            key = _key(cell_id, i)
            path = out / cell_id / "curves" / f"config_{i:04d}.csv"
            entry = manifest.tasks.get(key)
            if entry and entry.get("status") == "done" and path.exists():
                continue
            manifest.tasks[key] = {"status": "pending", "path": str(path.relative_to(out)), "error": None}
            todo.append((cell_id, cfg, i, path))
    manifest.save(manifest_path)
    log.info("%d cells, %d tasks to compute", len(cells), len(todo))

    results = map_tasks(_task, [(cfg.to_dict(), i) for _, cfg, i, _ in todo], workers)
    for (cell_id, _, i, path), (_, curve, err) in zip(todo, results):
        key = _key(cell_id, i)
        if err is None:
            curve.to_csv(path)
            manifest.tasks[key].update(status="done", error=None)
        else:
            log.error("task %s failed: %s", key, err.splitlines()[0])
            manifest.tasks[key].update(status="failed", error=err)
    manifest.save(manifest_path)

    summary = []
    for cell_id, overrides, cfg in cells:
        summary.append(_finish_cell(out, cell_id, overrides, cfg, manifest))
    manifest.artifacts["summary"] = "summary.csv"
    manifest.save(manifest_path)
    _write_summary(out / "summary.csv", summary)
    return summary


def _finish_cell(out, cell_id, overrides, cfg, manifest) -> CellResult:
    curves, failed = [], []
    for i in range(cfg.n_configs):
        entry = manifest.tasks[_key(cell_id, i)]
        if entry["status"] != "done":
            failed.append(i)
            continue
        curves.append(CoherenceCurve.from_csv(out / entry["path"]))
    mean = fit = stats = None
    if curves:
        times = curves[0].times
        mean = CoherenceCurve(times, np.mean([c.values for c in curves], axis=0), {"cell": cell_id, **overrides})
        mean.to_csv(out / cell_id / "mean.csv")
        try:
            fit = fit_stretched(mean)
        except (InsufficientDecayError, ValueError) as exc:
            log.warning("%s: mean curve not fittable (%s)", cell_id, exc)
        fits = []
        for c in curves:
            try:
                fits.append(fit_stretched(c))
            except (InsufficientDecayError, ValueError):
                fits.append(None)
        ids = [i for i in range(cfg.n_configs) if i not in failed]
        write_fit_report(out / cell_id / "fits.csv", fits, ids)
        report = {"overrides": overrides, "failed": failed}
        report["mean_curve_fit"] = None if fit is None else {"T2_us": fit.T2, "n": fit.n, "T2_err": fit.T2_err}
        if any(f is not None for f in fits):
            stats = aggregate(fits, curves)
            report.update(stats.summary())
        _atomic_text(out / cell_id / "aggregate.json", json.dumps(report, indent=1, sort_keys=True))
    return CellResult(cell_id, overrides, curves, mean, fit, stats, failed)


def _write_summary(path, cells):
    keys = sorted({k for c in cells for k in c.overrides})
    with open(f"{path}.tmp", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell"] + keys + ["T2_us", "n", "mean_T2_us", "std_T2_us", "n_configs", "n_failed"])
        for c in cells:
            row = [c.cell_id] + [c.overrides.get(k, "") for k in keys]
            row += [repr(c.fit.T2), repr(c.fit.n)] if c.fit else ["", ""]
            if c.stats is not None:
                row += [repr(c.stats.mean_T2), repr(c.stats.std_T2), c.stats.n_configs]
            else:
                row += ["", "", 0]
            row.append(len(c.failed))
            w.writerow(row)
    os.replace(f"{path}.tmp", path)


def digest(out) -> str:
    """SHA-256 over every curve, mean and summary CSV under ``out``, in sorted path order."""
    h = hashlib.sha256()
    for p in sorted(Path(out).rglob("*.csv")):
        h.update(str(p.relative_to(out)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()
