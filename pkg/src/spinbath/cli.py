"""Command line entry point: ``spinbath {generate,run,fit,reproduce,inspect}``."""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .analysis import InsufficientDecayError, aggregate, fit_stretched, write_fit_report
from .cce import CoherenceCurve, task_rng
from .geometry import SurfaceConfig, generate_surface_lattice, sample_bulk_c13, sample_surface_electrons, write_bath
from .master import IntegratorError
from .runner import ELECTRON_SCENARIOS, ConfigError, ExperimentConfig, RunManifest, _central, run

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 2, 3, 4

log = logging.getLogger("spinbath")


def _setup_logging():
    level = os.environ.get("SPINBATH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _load(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = ExperimentConfig.from_yaml(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_generate(args):
    cfg = _load(args)
    out = Path(args.out)
    for cell_id, _, cell in cfg.cells():
        g = cell.geometry
        nv, _ = _central(cell)
        (out / cell_id).mkdir(parents=True, exist_ok=True)
        for i in range(cell.n_configs):
            rng = task_rng(cell.seed, i)
            if cell.scenario in ELECTRON_SCENARIOS:
                surface = SurfaceConfig(g.orientation, "bare", g.electron_density, g.hole_fraction, g.lateral_extent)
                bath = sample_surface_electrons(surface, task_rng(cell.seed, i, stream=1))
            elif cell.scenario == "nuclear_surface":
                c13 = sample_bulk_c13(
                    g.bulk_radius, g.abundance, nv_position=nv.position, surface=True, orientation=g.orientation, rng=rng, region=g.region
                )
                bath = c13.concat(generate_surface_lattice(g.orientation, g.termination, g.surface_half_extent, rng=rng))
            else:
                bath = sample_bulk_c13(g.bulk_radius, g.abundance, orientation=g.orientation, rng=rng, region=g.region)
            write_bath(out / cell_id / f"bath_{i:04d}.txt", bath, header=f"{cell.scenario} seed={cell.seed} config={i}")
    print(f"wrote baths under {out}")
    return EXIT_OK


def cmd_run(args):
    cfg = _load(args)
    results = run(cfg, args.out, workers=args.workers, resume=args.resume)
    for r in results:
        fit = f"T2={r.fit.T2:.4g} us n={r.fit.n:.3f}" if r.fit else "no fit"
        print(f"{r.cell_id} {r.overrides} {fit} ({len(r.curves)} curves, {len(r.failed)} failed)")
    return EXIT_NUMERICAL if any(r.failed for r in results) else EXIT_OK


def cmd_fit(args):
    paths = []
    for p in map(Path, args.curves):
        if not p.exists():
            raise ConfigError(f"no such file or directory: {p}")
        paths += sorted(p.rglob("config_*.csv")) if p.is_dir() else [p]
    if not paths:
        raise ConfigError("no curve files found")
    fits = []
    curves = [CoherenceCurve.from_csv(p) for p in paths]
    for c in curves:
        try:
            fits.append(fit_stretched(c))
        except (InsufficientDecayError, ValueError):
            fits.append(None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_fit_report(out / "fits.csv", fits, [p.stem for p in paths])
    if any(f is not None for f in fits):
        aggregate(fits, curves).to_json(out / "aggregate.json")
    ok = sum(f is not None for f in fits)
    print(f"fitted {ok}/{len(fits)} curves -> {out / 'fits.csv'}")
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_reproduce(args):
    from .recipes import RECIPES, run_recipe

    if args.recipe not in RECIPES:
        raise ConfigError(f"unknown recipe {args.recipe!r}; available: {', '.join(sorted(RECIPES))}")
    report = run_recipe(args.recipe, out=args.out, workers=args.workers, scale=args.scale, seed=args.seed or 0)
    print(report.table())
    return EXIT_OK if report.passed else EXIT_ACCEPTANCE


def cmd_inspect(args):
    path = Path(args.out)
    manifest = RunManifest.load(path / "manifest.json" if path.is_dir() else path)
    if manifest is None:
        raise ConfigError(f"no manifest at {path}")
    status = {}
    for entry in manifest.tasks.values():
        status[entry["status"]] = status.get(entry["status"], 0) + 1
    print(json.dumps({"config_hash": manifest.config_hash, "engine_version": manifest.engine_version, "tasks": status}, indent=1))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="spinbath", description="Central-spin decoherence simulations.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="experiment YAML file")
        sp.add_argument("--seed", type=int, default=None, help="override the root seed")
        sp.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--out", default="out")

    common(sub.add_parser("generate", help="write bath realizations"))
    sp = sub.add_parser("run", help="run an experiment config")
    common(sp)
    sp.add_argument("--resume", action="store_true", help="reuse finished tasks of a previous run")
    sp = sub.add_parser("fit", help="fit curve CSV files")
    sp.add_argument("curves", nargs="+", help="curve files or directories")
    sp.add_argument("--out", default="fits")
    sp = sub.add_parser("reproduce", help="run a built-in recipe and check it")
    sp.add_argument("recipe")
    common(sp, config=False)
    sp.add_argument("--scale", choices=("quick", "desk", "full"), default="desk")
    sp = sub.add_parser("inspect", help="summarize a run manifest")
    sp.add_argument("out", help="run directory or manifest path")
    return p


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "fit": cmd_fit, "reproduce": cmd_reproduce, "inspect": cmd_inspect}


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegratorError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
