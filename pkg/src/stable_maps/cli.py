"""Command line entry point: ``stable-maps <command> [options]``."""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import polars as pl

from stable_maps.bdg import sample_infinite_map
from stable_maps.config import (
    ALGORITHMS,
    GRAPHS,
    MODES,
    ExperimentConfig,
    load_config,
)
from stable_maps.disks import sample_free_disk, sample_pointed_disk
from stable_maps.errors import StableMapsError
from stable_maps.experiments import (
    aperture_experiment,
    ball_growth_experiment,
    critical_data_for,
    cross_mode_agreement,
    estimate_exponent,
    peel_experiment,
    primal_dual_comparison,
    running_max,
    sandwich_experiment,
    slopes_from_frame,
    validate_all,
    walk_experiment,
)
from stable_maps.logging_config import setup_logging
from stable_maps.outputs import write_csv, write_manifest

logger = logging.getLogger(__name__)

COORDINATES = ("log", "sqrt", "linear")
EXPERIMENTS = ("sandwich", "comparison", "agreement", "balls", "apertures")


def parse_family(text: str) -> Dict[str, Any]:
    """``quadrangulation``, ``angulation:3``, ``stable:2.2`` or
    ``stable:2.2:0.3`` (type and scale)."""
    name, *args = text.split(":")
    if name == "angulation" and len(args) == 1:
        return {"family": name, "k": int(args[0])}
    if name == "stable" and len(args) in (1, 2):
        spec: Dict[str, Any] = {"family": name, "a": float(args[0])}
        if len(args) == 2:
            spec["scale"] = float(args[1])
        return spec
    if name == "quadrangulation" and not args:
        return {"family": name}
    raise argparse.ArgumentTypeError(f"unknown family {text!r}")


def _grid(text: str) -> List[int]:
    return [int(x) for x in text.split(",") if x]


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML configuration file")
    parser.add_argument("--family", type=parse_family)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", dest="output_dir")
    parser.add_argument("--replicates", type=int)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument(
        "--progress", action=argparse.BooleanOptionalAction, default=None
    )


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per operation."""
    parser = argparse.ArgumentParser(
        prog="stable-maps",
        description="Samplers and peeling explorations of infinite "
        "Boltzmann planar maps",
    )
    parser.add_argument(
        "--log-level",
        default=os.getenv("STABLE_MAPS_LOG_LEVEL", "INFO"),
        help="Logging level (env STABLE_MAPS_LOG_LEVEL)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    kernel = sub.add_parser("kernel", help="Dump the critical data as JSON")
    _common(kernel)
    kernel.add_argument("--rows", type=int, default=5)

    sample = sub.add_parser("sample-map", help="Write one map as text")
    _common(sample)
    sample.add_argument(
        "--kind", choices=("pointed", "free", "infinite"), default="infinite"
    )
    sample.add_argument("--p", type=int, default=1)
    sample.add_argument("--radius", type=int, default=4)

    for name in ("peel", "walk"):
        cmd = sub.add_parser(name, help=f"Run {name} replicates")
        _common(cmd)
        cmd.add_argument("--steps", type=_grid)
        if name == "peel":
            cmd.add_argument("--algorithm", choices=ALGORITHMS)
            cmd.add_argument("--mode", choices=MODES)
        else:
            cmd.add_argument("--graph", choices=GRAPHS)

    estimate = sub.add_parser("estimate", help="Slope of a CSV column")
    estimate.add_argument("csv", type=Path)
    estimate.add_argument("--x", default="n")
    estimate.add_argument("--y", required=True)
    estimate.add_argument("--grid", type=_grid, required=True)
    estimate.add_argument(
        "--running-max", action="store_true",
        help="Use the running maximum of --y within each replicate",
    )
    estimate.add_argument(
        "--coordinates", nargs=2, choices=COORDINATES, default=["log", "log"]
    )
    estimate.add_argument("--discard-rate", type=float, default=0.0)
    estimate.add_argument("--resamples", type=int, default=200)
    estimate.add_argument("--seed", type=int)

    experiment = sub.add_parser(
        "experiment", help="Run a scaling experiment on sampled hosts"
    )
    _common(experiment)
    experiment.add_argument("name", choices=EXPERIMENTS)
    experiment.add_argument("--steps", type=_grid)
    experiment.add_argument("--radii", type=_grid)
    experiment.add_argument("--perimeters", type=_grid)
    experiment.add_argument("--algorithm", choices=ALGORITHMS)

    validate = sub.add_parser("validate", help="Run the acceptance checks")
    _common(validate)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Configuration file merged with command-line overrides."""
    merged = load_config(getattr(args, "config", None))
    config = ExperimentConfig.from_mapping(merged)
    return config.with_overrides(
        family=getattr(args, "family", None),
        seed=getattr(args, "seed", None),
        output_dir=getattr(args, "output_dir", None),
        replicates=getattr(args, "replicates", None),
        progress=getattr(args, "progress", None),
        steps=tuple(args.steps) if getattr(args, "steps", None) else None,
        radii=tuple(args.radii) if getattr(args, "radii", None) else None,
        perimeters=(
            tuple(args.perimeters)
            if getattr(args, "perimeters", None)
            else None
        ),
        algorithm=getattr(args, "algorithm", None),
        mode=getattr(args, "mode", None),
        graph=getattr(args, "graph", None),
    )


def cmd_kernel(args: argparse.Namespace) -> int:
    """Print the kernel table as JSON."""
    config = resolve_config(args)
    data = critical_data_for(config)
    json.dump(data.to_dict(rows=args.rows), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def cmd_sample_map(args: argparse.Namespace) -> int:
    """Sample a map and write it as text."""
    config = resolve_config(args)
    data = critical_data_for(config)
    if args.kind == "infinite":
        pmap = sample_infinite_map(
            data, args.radius, config.seed, p=args.p,
            trust_factor=config.trust_factor,
            trust_margin=config.trust_margin, node_cap=config.node_cap,
        ).pmap
    elif args.kind == "pointed":
        pmap = sample_pointed_disk(
            args.p, data, config.seed, config.node_cap
        ).pmap
    else:
        pmap = sample_free_disk(
            args.p, data, config.seed, config.disk_attempt_cap,
            config.node_cap,
        ).pmap
    if getattr(args, "output_dir", None):
        path = Path(args.output_dir)
        path.mkdir(parents=True, exist_ok=True)
        target = path / f"map-{args.kind}-{config.seed}.txt"
        target.write_text(pmap.to_text())
        logger.info(f"Map with {pmap.n_vertices} vertices written to {target}")
    else:
        sys.stdout.write(pmap.to_text())
    return 0


def _report_slopes(
    frame: pl.DataFrame,
    config: ExperimentConfig,
    discard_rate: float,
    columns: List[str],
    x: str = "n",
    grid: Optional[Sequence[int]] = None,
) -> Dict[str, Any]:
    grid = config.steps if grid is None else grid
    slopes: Dict[str, Any] = {}
    for column in columns:
        try:
            slopes[column] = slopes_from_frame(
                frame, x, column, grid, discard_rate,
                resamples=config.bootstrap_resamples, seed=config.seed,
                max_discard_rate=config.max_discard_rate,
            ).to_dict()
        except StableMapsError as e:
            logger.warning(f"No slope for {column}: {e}")
            slopes[column] = {"error": str(e)}
    return slopes


def cmd_peel(args: argparse.Namespace) -> int:
    """Run peeling replicates and write their traces."""
    config = resolve_config(args)
    data = critical_data_for(config)
    frame, discards = peel_experiment(config, data, args.workers)
    name = f"peel-{config.algorithm}-{config.mode}"
    write_csv(frame, config.output_dir, name)
    columns = ["p", "volume"]
    if config.mode == "coupled":
        frame = running_max(frame, "d_plus")
        columns.append("max_d_plus")
    write_manifest(
        config, config.output_dir,
        {name: _report_slopes(frame, config, discards, columns)},
        {name: discards},
    )
    return 0


def cmd_walk(args: argparse.Namespace) -> int:
    """Run coupled walks and write their traces."""
    config = resolve_config(args)
    data = critical_data_for(config)
    frame, discards = walk_experiment(config, data, args.workers)
    name = f"walk-{config.graph}"
    write_csv(frame, config.output_dir, name)
    pioneer = frame.with_columns(
        pl.when(pl.col("is_pioneer")).then(pl.col("dist")).otherwise(0)
        .alias("pioneer_dist")
    )
    pioneer = running_max(pioneer, "pioneer_dist")
    write_manifest(
        config, config.output_dir,
        {name: _report_slopes(
            pioneer, config, discards, ["max_pioneer_dist", "theta"]
        )},
        {name: discards},
    )
    return 0


def cmd_estimate(args: argparse.Namespace) -> int:
    """Fit a log-log slope to a trace file."""
    frame = pl.read_csv(args.csv)
    y = args.y
    if args.running_max:
        frame = running_max(frame, y)
        y = f"max_{y}"
    samples = [
        frame.filter(pl.col(args.x) == g)[y].drop_nulls().to_numpy()
        for g in args.grid
    ]
    estimate = estimate_exponent(
        np.array(args.grid, dtype=float), samples, args.discard_rate,
        resamples=args.resamples, seed=args.seed,
        coordinates=tuple(args.coordinates),
    )
    json.dump(estimate.to_dict(), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    """Run a named scaling experiment."""
    config = resolve_config(args)
    data = critical_data_for(config)
    name = args.name
    if name == "sandwich":
        report = sandwich_experiment(
            config.with_overrides(mode="coupled"), data,
            workers=args.workers,
        )
        frame, discards = report.frame, report.discard_rate
        results = {
            "bands": report.bands,
            "overlap": report.overlap,
            "ordered": report.ordered,
            "drift": report.drift,
            "passed": report.passed,
        }
    elif name == "comparison":
        report = primal_dual_comparison(config, data, args.workers)
        frame, discards = report.frame, report.inner.discard_rate
        results = {
            "coordinates": list(report.coordinates),
            "predicted": report.predicted,
            "inner": report.inner.to_dict(),
            "outer": report.outer.to_dict(),
        }
    elif name == "agreement":
        report = cross_mode_agreement(config, data, workers=args.workers)
        frame, discards = report.frame, report.discard_rate
        results = {"passed": report.passed, "tests": frame.to_dicts()}
    elif name == "balls":
        frame, discards = ball_growth_experiment(config, data, args.workers)
        results = _report_slopes(
            frame, config, discards,
            ["ball_vertices", "hull_vertices", "tentacle", "sigma"],
            x="r", grid=config.radii,
        )
    else:
        frame, discards = aperture_experiment(config, data, args.workers)
        results = _report_slopes(
            frame, config, discards, ["aperture"], x="p",
            grid=config.perimeters,
        )
    write_csv(frame, config.output_dir, name)
    write_manifest(
        config, config.output_dir, {name: results}, {name: discards}
    )
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    """Run the reduced validation suite."""
    config = resolve_config(args)
    report = validate_all(config, workers=args.workers)
    write_manifest(
        config, config.output_dir,
        {"validate": {"checks": report.checks, "details": report.details}},
    )
    return 0 if report.passed else 1


COMMANDS = {
    "kernel": cmd_kernel,
    "sample-map": cmd_sample_map,
    "peel": cmd_peel,
    "walk": cmd_walk,
    "estimate": cmd_estimate,
    "experiment": cmd_experiment,
    "validate": cmd_validate,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except StableMapsError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
