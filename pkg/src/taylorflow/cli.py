"""Command-line interface for taylorflow."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

from taylorflow import __version__
from taylorflow.api import available_flows
from taylorflow.config import RunConfig, load_run_config
from taylorflow.errors import ConfigError, NumericalError
from taylorflow.experiment import compare_flows, format_rows, run_experiment, sweep_orders
from taylorflow.flows import FlowKind
from taylorflow.integrator import FlowConfig
from taylorflow.oracles import DEFAULT_RESOLUTION, default_grid, grid_posterior
from taylorflow.scenarios import GridSpec, Scenario, load_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

FLOW_CHOICES = ["exact", "gromov", "dapff-v1", "dapff-v2"]


def _add_scenario(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--scenario",
        default="builtin:range",
        help="Scenario file (JSON/YAML) or builtin:range (default: builtin:range)",
    )


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("-N", "--particles", type=int, help="Number of particles")
    p.add_argument("--dlambda", help="Pseudo-time step, e.g. 0.02 or 1/50")
    p.add_argument(
        "--substeps",
        type=int,
        help="Euler sub-steps in the first lambda step, fewer later (default 20, 1 = plain grid)",
    )
    p.add_argument(
        "--no-diffusion",
        dest="diffusion",
        action="store_const",
        const=False,
        help="Drift only: drop the stochastic term",
    )
    p.add_argument("--seed", type=int, help="Random seed")
    p.add_argument("--workers", type=int, help="Threads for particle evaluation")
    p.add_argument(
        "--prior-cov",
        choices=["given", "ensemble"],
        help="Use the scenario covariance or re-estimate it from the particles",
    )


def _add_grid(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", help="Oracle grid as x0,x1,y0,y1,res")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taylorflow",
        description="Particle flow measurement updates with differential algebra",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"taylorflow {__version__}",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="Log progress (-v) or debug detail (-vv)",
    )

    subparsers = parser.add_subparsers(dest="command", help="Commands")

    # run
    run_parser = subparsers.add_parser("run", help="Run one flow update and write a report")
    _add_scenario(run_parser)
    run_parser.add_argument("--flow", choices=FLOW_CHOICES, help="Flow field")
    run_parser.add_argument("--order", type=int, help="Expansion order of the DA flows")
    _add_run_options(run_parser)
    run_parser.add_argument(
        "--record-trajectories",
        action="store_const",
        const=True,
        help="Write per-step snapshots to trajectory.jsonl and plot pathways",
    )
    run_parser.add_argument("--out", type=Path, default=Path("taylorflow-out"), help="Output directory")
    run_parser.add_argument("--no-plot", action="store_true", help="Skip plot.svg")
    run_parser.add_argument("--timing", action="store_true", help="Record wall time in summary.json")
    _add_grid(run_parser)

    # oracle
    oracle_parser = subparsers.add_parser("oracle", help="Grid posterior moments")
    _add_scenario(oracle_parser)
    _add_grid(oracle_parser)
    oracle_parser.add_argument("-o", "--output", type=Path, help="Write moments as JSON")

    # compare
    compare_parser = subparsers.add_parser(
        "compare", help="Score several flows against the grid posterior"
    )
    _add_scenario(compare_parser)
    compare_parser.add_argument(
        "--flows",
        required=True,
        help="Comma-separated flows, name or name:order (e.g. gromov,dapff-v2:3)",
    )
    compare_parser.add_argument("--metric", default="energy", help="Comparison metric (energy)")
    _add_run_options(compare_parser)
    compare_parser.add_argument(
        "--independent-noise",
        dest="shared_noise",
        action="store_const",
        const=False,
        help="Give each flow its own noise instead of common random numbers",
    )
    compare_parser.add_argument("--energy-samples", type=int, help="Grid posterior sample size")
    _add_grid(compare_parser)
    compare_parser.add_argument("-o", "--output", type=Path, help="Write results as JSON")

    # sweep
    sweep_parser = subparsers.add_parser("sweep", help="Score a DA flow across expansion orders")
    _add_scenario(sweep_parser)
    sweep_parser.add_argument("--flow", choices=["dapff-v1", "dapff-v2"], default="dapff-v1")
    sweep_parser.add_argument("--orders", help="Comma-separated orders (default per flow)")
    _add_run_options(sweep_parser)
    sweep_parser.add_argument("--energy-samples", type=int, help="Grid posterior sample size")
    _add_grid(sweep_parser)
    sweep_parser.add_argument("-o", "--output", type=Path, help="Write results as JSON")

    # flows
    subparsers.add_parser("flows", help="List available flows")

    return parser


def main() -> int:
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args()
    _configure_logging(args.verbose)

    commands = {
        "run": cmd_run,
        "oracle": cmd_oracle,
        "compare": cmd_compare,
        "sweep": cmd_sweep,
    }
    if args.command in commands:
        return _guarded(commands[args.command], args)
    elif args.command == "flows":
        return cmd_flows()
    else:
        parser.print_help()
        return EXIT_OK


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _guarded(command: Any, args: argparse.Namespace) -> int:
    """Run a command, mapping failures to exit codes."""
    try:
        return command(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"Numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


def _scenario_options(scenario: Scenario, flow: str | None) -> dict[str, Any]:
    d = scenario.defaults
    options: dict[str, Any] = {
        "particles": d.particles,
        "dlambda": d.dlambda,
        "substeps": d.substeps,
        "diffusion": d.diffusion,
        "seed": d.seed,
    }
    if flow is None or flow == d.flow:
        options["order"] = d.order
    return options


def _run_config(args: argparse.Namespace, scenario: Scenario, flow: str | None) -> RunConfig:
    explicit = {
        key: getattr(args, key, None)
        for key in (
            "particles",
            "dlambda",
            "substeps",
            "diffusion",
            "seed",
            "order",
            "record_trajectories",
            "workers",
            "shared_noise",
            "prior_cov",
            "energy_samples",
        )
    }
    return load_run_config("run", explicit, scenario_options=_scenario_options(scenario, flow))


def _flow_config(rc: RunConfig) -> FlowConfig:
    return FlowConfig(
        dlambda=rc.get_float("dlambda", 1.0 / 50),
        substeps=rc.get_int("substeps", 20),
        diffusion=rc.get_bool("diffusion", True),
        seed=rc.get_int("seed", 0),
        record_trajectories=rc.get_bool("record_trajectories"),
        workers=rc.get_int("workers", 1),
        shared_noise=rc.get_bool("shared_noise", True),
    )


def _grid(args: argparse.Namespace, scenario: Scenario, rc: RunConfig) -> GridSpec | None:
    """--grid, else the scenario grid, else a default box at the configured resolution."""
    if getattr(args, "grid", None):
        return GridSpec.parse(args.grid)
    if scenario.grid is not None:
        return None
    return default_grid(scenario.prior, rc.get_int("grid_resolution", DEFAULT_RESOLUTION))


def _write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"Written to {path}")


def cmd_run(args: argparse.Namespace) -> int:
    """Handle run command."""
    scenario = load_scenario(args.scenario)
    flow = args.flow or scenario.defaults.flow
    rc = _run_config(args, scenario, args.flow)
    order = rc.get("order")
    kind = FlowKind.of(flow, None if order is None else int(order))
    cfg = _flow_config(rc)

    report = run_experiment(
        scenario,
        kind,
        cfg,
        args.out,
        particles=rc.get_int("particles", scenario.defaults.particles),
        prior_cov=str(rc.get("prior_cov", "given")),
        grid=_grid(args, scenario, rc),
        plot=not args.no_plot,
        timing=args.timing,
    )
    initial, final = report.summary["initial"], report.summary["final"]
    print(
        f"{kind.label}: {report.initial.size} particles, {cfg.steps} steps "
        f"({sum(cfg.substep_schedule())} sub-steps)"
    )
    print(f"  mean residual {initial['mean_abs_residual']:.6g} -> {final['mean_abs_residual']:.6g}")
    print(f"  final mean {[round(v, 6) for v in final['mean']]}")
    diag = report.summary["diagnostics"]
    print(
        f"  frozen {diag['frozen']}, clamps {diag['clamps']}, "
        f"diffusion failures {diag['diffusion_failures']}"
    )
    print(f"Written to {args.out}")
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    """Handle oracle command."""
    scenario = load_scenario(args.scenario)
    rc = _run_config(args, scenario, None)
    posterior = grid_posterior(scenario, _grid(args, scenario, rc))
    result = {
        "grid": posterior.grid.to_dict(),
        "mean": posterior.mean.tolist(),
        "cov": posterior.cov.tolist(),
    }
    print(f"Grid {posterior.grid.resolution} over {posterior.grid.bounds}")
    print(f"  mean {[round(v, 6) for v in result['mean']]}")
    print(f"  cov  {[[round(v, 6) for v in row] for row in result['cov']]}")
    if args.output:
        _write_json(args.output, result)
    return EXIT_OK


def _parse_flows(text: str) -> list[FlowKind]:
    return [FlowKind.parse(item) for item in text.split(",") if item.strip()]


def _parse_orders(text: str | None) -> list[int] | None:
    if not text:
        return None
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise ConfigError(f"Invalid order list '{text}'") from e


def cmd_compare(args: argparse.Namespace) -> int:
    """Handle compare command."""
    scenario = load_scenario(args.scenario)
    kinds = _parse_flows(args.flows)
    rc = _run_config(args, scenario, "")
    rows = compare_flows(
        scenario,
        kinds,
        _flow_config(rc),
        particles=rc.get_int("particles", scenario.defaults.particles),
        metric=args.metric,
        prior_cov=str(rc.get("prior_cov", "given")),
        grid=_grid(args, scenario, rc),
        energy_samples=rc.get_int("energy_samples", 10_000),
    )
    print(format_rows(rows))
    if args.output:
        _write_json(args.output, [row.as_dict() for row in rows])
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    """Handle sweep command."""
    scenario = load_scenario(args.scenario)
    rc = _run_config(args, scenario, "")
    rows = sweep_orders(
        scenario,
        args.flow,
        _flow_config(rc),
        orders=_parse_orders(args.orders),
        particles=rc.get_int("particles", scenario.defaults.particles),
        prior_cov=str(rc.get("prior_cov", "given")),
        grid=_grid(args, scenario, rc),
        energy_samples=rc.get_int("energy_samples", 10_000),
    )
    print(format_rows(rows))
    if args.output:
        _write_json(args.output, [row.as_dict() for row in rows])
    return EXIT_OK


def cmd_flows() -> int:
    """Handle flows command."""
    print("Available flows:\n")
    for info in available_flows():
        orders = ""
        if info.uses_order:
            high = "" if info.max_order is None else str(info.max_order)
            orders = f" order {info.min_order}..{high} (default {info.default_order})"
        print(f"  {info.name:<10} [{info.family}]{orders}")
        print(f"    {info.description}")
        print()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
