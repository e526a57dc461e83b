"""
otmap - command-line entry point.

Subcommands run one experiment each, driven by a YAML config plus ``--set`` overrides:

    solve       stochastic dual ascent for entropy / L2 regularized OT
    map-train   fit a Monge map network by barycentric projection of a dual checkpoint
    generate    push source samples through a trained map
    da          domain adaptation accuracy grid on labeled blobs or CSV domains
    benchmark   per-iteration cost and objective-vs-time of dual vs semi-dual SGD
    converge    plan convergence as eps → 0 and map convergence as samples grow

Exit codes:
    0  success
    1  numerical failure, or failed acceptance checks with OTMAP_STRICT_CHECKS=true
    2  invalid config, malformed measure file or checkpoint, missing file

Usage:
    otmap solve --config configs/solve.yml
    otmap solve --config configs/demo_solve.yml
    otmap map-train --config configs/map_train.yml --dual-checkpoint outputs/demo_solve/checkpoints/potentials_eps_0.05.json

Environment Variables:
    OTMAP_OUTPUT_DIR: Root directory for command outputs (default: outputs)
    OTMAP_DETERMINISTIC: Blank wall-clock columns in written artifacts (default: true)
    OTMAP_STRICT_CHECKS: Failing acceptance checks exit with code 1 (default: false)
    OTMAP_CHECKS_PATH: Alternative acceptance checks YAML
    LOG_LEVEL: Logging level (default: INFO)
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from dotenv import load_dotenv

from otmap.config import (
    BenchmarkConfig,
    ConvergeConfig,
    DaConfig,
    GenerateConfig,
    MapTrainConfigModel,
    RuntimeSettings,
    SolveConfig,
    load_config,
)
from otmap.exceptions import (
    AcceptanceCheckError,
    CheckpointError,
    ConfigError,
    MeasureFormatError,
    NumericalError,
)
from otmap.pipelines import (
    cmd_benchmark,
    cmd_converge,
    cmd_da,
    cmd_generate,
    cmd_map_train,
    cmd_solve,
)

load_dotenv()

logger = logging.getLogger("otmap")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

CONFIG_MODELS = {
    "solve": SolveConfig,
    "map-train": MapTrainConfigModel,
    "generate": GenerateConfig,
    "da": DaConfig,
    "benchmark": BenchmarkConfig,
    "converge": ConvergeConfig,
}

EPILOG = """
Examples:
  # Entropic dual on two discrete measures, sweep over eps
  otmap solve --config configs/solve.yml --set "reg.epsilon=[0.5,0.1,0.05]"

  # L2 dual from a Gaussian to an 8-atom ring; forward map, then its reverse
  otmap solve --config configs/demo_solve.yml
  otmap map-train --config configs/map_train.yml \\
      --dual-checkpoint outputs/demo_solve/checkpoints/potentials_eps_0.05.json
  otmap map-train --config configs/map_train.yml --reverse --set name=reverse_map \\
      --dual-checkpoint outputs/demo_solve/checkpoints/potentials_eps_0.05.json

  # Generate samples from a trained map
  otmap generate --config configs/generate.yml --map-checkpoint outputs/map/checkpoints/map.json

  # Domain adaptation with oracle grid selection
  otmap da --config configs/da.yml --set oracle_selection=true

  # Dual vs semi-dual timing, convergence study
  otmap benchmark --config configs/benchmark.yml --set "sizes=[1000,10000]"
  otmap converge --config configs/converge.yml

  # Fail the run when acceptance checks fail
  OTMAP_STRICT_CHECKS=true otmap converge --config configs/converge.yml
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otmap",
        description="Regularized optimal transport by stochastic dual ascent, and Monge maps",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=EPILOG,
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("solve", "Solve the regularized dual by SGD"),
        ("map-train", "Fit a Monge map from a dual checkpoint"),
        ("generate", "Push samples through a trained map"),
        ("da", "Domain adaptation grid"),
        ("benchmark", "Dual vs semi-dual timing"),
        ("converge", "Convergence study"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", "-c", required=True, help="YAML config file")
        cmd.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="Override a config value (dotted key, YAML value); repeatable",
        )
        cmd.add_argument("--output-dir", help="Write outputs here instead of OTMAP_OUTPUT_DIR/<name>")
        if name == "map-train":
            cmd.add_argument("--dual-checkpoint", required=True, help="Dual potentials checkpoint")
            cmd.add_argument("--reverse", action="store_true", help="Fit g: target → source")
        if name == "generate":
            cmd.add_argument("--map-checkpoint", required=True, help="Monge map checkpoint")
    return parser


def run_command(args: argparse.Namespace, settings: RuntimeSettings | None = None):
    settings = settings or RuntimeSettings()
    overrides = list(args.overrides)
    if getattr(args, "reverse", False):
        overrides.append("reverse=true")
    cfg = load_config(args.config, CONFIG_MODELS[args.command], overrides)

    if args.command == "solve":
        return cmd_solve(cfg, settings, args.output_dir)
    if args.command == "map-train":
        return cmd_map_train(cfg, args.dual_checkpoint, settings, args.output_dir)
    if args.command == "generate":
        return cmd_generate(cfg, args.map_checkpoint, settings, args.output_dir)
    if args.command == "da":
        return cmd_da(cfg, settings, args.output_dir)
    if args.command == "benchmark":
        return cmd_benchmark(cfg, settings, args.output_dir)
    return cmd_converge(cfg, settings, args.output_dir)


def main(argv: list[str] | None = None) -> int:
    """Main entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level="DEBUG" if args.verbose else os.getenv("LOG_LEVEL", "INFO"),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )

    try:
        run_command(args)
    except (ConfigError, MeasureFormatError, CheckpointError, FileNotFoundError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_USAGE
    except (NumericalError, AcceptanceCheckError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
