"""
sparse-eta - travel-time estimation and route recovery from sparse GPS trajectories

Usage:
    # Simulate a grid city and write sparse corpora at every keep ratio
    sparse-eta --config experiment.toml gen

    # Train one model per corpus with EM, or continue a saved run
    sparse-eta --config experiment.toml train
    sparse-eta --config experiment.toml train --resume

    # Metrics on the held-out split, and road-condition maps
    sparse-eta --config experiment.toml eval
    sparse-eta --config experiment.toml export-conditions --time-step 12 --time-step 34

    # Routes and travel times for new trajectories
    sparse-eta --out runs/grid infer new_trips.jsonl

The log level comes from the SPARSE_ETA_LOG environment variable
(default WARNING).
"""

import logging
import sys
from typing import Any, Optional, Tuple

import click
from rich.console import Console

from sparse_eta import __version__
from sparse_eta.atoms.config import ExperimentConfig, load_config
from sparse_eta.atoms.error_utils import SparseEtaError
from sparse_eta.atoms.log_utils import configure_logging
from sparse_eta.organisms.experiment_runner import CONDITION_TIME_STEPS, ExperimentRunner
from sparse_eta.templates.banner import display_banner
from sparse_eta.templates.errors import display_sparse_eta_error

logger = logging.getLogger(__name__)


def _run(ctx: click.Context, command: str, **kwargs: Any) -> None:
    config: ExperimentConfig = ctx.obj["config"]
    console: Console = ctx.obj["console"]
    display_banner(command, config.seed, config.out, console=console, version=__version__)
    runner = ExperimentRunner(config, console=console)
    try:
        success, _ = runner.run(command, **kwargs)
    except KeyboardInterrupt:
        console.print("\n[yellow]Interrupted.[/yellow]")
        ctx.exit(130)
    ctx.exit(0 if success else 1)


@click.group()
@click.version_option(version=__version__)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="TOML experiment configuration")
@click.option("--seed", type=int, help="Master seed (overrides the config file)")
@click.option("--threads", type=click.IntRange(min=1), help="Worker threads (overrides the config file)")
@click.option("--out", type=click.Path(file_okay=False), help="Output directory (overrides the config file)")
@click.pass_context
def main(
    ctx: click.Context,
    config_path: Optional[str],
    seed: Optional[int],
    threads: Optional[int],
    out: Optional[str],
) -> None:
    """Learn road-segment travel-time distributions from sparse GPS trajectories."""
    console = Console()
    configure_logging()
    try:
        config = load_config(config_path).with_overrides(seed=seed, threads=threads, out=out)
    except SparseEtaError as e:
        display_sparse_eta_error(e, console=console)
        ctx.exit(2)
    ctx.obj = {"config": config, "console": console}


@main.command()
@click.pass_context
def gen(ctx: click.Context) -> None:
    """Simulate a network, ground truth and sparse corpora."""
    _run(ctx, "gen")


@main.command()
@click.option("--resume", is_flag=True, help="Continue from the saved EM state of each corpus")
@click.pass_context
def train(ctx: click.Context, resume: bool) -> None:
    """Train one model per corpus with EM."""
    _run(ctx, "train", resume=resume)


@main.command(name="eval")
@click.pass_context
def eval_command(ctx: click.Context) -> None:
    """Evaluate trained models on the held-out split."""
    _run(ctx, "eval")


@main.command()
@click.argument("input_path", type=click.Path(dir_okay=False))
@click.option("--corpus", "label", help="Which trained corpus to use, e.g. r0p125 (default: the first)")
@click.pass_context
def infer(ctx: click.Context, input_path: str, label: Optional[str]) -> None:
    """Estimate routes and travel times for trajectories in a JSON-lines file."""
    _run(ctx, "infer", input_path=input_path, label=label)


@main.command(name="export-conditions")
@click.option(
    "--time-step", "time_steps", type=click.IntRange(0, 47), multiple=True,
    help="Half-hour slot of the day, repeatable (default: 12 and 34)",
)
@click.option("--corpus", "label", help="Which trained corpus to use (default: the first)")
@click.pass_context
def export_conditions(ctx: click.Context, time_steps: Tuple[int, ...], label: Optional[str]) -> None:
    """Write GeoJSON road-condition maps."""
    _run(ctx, "export-conditions", time_steps=time_steps or CONDITION_TIME_STEPS, label=label)


if __name__ == "__main__":
    sys.exit(main())
