"""Command-line entry point: ``teai ingest|score|index|analyze``.

Exit codes: 0 success, 1 configuration/validation error, 2 runtime error,
3 completed with recorded per-item failures (excluded tasks, failed
regression specs, unscorable occupations).
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import __version__, pipeline
from .config import load_config
from .errors import ConfigError, DataValidationError, FormatError, TeaiError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3


def _run(stage, config_path: Path, mock: bool, seed: int, allow_partial: bool) -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(config_path, mock=mock, seed=seed, allow_partial_ensemble=allow_partial)
        outcome = stage(config)
    except (ConfigError, FormatError, DataValidationError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    except TeaiError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    for line in outcome.summary:
        click.echo(line)
    sys.exit(EXIT_PARTIAL if outcome.partial else EXIT_OK)


def _stage_options(fn):
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(exists=True, dir_okay=False, path_type=Path),
                      help="Run configuration file (YAML).")(fn)
    fn = click.option("--mock", is_flag=True, default=False,
                      help="Use the seeded deterministic transport instead of live endpoints.")(fn)
    fn = click.option("--seed", type=int, default=0, show_default=True,
                      help="Seed for the mock transport.")(fn)
    fn = click.option("--allow-partial-ensemble", is_flag=True, default=False,
                      help="Permit fewer than 3 judge models.")(fn)
    return fn


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Task-exposure-to-AI scoring pipeline."""


@main.command()
@_stage_options
def ingest(config_path: Path, mock: bool, seed: int, allow_partial_ensemble: bool) -> None:
    """Parse O*NET and employment tables into canonical CSVs."""
    _run(pipeline.cmd_ingest, config_path, mock, seed, allow_partial_ensemble)


@main.command()
@_stage_options
def score(config_path: Path, mock: bool, seed: int, allow_partial_ensemble: bool) -> None:
    """Judge every task with the model ensemble (resumable via the cache)."""
    _run(pipeline.cmd_score, config_path, mock, seed, allow_partial_ensemble)


@main.command()
@_stage_options
def index(config_path: Path, mock: bool, seed: int, allow_partial_ensemble: bool) -> None:
    """Aggregate task scores into occupation scores and skill relevance."""
    _run(pipeline.cmd_index, config_path, mock, seed, allow_partial_ensemble)


@main.command()
@_stage_options
def analyze(config_path: Path, mock: bool, seed: int, allow_partial_ensemble: bool) -> None:
    """Tertiles, correlations, and regressions over the scored corpus."""
    _run(pipeline.cmd_analyze, config_path, mock, seed, allow_partial_ensemble)


if __name__ == "__main__":
    main()
