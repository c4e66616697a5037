"""
`python manage.py <command>`: gen, train, eval, compare, oracle-check, test.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
import logging
import sys
import unittest
from pathlib import Path
from typing import Optional, Sequence

import click

from simulator.exceptions import ConfigError, SimulatorError
from simulator.settings import BASE_DIR, configure_logging, load_settings

from . import pipeline

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

TEST_APPS = ("simulator", "topology", "problems", "prox", "engine", "oracle", "policy", "rl", "baselines", "cli")


def _settings(ctx: click.Context):
    opts = ctx.obj
    settings = load_settings(opts["config"])
    if opts["seed"] is not None:
        settings = settings.model_copy(update={"seed": opts["seed"]})
    if opts["out"] is not None:
        settings = settings.model_copy(update={"io": settings.io.model_copy(update={"out_dir": opts["out"]})})
    if opts["workers"] is not None:
        settings = settings.model_copy(update={"io": settings.io.model_copy(update={"workers": opts["workers"]})})
    return settings


@click.group()
@click.option("--config", "config", type=click.Path(path_type=Path), default=None, help="YAML config file.")
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Global seed (overrides the config).")
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Artifact directory.")
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Worker processes.")
@click.option("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR.")
@click.pass_context
def cli(ctx, config, seed, out, workers, log_level):
    configure_logging(log_level)
    ctx.obj = {"config": config, "seed": seed, "out": out, "workers": workers}


@cli.command()
@click.pass_context
def gen(ctx):
    """Generate the graph and the labeled instance splits."""
    manifest = pipeline.generate(_settings(ctx))
    click.echo(f"manifest {manifest} sha256 {pipeline.file_digest(manifest)}")


@cli.command()
@click.pass_context
def train(ctx):
    """Pretrain and train the policy; writes the best checkpoint and learning curves."""
    click.echo(f"checkpoint {pipeline.run_training(_settings(ctx))}")


@cli.command(name="eval")
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None)
@click.option("--rounds", type=click.IntRange(min=1), default=None, help="Rounds per rollout (training horizon if omitted).")
@click.pass_context
def evaluate(ctx, checkpoint, rounds):
    """Deterministic evaluation on the test split."""
    click.echo(f"metrics {pipeline.run_evaluation(_settings(ctx), checkpoint, rounds)}")


@cli.command()
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None)
@click.pass_context
def compare(ctx, checkpoint):
    """Learned policy against the fixed policies and PG-EXTRA on the test split."""
    click.echo(f"comparison {pipeline.run_comparison(_settings(ctx), checkpoint)}")


@cli.command(name="oracle-check")
@click.pass_context
def oracle_check(ctx):
    """Re-certify every stored solution and cross-check the two centralized solvers."""
    path, failed = pipeline.run_oracle_check(_settings(ctx))
    click.echo(f"report {path}")
    if failed:
        raise SimulatorError(f"{len(failed)} instance(s) failed the oracle check: {', '.join(failed)}")


@cli.command()
@click.argument("apps", nargs=-1)
@click.option("-v", "--verbosity", type=int, default=1)
@click.pass_context
def test(ctx, apps, verbosity):
    """Run the unit tests (all apps, or the ones named)."""
    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    for app in apps or TEST_APPS:
        suite.addTests(loader.discover(str(BASE_DIR / app), pattern="tests.py", top_level_dir=str(BASE_DIR)))
    result = unittest.TextTestRunner(verbosity=verbosity).run(suite)
    ctx.exit(EXIT_OK if result.wasSuccessful() else EXIT_RUNTIME)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        rv = cli.main(args=list(argv) if argv is not None else None, prog_name="manage.py", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("Aborted.", err=True)
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        return EXIT_USAGE
    except SimulatorError as e:
        logger.debug("Command failed", exc_info=True)
        click.echo(f"error: {e}", err=True)
        return EXIT_RUNTIME
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
