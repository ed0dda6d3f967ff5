"""Command-line entry points.

Exit codes: 0 pass, 2 usage error, 3 numerical failure, 4 threshold failure.
The PARAKON_OUT environment variable overrides the output directory.
"""

import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from .errors import NumericalError, ParakonError, UsageError
from .experiments import (  # noqa: F401  (re-exported module surface)
    ExperimentConfig,
    build_config,
    list_experiments,
    load_config,
    run_experiment,
    validate_config,
)

EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_THRESHOLD = 4


@click.group()
def main():
    """Concavity and Minkowski-convolution checks for parabolic problems."""


@main.command("list")
def list_cmd():
    """List the experiment registry."""
    for name, doc in list_experiments():
        click.echo(f"{name:16s} {doc}")


@main.command()
@click.argument("path", type=click.Path(exists=False))
@click.option("--kind", default=None, help="Experiment kind if absent from the file.")
def validate(path, kind):
    """Parse and range-check a config file without running it."""
    if not Path(path).exists():
        click.echo(f"error: no such file {path}", err=True)
        sys.exit(EXIT_USAGE)
    diagnostics = validate_config(path, kind=kind)
    if diagnostics:
        for line in diagnostics:
            click.echo(f"error: {line}", err=True)
        sys.exit(EXIT_USAGE)
    click.echo("ok")


@main.command()
@click.argument("kinds", nargs=-1, required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="TOML config file (see config_schema.toml).")
@click.option("--out", default=None, help="Output directory (PARAKON_OUT overrides).")
@click.option("--seed", type=int, default=None, help="Random seed.")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Run independent experiments concurrently.")
def run(kinds, config_path, out, seed, jobs):
    """Run one or more named experiments."""
    data = None
    if config_path is not None:
        diagnostics = []
        for kind in kinds:
            diagnostics += validate_config(config_path, kind=kind)
        if diagnostics:
            for line in diagnostics:
                click.echo(f"error: {line}", err=True)
            sys.exit(EXIT_USAGE)
        data = load_config(config_path)
    try:
        configs = [build_config(kind, data, out=out, seed=seed) for kind in kinds]
    except (UsageError, ParakonError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)

    def execute(cfg):
        return run_experiment(cfg)

    results = []
    try:
        if jobs > 1 and len(configs) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(execute, configs))
        else:
            results = [execute(cfg) for cfg in configs]
    except UsageError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    except (NumericalError, FloatingPointError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)

    failed = False
    for res in results:
        status = "pass" if res.ok else "FAIL"
        click.echo(f"[{status}] {res.kind} -> {res.out_dir}")
        for key in sorted(res.summary):
            click.echo(f"    {key}={res.summary[key]}")
        failed |= not res.ok
    sys.exit(EXIT_THRESHOLD if failed else 0)


if __name__ == "__main__":
    main()
