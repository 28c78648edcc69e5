"""Command line: ``drlora run``, ``drlora compare`` and ``drlora oracle``.

Exit codes: 0 success, 1 invalid input (bad config, bad arguments), 2 runtime failure.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .config import ConfigError, load_config
from .envs import KnapsackInstance, dp_knapsack
from .harness import ReportError, compare_report, run_experiment, write_logs
from .online import satisficing_lp_oracle
from .risk import cvar_right, make_empirical

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class RuntimeFailure(click.ClickException):
    exit_code = EXIT_RUNTIME


def _floats(text: str, name: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}", param_hint=name) from None
    if not values:
        raise click.BadParameter("at least one value required", param_hint=name)
    return values


def _number(x: float) -> str:
    return str(int(x)) if float(x).is_integer() and isinstance(x, int) else repr(float(x))


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose: bool):
    """Distributional RL with online risk adaptation: experiments and oracles."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
              help="YAML run configuration.")
@click.option("--seeds", default=None, help="Comma-separated seeds, overriding the config.")
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False),
              help="Output directory (default: $DRLORA_OUT/<env>-<agent> or runs/...).")
@click.option("--workers", default=None, type=click.IntRange(min=1), help="Parallel seed workers.")
def run(config_path, seeds, out_dir, workers):
    """Train and evaluate one agent per seed; write CSV logs and summary.json."""
    try:
        config = load_config(config_path)
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from None
    if seeds is not None:
        try:
            config.seeds = [int(s) for s in seeds.split(",") if s.strip()]
        except ValueError:
            raise click.BadParameter(f"expected comma-separated integers, got {seeds!r}",
                                     param_hint="--seeds") from None
        if not config.seeds:
            raise click.BadParameter("at least one seed required", param_hint="--seeds")
    results = run_experiment(config, workers)
    try:
        written = write_logs(config, results, out_dir)
    except OSError as exc:
        raise RuntimeFailure(str(exc)) from None
    failed = {s: r.failure for s, r in results.items() if r.failure}
    click.echo(f"wrote {len(written)} files to {written[-1].parent}")
    if failed:
        for s, msg in sorted(failed.items()):
            click.echo(f"seed {s} failed: {msg}", err=True)
        raise RuntimeFailure(f"{len(failed)} of {len(results)} seeds failed")


@cli.command()
@click.argument("run_dirs", nargs=-1, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False),
              help="Where to write report.json, report.md and curves_long.csv (default: <first run dir>/compare).")
def compare(run_dirs, out_dir):
    """Tabulate and rank two or more run directories."""
    if len(run_dirs) < 2:
        raise click.UsageError("compare needs at least two run directories")
    try:
        report = compare_report(list(run_dirs), out_dir or Path(run_dirs[0]) / "compare")
    except ReportError as exc:
        raise click.UsageError(str(exc)) from None
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise RuntimeFailure(f"reading runs: {exc}") from None
    click.echo(" > ".join(report["ordering"]))


@cli.group()
def oracle():
    """Exact reference computations, one value per line."""


@oracle.command("cvar")
@click.option("--atoms", required=True, help="Comma-separated outcomes.")
@click.option("--alpha", required=True, type=click.FloatRange(0.0, 1.0, min_open=True))
def oracle_cvar(atoms, alpha):
    """Right-tail CVaR of the empirical distribution."""
    click.echo(repr(cvar_right(make_empirical(_floats(atoms, "--atoms")), alpha)))


@oracle.command("knapsack-dp")
@click.option("--items", required=True, help="Comma-separated weight:value pairs.")
@click.option("--cap", required=True, type=click.IntRange(min=0))
def oracle_knapsack(items, cap):
    """Optimal 0/1 knapsack value."""
    parsed = []
    for tok in items.split(","):
        try:
            w, v = tok.split(":")
            w_num = int(w)
            v_num = int(v) if v.strip().lstrip("-").isdigit() else float(v)
        except ValueError:
            raise click.BadParameter(f"expected weight:value, got {tok!r}", param_hint="--items") from None
        parsed.append((w_num, v_num))
    try:
        inst = KnapsackInstance(tuple(parsed), cap)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--items") from None
    click.echo(_number(dp_knapsack(inst)))


@oracle.command("satisficing")
@click.option("--atoms", required=True, help="Comma-separated outcomes.")
@click.option("--tau", required=True, type=float)
def oracle_satisficing(atoms, tau):
    """Satisficing level: minimum over b >= 0 of mean((b (q - tau) + 1)_+)."""
    _, value = satisficing_lp_oracle(_floats(atoms, "--atoms"), tau)
    click.echo(repr(float(value)))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="drlora", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_RUNTIME
    except RuntimeFailure as exc:
        exc.show()
        return EXIT_RUNTIME
    except click.ClickException as exc:  # usage and parameter errors
        exc.show()
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
