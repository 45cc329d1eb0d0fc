import functools
import logging
from configparser import NoOptionError, NoSectionError
from dataclasses import dataclass
from pathlib import Path
from textwrap import indent

import click

from haloscan import run_io
from haloscan.acquisition import ACQUISITION_MODES
from haloscan.chain import detuning_grid
from haloscan.config import MODES, RunConfig, load_config
from haloscan.errors import ConfigError, NumericalError
from haloscan.faxion import cached_envelope, envelope_key
from haloscan.logger import logger
from haloscan.reports import scan_rate_summary, sparams_frame, visibility_frame
from haloscan.search import aggregate_runs, execute_search

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


@dataclass
class CLIState:
    verbose: bool
    config: RunConfig


def exit_codes(command):
    """Turn the package's failures into logged errors and exit codes."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except FileNotFoundError as error:
            logger.error(f"File or directory not found: {error.filename or error}")
            raise click.exceptions.Exit(EXIT_CONFIG)
        except ConfigError as error:
            logger.error(f"Invalid configuration: {error}")
            raise click.exceptions.Exit(EXIT_CONFIG)
        except NumericalError as error:
            logger.error(f"Numerical failure: {error}")
            raise click.exceptions.Exit(EXIT_NUMERICAL)

    return wrapper


@click.group(name="haloscan")
@click.option(
    "--verbose", "-v", is_flag=True, default=False, help="Print additional information."
)
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False),
    default=None,
    help="INI file whose keys override the packaged defaults.",
)
@click.pass_context
def cli(ctx, verbose: bool, config_path: str):
    """Quantum-enhanced haloscope simulator."""
    if verbose:
        logger.setLevel(logging.INFO)
    else:
        logger.setLevel(logging.WARN)

    try:
        config = load_config(config_path)

    except FileNotFoundError as error:
        logger.error(f"Error while reading config. Config file {error} not found.")
        ctx.exit(EXIT_CONFIG)

    except NoSectionError as error:
        logger.error(f"Error while reading config. Section {error.section} not found.")
        ctx.exit(EXIT_CONFIG)

    except NoOptionError as error:
        logger.error(
            f"Error while reading config. Option {error.option} "
            f"not found in section {error.section}."
        )
        ctx.exit(EXIT_CONFIG)

    except ConfigError as error:
        logger.error(f"Error while reading config. {error}")
        ctx.exit(EXIT_CONFIG)

    ctx.obj = CLIState(verbose, config)


mode_option = click.option(
    "--mode",
    type=click.Choice(MODES, case_sensitive=False),
    default=None,
    help="Operating point. Defaults to [run] mode.",
)
cache_dir_option = click.option(
    "--cache-dir",
    type=click.Path(file_okay=False),
    default=None,
    help="Faxion envelope cache. Defaults to [faxion] cache_dir.",
)


def _mode(mode):
    return mode.upper() if mode else None


@cli.command(name="sparams")
@mode_option
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="CSV file.")
@click.option("--span", type=float, default=None, help="Grid half width, Hz.")
@click.option("--step", type=float, default=None, help="Grid spacing, Hz.")
@click.pass_context
@exit_codes
def sparams(ctx, mode, out, span, step):
    """Scattering parameters at the measured quadrature versus detuning."""
    config = ctx.obj.config.with_overrides(mode=_mode(mode))
    settings = config.visibility
    grid = detuning_grid(span or settings.span, step or settings.step)

    frame = sparams_frame(config.system, grid)
    run_io.write_frame(out, frame)
    logger.info("Done.")


@cli.command(name="visibility")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Directory.")
@click.pass_context
@exit_codes
def visibility(ctx, out):
    """Visibility curves of QL, GC and GCI, with their scan-rate report."""
    summary = scan_rate_summary(ctx.obj.config)
    out_dir = run_io.prepare_run_dir(out)

    reference = summary.curves["QL"].peak
    for mode, curve in summary.curves.items():
        run_io.write_frame(out_dir / f"visibility_{mode}.csv", visibility_frame(curve, reference))
    run_io.write_json(out_dir / "visibility_report.json", summary.to_dict())
    logger.info("Done.")


@cli.command(name="scan-rate")
@click.pass_context
@exit_codes
def scan_rate_command(ctx):
    """Print scan-rate integrals and enhancement ratios."""
    summary = scan_rate_summary(ctx.obj.config)
    click.echo(summary.to_frame().to_string(index=False))
    click.echo(f"GC/QL enhancement:  {summary.ratios['GC']:.3f}")
    click.echo(f"GCI/QL enhancement: {summary.ratios['GCI']:.3f}")
    click.echo(
        f"GCI/QL at cavity loss {summary.reduced_cavity_loss:g} Hz: "
        f"{summary.reduced_loss_ratio:.3f}"
    )


@cli.command(name="search")
@mode_option
@click.option("--trials", type=click.IntRange(min=1), default=None, help="Trial count.")
@click.option("--seed", type=int, default=None, help="Master seed.")
@click.option(
    "--acq-mode",
    type=click.Choice(ACQUISITION_MODES),
    default=None,
    help="Spectrum synthesis: sampled radiometer statistics or full time series.",
)
@click.option("--threads", type=int, default=None, help="Parallel trials (-1: all cores).")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Run directory.")
@cache_dir_option
@click.option("--keep-raw", is_flag=True, default=False, help="Store every raw spectrum.")
@click.option("--force", is_flag=True, default=False, help="Regenerate the faxion envelope.")
@click.pass_context
@exit_codes
def search(ctx, mode, trials, seed, acq_mode, threads, out, cache_dir, keep_raw, force):
    """Inject, acquire and analyze faxion searches."""
    config = ctx.obj.config.with_overrides(
        mode=_mode(mode),
        trials=trials,
        master_seed=seed,
        acquisition_mode=acq_mode,
        threads=threads,
    )
    report = execute_search(
        config, out, cache_dir or config.cache_dir, force=force, keep_raw=keep_raw
    )
    logger.info("Report:\n" + indent(str(report), "  "))
    logger.info("Done.")


@cli.command(name="report")
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Directory.")
@click.option("--bins", type=click.IntRange(min=1), default=20, help="Histogram bins.")
@click.pass_context
@exit_codes
def report(ctx, run_dirs, out, bins):
    """Histogram trial excesses across runs and extract the enhancement."""
    aggregate_runs(run_dirs, out, bins)
    logger.info("Done.")


@cli.command(name="envelope-cache")
@cache_dir_option
@click.option("--force", is_flag=True, default=False, help="Regenerate even if cached.")
@click.pass_context
@exit_codes
def envelope_cache(ctx, cache_dir, force):
    """Build the faxion spectral envelope for the configured resolution."""
    config = ctx.obj.config
    directory = Path(cache_dir or config.cache_dir).expanduser()
    resolution = config.acquisition.resolution

    envelope = cached_envelope(config.faxion, resolution, directory, force)
    path = directory / f"envelope-{envelope_key(config.faxion, resolution)}.csv"
    click.echo(
        f"{path}: {len(envelope.bins)} bins, "
        f"{envelope.offsets[0]:g} to {envelope.offsets[-1]:g} Hz"
    )
