from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from haloscan import run_io
from haloscan.acquisition import (
    SearchTruth,
    SpectrumGrid,
    SpectrumModel,
    run_search,
    spectrum_model,
)
from haloscan.chain import VisibilityCurve, detuning_grid, visibility_curve
from haloscan.config import ENHANCED_MODES, RunConfig
from haloscan.errors import NumericalError
from haloscan.faxion import SpectralEnvelope, cached_envelope, calibrate_injection
from haloscan.logger import logger
from haloscan.network import port_psd
from haloscan.pipeline import (
    SearchOutcome,
    TrialAnalysis,
    aggregate_trials,
    analyze_search,
    fit_histogram,
    histogram_table,
)


@dataclass(frozen=True)
class SearchSetup:
    config: RunConfig
    model: SpectrumModel
    visibility: VisibilityCurve
    envelope: SpectralEnvelope


@dataclass(frozen=True)
class TrialResult:
    outcome: SearchOutcome
    truth: SearchTruth
    analysis: Optional[TrialAnalysis] = None


def prepare_search(
    config: RunConfig,
    cache_dir: Optional[Union[str, Path]] = None,
    force: bool = False,
) -> SearchSetup:
    """
    Build the per-configuration pieces every trial shares.

    The faxion is calibrated against the quantum-limited on-resonance signal
    gain whatever the mode, so all modes see the same injected power.
    """
    resolution = config.acquisition.resolution
    envelope = cached_envelope(config.faxion, resolution, cache_dir, force)
    reference_gain = port_psd(config.system_for("QL"), 0.0).signal_gain
    injection = calibrate_injection(config.faxion, envelope, reference_gain)

    grid = SpectrumGrid.covering(
        config.spectrum_span, resolution, config.base_system.cavity.frequency / (2 * np.pi)
    )
    if config.visibility.span < config.spectrum_span:
        logger.warning(
            "Visibility grid is narrower than the spectrum; outer bins get zero weight."
        )

    system = config.system
    visibility = visibility_curve(
        system,
        config.chain,
        detuning_grid(config.visibility.span, config.visibility.step),
    )
    model = spectrum_model(system, config.chain, config.faxion, envelope, grid, injection)
    logger.info(
        f"{config.mode}: injected faxion power {injection:.4g} (vacuum units x bins), "
        f"{grid.size} bins at {resolution:g} Hz."
    )
    return SearchSetup(config, model, visibility, envelope)


def run_trial(
    setup: SearchSetup,
    trial_index: int,
    keep_analysis: bool = False,
    raw_dir: Optional[Path] = None,
) -> TrialResult:
    config = setup.config
    run, truth = run_search(
        setup.model,
        config.plan,
        config.acquisition,
        config.master_seed,
        trial_index,
        config.acquisition_mode,
    )
    if raw_dir is not None:
        run_io.write_raw_spectra(raw_dir, run)

    analysis = analyze_search(
        run,
        config.acquisition,
        config.plan,
        config.analysis,
        setup.visibility,
        setup.envelope,
        trial_index,
        truth,
        config.faxion.modulation_depth,
    )
    return TrialResult(analysis.outcome, truth, analysis if keep_analysis else None)


def run_trials(setup: SearchSetup, raw_dir: Optional[Path] = None) -> list[TrialResult]:
    """Trials in index order; the first keeps its spectra for output."""
    config = setup.config
    return Parallel(n_jobs=config.threads)(
        delayed(run_trial)(setup, index, index == 0, raw_dir)
        for index in range(config.trials)
    )


def histogram_summary(values: Sequence[float]) -> dict:
    values = _finite(values)
    summary = dict.fromkeys(["mean", "std", "mean_error", "std_error"])
    summary["trials"] = len(values)
    try:
        fit = fit_histogram(values)
    except NumericalError as error:
        logger.warning(f"Histogram not fitted: {error}")
        return summary

    summary.update(
        mean=fit.mean, std=fit.std, mean_error=fit.mean_error, std_error=fit.std_error
    )
    return summary


def execute_search(
    config: RunConfig,
    out_dir: Union[str, Path],
    cache_dir: Optional[Union[str, Path]] = None,
    force: bool = False,
    keep_raw: bool = False,
) -> dict:
    """Run all trials of one mode and write the run directory."""
    run_dir = run_io.prepare_run_dir(out_dir)
    setup = prepare_search(config, cache_dir, force)

    manifest = config.to_manifest()
    manifest["injection"] = setup.model.injection
    run_io.write_manifest(run_dir, manifest)

    logger.info(f"Running {config.trials} trials on {config.threads} worker(s).")
    results = run_trials(setup, run_dir if keep_raw else None)

    run_io.write_truth(run_dir, [result.truth for result in results])
    outcomes = [result.outcome for result in results]
    run_io.write_outcomes(run_dir, outcomes, config.mode)
    first = results[0].analysis
    run_io.write_spectra(run_dir, first.combined, first.grand)

    report = {
        "mode": config.mode,
        "trials": config.trials,
        "truth_hit_fraction": float(np.mean([outcome.truth_hit for outcome in outcomes])),
        "faxion_excess": histogram_summary([outcome.faxion_excess for outcome in outcomes]),
        "best_excess": histogram_summary([outcome.best_excess for outcome in outcomes]),
    }
    run_io.write_json(run_dir / run_io.REPORT_FILE, report)
    return report


def enhancement_key(mode: str) -> str:
    return f"mu_{mode}_over_mu_QL_squared"


def aggregate_runs(
    run_dirs: Sequence[Union[str, Path]], out_dir: Union[str, Path], bins: int = 20
) -> dict:
    """Merge the outcomes of several runs by mode into histograms and ratios."""
    records = [run_io.read_run(path) for path in run_dirs]
    by_mode: dict[str, list[float]] = {}
    for record in records:
        by_mode.setdefault(record.mode, []).extend(
            record.outcomes["faxion_excess"].astype(float).tolist()
        )

    report = {"runs": [str(record.path) for record in records], "modes": {}}
    tables = []
    for mode in sorted(by_mode):
        report["modes"][mode] = histogram_summary(by_mode[mode])
        table = histogram_table(by_mode[mode], bins)
        table.insert(0, "mode", mode)
        tables.append(table)

    for mode in ENHANCED_MODES:
        if mode not in by_mode or "QL" not in by_mode:
            continue
        try:
            aggregate = aggregate_trials(_finite(by_mode["QL"]), _finite(by_mode[mode]))
        except NumericalError as error:
            logger.warning(f"No {mode}/QL enhancement: {error}")
            continue
        report[enhancement_key(mode)] = {
            "value": aggregate.enhancement,
            "error": aggregate.enhancement_error,
        }

    out = run_io.prepare_run_dir(out_dir)
    run_io.write_json(out / run_io.REPORT_FILE, report)
    histogram = pd.concat(tables, ignore_index=True)
    run_io.write_frame(out / run_io.HISTOGRAM_FILE, histogram)
    return report


def _finite(values: Sequence[float]) -> list[float]:
    return [value for value in values if np.isfinite(value)]
