from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import pandas as pd
from scipy import signal, stats

from haloscan.acquisition import AcquisitionParams, RawSpectrum, SearchTruth, TuningPlan
from haloscan.chain import VisibilityCurve
from haloscan.errors import ConfigError, NumericalError
from haloscan.faxion import SpectralEnvelope
from haloscan.logger import logger


@dataclass(frozen=True)
class AnalysisParams:
    sg_window: int = 301
    sg_order: int = 4
    mask_fraction: float = 0.1

    def __post_init__(self):
        _check_sg(self.sg_window, self.sg_order)
        if not 0 <= self.mask_fraction < 1:
            raise ConfigError(f"Mask fraction must be in [0, 1), got {self.mask_fraction}.")


def _check_sg(window: int, order: int) -> None:
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"Savitzky-Golay window must be a positive odd integer, got {window}.")
    if not 0 <= order < window:
        raise ConfigError(f"Savitzky-Golay order must be in [0, window), got {order}.")


@dataclass(frozen=True)
class ProcessedSpectrum:
    bin_offsets: np.ndarray
    excess: np.ndarray
    sigma: float
    step_index: int


@dataclass(frozen=True)
class CombinedSpectrum:
    """
    Visibility-weighted sum of the shifted spectra.

    Offsets are relative to the cavity at the first step, i.e. in the frame
    where the faxion sits still. Masked bins hold NaN.
    """

    resolution: float
    bin_offsets: np.ndarray
    excess: np.ndarray
    sigma: np.ndarray
    mask: np.ndarray

    @property
    def offsets(self) -> np.ndarray:
        return self.bin_offsets * self.resolution

    @property
    def significance(self) -> np.ndarray:
        return self.excess / self.sigma

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"offset_Hz": self.offsets, "excess": self.excess, "sigma": self.sigma}
        )


@dataclass(frozen=True)
class GrandSpectrum:
    resolution: float
    bin_offsets: np.ndarray
    excess: np.ndarray
    statistic: np.ndarray
    sigma_g: float
    mask: np.ndarray

    @property
    def offsets(self) -> np.ndarray:
        return self.bin_offsets * self.resolution

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"offset_Hz": self.offsets, "excess_sigma_units": self.excess})


@dataclass(frozen=True)
class SearchOutcome:
    trial_index: int
    best_bin_offset: float
    best_excess: float
    faxion_excess: float
    truth_hit: bool


@dataclass(frozen=True)
class ExcessHistogram:
    values: np.ndarray
    mean: float
    std: float
    mean_error: float
    std_error: float


def histogram_table(values: Sequence[float], bins: Union[int, np.ndarray] = 20) -> pd.DataFrame:
    """Histogram counts, also normalized to the peak count."""
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    counts, edges = np.histogram(values, bins=bins)
    peak = counts.max() if counts.size else 0
    return pd.DataFrame(
        {
            "bin_low": edges[:-1],
            "bin_high": edges[1:],
            "count": counts,
            "normalized_count": counts / peak if peak else counts.astype(float),
        }
    )


@dataclass(frozen=True)
class TrialAggregate:
    reference: ExcessHistogram
    enhanced: ExcessHistogram
    enhancement: float
    enhancement_error: float


def average_baseline(spectra: Iterable[RawSpectrum]) -> np.ndarray:
    """Per-bin mean of the raw spectra, accumulated one spectrum at a time."""
    total = None
    grid = None
    count = 0
    for spectrum in spectra:
        if total is None:
            grid = spectrum.grid
            total = np.zeros(spectrum.psd.shape)
        elif spectrum.grid != grid or spectrum.psd.shape != total.shape:
            raise ConfigError(
                f"Spectrum of step {spectrum.step_index} is not on the common grid."
            )
        total += spectrum.psd
        count += 1

    if count < 2:
        raise ConfigError(f"A baseline needs at least two spectra, got {count}.")
    return total / count


def sg_filter(baseline: np.ndarray, window: int, order: int) -> np.ndarray:
    _check_sg(window, order)
    if window > len(baseline):
        raise ConfigError(
            f"Savitzky-Golay window {window} is longer than the baseline ({len(baseline)})."
        )
    return signal.savgol_filter(baseline, window, order, mode="interp")


def normalize(
    raw: RawSpectrum, smoothed_baseline: np.ndarray, params: AcquisitionParams
) -> ProcessedSpectrum:
    if raw.psd.shape != smoothed_baseline.shape:
        raise ConfigError("Raw spectrum and baseline have different lengths.")
    if np.any(smoothed_baseline <= 0):
        raise NumericalError("Smoothed baseline is not positive everywhere.")

    return ProcessedSpectrum(
        raw.grid.bin_offsets,
        raw.psd / smoothed_baseline - 1,
        params.radiometer_sigma,
        raw.step_index,
    )


def shift_and_combine(
    processed: Iterable[ProcessedSpectrum],
    plan: TuningPlan,
    visibility: VisibilityCurve,
    resolution: float,
    mask_fraction: float = 0.1,
) -> CombinedSpectrum:
    """
    Shift each spectrum back by the distance the faxion has tuned and combine.

    Each bin is rescaled by 1/a, with a the visibility normalized to its peak,
    and added with inverse-variance weight a^2/sigma^2, in step order. Bins
    whose total weight is below mask_fraction of the maximum are masked.
    """
    step_bins = plan.step_bins(resolution)
    shift_span = (plan.step_count - 1) * step_bins

    numerator = denominator = None
    first_offsets = None
    reference = visibility.peak
    if reference <= 0:
        raise NumericalError("Visibility is zero everywhere.")

    last_step = -1
    for spectrum in processed:
        if spectrum.step_index <= last_step:
            raise ConfigError("Spectra must arrive in increasing step order.")
        last_step = spectrum.step_index
        if numerator is None:
            first_offsets = spectrum.bin_offsets
            size = len(first_offsets) + shift_span
            numerator = np.zeros(size)
            denominator = np.zeros(size)
            detunings = 2 * np.pi * first_offsets * resolution
            weight = visibility.at(detunings) / reference
        elif len(spectrum.bin_offsets) != len(first_offsets):
            raise ConfigError(f"Step {spectrum.step_index} has a different bin count.")
        if not 0 <= spectrum.step_index < plan.step_count:
            raise ConfigError(f"Step {spectrum.step_index} is outside the tuning plan.")

        start = shift_span - spectrum.step_index * step_bins
        stop = start + len(first_offsets)
        variance = spectrum.sigma**2
        numerator[start:stop] += spectrum.excess * weight / variance
        denominator[start:stop] += weight**2 / variance

    if numerator is None:
        raise ConfigError("No spectra to combine.")

    mask = (denominator <= 0) | (denominator < mask_fraction * denominator.max())
    with np.errstate(divide="ignore", invalid="ignore"):
        excess = np.where(mask, np.nan, numerator / denominator)
        sigma = np.where(mask, np.nan, 1 / np.sqrt(denominator))

    offsets = np.arange(size) + first_offsets[0] - shift_span
    return CombinedSpectrum(resolution, offsets, excess, sigma, mask)


def grand_spectrum(
    combined: CombinedSpectrum, envelope: SpectralEnvelope, mask_fraction: float = 0.1
) -> GrandSpectrum:
    """
    Matched filter of the combined spectrum with the binned envelope L:

        g_k = sum_j L_j e_{k+j} / s_{k+j}^2 / sqrt(sum_j L_j^2 / s_{k+j}^2)

    reported in units of its empirical standard deviation, taken as the
    normal-scaled median absolute deviation over unmasked bins.
    """
    if not np.isclose(envelope.resolution, combined.resolution):
        raise ConfigError("Envelope and combined spectrum resolutions differ.")
    kernel = envelope.weights
    length = len(combined.excess)
    if len(kernel) > length:
        raise ConfigError(
            f"Envelope spans {len(kernel)} bins, wider than the spectrum ({length})."
        )

    valid = ~combined.mask
    inverse_variance = np.zeros(length)
    inverse_variance[valid] = 1 / combined.sigma[valid] ** 2
    weighted = np.zeros(length)
    weighted[valid] = combined.excess[valid] * inverse_variance[valid]

    numerator = _correlate(weighted, kernel, envelope.first_bin, envelope.last_bin)
    denominator = _correlate(inverse_variance, kernel**2, envelope.first_bin, envelope.last_bin)

    mask = (denominator <= 0) | (denominator < mask_fraction * denominator.max())
    with np.errstate(divide="ignore", invalid="ignore"):
        statistic = np.where(mask, np.nan, numerator / np.sqrt(denominator))

    sigma_g = float(
        stats.median_abs_deviation(statistic, scale="normal", nan_policy="omit")
    )
    if not np.isfinite(sigma_g) or sigma_g <= 0:
        raise NumericalError("Grand spectrum has no spread to normalize by.")

    return GrandSpectrum(
        combined.resolution, combined.bin_offsets, statistic / sigma_g, statistic, sigma_g, mask
    )


def _correlate(values: np.ndarray, kernel: np.ndarray, first: int, last: int) -> np.ndarray:
    """out[k] = sum_b kernel[b - first] * values[k + b] for b in [first, last]."""
    full = signal.fftconvolve(values, kernel[::-1], mode="full")
    pad_left = max(0, -last)
    pad_right = max(0, first)
    padded = np.concatenate((np.zeros(pad_left), full, np.zeros(pad_right)))
    start = last + pad_left
    return padded[start : start + len(values)]


def find_candidate(
    grand: GrandSpectrum,
    trial_index: int = 0,
    truth: Optional[SearchTruth] = None,
    match_width: float = 0.0,
) -> SearchOutcome:
    """
    Most significant unmasked bin; ties go to the lowest offset.

    With a truth record, also report the grand-spectrum value at the true
    faxion bin and whether the candidate lies within match_width of it.
    """
    if len(grand.excess) == 0:
        raise ConfigError("Grand spectrum is empty.")
    if np.all(np.isnan(grand.excess)):
        raise NumericalError("Every grand-spectrum bin is masked.")

    best = int(np.nanargmax(grand.excess))
    best_offset = float(grand.offsets[best])
    faxion_excess = float("nan")
    truth_hit = False

    if truth is not None:
        true_bin = int(round(truth.initial_offset / grand.resolution))
        position = true_bin - int(grand.bin_offsets[0])
        if 0 <= position < len(grand.excess):
            faxion_excess = float(grand.excess[position])
        truth_hit = abs(best_offset - truth.initial_offset) <= match_width

    return SearchOutcome(
        trial_index, best_offset, float(grand.excess[best]), faxion_excess, truth_hit
    )


def fit_histogram(values: Sequence[float]) -> ExcessHistogram:
    """Maximum-likelihood Gaussian fit with its standard errors."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise NumericalError(f"A histogram fit needs at least two trials, got {values.size}.")
    if not np.all(np.isfinite(values)):
        raise NumericalError("Trial excesses contain non-finite values.")

    mean, std = stats.norm.fit(values)
    if not np.isfinite(std) or std <= 0:
        raise NumericalError("Degenerate histogram: all trial excesses are equal.")

    count = values.size
    return ExcessHistogram(
        values, float(mean), float(std), std / np.sqrt(count), std / np.sqrt(2 * count)
    )


def _excesses(outcomes: Sequence[Union[SearchOutcome, float]]) -> list[float]:
    return [
        outcome.faxion_excess if isinstance(outcome, SearchOutcome) else outcome
        for outcome in outcomes
    ]


def aggregate_trials(
    reference: Sequence[Union[SearchOutcome, float]],
    enhanced: Sequence[Union[SearchOutcome, float]],
) -> TrialAggregate:
    """Fit both histograms and report (mu_enhanced / mu_reference)^2."""
    reference_fit = fit_histogram(_excesses(reference))
    enhanced_fit = fit_histogram(_excesses(enhanced))
    if reference_fit.mean == 0:
        raise NumericalError("Reference histogram has zero mean.")

    ratio = enhanced_fit.mean / reference_fit.mean
    enhancement = ratio**2
    relative = np.hypot(
        reference_fit.mean_error / reference_fit.mean,
        enhanced_fit.mean_error / enhanced_fit.mean if enhanced_fit.mean else 0.0,
    )
    return TrialAggregate(
        reference_fit, enhanced_fit, float(enhancement), float(2 * enhancement * relative)
    )


@dataclass(frozen=True)
class TrialAnalysis:
    combined: CombinedSpectrum
    grand: GrandSpectrum
    outcome: SearchOutcome


def analyze_search(
    spectra: Sequence[RawSpectrum],
    params: AcquisitionParams,
    plan: TuningPlan,
    analysis: AnalysisParams,
    visibility: VisibilityCurve,
    envelope: SpectralEnvelope,
    trial_index: int = 0,
    truth: Optional[SearchTruth] = None,
    match_width: float = 0.0,
) -> TrialAnalysis:
    """
    Baseline, normalize, combine and filter one trial.

    The spectra are iterated twice, once for the baseline and once for the
    combination, so a lazily generated run never sits in memory.
    """
    baseline = average_baseline(spectra)
    smoothed = sg_filter(baseline, analysis.sg_window, analysis.sg_order)

    processed = (normalize(raw, smoothed, params) for raw in spectra)
    combined = shift_and_combine(
        processed, plan, visibility, params.resolution, analysis.mask_fraction
    )
    grand = grand_spectrum(combined, envelope, analysis.mask_fraction)
    outcome = find_candidate(grand, trial_index, truth, match_width)

    logger.info(
        f"Trial {trial_index}: best bin at {outcome.best_bin_offset:.0f} Hz "
        f"({outcome.best_excess:.2f} sigma_g), faxion bin {outcome.faxion_excess:.2f} sigma_g."
    )
    return TrialAnalysis(combined, grand, outcome)
