from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from haloscan.chain import ChainParams, total_noise_psd
from haloscan.errors import ConfigError
from haloscan.faxion import (
    FaxionConfig,
    FmSynthesizer,
    FrequencyTrack,
    SpectralEnvelope,
    synthesize_track,
)
from haloscan.logger import logger
from haloscan.network import SystemParams, port_psd
from haloscan.seeding import (
    NOISE_STREAM,
    TRACK_STREAM,
    TRUTH_STREAM,
    as_generator,
    derive_rng,
)

ACQUISITION_MODES = ("fast", "timedomain")


def _integer_ratio(numerator: float, denominator: float, what: str) -> int:
    ratio = numerator / denominator
    rounded = int(round(ratio))
    if abs(ratio - rounded) > 1e-6:
        raise ConfigError(f"{what} ({numerator} / {denominator}) is not an integer.")
    return rounded


@dataclass(frozen=True)
class AcquisitionParams:
    sub_traces: int = 32
    sub_trace_duration: float = 5e-3

    def __post_init__(self):
        if self.sub_traces < 1:
            raise ConfigError(f"Need at least one sub-trace, got {self.sub_traces}.")
        if self.sub_trace_duration <= 0:
            raise ConfigError(
                f"Sub-trace duration must be positive, got {self.sub_trace_duration}."
            )

    @property
    def resolution(self) -> float:
        return 1 / self.sub_trace_duration

    @property
    def total_trace(self) -> float:
        return self.sub_traces * self.sub_trace_duration

    @property
    def radiometer_sigma(self) -> float:
        """Fractional std of an averaged bin, 1/sqrt(n tau Delta_nu)."""
        return 1 / np.sqrt(self.sub_traces * self.sub_trace_duration * self.resolution)


@dataclass(frozen=True)
class TuningPlan:
    """The faxion tunes upward by step_size per step across window."""

    step_size: float = 10e3
    window: float = 26e6
    init_window: float = 1e6

    def __post_init__(self):
        if self.step_size <= 0 or self.window <= 0 or self.init_window <= 0:
            raise ConfigError("Step size, window and init window must be positive.")
        _integer_ratio(self.window, self.step_size, "Window over step size")

    @property
    def step_count(self) -> int:
        return int(round(self.window / self.step_size)) + 1

    def step_bins(self, resolution: float) -> int:
        return _integer_ratio(self.step_size, resolution, "Step size over resolution")

    def init_bins(self, resolution: float) -> tuple[int, int]:
        """First and last bin of the init window [-W/2 - w_init, -W/2)."""
        half_window = _integer_ratio(self.window, 2 * resolution, "Half window over resolution")
        width = int(np.floor(self.init_window / resolution + 1e-9))
        if width < 1:
            raise ConfigError("Init window is narrower than one bin.")
        return -half_window - width, -half_window - 1


@dataclass(frozen=True)
class SpectrumGrid:
    """Detector bins at offsets j * resolution from the cavity, j in [-J, J]."""

    resolution: float
    half_bins: int
    centre_frequency: float = 0.0

    def __post_init__(self):
        if self.resolution <= 0 or self.half_bins < 1:
            raise ConfigError("Spectrum grid needs a positive resolution and half width.")

    @classmethod
    def covering(
        cls, span: float, resolution: float, centre_frequency: float = 0.0
    ) -> "SpectrumGrid":
        return cls(resolution, int(np.ceil(span / resolution - 1e-9)), centre_frequency)

    @property
    def size(self) -> int:
        return 2 * self.half_bins + 1

    @property
    def bin_offsets(self) -> np.ndarray:
        return np.arange(-self.half_bins, self.half_bins + 1)

    @property
    def offsets(self) -> np.ndarray:
        return self.bin_offsets * self.resolution

    @property
    def detunings(self) -> np.ndarray:
        return 2 * np.pi * self.offsets

    @property
    def bin_frequencies(self) -> np.ndarray:
        return self.centre_frequency + self.offsets

    def bin_of(self, offset: float) -> int:
        return _integer_ratio(offset, self.resolution, "Faxion offset over resolution")


@dataclass(frozen=True)
class RawSpectrum:
    """An averaged spectrum as the analysis sees it; carries no truth."""

    grid: SpectrumGrid
    psd: np.ndarray
    step_index: int

    @property
    def bin_frequencies(self) -> np.ndarray:
        return self.grid.bin_frequencies


@dataclass(frozen=True)
class ExpectedSpectrum:
    grid: SpectrumGrid
    mean: np.ndarray
    step_index: int = 0


@dataclass(frozen=True)
class SpectrumModel:
    """Per-bin noise and signal gain of one configuration, plus the faxion."""

    grid: SpectrumGrid
    noise_psd: np.ndarray
    signal_gain: np.ndarray
    faxion: FaxionConfig
    envelope: SpectralEnvelope
    injection: float

    def __post_init__(self):
        if self.noise_psd.shape != (self.grid.size,) or self.signal_gain.shape != (
            self.grid.size,
        ):
            raise ConfigError("Noise and gain arrays must match the spectrum grid.")
        if not np.isclose(self.envelope.resolution, self.grid.resolution):
            raise ConfigError(
                f"Envelope resolution {self.envelope.resolution} Hz does not match "
                f"the grid resolution {self.grid.resolution} Hz."
            )


def spectrum_model(
    system: SystemParams,
    chain: ChainParams,
    faxion: FaxionConfig,
    envelope: SpectralEnvelope,
    grid: SpectrumGrid,
    injection: float,
) -> SpectrumModel:
    port = port_psd(system, grid.detunings)
    noise = total_noise_psd(port, chain)
    return SpectrumModel(grid, noise, port.signal_gain, faxion, envelope, injection)


def expected_psd(
    model: SpectrumModel, faxion_offset: float, step_index: int = 0
) -> ExpectedSpectrum:
    """
    Mean PSD per bin with the faxion carrier at faxion_offset from the cavity.

    The folded spectrum of a real quadrature shows the faxion at its offset
    and at the mirror offset.
    """
    grid = model.grid
    carrier_bin = grid.bin_of(faxion_offset)
    mean = model.noise_psd.copy()
    if model.injection == 0:
        return ExpectedSpectrum(grid, mean, step_index)

    bins = grid.bin_offsets
    weights = model.envelope.weights_at(bins - carrier_bin) + model.envelope.weights_at(
        -bins - carrier_bin
    )
    mean += model.injection * model.signal_gain * weights

    return ExpectedSpectrum(grid, mean, step_index)


def simulate_step_fast(
    expected: ExpectedSpectrum,
    params: AcquisitionParams,
    seed: Union[int, np.random.Generator],
) -> RawSpectrum:
    """Each bin is an n-average of exponential periodogram bins: Gamma(n, mean/n)."""
    if np.any(expected.mean <= 0):
        raise ConfigError("Expected PSD must be positive in every bin.")
    rng = as_generator(seed)
    shape = params.sub_traces
    psd = rng.standard_gamma(shape, size=expected.mean.shape) * expected.mean / shape
    return RawSpectrum(expected.grid, psd, expected.step_index)


def simulate_step_timedomain(
    model: SpectrumModel,
    track: Optional[FrequencyTrack],
    params: AcquisitionParams,
    seed: Union[int, np.random.Generator],
    step_index: int = 0,
) -> RawSpectrum:
    """
    Synthesize the measured quadrature and run the periodogram chain.

    Noise is coloured to the model PSD over the whole trace; the faxion is a
    real FM tone whose amplitude follows sqrt(signal gain). The trace is cut
    into sub-traces, each periodogram is assigned to +f and -f, and the
    sub-trace periodograms are averaged.
    """
    grid = model.grid
    if not np.isclose(grid.resolution, params.resolution):
        raise ConfigError("Spectrum grid and acquisition resolution disagree.")
    if track is not None and track.duration < params.total_trace * (1 - 1e-9):
        raise ConfigError(
            f"Track covers {track.duration} s, shorter than the {params.total_trace} s trace."
        )

    rng = as_generator(seed)
    half = grid.half_bins
    sub_length = 2 * half + 2
    sample_rate = sub_length * grid.resolution
    length = params.sub_traces * sub_length

    positive = grid.offsets[half:]
    frequencies = np.fft.rfftfreq(length, d=1 / sample_rate)
    spectrum = np.interp(frequencies, positive, model.noise_psd[half:])

    coefficients = np.sqrt(length * spectrum / 2) * (
        rng.standard_normal(frequencies.size) + 1j * rng.standard_normal(frequencies.size)
    )
    # DC and Nyquist coefficients of a real series are real.
    coefficients[0] = np.sqrt(length * spectrum[0]) * rng.standard_normal()
    coefficients[-1] = np.sqrt(length * spectrum[-1]) * rng.standard_normal()
    series = np.fft.irfft(coefficients, n=length)

    if track is not None and model.injection > 0:
        scale = np.sqrt(4 * model.injection / sub_length)
        gain = model.signal_gain[half:]

        def amplitude(instantaneous: np.ndarray) -> np.ndarray:
            return scale * np.sqrt(np.interp(np.abs(instantaneous), positive, gain))

        series = series + FmSynthesizer(track, sample_rate, amplitude).take(length)

    segments = series.reshape(params.sub_traces, sub_length)
    periodogram = np.abs(np.fft.rfft(segments, axis=1)) ** 2 / sub_length
    averaged = periodogram[:, : half + 1].mean(axis=0)
    psd = np.concatenate((averaged[half:0:-1], averaged))
    return RawSpectrum(grid, psd, step_index)


@dataclass(frozen=True)
class SearchTruth:
    """Sealed record of where the faxion was; never passed to the analysis."""

    trial_index: int
    initial_offset: float
    step_size: float

    def offset_at(self, step: int) -> float:
        return self.initial_offset + step * self.step_size


def draw_truth(
    plan: TuningPlan, resolution: float, master_seed: int, trial_index: int
) -> SearchTruth:
    first, last = plan.init_bins(resolution)
    rng = derive_rng(master_seed, trial_index, TRUTH_STREAM)
    initial_bin = int(rng.integers(first, last + 1))
    return SearchTruth(trial_index, initial_bin * resolution, plan.step_size)


class SearchRun(Sequence):
    """
    The raw spectra of one trial, regenerated on demand.

    Every step draws from its own seeded sub-stream, so spectrum(step)
    returns the same data however often and in whatever order it is asked.
    """

    def __init__(
        self,
        model: SpectrumModel,
        plan: TuningPlan,
        params: AcquisitionParams,
        truth: SearchTruth,
        master_seed: int,
        mode: str = "fast",
    ):
        if mode not in ACQUISITION_MODES:
            raise ConfigError(f"Unknown acquisition mode {mode!r}.")
        if not np.isclose(model.grid.resolution, params.resolution):
            raise ConfigError("Spectrum grid and acquisition resolution disagree.")
        plan.step_bins(params.resolution)

        self.model = model
        self.plan = plan
        self.params = params
        self._truth = truth
        self.master_seed = master_seed
        self.mode = mode

    @property
    def trial_index(self) -> int:
        return self._truth.trial_index

    def __len__(self) -> int:
        return self.plan.step_count

    def __getitem__(self, step):
        if isinstance(step, slice):
            return [self.spectrum(index) for index in range(*step.indices(len(self)))]
        if step < 0:
            step += len(self)
        if not 0 <= step < len(self):
            raise IndexError(step)
        return self.spectrum(step)

    def spectrum(self, step: int) -> RawSpectrum:
        offset = self._truth.offset_at(step)
        noise_rng = derive_rng(self.master_seed, self.trial_index, NOISE_STREAM, step)

        if self.mode == "fast":
            expected = expected_psd(self.model, offset, step)
            return simulate_step_fast(expected, self.params, noise_rng)

        track_rng = derive_rng(self.master_seed, self.trial_index, TRACK_STREAM, step)
        track = synthesize_track(
            self.model.faxion, self.params.total_trace, offset, track_rng
        )
        return simulate_step_timedomain(self.model, track, self.params, noise_rng, step)


def run_search(
    model: SpectrumModel,
    plan: TuningPlan,
    params: AcquisitionParams,
    master_seed: int,
    trial_index: int = 0,
    mode: str = "fast",
) -> tuple[SearchRun, SearchTruth]:
    truth = draw_truth(plan, params.resolution, master_seed, trial_index)
    logger.info(
        f"Trial {trial_index}: {plan.step_count} steps, {mode} acquisition, "
        f"{model.grid.size} bins per spectrum."
    )
    return SearchRun(model, plan, params, truth, master_seed, mode), truth
