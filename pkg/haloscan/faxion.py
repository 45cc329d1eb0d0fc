from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import pandas as pd
from scipy import special, stats

from haloscan.errors import ConfigError, NumericalError
from haloscan.logger import logger
from haloscan.network import ArrayLike
from haloscan.seeding import ENVELOPE_STREAM, as_generator, derive_rng

# <v^2>/c^2 for a 270 km/s galactic velocity dispersion.
DEFAULT_VELOCITY_PARAMETER = 8.1e-7
LINESHAPE_ORDER = 1.5

# Envelope support, relative to the carrier.
SUPPORT_BELOW_UPDATES = 8
SUPPORT_ABOVE_DEPTHS = 16


@dataclass(frozen=True)
class AxionLineshape:
    rest_frequency: float
    velocity_parameter: float = DEFAULT_VELOCITY_PARAMETER

    def __post_init__(self):
        if self.rest_frequency <= 0:
            raise ConfigError(f"Rest frequency must be positive, got {self.rest_frequency}.")
        if self.velocity_parameter <= 0:
            raise ConfigError(
                f"Velocity parameter must be positive, got {self.velocity_parameter}."
            )

    @property
    def scale(self) -> float:
        """1/e width of the lineshape, Hz."""
        return self.rest_frequency * self.velocity_parameter / 3


def _reduced(shape: AxionLineshape, frequency: ArrayLike) -> np.ndarray:
    return (np.asarray(frequency, dtype=float) - shape.rest_frequency) / shape.scale


def lineshape_pdf(shape: AxionLineshape, frequency: ArrayLike) -> ArrayLike:
    """
    Lab-frame Maxwellian lineshape:

        f(v) = 2/sqrt(pi) * sqrt(v - v_a) * (3 / (v_a <b^2>))^(3/2)
               * exp(-3 (v - v_a) / (v_a <b^2>))

    for v >= v_a and 0 below. In units of the scale this is Gamma(3/2, 1).
    """
    reduced = _reduced(shape, frequency)
    return stats.gamma.pdf(reduced, LINESHAPE_ORDER) / shape.scale


def lineshape_cdf(shape: AxionLineshape, frequency: ArrayLike) -> ArrayLike:
    reduced = np.clip(_reduced(shape, frequency), 0.0, None)
    return special.gammainc(LINESHAPE_ORDER, reduced)


def lineshape_ppf(shape: AxionLineshape, probability: ArrayLike) -> ArrayLike:
    probability = np.asarray(probability, dtype=float)
    if np.any((probability < 0) | (probability > 1)):
        raise ConfigError("Probabilities must lie in [0, 1].")
    return shape.rest_frequency + shape.scale * special.gammaincinv(LINESHAPE_ORDER, probability)


def sample_frequencies(
    shape: AxionLineshape, count: int, seed: Union[int, np.random.Generator]
) -> np.ndarray:
    if count < 1:
        raise ConfigError(f"Sample count must be at least 1, got {count}.")
    rng = as_generator(seed)
    return lineshape_ppf(shape, rng.random(count))


@dataclass(frozen=True)
class FaxionConfig:
    """
    Fake-axion injection settings.

    carrier_power is the calibration target: the peak faxion PSD, in vacuum
    units, seen at the measurement port in quantum-limited operation.
    """

    update_rate: float
    modulation_depth: float
    carrier_power: float
    lineshape: AxionLineshape
    envelope_duration: float = 10.0
    envelope_seed: int = 0

    def __post_init__(self):
        if self.update_rate <= 0:
            raise ConfigError(f"Update rate must be positive, got {self.update_rate}.")
        if self.modulation_depth <= 0:
            raise ConfigError(
                f"Modulation depth must be positive, got {self.modulation_depth}."
            )
        if self.carrier_power < 0:
            raise ConfigError(f"Carrier power must be non-negative, got {self.carrier_power}.")
        if self.envelope_duration <= 0:
            raise ConfigError(
                f"Envelope duration must be positive, got {self.envelope_duration}."
            )


@dataclass(frozen=True)
class FrequencyTrack:
    """Piecewise-constant instantaneous frequency, one value per update."""

    sample_times: np.ndarray
    instantaneous_frequencies: np.ndarray
    update_rate: float

    def __post_init__(self):
        if len(self.sample_times) == 0:
            raise ConfigError("A frequency track needs at least one segment.")
        if self.sample_times.shape != self.instantaneous_frequencies.shape:
            raise ConfigError("Track times and frequencies must have the same shape.")
        spacing = np.diff(self.sample_times)
        if spacing.size and not np.allclose(spacing, 1 / self.update_rate):
            raise ConfigError("Track times must be spaced by 1/update_rate.")

    @property
    def duration(self) -> float:
        return len(self.sample_times) / self.update_rate


def synthesize_track(
    config: FaxionConfig,
    duration: float,
    carrier: float,
    seed: Union[int, np.random.Generator],
) -> FrequencyTrack:
    """
    Draw one lineshape frequency per update for the given duration.

    Offsets from the carrier are the lineshape offsets in units of its 1/e
    width, multiplied by the modulation depth.
    """
    updates = duration * config.update_rate
    if updates < 1 - 1e-9:
        raise ConfigError(
            f"Duration {duration} s holds no full update at {config.update_rate} Hz."
        )

    count = int(np.ceil(updates - 1e-9))
    shape = config.lineshape
    sampled = sample_frequencies(shape, count, seed)
    offsets = _reduced(shape, sampled) * config.modulation_depth

    return FrequencyTrack(
        np.arange(count) / config.update_rate, carrier + offsets, config.update_rate
    )


class FmSynthesizer:
    """
    Phase-continuous tone following a frequency track.

    Successive calls to take() continue the same waveform. amplitude may be a
    constant or a function of the instantaneous frequency.
    """

    def __init__(
        self,
        track: FrequencyTrack,
        sample_rate: float,
        amplitude: Union[float, Callable[[np.ndarray], np.ndarray]] = 1.0,
        analytic: bool = False,
    ):
        if sample_rate <= 0:
            raise ConfigError(f"Sample rate must be positive, got {sample_rate}.")
        self.track = track
        self.sample_rate = sample_rate
        self.amplitude = amplitude
        self.analytic = analytic
        self.cursor = 0
        self.phase = 0.0

    def frequencies(self, count: int) -> np.ndarray:
        times = (self.cursor + np.arange(count)) / self.sample_rate
        segment = np.searchsorted(self.track.sample_times, times, side="right") - 1
        segment = np.clip(segment, 0, len(self.track.sample_times) - 1)
        return self.track.instantaneous_frequencies[segment]

    def take(self, count: int) -> np.ndarray:
        frequencies = self.frequencies(count)
        advanced = self.phase + 2 * np.pi * np.cumsum(frequencies) / self.sample_rate
        phases = np.concatenate(([self.phase], advanced[:-1]))
        self.phase = float(advanced[-1] % (2 * np.pi))
        self.cursor += count

        amplitude = (
            self.amplitude(frequencies) if callable(self.amplitude) else self.amplitude
        )
        if self.analytic:
            return amplitude * np.exp(1j * phases)
        return amplitude * np.cos(phases)


@dataclass(frozen=True)
class SpectralEnvelope:
    """
    Expected PSD of the faxion around its carrier, as a density per Hz on
    consecutive bins of width resolution.
    """

    resolution: float
    bins: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        if self.resolution <= 0:
            raise ConfigError(f"Resolution must be positive, got {self.resolution}.")
        if len(self.bins) == 0 or self.bins.shape != self.density.shape:
            raise ConfigError("Envelope bins and density must be non-empty and aligned.")
        if np.any(np.diff(self.bins) != 1):
            raise ConfigError("Envelope bins must be consecutive.")
        if np.any(self.density < 0):
            raise ConfigError("Envelope density must be non-negative.")

    @property
    def offsets(self) -> np.ndarray:
        return self.bins * self.resolution

    @property
    def weights(self) -> np.ndarray:
        """Fraction of the tone's power falling in each bin."""
        return self.density * self.resolution

    @property
    def peak_weight(self) -> float:
        return float(self.weights.max())

    @property
    def first_bin(self) -> int:
        return int(self.bins[0])

    @property
    def last_bin(self) -> int:
        return int(self.bins[-1])

    def integral(self) -> float:
        return float(self.weights.sum())

    def weights_at(self, bin_offsets: np.ndarray) -> np.ndarray:
        bin_offsets = np.asarray(bin_offsets)
        index = bin_offsets - self.first_bin
        inside = (index >= 0) & (index < len(self.bins))
        result = np.zeros(bin_offsets.shape)
        result[inside] = self.weights[index[inside]]
        return result

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"offset_Hz": self.offsets, "normalized_psd": self.density})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, resolution: float) -> "SpectralEnvelope":
        bins = np.rint(frame["offset_Hz"].to_numpy() / resolution).astype(int)
        return cls(resolution, bins, frame["normalized_psd"].to_numpy(dtype=float))

    @classmethod
    def delta(cls, resolution: float) -> "SpectralEnvelope":
        return cls(resolution, np.array([0]), np.array([1 / resolution]))


def spectral_envelope(config: FaxionConfig, resolution: float) -> SpectralEnvelope:
    """
    Simulate the FM faxion at complex baseband and average its periodograms.

    The simulation runs for config.envelope_duration seconds in blocks of
    1/resolution, so each periodogram has the analysis bin width. The result
    is restricted to the support below and normalized to unit power.
    """
    if resolution <= 0 or resolution > config.modulation_depth / 3:
        raise ConfigError(
            f"Envelope resolution {resolution} Hz must be positive and at most a third "
            f"of the modulation depth ({config.modulation_depth} Hz)."
        )

    first_bin = int(np.floor(-SUPPORT_BELOW_UPDATES * config.update_rate / resolution))
    last_bin = int(np.ceil(SUPPORT_ABOVE_DEPTHS * config.modulation_depth / resolution))
    centre_bin = (first_bin + last_bin) // 2
    span_bins = last_bin - first_bin + 1

    block = int(2 * np.ceil(0.625 * span_bins))
    sample_rate = block * resolution
    blocks = max(1, int(round(config.envelope_duration * resolution)))

    rng = derive_rng(config.envelope_seed, ENVELOPE_STREAM)
    track = synthesize_track(config, blocks / resolution, -centre_bin * resolution, rng)
    synthesizer = FmSynthesizer(track, sample_rate, analytic=True)

    logger.info(
        f"Simulating faxion envelope: {blocks} blocks of {block} samples "
        f"at {resolution:g} Hz resolution."
    )
    power = np.zeros(block)
    chunk = max(1, 2**20 // block)
    remaining = blocks
    while remaining > 0:
        count = min(chunk, remaining)
        samples = synthesizer.take(count * block).reshape(count, block)
        power += (np.abs(np.fft.fft(samples, axis=1)) ** 2).sum(axis=0) / block**2
        remaining -= count

    relative = np.rint(np.fft.fftfreq(block) * block).astype(int)
    order = np.argsort(relative)
    bins = relative[order] + centre_bin
    power = power[order] / blocks

    keep = (bins >= first_bin) & (bins <= last_bin)
    weights = power[keep]
    total = weights.sum()
    if total <= 0:
        raise NumericalError("Faxion envelope simulation produced no power in its support.")

    return SpectralEnvelope(resolution, bins[keep], weights / total / resolution)


def envelope_key(config: FaxionConfig, resolution: float) -> str:
    payload = {"faxion": asdict(config), "resolution": resolution}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def cached_envelope(
    config: FaxionConfig,
    resolution: float,
    cache_dir: Optional[Union[str, Path]] = None,
    force: bool = False,
) -> SpectralEnvelope:
    """Return the envelope for config, reading or refreshing the file cache."""
    if cache_dir is None:
        return spectral_envelope(config, resolution)

    directory = Path(cache_dir).expanduser()
    key = envelope_key(config, resolution)
    csv_path = directory / f"envelope-{key}.csv"
    header_path = directory / f"envelope-{key}.json"

    if not force and csv_path.exists() and header_path.exists():
        with open(header_path) as file:
            header = json.load(file)
        if header.get("hash") == key:
            logger.info(f"Using cached faxion envelope {csv_path}.")
            return SpectralEnvelope.from_frame(pd.read_csv(csv_path), resolution)
        logger.warning(f"Envelope header {header_path} does not match; regenerating.")

    envelope = spectral_envelope(config, resolution)
    directory.mkdir(parents=True, exist_ok=True)
    envelope.to_frame().to_csv(csv_path, index=False)
    with open(header_path, "w") as file:
        json.dump(
            {"hash": key, "resolution": resolution, "faxion": asdict(config)},
            file,
            indent=2,
            sort_keys=True,
        )
    logger.info(f"Wrote faxion envelope cache {csv_path}.")
    return envelope


def calibrate_injection(
    config: FaxionConfig, envelope: SpectralEnvelope, peak_signal_gain: float
) -> float:
    """
    Injected faxion power, in vacuum units times bins, whose brightest bin
    reaches config.carrier_power after a port gain of peak_signal_gain.
    """
    scale = envelope.peak_weight * peak_signal_gain
    if scale <= 0:
        raise NumericalError("Cannot calibrate the faxion against a zero signal gain.")
    return config.carrier_power / scale
