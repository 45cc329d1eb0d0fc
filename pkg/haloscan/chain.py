from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import constants
from scipy.integrate import trapezoid

from haloscan.errors import ConfigError, NumericalError
from haloscan.network import (
    ArrayLike,
    PortPsd,
    SystemParams,
    port_psd,
    quanta_to_vacuum_units,
)

TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class JpaGainProfile:
    """Lorentzian phase-sensitive power gain; bandwidth is the angular 3-dB width."""

    peak_gain_db: float = 30.0
    bandwidth: float = TWO_PI * 2e6

    def __post_init__(self):
        if self.peak_gain_db < 0:
            raise ConfigError(f"JPA peak gain must be at least 0 dB, got {self.peak_gain_db}.")
        if self.bandwidth <= 0:
            raise ConfigError(f"JPA bandwidth must be positive, got {self.bandwidth}.")

    @property
    def peak_gain(self) -> float:
        return 10 ** (self.peak_gain_db / 10)

    def __call__(self, detuning: ArrayLike) -> ArrayLike:
        detuning = np.asarray(detuning, dtype=float)
        return 1 + (self.peak_gain - 1) / (1 + (2 * detuning / self.bandwidth) ** 2)


@dataclass(frozen=True)
class ChainParams:
    efficiency: float
    temperature: float
    n_sys: float
    jpa_gain: JpaGainProfile
    signal_frequency: float

    def __post_init__(self):
        if not 0 < self.efficiency <= 1:
            raise ConfigError(f"Chain efficiency must be in (0, 1], got {self.efficiency}.")
        if self.temperature <= 0:
            raise ConfigError(f"Temperature must be positive, got {self.temperature}.")
        if self.n_sys < 0:
            raise ConfigError(f"System noise must be non-negative, got {self.n_sys}.")
        if self.signal_frequency <= 0:
            raise ConfigError(
                f"Signal frequency must be positive, got {self.signal_frequency}."
            )

    def noiseless(self) -> "ChainParams":
        """The same chain with nothing added after the JPC: the quantum-limited benchmark."""
        return replace(self, efficiency=1.0, n_sys=0.0)


def bose_occupancy(frequency: ArrayLike, temperature: float) -> ArrayLike:
    """Thermal occupation (quanta) of a mode at angular frequency and temperature."""
    if temperature <= 0 or np.any(np.asarray(frequency) <= 0):
        raise ConfigError("Bose occupancy needs positive frequency and temperature.")

    ratio = constants.hbar * np.asarray(frequency, dtype=float) / (constants.k * temperature)
    with np.errstate(over="ignore"):
        return 1 / np.expm1(ratio)


def chain_added_noise(chain: ChainParams, detuning: ArrayLike) -> ArrayLike:
    """Noise added after the JPC, referred to its output, in vacuum units."""
    gain = np.asarray(chain.jpa_gain(detuning), dtype=float)
    if np.any(gain <= 0):
        raise NumericalError("JPA gain must be positive everywhere on the grid.")

    occupation = bose_occupancy(chain.signal_frequency, chain.temperature)
    eta = chain.efficiency
    quanta = (1 - eta) / eta * (occupation + 0.5) + chain.n_sys / (eta * gain)
    return quanta_to_vacuum_units(quanta)


def total_noise_psd(
    port: PortPsd, chain: ChainParams, detuning: Optional[ArrayLike] = None
) -> ArrayLike:
    if detuning is None:
        detuning = port.detuning
    return port.total + chain_added_noise(chain, detuning)


def visibility(signal_psd: ArrayLike, noise_psd: ArrayLike) -> ArrayLike:
    noise_psd = np.asarray(noise_psd, dtype=float)
    if np.any(noise_psd <= 0):
        raise NumericalError("Visibility is undefined where the noise PSD is not positive.")
    return np.asarray(signal_psd, dtype=float) / noise_psd


@dataclass(frozen=True)
class VisibilityCurve:
    """Visibility on an angular detuning grid, with the noise it was built from."""

    grid: np.ndarray
    alpha: np.ndarray
    port: Optional[PortPsd] = None
    total_noise: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.grid.shape != self.alpha.shape:
            raise ConfigError("Visibility grid and values must have the same shape.")
        if np.any(np.diff(self.grid) <= 0):
            raise ConfigError("Visibility grid must be strictly increasing.")
        if np.any(self.alpha < 0):
            raise ConfigError("Visibility must be non-negative.")

    @property
    def alpha_sq(self) -> np.ndarray:
        return self.alpha**2

    @property
    def peak(self) -> float:
        return float(self.alpha.max())

    def normalized(self, reference_peak: Optional[float] = None) -> np.ndarray:
        """alpha^2 relative to a reference peak alpha (own peak by default)."""
        reference = self.peak if reference_peak is None else reference_peak
        if reference <= 0:
            raise NumericalError("Cannot normalize to a zero visibility peak.")
        return self.alpha_sq / reference**2

    def at(self, detuning: ArrayLike) -> ArrayLike:
        """Linear interpolation of alpha, zero outside the grid."""
        return np.interp(detuning, self.grid, self.alpha, left=0.0, right=0.0)


def detuning_grid(span_hz: float, step_hz: float) -> np.ndarray:
    """Symmetric angular grid covering [-span, span] Hz at step Hz."""
    if span_hz <= 0 or step_hz <= 0:
        raise ConfigError("Grid span and step must be positive.")
    half = int(round(span_hz / step_hz))
    return TWO_PI * step_hz * np.arange(-half, half + 1)


def visibility_curve(
    system: SystemParams,
    chain: ChainParams,
    grid: np.ndarray,
    probe_psd: float = 1.0,
) -> VisibilityCurve:
    port = port_psd(system, grid)
    total = total_noise_psd(port, chain)
    alpha = visibility(probe_psd * port.signal_gain, total)
    return VisibilityCurve(np.asarray(grid, dtype=float), alpha, port, total)


def visibility_bandwidth(curve: PortPsd) -> float:
    """
    Width of the interval around zero detuning where cavity noise is at least
    the measurement noise. Edges are linearly interpolated.
    """
    detuning = np.atleast_1d(np.asarray(curve.detuning, dtype=float))
    dominance = np.atleast_1d(
        np.asarray(curve.cavity_noise, dtype=float)
        - np.asarray(curve.measurement_noise, dtype=float)
    )
    centre = int(np.argmin(np.abs(detuning)))
    if dominance[centre] < 0:
        return 0.0

    below_left = np.flatnonzero(dominance[:centre] < 0)
    below_right = np.flatnonzero(dominance[centre:] < 0)
    left = below_left[-1] + 1 if below_left.size else 0
    right = centre + below_right[0] - 1 if below_right.size else len(detuning) - 1

    def crossing(inside: int, outside: int) -> float:
        d_in, d_out = dominance[inside], dominance[outside]
        fraction = d_in / (d_in - d_out)
        return detuning[inside] + fraction * (detuning[outside] - detuning[inside])

    lower = crossing(left, left - 1) if left > 0 else detuning[0]
    upper = crossing(right, right + 1) if right < len(detuning) - 1 else detuning[-1]
    return float(upper - lower)


@dataclass(frozen=True)
class ScanRateReport:
    integral_alpha_sq: float
    peak_alpha: float
    visibility_bandwidth: float


def scan_rate(curve: VisibilityCurve, edge_tolerance: float = 1e-4) -> ScanRateReport:
    alpha_sq = curve.alpha_sq
    peak_sq = float(alpha_sq.max())
    bandwidth = visibility_bandwidth(curve.port) if curve.port is not None else 0.0

    if peak_sq == 0:
        return ScanRateReport(0.0, 0.0, bandwidth)

    edge = max(alpha_sq[0], alpha_sq[-1]) / peak_sq
    if edge >= edge_tolerance:
        raise NumericalError(
            f"Grid [{curve.grid[0] / TWO_PI:.4g}, {curve.grid[-1] / TWO_PI:.4g}] Hz does not "
            f"span the visibility support: alpha^2 at the edge is {edge:.2e} of the peak "
            f"(limit {edge_tolerance:.0e})."
        )

    return ScanRateReport(
        float(trapezoid(alpha_sq, curve.grid)), float(np.sqrt(peak_sq)), bandwidth
    )


def enhancement_ratio(numerator: ScanRateReport, denominator: ScanRateReport) -> float:
    if denominator.integral_alpha_sq <= 0:
        raise NumericalError("Enhancement ratio needs a positive reference scan rate.")
    return numerator.integral_alpha_sq / denominator.integral_alpha_sq
