from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from haloscan.errors import ConfigError, NumericalError

ArrayLike = Union[float, np.ndarray]

# Ports that see the cavity mode and ports that see the readout mode.
CAVITY_PORTS = ("a", "l")
MEASUREMENT_PORTS = ("m", "r")
MEASURED_QUADRATURE = "Y_m"

_PORT_MODE_ROW = {"a": 0, "l": 0, "m": 2, "r": 2}


def quanta_to_vacuum_units(quanta: ArrayLike) -> ArrayLike:
    """Convert a PSD in quanta (vacuum = 1/2) to vacuum units (vacuum = 1)."""
    return 2.0 * np.asarray(quanta, dtype=float)


def occupation_psd(occupation: ArrayLike) -> ArrayLike:
    """Symmetrized PSD, in vacuum units, of a port with thermal occupation N."""
    return quanta_to_vacuum_units(np.asarray(occupation, dtype=float) + 0.5)


@dataclass(frozen=True)
class ModeParams:
    """A resonator mode. Frequency and rates are angular (rad/s)."""

    frequency: float
    internal_loss_rate: float
    external_coupling_rate: float

    def __post_init__(self):
        if self.frequency <= 0:
            raise ConfigError(f"Mode frequency must be positive, got {self.frequency}.")
        if self.internal_loss_rate < 0 or self.external_coupling_rate < 0:
            raise ConfigError(
                "Mode rates must be non-negative, got "
                f"internal={self.internal_loss_rate}, external={self.external_coupling_rate}."
            )

    @property
    def total_rate(self) -> float:
        return self.internal_loss_rate + self.external_coupling_rate


@dataclass(frozen=True)
class InteractionRates:
    """Swap (g_c) and two-mode-squeezing (g_g) rates, rad/s."""

    g_c: float
    g_g: float

    def __post_init__(self):
        if self.g_c < 0 or self.g_g < 0:
            raise ConfigError(
                f"Interaction rates must be non-negative, got g_c={self.g_c}, g_g={self.g_g}."
            )

    @property
    def sum_rate(self) -> float:
        return self.g_c + self.g_g

    @property
    def difference_rate(self) -> float:
        return self.g_c - self.g_g


@dataclass(frozen=True)
class SystemParams:
    """
    Cavity mode A and readout mode B coupled by swap and gain interactions.

    The cavity's internal loss is the loss port (l), its external coupling
    the axion port (a). The readout's external coupling is the measurement
    port (m); a non-zero readout internal loss adds a port (r).
    """

    cavity: ModeParams
    readout: ModeParams
    rates: InteractionRates

    @property
    def ports(self) -> tuple[str, ...]:
        if self.readout.internal_loss_rate > 0:
            return ("a", "l", "m", "r")
        return ("a", "l", "m")

    @property
    def port_rates(self) -> dict[str, float]:
        return {
            "a": self.cavity.external_coupling_rate,
            "l": self.cavity.internal_loss_rate,
            "m": self.readout.external_coupling_rate,
            "r": self.readout.internal_loss_rate,
        }


def quadrature_labels(ports: tuple[str, ...]) -> list[str]:
    return [f"{quadrature}_{port}" for port in ports for quadrature in ("X", "Y")]


def symplectic_form(port_count: int) -> np.ndarray:
    return np.kron(np.eye(port_count), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def build_drift(params: SystemParams) -> np.ndarray:
    """
    Langevin drift matrix in the basis (X_A, Y_A, X_B, Y_B).

    Derived from H = (g_c + g_g) X_A X_B + (g_c - g_g) Y_A Y_B, which for
    g_c = g_g is the QND coupling 2 g_c X_A X_B.
    """
    half_a = params.cavity.total_rate / 2
    half_b = params.readout.total_rate / 2
    g_sum = params.rates.sum_rate
    g_diff = params.rates.difference_rate

    return np.array(
        [
            [-half_a, 0.0, 0.0, g_diff],
            [0.0, -half_a, -g_sum, 0.0],
            [0.0, g_diff, -half_b, 0.0],
            [-g_sum, 0.0, 0.0, -half_b],
        ]
    )


def input_coupling(params: SystemParams) -> np.ndarray:
    """Map from port quadratures to mode quadratures, shape (4, 2 * ports)."""
    ports = params.ports
    rates = params.port_rates
    coupling = np.zeros((4, 2 * len(ports)))

    for idx, port in enumerate(ports):
        root = np.sqrt(rates[port])
        row = _PORT_MODE_ROW[port]
        coupling[row, 2 * idx] = root
        coupling[row + 1, 2 * idx + 1] = root

    return coupling


@dataclass(frozen=True)
class QuadratureScattering:
    """Quadrature scattering matrix at a single detuning."""

    detuning: float
    matrix: np.ndarray
    ports: tuple[str, ...]

    def index(self, label: str) -> int:
        return quadrature_labels(self.ports).index(label)

    def element(self, out_label: str, in_label: str) -> complex:
        return self.matrix[self.index(out_label), self.index(in_label)]

    def symplectic_residual(self) -> float:
        form = symplectic_form(len(self.ports))
        return float(np.max(np.abs(self.matrix @ form @ self.matrix.conj().T - form)))


@dataclass(frozen=True)
class ScatteringGrid:
    """Quadrature scattering matrices over a detuning grid."""

    detunings: np.ndarray
    matrices: np.ndarray
    ports: tuple[str, ...]

    def index(self, label: str) -> int:
        return quadrature_labels(self.ports).index(label)

    def element(self, out_label: str, in_label: str) -> np.ndarray:
        return self.matrices[:, self.index(out_label), self.index(in_label)]

    def at(self, position: int) -> QuadratureScattering:
        return QuadratureScattering(
            float(self.detunings[position]), self.matrices[position], self.ports
        )

    def phase_preserving_gain(self, out_port: str, in_port: str) -> np.ndarray:
        """Power gain of the mode-basis conversion element a_out <- a_in."""
        xx = self.element(f"X_{out_port}", f"X_{in_port}")
        xy = self.element(f"X_{out_port}", f"Y_{in_port}")
        yx = self.element(f"Y_{out_port}", f"X_{in_port}")
        yy = self.element(f"Y_{out_port}", f"Y_{in_port}")
        return np.abs((xx + yy + 1j * (yx - xy)) / 2) ** 2

    def phase_sensitive_gain(self, out_port: str, in_port: str) -> np.ndarray:
        """Power gain from the X quadrature of in_port to the Y quadrature of out_port."""
        return np.abs(self.element(f"Y_{out_port}", f"X_{in_port}")) ** 2

    def measured_power(self, in_port: str) -> np.ndarray:
        """Power reaching the measured quadrature from both quadratures of in_port."""
        return (
            np.abs(self.element(MEASURED_QUADRATURE, f"X_{in_port}")) ** 2
            + np.abs(self.element(MEASURED_QUADRATURE, f"Y_{in_port}")) ** 2
        )

    def symplectic_residual(self) -> np.ndarray:
        form = symplectic_form(len(self.ports))
        product = self.matrices @ form @ np.conj(np.swapaxes(self.matrices, 1, 2))
        return np.max(np.abs(product - form), axis=(1, 2))


def scattering_grid(params: SystemParams, detunings: ArrayLike) -> ScatteringGrid:
    """
    Solve the input-output relations out = in - B^T x on a detuning grid.

    Mode equations are dx/dt = M x + B in, so at detuning d the response is
    S(d) = I - B^T (-i d - M)^-1 B.
    """
    detunings = np.atleast_1d(np.asarray(detunings, dtype=float))
    drift = build_drift(params)
    coupling = input_coupling(params)
    width = coupling.shape[1]
    if detunings.size == 0:
        return ScatteringGrid(detunings, np.zeros((0, width, width), complex), params.ports)

    resolvent = -1j * detunings[:, None, None] * np.eye(4) - drift
    rhs = np.broadcast_to(coupling.astype(complex), (len(detunings), 4, width))
    try:
        response = np.linalg.solve(resolvent, rhs)
    except np.linalg.LinAlgError as error:
        raise NumericalError(
            "Singular network response; a mode has zero total damping."
        ) from error

    matrices = np.eye(width) - coupling.T @ response
    if not np.all(np.isfinite(matrices)):
        raise NumericalError("Network response is not finite on the requested grid.")

    return ScatteringGrid(detunings, matrices, params.ports)


def scattering_at(params: SystemParams, detuning: float) -> QuadratureScattering:
    return scattering_grid(params, [detuning]).at(0)


def effective_coupling(g_c: float, kappa_m: float) -> float:
    """Measurement-port coupling seen by the cavity when only the swap is on."""
    if kappa_m <= 0:
        raise ConfigError(f"Readout coupling must be positive, got {kappa_m}.")
    return 4 * g_c**2 / kappa_m


def infer_s_ml(s_ma: ArrayLike, kappa_l: float, kappa_a: float) -> ArrayLike:
    """Loss-port transmission amplitude inferred from the axion-port one."""
    if kappa_a <= 0:
        raise ConfigError(f"Axion port coupling must be positive, got {kappa_a}.")
    return np.sqrt(kappa_l / kappa_a) * np.abs(s_ma)


@dataclass(frozen=True)
class PortPsd:
    """
    Output PSD of the measured quadrature, split by noise origin.

    All PSDs are in vacuum units. signal_gain multiplies a per-quadrature
    input PSD at the axion port.
    """

    detuning: ArrayLike
    cavity_noise: ArrayLike
    measurement_noise: ArrayLike
    signal_gain: ArrayLike

    @property
    def total(self) -> ArrayLike:
        return self.cavity_noise + self.measurement_noise


def port_psd(
    params: SystemParams,
    detuning: ArrayLike,
    input_occupations: Optional[dict[str, float]] = None,
) -> PortPsd:
    grid = scattering_grid(params, detuning)

    occupations = {port: 0.0 for port in params.ports}
    for port, occupation in (input_occupations or {}).items():
        if port not in occupations:
            raise ConfigError(f"Unknown port {port!r}; expected one of {params.ports}.")
        if occupation < 0:
            raise ConfigError(f"Occupation of port {port!r} must be non-negative.")
        occupations[port] = occupation

    power = np.abs(grid.matrices[:, grid.index(MEASURED_QUADRATURE), :]) ** 2
    input_psd = np.repeat([occupation_psd(occupations[port]) for port in params.ports], 2)
    contribution = power * input_psd

    labels = quadrature_labels(params.ports)
    cavity_columns = [idx for idx, label in enumerate(labels) if label[2:] in CAVITY_PORTS]
    measurement_columns = [
        idx for idx, label in enumerate(labels) if label[2:] in MEASUREMENT_PORTS
    ]

    cavity_noise = contribution[:, cavity_columns].sum(axis=1)
    measurement_noise = contribution[:, measurement_columns].sum(axis=1)
    signal_gain = grid.measured_power("a")

    if np.ndim(detuning) == 0:
        return PortPsd(
            float(detuning),
            float(cavity_noise[0]),
            float(measurement_noise[0]),
            float(signal_gain[0]),
        )
    return PortPsd(grid.detunings, cavity_noise, measurement_noise, signal_gain)


def quantum_limited(params: SystemParams) -> SystemParams:
    """Swap only, critically coupled: g_c = sqrt(kappa_m * kappa_l) / 2."""
    g_c = np.sqrt(params.readout.external_coupling_rate * params.cavity.internal_loss_rate) / 2
    return replace(params, rates=InteractionRates(float(g_c), 0.0))


def balanced(params: SystemParams, g: float) -> SystemParams:
    return replace(params, rates=InteractionRates(g, g))


def imbalanced(params: SystemParams, g_c: float, g_g: float) -> SystemParams:
    if g_c <= g_g:
        raise ConfigError(f"Imbalanced operation needs g_c > g_g, got {g_c} <= {g_g}.")
    return replace(params, rates=InteractionRates(g_c, g_g))


def with_cavity_loss(params: SystemParams, internal_loss_rate: float) -> SystemParams:
    return replace(params, cavity=replace(params.cavity, internal_loss_rate=internal_loss_rate))
