from __future__ import annotations

from configparser import ConfigParser
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from haloscan.acquisition import ACQUISITION_MODES, AcquisitionParams, TuningPlan
from haloscan.chain import ChainParams, JpaGainProfile
from haloscan.errors import ConfigError
from haloscan.faxion import AxionLineshape, FaxionConfig
from haloscan.network import (
    InteractionRates,
    ModeParams,
    SystemParams,
    balanced,
    imbalanced,
    quantum_limited,
    with_cavity_loss,
)
from haloscan.pipeline import AnalysisParams

DEFAULTS_PATH = Path(__file__).with_name("defaults.ini")
MODES = ("QL", "GC", "GCI")
ENHANCED_MODES = ("GC", "GCI")
TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class PresetRates:
    """Interaction rates (rad/s) the GC and GCI presets resolve to."""

    gc_rate: float
    gci_swap_rate: float
    gci_gain_rate: float

    def __post_init__(self):
        if self.gci_swap_rate <= self.gci_gain_rate:
            raise ConfigError("GCI needs a swap rate above its gain rate.")


@dataclass(frozen=True)
class VisibilitySettings:
    span: float
    step: float
    edge_tolerance: float
    reduced_cavity_loss: float

    def __post_init__(self):
        if self.span <= 0 or self.step <= 0:
            raise ConfigError("Visibility grid span and step must be positive.")
        if self.reduced_cavity_loss <= 0:
            raise ConfigError("Reduced cavity loss must be positive.")


@dataclass(frozen=True)
class RunConfig:
    """
    Everything one command needs, in angular units where physics is concerned.

    base_system carries the mode parameters with no interaction; system_for()
    resolves a mode preset on top of it.
    """

    base_system: SystemParams
    presets: PresetRates
    chain: ChainParams
    faxion: FaxionConfig
    acquisition: AcquisitionParams
    plan: TuningPlan
    analysis: AnalysisParams
    visibility: VisibilitySettings
    spectrum_span: float
    mode: str
    trials: int
    master_seed: int
    acquisition_mode: str
    threads: int
    cache_dir: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"Unknown mode {self.mode!r}; expected one of {MODES}.")
        if self.acquisition_mode not in ACQUISITION_MODES:
            raise ConfigError(
                f"Unknown acquisition mode {self.acquisition_mode!r}; "
                f"expected one of {ACQUISITION_MODES}."
            )
        if self.trials < 1:
            raise ConfigError(f"Need at least one trial, got {self.trials}.")
        if self.threads == 0:
            raise ConfigError("Thread count cannot be 0.")
        if self.spectrum_span <= 0:
            raise ConfigError("Spectrum span must be positive.")

    @property
    def system(self) -> SystemParams:
        return self.system_for(self.mode)

    def system_for(self, mode: str) -> SystemParams:
        if mode == "QL":
            return quantum_limited(self.base_system)
        if mode == "GC":
            return balanced(self.base_system, self.presets.gc_rate)
        if mode == "GCI":
            return imbalanced(
                self.base_system, self.presets.gci_swap_rate, self.presets.gci_gain_rate
            )
        raise ConfigError(f"Unknown mode {mode!r}; expected one of {MODES}.")

    def reduced_loss_system(self, mode: str) -> SystemParams:
        reduced = replace(
            self,
            base_system=with_cavity_loss(
                self.base_system, TWO_PI * self.visibility.reduced_cavity_loss
            ),
        )
        return reduced.system_for(mode)

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        given = {key: value for key, value in overrides.items() if value is not None}
        return replace(self, **given)

    def to_manifest(self) -> dict:
        """Resolved configuration in Hz, for echoing into run directories."""

        def in_hz(mode_params: ModeParams) -> dict:
            return {key: value / TWO_PI for key, value in asdict(mode_params).items()}

        system = self.system
        return {
            "mode": self.mode,
            "trials": self.trials,
            "master_seed": self.master_seed,
            "acquisition_mode": self.acquisition_mode,
            "system": {
                "cavity_Hz": in_hz(system.cavity),
                "readout_Hz": in_hz(system.readout),
                "g_c_Hz": system.rates.g_c / TWO_PI,
                "g_g_Hz": system.rates.g_g / TWO_PI,
            },
            "chain": {
                "efficiency": self.chain.efficiency,
                "temperature_K": self.chain.temperature,
                "n_sys": self.chain.n_sys,
                "jpa_gain_db": self.chain.jpa_gain.peak_gain_db,
                "jpa_bandwidth_Hz": self.chain.jpa_gain.bandwidth / TWO_PI,
                "signal_frequency_Hz": self.chain.signal_frequency / TWO_PI,
            },
            "faxion": asdict(self.faxion),
            "acquisition": {
                **asdict(self.acquisition),
                "resolution_Hz": self.acquisition.resolution,
                "spectrum_span_Hz": self.spectrum_span,
            },
            "plan": {**asdict(self.plan), "step_count": self.plan.step_count},
            "analysis": asdict(self.analysis),
        }


def read_parser(path: Optional[Union[str, Path]] = None) -> ConfigParser:
    """Packaged defaults, overridden by the keys present in path."""
    parser = ConfigParser()
    if not parser.read(DEFAULTS_PATH):
        raise FileNotFoundError(DEFAULTS_PATH)

    if path is not None and not parser.read(Path(path).expanduser()):
        raise FileNotFoundError(path)

    return parser


def _number(parser: ConfigParser, section: str, option: str, kind=float):
    try:
        if kind is int:
            return parser.getint(section, option)
        return parser.getfloat(section, option)
    except ValueError as error:
        raise ConfigError(
            f"Option {option} in [{section}] must be {kind.__name__}: {error}"
        ) from None


def load_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """
    Build a RunConfig from the packaged defaults and an optional user file.

    Raises FileNotFoundError, NoSectionError and NoOptionError from the
    parser unchanged, and ConfigError for values that do not validate.
    """
    parser = read_parser(path)

    def hz(section: str, option: str) -> float:
        return TWO_PI * _number(parser, section, option)

    cavity = ModeParams(
        hz("system", "cavity_frequency"),
        hz("system", "cavity_loss"),
        hz("system", "axion_coupling"),
    )
    readout = ModeParams(
        hz("system", "readout_frequency"),
        hz("system", "readout_loss"),
        hz("system", "readout_coupling"),
    )
    base_system = SystemParams(cavity, readout, InteractionRates(0.0, 0.0))
    presets = PresetRates(
        hz("system", "gc_rate"), hz("system", "gci_swap_rate"), hz("system", "gci_gain_rate")
    )

    chain = ChainParams(
        efficiency=_number(parser, "chain", "efficiency"),
        temperature=_number(parser, "chain", "temperature"),
        n_sys=_number(parser, "chain", "n_sys"),
        jpa_gain=JpaGainProfile(
            _number(parser, "chain", "jpa_gain_db"), hz("chain", "jpa_bandwidth")
        ),
        signal_frequency=readout.frequency,
    )

    rest_frequency = _number(parser, "system", "cavity_frequency")
    if parser.has_option("faxion", "rest_frequency"):
        rest_frequency = _number(parser, "faxion", "rest_frequency")
    faxion = FaxionConfig(
        update_rate=_number(parser, "faxion", "update_rate"),
        modulation_depth=_number(parser, "faxion", "modulation_depth"),
        carrier_power=_number(parser, "faxion", "carrier_power"),
        lineshape=AxionLineshape(
            rest_frequency, _number(parser, "faxion", "velocity_parameter")
        ),
        envelope_duration=_number(parser, "faxion", "envelope_duration"),
        envelope_seed=_number(parser, "faxion", "envelope_seed", int),
    )

    acquisition = AcquisitionParams(
        _number(parser, "acquisition", "sub_traces", int),
        _number(parser, "acquisition", "sub_trace_duration"),
    )
    plan = TuningPlan(
        _number(parser, "plan", "step_size"),
        _number(parser, "plan", "window"),
        _number(parser, "plan", "init_window"),
    )
    plan.step_bins(acquisition.resolution)

    analysis = AnalysisParams(
        _number(parser, "analysis", "sg_window", int),
        _number(parser, "analysis", "sg_order", int),
        _number(parser, "analysis", "mask_fraction"),
    )
    visibility = VisibilitySettings(
        _number(parser, "visibility", "span"),
        _number(parser, "visibility", "step"),
        _number(parser, "visibility", "edge_tolerance"),
        _number(parser, "visibility", "reduced_cavity_loss"),
    )

    return RunConfig(
        base_system=base_system,
        presets=presets,
        chain=chain,
        faxion=faxion,
        acquisition=acquisition,
        plan=plan,
        analysis=analysis,
        visibility=visibility,
        spectrum_span=_number(parser, "acquisition", "spectrum_span"),
        mode=parser.get("run", "mode"),
        trials=_number(parser, "run", "trials", int),
        master_seed=_number(parser, "run", "seed", int),
        acquisition_mode=parser.get("run", "acquisition_mode"),
        threads=_number(parser, "run", "threads", int),
        cache_dir=parser.get("faxion", "cache_dir"),
    )
