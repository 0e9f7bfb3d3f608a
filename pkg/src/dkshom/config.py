"""Run configuration: one YAML file, unit-annotated values, strict keys.

Physical values are strings with units (``"100.41 GHz"``, ``"400 ps"``,
``"2.26 pm/mW"``) parsed with pint into SI floats at load.  Bare numbers are
rejected for dimensional fields so a forgotten unit cannot slip through.
Emitting writes every field in canonical units, so load -> emit -> load is
a fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from typing import Any

import numpy as np
import yaml

from .align import TuningKnobs
from .core import CombSpec, DwdmGrid, channel_name, parse_channel, sech2_envelope
from .errors import ConfigError, DksHomError
from .hom import BackgroundModel, DetectorModel, Imperfections, PulseTrain


@lru_cache(maxsize=1)
def _ureg():
    import pint

    return pint.UnitRegistry()


@dataclass(frozen=True)
class CombConfig:
    pump_channel: str = "CH37"
    pump_offset: float = 0.0
    fsr: float = 100.41e9
    pump_power: float = 1e-3
    bandwidth_3db: float = 3e12
    max_mode: int = 40

    def build(self, grid: DwdmGrid) -> CombSpec:
        f_p = grid.center(parse_channel(self.pump_channel)) + self.pump_offset
        env = sech2_envelope(self.pump_power, self.fsr, self.bandwidth_3db, self.max_mode)
        return CombSpec(f_p, self.fsr, env, parse_channel(self.pump_channel))


@dataclass(frozen=True)
class AlignOptions:
    mode: str = "per-channel"
    objective: str = "max_abs"
    hard_cap: float = 1e9

    def __post_init__(self) -> None:
        if self.mode not in ("per-channel", "joint"):
            raise ConfigError("align.mode must be 'per-channel' or 'joint'")
        if self.objective not in ("max_abs", "rms"):
            raise ConfigError("align.objective must be 'max_abs' or 'rms'")


@dataclass(frozen=True)
class PulseOptions:
    """Both trains; source 2 may differ in width and brightness."""

    repetition_rate: float = 250e6
    pulse_fwhm_1: float = 400e-12
    pulse_fwhm_2: float = 420e-12
    mean_photons_1: float = 0.01
    mean_photons_2: float = 0.0115
    phase_model: str = "random"

    def trains(self, detuning: float = 0.0) -> tuple[PulseTrain, PulseTrain]:
        return (PulseTrain(self.repetition_rate, self.pulse_fwhm_1, self.mean_photons_1,
                           0.0, self.phase_model),
                PulseTrain(self.repetition_rate, self.pulse_fwhm_2, self.mean_photons_2,
                           detuning, self.phase_model))


@dataclass(frozen=True)
class BackgroundOptions:
    enabled: bool = True
    adjacent_channel_isolation: float = 28.0
    next_nearest_isolation: float = 35.0
    cascaded_isolation: float = 50.0

    def build(self) -> BackgroundModel | None:
        if not self.enabled:
            return None
        return BackgroundModel(self.adjacent_channel_isolation, self.next_nearest_isolation,
                               self.cascaded_isolation)


@dataclass(frozen=True)
class HomOptions:
    delay_start: float = -800e-12
    delay_stop: float = 800e-12
    delay_step: float = 50e-12
    shots_per_delay: int = 10_000_000
    repetitions: int = 5
    workers: int = 1
    channel_workers: int = 1
    free_delta_omega: bool = False

    def delays(self) -> np.ndarray:
        n = int(round((self.delay_stop - self.delay_start) / self.delay_step))
        return self.delay_start + self.delay_step * np.arange(n + 1)


@dataclass(frozen=True)
class CharacterizeOptions:
    min_depth: float = 0.1
    min_separation: float = 10e9
    dispersion_order: int = 2
    pump_frequency: float = 0.0          # 0 selects the trace centre
    group_index: float = 2.0
    cavity_length: float = 0.0           # 0 skips coupling inversion


# section -> (class, {field: kind}); kind is a pint unit string, or one of
# "int", "float", "bool", "str", "dB" (logarithmic, parsed by hand)
SCHEMA: dict[str, tuple[type, dict[str, str]]] = {
    "grid": (DwdmGrid, {"anchor_frequency": "Hz", "channel_spacing": "Hz",
                        "passband_fwhm": "Hz"}),
    "comb1": (CombConfig, {"pump_channel": "str", "pump_offset": "Hz", "fsr": "Hz",
                           "pump_power": "W", "bandwidth_3db": "Hz", "max_mode": "int"}),
    "comb2": (CombConfig, {"pump_channel": "str", "pump_offset": "Hz", "fsr": "Hz",
                           "pump_power": "W", "bandwidth_3db": "Hz", "max_mode": "int"}),
    "knobs": (TuningKnobs, {"heater_response": "m/W", "heater_resistance": "ohm",
                            "heater_voltage_step": "V", "heater_max_shift": "Hz",
                            "pump_detuning_range": "Hz", "ssb_range": "Hz",
                            "ssb_resolution": "Hz"}),
    "align": (AlignOptions, {"mode": "str", "objective": "str", "hard_cap": "Hz"}),
    "pulses": (PulseOptions, {"repetition_rate": "Hz", "pulse_fwhm_1": "s",
                              "pulse_fwhm_2": "s", "mean_photons_1": "float",
                              "mean_photons_2": "float", "phase_model": "str"}),
    "imperfections": (Imperfections, {"polarization_overlap": "float",
                                      "timing_jitter": "s", "frequency_wander": "Hz"}),
    "detector": (DetectorModel, {"efficiency": "float", "dark_count_rate": "Hz",
                                 "dead_time": "s", "coincidence_window": "s"}),
    "background": (BackgroundOptions, {"enabled": "bool", "adjacent_channel_isolation": "dB",
                                       "next_nearest_isolation": "dB",
                                       "cascaded_isolation": "dB"}),
    "hom": (HomOptions, {"delay_start": "s", "delay_stop": "s", "delay_step": "s",
                         "shots_per_delay": "int", "repetitions": "int", "workers": "int",
                         "channel_workers": "int", "free_delta_omega": "bool"}),
    "characterize": (CharacterizeOptions, {"min_depth": "float", "min_separation": "Hz",
                                           "dispersion_order": "int",
                                           "pump_frequency": "Hz", "group_index": "float",
                                           "cavity_length": "m"}),
}
TOP_LEVEL = ("seed", "output_dir", "channels", *SCHEMA)

DEFAULT_CHANNELS = tuple(range(38, 48))
# comb 2 sits this far above comb 1 so CH44 aligns near a 7.85 V heater setting
DEFAULT_PUMP_OFFSET_2 = 16.52e9


def _default_sections() -> dict[str, Any]:
    return {
        "grid": DwdmGrid(),
        "comb1": CombConfig(),
        "comb2": CombConfig(pump_offset=DEFAULT_PUMP_OFFSET_2, fsr=100.54e9),
        "knobs": TuningKnobs(),
        "align": AlignOptions(),
        "pulses": PulseOptions(),
        "imperfections": Imperfections(polarization_overlap=0.97, timing_jitter=20e-12,
                                       frequency_wander=100e6),
        "detector": DetectorModel(),
        "background": BackgroundOptions(),
        "hom": HomOptions(),
        "characterize": CharacterizeOptions(),
    }


@dataclass(frozen=True)
class RunConfig:
    seed: int = 1
    output_dir: str = "out"
    channels: tuple[int, ...] = DEFAULT_CHANNELS
    grid: DwdmGrid = field(default_factory=DwdmGrid)
    comb1: CombConfig = field(default_factory=lambda: _default_sections()["comb1"])
    comb2: CombConfig = field(default_factory=lambda: _default_sections()["comb2"])
    knobs: TuningKnobs = field(default_factory=TuningKnobs)
    align: AlignOptions = field(default_factory=AlignOptions)
    pulses: PulseOptions = field(default_factory=PulseOptions)
    imperfections: Imperfections = field(
        default_factory=lambda: _default_sections()["imperfections"])
    detector: DetectorModel = field(default_factory=DetectorModel)
    background: BackgroundOptions = field(default_factory=BackgroundOptions)
    hom: HomOptions = field(default_factory=HomOptions)
    characterize: CharacterizeOptions = field(default_factory=CharacterizeOptions)

    def combs(self) -> tuple[CombSpec, CombSpec]:
        return self.comb1.build(self.grid), self.comb2.build(self.grid)

    def channel_names(self) -> list[str]:
        return [channel_name(c) for c in self.channels]


# parsing --------------------------------------------------------------------

def parse_quantity(value: Any, unit: str, where: str) -> float:
    """SI magnitude of a unit-annotated string."""
    if isinstance(value, bool) or not isinstance(value, str):
        raise ConfigError(f"{where}: expected a value with units of {unit}, got {value!r}")
    ureg = _ureg()
    try:
        q = ureg.Quantity(value)
    except Exception as exc:
        raise ConfigError(f"{where}: cannot parse {value!r}: {exc}") from exc
    if q.dimensionless and ureg.Quantity(1, unit).dimensionless:
        return float(q.to(unit).magnitude)
    if q.dimensionless:
        raise ConfigError(f"{where}: {value!r} needs units of {unit}")
    try:
        return float(q.to(unit).magnitude)
    except Exception as exc:
        raise ConfigError(f"{where}: {value!r} is not convertible to {unit}") from exc


def _parse_db(value: Any, where: str) -> float:
    if isinstance(value, str) and value.strip().lower().endswith("db"):
        try:
            return float(value.strip()[:-2])
        except ValueError:
            pass
    raise ConfigError(f"{where}: expected a value like '50 dB', got {value!r}")


def _parse_field(value: Any, kind: str, where: str) -> Any:
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if kind == "dB":
        return _parse_db(value, where)
    return parse_quantity(value, kind, where)


def config_from_dict(data: dict | None) -> RunConfig:
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = sorted(set(data) - set(TOP_LEVEL))
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
    sections = _default_sections()
    for name, raw in data.items():
        if name not in SCHEMA:
            continue
        cls, kinds = SCHEMA[name]
        if not isinstance(raw, dict):
            raise ConfigError(f"{name}: expected a mapping")
        bad = sorted(set(raw) - set(kinds))
        if bad:
            raise ConfigError(f"{name}: unknown keys: {', '.join(bad)}")
        values = {k: _parse_field(v, kinds[k], f"{name}.{k}") for k, v in raw.items()}
        try:
            sections[name] = replace(sections[name], **values)
        except DksHomError as exc:
            raise ConfigError(f"{name}: {exc}") from exc
    try:
        seed = data.get("seed", 1)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")
        channels = tuple(parse_channel(c) for c in data.get("channels", DEFAULT_CHANNELS))
        out = data.get("output_dir", "out")
        if not isinstance(out, str):
            raise ConfigError("output_dir: expected a string")
        cfg = RunConfig(seed=seed, output_dir=out, channels=channels, **sections)
        cfg.combs()
    except ConfigError:
        raise
    except (DksHomError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return config_from_dict(data)


# emitting -------------------------------------------------------------------

def _format(value: Any, kind: str) -> Any:
    if kind in ("str", "bool", "int"):
        return value
    if kind == "float":
        return float(value)
    if kind == "dB":
        return f"{float(value)!r} dB"
    return f"{float(value)!r} {kind}"


def config_to_dict(cfg: RunConfig) -> dict:
    out: dict[str, Any] = {"seed": cfg.seed, "output_dir": cfg.output_dir,
                           "channels": cfg.channel_names()}
    for name, (_, kinds) in SCHEMA.items():
        sec = getattr(cfg, name)
        out[name] = {k: _format(getattr(sec, k), kind) for k, kind in kinds.items()}
    return out


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def with_overrides(cfg: RunConfig, *, seed: int | None = None, output_dir: str | None = None,
                   channels=None, mode: str | None = None,
                   repetitions: int | None = None) -> RunConfig:
    """Apply command-line overrides, re-validating what they touch."""
    kw: dict[str, Any] = {}
    if seed is not None:
        if seed < 0:
            raise ConfigError("seed must be non-negative")
        kw["seed"] = seed
    if output_dir is not None:
        kw["output_dir"] = output_dir
    if channels is not None:
        try:
            kw["channels"] = tuple(parse_channel(c) for c in channels)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if mode is not None:
        kw["align"] = AlignOptions(mode, cfg.align.objective, cfg.align.hard_cap)
    if repetitions is not None:
        if repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        kw["hom"] = replace(cfg.hom, repetitions=repetitions)
    return replace(cfg, **kw)


def field_names(section: str) -> list[str]:
    cls, _ = SCHEMA[section]
    return [f.name for f in fields(cls)]


def check_schema_covers_dataclasses() -> None:
    """Every schema key must be a field of its dataclass (used by tests)."""
    for name, (cls, kinds) in SCHEMA.items():
        missing = set(kinds) - set(field_names(name))
        if missing:
            raise AssertionError(f"{name}: {sorted(missing)}")
