import textwrap

import pytest
import yaml

from dkshom.config import (
    RunConfig,
    check_schema_covers_dataclasses,
    config_from_dict,
    config_to_dict,
    dump_config,
    load_config,
    parse_quantity,
    with_overrides,
)
from dkshom.errors import ConfigError


def test_schema_matches_dataclasses():
    check_schema_covers_dataclasses()


def test_defaults_round_trip_is_fixed_point():
    cfg = RunConfig()
    text = dump_config(cfg)
    again = config_from_dict(yaml.safe_load(text))
    assert again == cfg
    assert dump_config(again) == text


def test_unit_strings_are_parsed(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(textwrap.dedent("""
        seed: 7
        channels: [CH44, 45]
        comb1: {fsr: 100.41 GHz}
        comb2: {fsr: 100540 MHz, pump_offset: 16.52 GHz}
        knobs: {heater_response: 2.26 pm/mW, heater_resistance: 1 kohm}
        pulses: {pulse_fwhm_1: 400 ps, repetition_rate: 0.25 GHz}
        detector: {dead_time: 40 ns, dark_count_rate: 100 Hz}
        background: {cascaded_isolation: 50 dB}
    """))
    cfg = load_config(path)
    assert cfg.seed == 7 and cfg.channels == (44, 45)
    assert cfg.comb1.fsr == pytest.approx(100.41e9, rel=1e-15)
    assert cfg.comb2.fsr == pytest.approx(100.54e9, rel=1e-15)
    assert cfg.knobs.heater_response == pytest.approx(2.26e-9, rel=1e-15)
    assert cfg.knobs.heater_resistance == pytest.approx(1000.0)
    assert cfg.pulses.pulse_fwhm_1 == pytest.approx(400e-12, rel=1e-15)
    assert cfg.pulses.repetition_rate == pytest.approx(250e6)
    assert cfg.detector.dead_time == pytest.approx(40e-9)
    assert cfg.background.cascaded_isolation == 50.0
    text = dump_config(cfg)
    assert dump_config(config_from_dict(yaml.safe_load(text))) == text


@pytest.mark.parametrize("data, match", [
    ({"bogus": 1}, "unknown top-level"),
    ({"comb1": {"fsr": "100 GHz", "colour": "red"}}, "unknown keys"),
    ({"comb1": {"fsr": 100.41e9}}, "units"),
    ({"comb1": {"fsr": "5 ps"}}, "convertible"),
    ({"comb1": {"fsr": "lots GHz"}}, "parse"),
    ({"detector": {"efficiency": 1.5}}, "efficiency"),
    ({"background": {"cascaded_isolation": 50}}, "dB"),
    ({"align": {"mode": "sometimes"}}, "mode"),
    ({"seed": -1}, "seed"),
    ({"channels": ["CHx"]}, "channel"),
    ({"hom": {"shots_per_delay": 1.5}}, "integer"),
])
def test_invalid_configs_rejected(data, match):
    with pytest.raises(ConfigError, match=match) as exc:
        config_from_dict(data)
    assert exc.value.exit_code == 2


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("grid: [unclosed\n")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(bad)


def test_dimensionless_quantity():
    assert parse_quantity("0.5", "dimensionless", "x") == 0.5


def test_overrides():
    cfg = with_overrides(RunConfig(), seed=9, output_dir="o", channels=["CH40"], mode="joint",
                         repetitions=2)
    assert (cfg.seed, cfg.output_dir, cfg.channels) == (9, "o", (40,))
    assert cfg.align.mode == "joint" and cfg.hom.repetitions == 2
    with pytest.raises(ConfigError):
        with_overrides(RunConfig(), repetitions=0)


def test_emitted_values_carry_units():
    d = config_to_dict(RunConfig())
    assert d["comb1"]["fsr"].endswith(" Hz")
    assert d["pulses"]["pulse_fwhm_1"].endswith(" s")
    assert d["background"]["cascaded_isolation"] == "50.0 dB"
    assert d["channels"][0] == "CH38"


def test_sweep_config_file_loads():
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / "sweep.yaml"
    cfg = load_config(path)
    assert cfg.comb2.fsr - cfg.comb1.fsr == pytest.approx(130e6, abs=1e-3)
    assert len(cfg.channels) == 10
