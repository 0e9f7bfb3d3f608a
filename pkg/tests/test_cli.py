import csv
import math

import numpy as np
import pytest
import yaml

from dkshom.cli import main
from dkshom.config import RunConfig, config_to_dict
from dkshom.core import DispersionSeries, mode_frequency
from dkshom.hom import FIT_COLUMNS
from dkshom.spectrum import synthetic_trace, write_trace


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_config(path, **sections):
    d = config_to_dict(RunConfig())
    for name, values in sections.items():
        if isinstance(values, dict):
            d[name].update(values)
        else:
            d[name] = values
    path.write_text(yaml.safe_dump(d))
    return str(path)


SMALL_HOM = {"shots_per_delay": 1_000_000, "repetitions": 2}


# characterize -------------------------------------------------------------------

def _trace_file(path, fsr, n=20, seed=0):
    disp = DispersionSeries.from_frequencies(193.7e12, fsr, 1.1e6)
    centers = mode_frequency(disp, np.arange(-n // 2, n // 2))
    f = np.arange(centers[0] - 30e9, centers[-1] + 30e9, 10e6)
    tr = synthetic_trace(f, [(c, 90e6, 0.6) for c in centers], noise=0.003,
                         rng=np.random.default_rng(seed))
    write_trace(path, tr)
    return str(path)


def test_characterize_reports_fsr_difference(tmp_path, capsys):
    a = _trace_file(tmp_path / "cav1.csv", 100.41e9, seed=1)
    b = _trace_file(tmp_path / "cav2.csv", 100.54e9, seed=2)
    out = tmp_path / "out"
    assert main(["characterize", a, b, "--out", str(out)]) == 0
    (row,) = _rows(out / "delta_fsr.csv")
    assert float(row["delta_fsr_hz"]) == pytest.approx(130e6, abs=1e6)
    assert len(_rows(out / "resonances_cav1.csv")) == 20
    summary = _rows(out / "dispersion_summary.csv")
    assert [r["trace"] for r in summary] == ["cav1", "cav2"]
    assert "delta FSR" in capsys.readouterr().out


def test_characterize_empty_file_is_io_error(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["characterize", str(empty), "--out", str(tmp_path / "o")]) == 3
    assert "empty.csv" in capsys.readouterr().err


def test_characterize_single_resonance_skips_dispersion(tmp_path, caplog):
    f = np.arange(193.6e12, 193.62e12, 5e6)
    path = tmp_path / "one.csv"
    write_trace(path, synthetic_trace(f, [(193.61e12, 90e6, 0.7)]))
    out = tmp_path / "o"
    with caplog.at_level("WARNING"):
        assert main(["characterize", str(path), "--out", str(out)]) == 0
    assert len(_rows(out / "resonances_one.csv")) == 1
    assert "dispersion fit skipped" in caplog.text
    (row,) = _rows(out / "dispersion_summary.csv")
    assert row["fsr_hz"] == ""


# align -------------------------------------------------------------------------

def test_align_per_channel_zeroes_all(tmp_path):
    out = tmp_path / "a"
    assert main(["align", "--out", str(out)]) == 0
    rows = _rows(out / "alignment_plan.csv")
    assert [r["channel"] for r in rows] == [f"CH{n}" for n in range(38, 48)]
    assert all(abs(float(r["residual_hz"])) <= 1e3 for r in rows)


def test_align_joint_spread(tmp_path):
    out = tmp_path / "a"
    assert main(["align", "--out", str(out), "--mode", "joint"]) == 0
    res = [float(r["residual_hz"]) for r in _rows(out / "alignment_plan.csv")]
    assert max(res) - min(res) == pytest.approx(9 * 130e6, abs=1e3)


def test_align_zero_ranges_is_infeasible(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.yaml", knobs={
        "heater_max_shift": "0 Hz", "ssb_range": "0 Hz", "pump_detuning_range": "0 Hz"})
    assert main(["align", "--config", cfg, "--out", str(tmp_path / "a")]) == 5
    err = capsys.readouterr().err
    assert "ssb_range" in err and "heater_max_shift" in err


def test_bad_config_exit_code(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("comb1: {fsr: 100.41}\n")
    assert main(["align", "--config", str(cfg)]) == 2


def test_show_config_is_idempotent(tmp_path, capsys):
    assert main(["show-config"]) == 0
    first = capsys.readouterr().out
    path = tmp_path / "c.yaml"
    path.write_text(first)
    assert main(["show-config", "--config", str(path)]) == 0
    assert capsys.readouterr().out == first


# hom and determinism ---------------------------------------------------------------

def _snapshot(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_hom_outputs_are_byte_identical_across_runs_and_workers(tmp_path):
    base = _write_config(tmp_path / "a.yaml", hom=SMALL_HOM)
    par = _write_config(tmp_path / "b.yaml",
                        hom={**SMALL_HOM, "workers": 3, "channel_workers": 2})
    outs = []
    for i, cfg in enumerate((base, base, par)):
        out = tmp_path / f"run{i}"
        assert main(["hom", "--config", cfg, "--out", str(out), "--channels", "CH44,CH45",
                     "--seed", "5"]) == 0
        outs.append(out)
    snaps = [_snapshot(o) for o in outs]
    echoes = [s.pop("effective_config.yaml").decode().splitlines() for s in snaps]
    # the echo differs only in the output directory
    assert [l for l in echoes[0] if not l.startswith("output_dir")] == \
        [l for l in echoes[1] if not l.startswith("output_dir")]
    assert snaps[0] == snaps[1]
    assert snaps[0] == snaps[2]
    assert {"fit_CH44.csv", "hist_CH45_rep1.csv", "hom_summary.csv"} <= set(snaps[0])
    rows = _rows(outs[0] / "hist_CH44_rep0.csv")
    assert len(rows) == 33 and rows[0]["delay_ps"] == "-800.0"


def test_hom_seed_changes_output(tmp_path):
    cfg = _write_config(tmp_path / "a.yaml", hom={**SMALL_HOM, "repetitions": 1})
    for seed in (1, 2):
        assert main(["hom", "--config", cfg, "--out", str(tmp_path / f"s{seed}"),
                     "--channels", "CH44", "--seed", str(seed)]) == 0
    a = (tmp_path / "s1" / "hist_CH44_rep0.csv").read_bytes()
    b = (tmp_path / "s2" / "hist_CH44_rep0.csv").read_bytes()
    assert a != b


# report --------------------------------------------------------------------------

def _fake_fits(d, channels, reps, rng):
    truth = {}
    for ch in channels:
        vs = rng.uniform(0.42, 0.48, reps)
        truth[ch] = vs
        with open(d / f"fit_{ch}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(FIT_COLUMNS)
            for r, v in enumerate(vs):
                w.writerow((ch, r, repr(float(v)), "0.01", "240.0", "5.0", "0.0", "100.0",
                            "30.0", 30))
    return truth


def test_report_empty_dir_is_error(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 3
    assert "fit_CH" in capsys.readouterr().err


def test_report_ten_channels_five_reps(tmp_path):
    chans = [f"CH{n}" for n in range(38, 48)]
    truth = _fake_fits(tmp_path, chans, 5, np.random.default_rng(0))
    assert main(["report", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "report.csv")
    assert [r["channel"] for r in rows] == chans
    for r in rows:
        v = truth[r["channel"]]
        assert float(r["V_mean"]) == pytest.approx(v.mean(), rel=1e-12)
        assert float(r["V_se"]) == pytest.approx(v.std(ddof=1) / math.sqrt(5), rel=1e-12)
        assert r["repetitions"] == "5"
    plot = _rows(tmp_path / "visibility_plot.csv")
    assert plot[0]["channel_index"] == "38"


def test_report_partial_artifacts_warns(tmp_path, capsys):
    (tmp_path / "effective_config.yaml").write_text(yaml.safe_dump(config_to_dict(RunConfig())))
    _fake_fits(tmp_path, ["CH38", "CH44", "CH47"], 5, np.random.default_rng(1))
    assert main(["report", str(tmp_path)]) == 0
    assert len(_rows(tmp_path / "report.csv")) == 3
    err = capsys.readouterr().err
    assert "CH39" in err and "CH44" not in err


def test_report_after_hom(tmp_path):
    cfg = _write_config(tmp_path / "a.yaml", hom=SMALL_HOM)
    out = tmp_path / "h"
    assert main(["hom", "--config", cfg, "--out", str(out), "--channels", "CH40"]) == 0
    assert main(["report", str(out)]) == 0
    (row,) = _rows(out / "report.csv")
    (summ,) = _rows(out / "hom_summary.csv")
    assert row["V_mean"] == summ["V_mean"]
