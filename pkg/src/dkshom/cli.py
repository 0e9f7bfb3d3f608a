"""Command-line entry point: characterize, align, hom, report.

Exit codes: 0 success, 2 config, 3 I/O, 4 fit, 5 infeasible alignment.
Set ``DKSHOM_LOG_LEVEL`` (e.g. ``INFO``) for progress messages on stderr.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .align import solve_alignment, solve_per_channel, write_plan_csv
from .config import RunConfig, config_from_dict, dump_config, load_config, with_overrides
from .core import channel_name, parse_channel
from .errors import ConfigError, DksHomError, FitError, TraceIOError
from .hom import (
    FIT_COLUMNS,
    aggregate,
    fit_row,
    fit_visibility,
    simulate_hom,
    write_fits,
    write_histogram,
    VisibilityFit,
)
from .spectrum import fit_dispersion, fit_resonances, read_trace, write_resonance_report

log = logging.getLogger("dkshom")

CONFIG_ECHO = "effective_config.yaml"
SUMMARY_COLUMNS = ("channel", "detuning_hz", "V_mean", "V_se", "repetitions")


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / CONFIG_ECHO).write_text(dump_config(cfg))
    except OSError as exc:
        raise TraceIOError(f"{out}: {exc.strerror or exc}") from exc
    return out


# characterize ---------------------------------------------------------------

def cmd_characterize(cfg: RunConfig, traces: list[str]) -> dict:
    """Fit every trace; summarise FSR per trace and the FSR difference of the first two."""
    opt = cfg.characterize
    out = _prepare_out(cfg)
    summary = []
    fsrs = []
    for path in traces:
        trace = read_trace(path)
        try:
            fits = fit_resonances(trace, min_depth=opt.min_depth,
                                  min_separation=opt.min_separation,
                                  group_index=opt.group_index if opt.cavity_length else None,
                                  cavity_length=opt.cavity_length or None)
        except FitError as exc:
            raise type(exc)(f"{path}: {exc}") from exc
        stem = Path(path).stem
        disp = None
        if len(fits) < opt.dispersion_order + 2:
            log.warning("%s: %d resonance(s), dispersion fit skipped", path, len(fits))
        else:
            pump = opt.pump_frequency or 0.5 * (trace.frequency[0] + trace.frequency[-1])
            try:
                disp = fit_dispersion(fits, pump, opt.dispersion_order)
            except FitError as exc:
                raise type(exc)(f"{path}: {exc}") from exc
        write_resonance_report(out / f"resonances_{stem}.csv", fits, disp)
        row = [stem, len(fits)]
        if disp is None:
            row += [""] * opt.dispersion_order
        else:
            row += [repr(float(disp.fsr))] + [repr(float(d)) for d in disp.higher_orders()]
            fsrs.append((stem, float(disp.fsr)))
        summary.append(row)
        log.info("%s: %d resonances", path, len(fits))
    header = ["trace", "n_resonances", "fsr_hz"] + [
        f"d{j}_over_2pi_hz" for j in range(2, opt.dispersion_order + 1)]
    _write_rows(out / "dispersion_summary.csv", header, summary)
    result = {"summary": summary}
    if len(fsrs) >= 2:
        (a, fa), (b, fb) = fsrs[:2]
        result["delta_fsr"] = fb - fa
        _write_rows(out / "delta_fsr.csv", ("trace_a", "trace_b", "delta_fsr_hz"),
                    [(a, b, repr(fb - fa))])
        print(f"delta FSR ({b} - {a}) = {(fb - fa) / 1e6:.3f} MHz")
    return result


# align ----------------------------------------------------------------------

def compute_plans(cfg: RunConfig):
    c1, c2 = cfg.combs()
    names = cfg.channel_names()
    if cfg.align.mode == "joint":
        plans = [solve_alignment(c1, c2, names, cfg.grid, cfg.knobs, cfg.align.objective,
                                 cfg.align.hard_cap)]
    else:
        plans = solve_per_channel(c1, c2, names, cfg.grid, cfg.knobs, cfg.align.objective,
                                  cfg.align.hard_cap)
    return plans, c2


def channel_detunings(plans) -> dict[int, float]:
    return {ch: float(p.per_channel_residuals[ch]) for p in plans for ch in p.channels}


def cmd_align(cfg: RunConfig):
    out = _prepare_out(cfg)
    plans, c2 = compute_plans(cfg)
    write_plan_csv(out / "alignment_plan.csv", plans, c2)
    res = np.array(list(channel_detunings(plans).values()))
    print(f"{cfg.align.mode}: {len(res)} channel(s), max |residual| = "
          f"{np.max(np.abs(res)) / 1e6:.6f} MHz, spread = {np.ptp(res) / 1e6:.6f} MHz")
    return plans


# hom ------------------------------------------------------------------------

def run_channel(cfg: RunConfig, channel: int, detuning: float):
    """All repetitions for one channel; seeds derive from (seed, channel, rep)."""
    p1, p2 = cfg.pulses.trains(detuning)
    bg = cfg.background.build()
    delays = cfg.hom.delays()
    results = []
    for rep in range(cfg.hom.repetitions):
        ss = np.random.SeedSequence(cfg.seed, spawn_key=(channel, rep))
        hist = simulate_hom(p1, p2, cfg.detector, bg, delays, cfg.hom.shots_per_delay, ss,
                            cfg.imperfections, workers=cfg.hom.workers)
        fit = fit_visibility(hist, free_delta_omega=cfg.hom.free_delta_omega)
        results.append((hist, fit))
    return results


def _run_channel_star(args):
    return run_channel(*args)


def cmd_hom(cfg: RunConfig) -> dict[int, tuple[float, float]]:
    out = _prepare_out(cfg)
    plans, _ = compute_plans(cfg)
    det = channel_detunings(plans)
    jobs = [(cfg, ch, det[ch]) for ch in cfg.channels]
    if cfg.hom.channel_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.hom.channel_workers) as pool:
            all_results = list(pool.map(_run_channel_star, jobs))
    else:
        all_results = [run_channel(*j) for j in jobs]

    summary = {}
    rows = []
    for (_, ch, dt), results in zip(jobs, all_results):
        name = channel_name(ch)
        fits = []
        for rep, (hist, fit) in enumerate(results):
            write_histogram(out / f"hist_{name}_rep{rep}.csv", hist)
            fits.append(fit)
        write_fits(out / f"fit_{name}.csv", [fit_row(name, r, f) for r, f in enumerate(fits)])
        mean, se = aggregate(fits)
        summary[ch] = (mean, se)
        rows.append((name, repr(dt), repr(mean), repr(se), len(fits)))
        print(f"{name}: V = {100 * mean:.2f} +- {100 * se:.2f} %")
    _write_rows(out / "hom_summary.csv", SUMMARY_COLUMNS, rows)
    return summary


# report ---------------------------------------------------------------------

def _read_fit_file(path: Path) -> list[VisibilityFit]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise TraceIOError(f"{path}: {exc.strerror or exc}") from exc
    if not rows or tuple(rows[0]) != FIT_COLUMNS:
        raise TraceIOError(f"{path}:1: expected header {','.join(FIT_COLUMNS)}")
    fits = []
    for i, r in enumerate(rows[1:], start=2):
        try:
            fits.append(VisibilityFit(float(r[2]), float(r[4]) * 1e-12, float(r[6]),
                                      float(r[7]), {"V": float(r[3])}, float(r[8]), int(r[9])))
        except (ValueError, IndexError, DksHomError) as exc:
            raise TraceIOError(f"{path}:{i}: bad row {r!r}") from exc
    if not fits:
        raise TraceIOError(f"{path}: no repetitions")
    return fits


def cmd_report(artifacts: str, out_dir: str | None = None) -> list[tuple]:
    """Merge per-channel fit files into one table plus plot-ready visibility data."""
    src = Path(artifacts)
    if not src.is_dir():
        raise TraceIOError(f"{src}: not a directory")
    files = sorted(src.glob("fit_CH*.csv"), key=lambda p: parse_channel(p.stem[4:]))
    expected = None
    echo = src / CONFIG_ECHO
    if echo.exists():
        try:
            expected = config_from_dict(yaml.safe_load(echo.read_text())).channels
        except ConfigError as exc:
            log.warning("%s: %s", echo, exc)
    if not files:
        want = ", ".join(f"fit_{channel_name(c)}.csv" for c in expected) if expected else \
            "fit_CH*.csv"
        raise TraceIOError(f"{src}: no fit artifacts; missing {want}")
    present = [parse_channel(p.stem[4:]) for p in files]
    if expected is not None:
        missing = [channel_name(c) for c in expected if c not in present]
        if missing:
            log.warning("partial artifacts: missing %s", ", ".join(missing))
            print(f"warning: missing channels {', '.join(missing)}", file=sys.stderr)
    rows = []
    for ch, path in zip(present, files):
        fits = _read_fit_file(path)
        mean, se = aggregate(fits)
        rows.append((channel_name(ch), repr(mean), repr(se), len(fits)))
    out = Path(out_dir) if out_dir else src
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "report.csv", ("channel", "V_mean", "V_se", "repetitions"), rows)
    _write_rows(out / "visibility_plot.csv", ("channel_index", "visibility_percent",
                                              "error_percent"),
                [(parse_channel(r[0]), f"{100 * float(r[1]):.4f}", f"{100 * float(r[2]):.4f}")
                 for r in rows])
    for r in rows:
        print(f"{r[0]}: V = {100 * float(r[1]):.2f} +- {100 * float(r[2]):.2f} % (n={r[3]})")
    return rows


# entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults if omitted)")
    common.add_argument("--seed", type=int, help="top-level seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--channels", help="comma-separated channel list, e.g. CH38,CH44")
    common.add_argument("--mode", choices=("joint", "per-channel"), help="alignment mode")
    common.add_argument("--repetitions", type=int, help="HOM repetitions per channel")

    p = argparse.ArgumentParser(prog="dkshom", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    c = sub.add_parser("characterize", parents=[common], help="fit transmission traces")
    c.add_argument("traces", nargs="+")
    sub.add_parser("align", parents=[common], help="solve comb alignment")
    sub.add_parser("hom", parents=[common], help="simulate HOM scans and fit visibilities")
    r = sub.add_parser("report", parents=[common], help="merge per-channel fit artifacts")
    r.add_argument("artifacts", help="directory written by 'hom'")
    sub.add_parser("show-config", parents=[common], help="print the effective config")
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    channels = None
    if args.channels:
        channels = [c for c in args.channels.split(",") if c.strip()]
    return with_overrides(cfg, seed=args.seed, output_dir=args.out, channels=channels,
                          mode=args.mode, repetitions=args.repetitions)


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DKSHOM_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "characterize":
            cmd_characterize(cfg, args.traces)
        elif args.command == "align":
            cmd_align(cfg)
        elif args.command == "hom":
            cmd_hom(cfg)
        elif args.command == "report":
            cmd_report(args.artifacts, args.out)
        elif args.command == "show-config":
            sys.stdout.write(dump_config(cfg))
    except DksHomError as exc:
        print(f"dkshom: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
