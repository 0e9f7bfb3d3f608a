"""Full HOM channel sweep: Monte Carlo fits next to the noise-free expectation.

Writes the same artifacts as ``dkshom hom`` plus ``expected.csv``.
Usage: python scripts/channel_sweep.py [--config configs/sweep.yaml] [--out out/sweep]
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from dkshom.cli import channel_detunings, cmd_hom, compute_plans
from dkshom.config import load_config, with_overrides
from dkshom.hom import CoincidenceHistogram, expected_histogram, fit_visibility

ROOT = Path(__file__).resolve().parents[1]


def expected_visibility(cfg, detuning: float) -> float:
    """Fit of the oracle mean histogram; large shot count keeps rounding negligible."""
    p1, p2 = cfg.pulses.trains(detuning)
    delays = cfg.hom.delays()
    shots = 10**10
    mean = expected_histogram(p1, p2, cfg.detector, cfg.background.build(), delays, shots,
                              cfg.imperfections, nodes=24)
    full = np.full(delays.shape, shots, dtype=np.int64)
    hist = CoincidenceHistogram(delays, np.round(mean).astype(np.int64), full, full,
                                shots / p1.repetition_rate, shots)
    return fit_visibility(hist).V


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "sweep.yaml"))
    ap.add_argument("--out")
    args = ap.parse_args()
    cfg = with_overrides(load_config(args.config), output_dir=args.out)

    summary = cmd_hom(cfg)
    plans, _ = compute_plans(cfg)
    det = channel_detunings(plans)
    rows = []
    for ch, (mean, se) in summary.items():
        v = expected_visibility(cfg, det[ch])
        rows.append((f"CH{ch}", repr(mean), repr(se), repr(v)))
        print(f"CH{ch}: simulated {mean:.4f} +- {se:.4f}, expected {v:.4f}")
    with open(Path(cfg.output_dir) / "expected.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("channel", "V_mean", "V_se", "V_expected"))
        w.writerows(rows)


if __name__ == "__main__":
    main()
