"""Knob settings and residuals for per-channel and joint comb alignment.

Usage: python scripts/alignment_budget.py [--config configs/sweep.yaml]
"""
import argparse

import numpy as np

from dkshom.align import plan_report, solve_alignment, solve_per_channel
from dkshom.config import RunConfig, load_config


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else RunConfig()
    c1, c2 = cfg.combs()
    names = cfg.channel_names()

    per = solve_per_channel(c1, c2, names, cfg.grid, cfg.knobs)
    rows = plan_report(per, c2)
    print("per-channel plans")
    print("  ".join(f"{h:>14}" for h in rows[0][:8]))
    for r in rows[1:]:
        print("  ".join(f"{str(x)[:14]:>14}" for x in r[:8]))

    joint = solve_alignment(c1, c2, names, cfg.grid, cfg.knobs)
    res = np.array([joint.per_channel_residuals[c] for c in joint.channels])
    dfsr = c2.dispersion.fsr - c1.dispersion.fsr
    print(f"\njoint plan: heater {joint.knobs.heater_voltage:.2f} V, "
          f"SSB {joint.knobs.f_ssb / 1e6:.3f} MHz")
    print(f"residuals span {np.ptp(res) / 1e6:.3f} MHz "
          f"(expected {(len(res) - 1) * dfsr / 1e6:.3f} MHz from the FSR difference)")
    print(f"max |residual| {np.max(np.abs(res)) / 1e6:.3f} MHz")


if __name__ == "__main__":
    main()
