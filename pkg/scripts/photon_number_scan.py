"""Expected HOM visibility versus mean photon number per pulse.

Uses the noise-free oracle histogram.  With threshold detectors the
weak-coherent-state dip stays at 0.5 until the click probability
saturates, so mu only matters once eta * mu approaches 1.
"""
import argparse
from dataclasses import replace

import numpy as np

from dkshom.config import RunConfig
from dkshom.hom import CoincidenceHistogram, Imperfections, expected_histogram, fit_visibility


def visibility(cfg: RunConfig, mu: float, imperfections: Imperfections) -> float:
    pulses = replace(cfg.pulses, mean_photons_1=mu, mean_photons_2=mu,
                     pulse_fwhm_2=cfg.pulses.pulse_fwhm_1)
    p1, p2 = pulses.trains(0.0)
    delays = cfg.hom.delays()
    shots = 10**10
    mean = expected_histogram(p1, p2, cfg.detector, None, delays, shots, imperfections,
                              nodes=24)
    full = np.full(delays.shape, shots, dtype=np.int64)
    hist = CoincidenceHistogram(delays, np.round(mean).astype(np.int64), full, full,
                                shots / p1.repetition_rate, shots)
    return fit_visibility(hist).V


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mu", type=float, nargs="+",
                    default=[0.001, 0.01, 0.1, 0.3, 1.0, 3.0, 10.0])
    args = ap.parse_args()
    cfg = RunConfig()
    print(f"{'mu':>8} {'ideal':>8} {'imperfect':>10}")
    for mu in args.mu:
        print(f"{mu:8.3f} {visibility(cfg, mu, Imperfections()):8.4f} "
              f"{visibility(cfg, mu, cfg.imperfections):10.4f}")


if __name__ == "__main__":
    main()
