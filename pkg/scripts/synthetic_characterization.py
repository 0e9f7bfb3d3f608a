"""Generate two noisy cavity transmission scans and characterize them.

The FSRs default to 100.41 and 100.54 GHz; the recovered difference is
printed by ``dkshom characterize``.
"""
import argparse
from pathlib import Path

import numpy as np

from dkshom.cli import main as cli_main
from dkshom.core import DispersionSeries, mode_frequency
from dkshom.spectrum import synthetic_trace, write_trace


def make_trace(path: Path, fsr: float, d2: float, modes: int, noise: float, seed: int) -> None:
    disp = DispersionSeries.from_frequencies(193.7e12, fsr, d2)
    centers = mode_frequency(disp, np.arange(-modes // 2, modes - modes // 2))
    f = np.arange(centers[0] - 30e9, centers[-1] + 30e9, 8e6)
    trace = synthetic_trace(f, [(c, 90e6, 0.6) for c in centers], noise=noise,
                            rng=np.random.default_rng(seed))
    write_trace(path, trace)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/characterize")
    ap.add_argument("--fsr", type=float, nargs=2, default=[100.41e9, 100.54e9])
    ap.add_argument("--modes", type=int, default=100)
    ap.add_argument("--noise", type=float, default=0.005)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, fsr in enumerate(args.fsr):
        p = out / f"cavity{i + 1}_trace.csv"
        make_trace(p, fsr, 1.1e6, args.modes, args.noise, args.seed + i)
        paths.append(str(p))
    raise SystemExit(cli_main(["characterize", *paths, "--out", str(out)]))


if __name__ == "__main__":
    main()
