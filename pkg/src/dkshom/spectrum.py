"""Transmission-trace characterization.

Dip finding, per-resonance Lorentzian fits (loaded Q, extinction, coupling
candidates) and the integrated-dispersion fit across a mode family.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from .core import C_LIGHT, CouplingCandidate, DispersionSeries, invert_coupling
from .errors import (
    AssignmentError,
    DegenerateWindowError,
    DomainError,
    NonConvergenceError,
    TraceIOError,
)

log = logging.getLogger(__name__)

#: fitted depths closer than this to 1 are reported as full extinction
FULL_EXTINCTION_TOL = 1e-9


@dataclass(frozen=True)
class TransmissionTrace:
    """Normalized transmission sampled on a strictly increasing frequency axis."""

    frequency: np.ndarray
    transmission: np.ndarray
    calibration_note: str = ""

    def __post_init__(self) -> None:
        f = np.asarray(self.frequency, dtype=float)
        t = np.asarray(self.transmission, dtype=float)
        if f.ndim != 1 or f.shape != t.shape:
            raise DomainError("frequency and transmission must be 1-D arrays of equal length")
        if f.size > 1 and not np.all(np.diff(f) > 0):
            raise DomainError("frequencies must be strictly increasing")
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise DomainError("transmission must be finite and non-negative")
        object.__setattr__(self, "frequency", f)
        object.__setattr__(self, "transmission", t)

    def __len__(self) -> int:
        return self.frequency.size

    def window(self, lo: float, hi: float) -> "TransmissionTrace":
        sel = (self.frequency >= lo) & (self.frequency <= hi)
        return TransmissionTrace(self.frequency[sel], self.transmission[sel],
                                 self.calibration_note)


@dataclass(frozen=True)
class ResonanceFit:
    center_frequency: float
    linewidth_fwhm: float
    depth: float
    q_total: float
    er_db: float
    coupling_candidates: tuple[CouplingCandidate, ...] = ()
    fit_rms: float = 0.0
    mode_index: int | None = None

    def __post_init__(self) -> None:
        if not self.linewidth_fwhm > 0.0:
            raise DomainError("linewidth must be positive")
        if not 0.0 < self.depth <= 1.0:
            raise DomainError(f"depth must lie in (0, 1], got {self.depth}")


# --------------------------------------------------------------------------
# line shapes and synthetic traces
# --------------------------------------------------------------------------

def lorentzian_dip(f, center, fwhm, depth):
    """T(f) = 1 - depth / (1 + (2 (f - center) / fwhm)^2)"""
    x = 2.0 * (np.asarray(f) - center) / fwhm
    return 1.0 - depth / (1.0 + x * x)


def synthetic_trace(frequency, resonances: Iterable[tuple[float, float, float]],
                    noise: float = 0.0, rng: np.random.Generator | None = None,
                    note: str = "synthetic") -> TransmissionTrace:
    """Product of Lorentzian dips ``(center, fwhm, depth)`` plus Gaussian noise.

    Noisy samples are clipped at zero.
    """
    f = np.asarray(frequency, dtype=float)
    t = np.ones_like(f)
    for center, fwhm, depth in resonances:
        t *= lorentzian_dip(f, center, fwhm, depth)
    if noise > 0.0:
        rng = np.random.default_rng() if rng is None else rng
        t = np.clip(t + rng.normal(0.0, noise, f.size), 0.0, None)
    return TransmissionTrace(f, t, note)


def ring_trace(frequency, centers: Sequence[float], r: float, a: float,
               noise: float = 0.0, rng: np.random.Generator | None = None,
               note: str = "synthetic all-pass ring") -> TransmissionTrace:
    """All-pass ring transmission, normalized to its off-resonance maximum.

    Each sample uses the round-trip phase relative to its nearest resonance,
    with the local spacing as the FSR, so dispersive grids keep the exact
    ring line shape around every dip.
    """
    f = np.asarray(frequency, dtype=float)
    c = np.sort(np.asarray(centers, dtype=float))
    spacing = np.gradient(c) if c.size > 1 else np.array([np.inf])
    idx = np.clip(np.searchsorted(c, f), 1, max(c.size - 1, 1))
    left = c[idx - 1]
    right = c[np.minimum(idx, c.size - 1)]
    nearest = np.where(np.abs(f - left) <= np.abs(f - right), idx - 1, np.minimum(idx, c.size - 1))
    phi = 2.0 * math.pi * (f - c[nearest]) / spacing[nearest]
    cos = np.cos(phi)
    t = (a * a - 2 * r * a * cos + r * r) / (1 - 2 * r * a * cos + (r * a) ** 2)
    t_max = (a + r) ** 2 / (1 + r * a) ** 2
    t = t / t_max
    if noise > 0.0:
        rng = np.random.default_rng() if rng is None else rng
        t = np.clip(t + rng.normal(0.0, noise, f.size), 0.0, None)
    return TransmissionTrace(f, t, note)


# --------------------------------------------------------------------------
# trace files
# --------------------------------------------------------------------------

_SPLIT = re.compile(r"[,;\s]+")
_WAVELENGTH_SCALE = {"wavelength_m": 1.0, "wavelength_nm": 1e-9, "wavelength_um": 1e-6}


def read_trace(path) -> TransmissionTrace:
    """Two-column numeric text (frequency Hz, transmission).

    '#' starts a comment line.  An optional first non-comment line is a
    header; if its first column is ``wavelength_nm``/``wavelength_um``/
    ``wavelength_m`` the axis is converted with f = c / lambda.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise TraceIOError(f"{path}: {exc.strerror or exc}") from exc

    scale = None
    xs, ys = [], []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p for p in _SPLIT.split(line) if p]
        try:
            x, y = float(parts[0]), float(parts[1])
        except (ValueError, IndexError):
            if xs or scale is not None or len(parts) < 2:
                raise TraceIOError(f"{path}:{lineno}: expected two numbers, got {raw!r}")
            scale = _WAVELENGTH_SCALE.get(parts[0].lower(), 0.0)
            continue
        xs.append(x)
        ys.append(y)
    if not xs:
        raise TraceIOError(f"{path}: no samples")

    x = np.asarray(xs)
    y = np.asarray(ys)
    if scale:
        x = C_LIGHT / (x * scale)
    order = np.argsort(x, kind="stable")
    try:
        return TransmissionTrace(x[order], y[order], f"read from {path.name}")
    except DomainError as exc:
        raise TraceIOError(f"{path}: {exc}") from exc


def write_trace(path, trace: TransmissionTrace) -> None:
    with open(path, "w") as fh:
        if trace.calibration_note:
            fh.write(f"# {trace.calibration_note}\n")
        fh.write("frequency_hz,transmission\n")
        for f, t in zip(trace.frequency, trace.transmission):
            fh.write(f"{float(f)!r},{float(t)!r}\n")


# --------------------------------------------------------------------------
# dip finding and Lorentzian fits
# --------------------------------------------------------------------------

def find_resonances(trace: TransmissionTrace, min_depth: float = 0.1,
                    min_separation: float = 1e9) -> list[float]:
    """Frequencies of local minima deeper than ``min_depth``.

    Candidates are accepted deepest-first and must sit at least
    ``min_separation`` Hz from every accepted dip.  Sorted by frequency.
    """
    if len(trace) < 3:
        raise DomainError("trace needs at least 3 samples")
    t = trace.transmission
    # plateau-aware local minima of T
    peaks, _ = find_peaks(-t, height=-(1.0 - min_depth))
    if peaks.size == 0:
        return []
    order = peaks[np.lexsort((peaks, t[peaks]))]
    accepted: list[float] = []
    for i in order:
        f = trace.frequency[i]
        if all(abs(f - g) >= min_separation for g in accepted):
            accepted.append(float(f))
    return sorted(accepted)


def _half_width_guess(f, t, i_min, depth):
    half = 1.0 - 0.5 * depth
    lo = i_min
    while lo > 0 and t[lo] < half:
        lo -= 1
    hi = i_min
    while hi < t.size - 1 and t[hi] < half:
        hi += 1
    return lo, hi


def fit_lorentzian(trace: TransmissionTrace, window: tuple[float, float], *,
                   group_index: float | None = None, cavity_length: float | None = None,
                   max_iterations: int = 200) -> ResonanceFit:
    """Least-squares Lorentzian fit of the single dip inside ``window``.

    If ``group_index`` and ``cavity_length`` are given, the (r, a) coupling
    candidates are filled from Q and ER.
    """
    sub = trace.window(*window)
    f, t = sub.frequency, sub.transmission
    if f.size < 5:
        raise DegenerateWindowError(f"window {window} holds only {f.size} samples")
    i_min = int(np.argmin(t))
    depth0 = 1.0 - t[i_min]
    if depth0 <= 0.0:
        raise DegenerateWindowError(f"no dip inside window {window}")
    lo, hi = _half_width_guess(f, t, i_min, depth0)
    if lo == 0 or hi == f.size - 1:
        raise DegenerateWindowError(f"dip at {f[i_min]:.9g} Hz touches the window edge")

    f0 = f[i_min]
    w0 = max(f[hi] - f[lo], 2.0 * float(np.min(np.diff(f))))
    x = (f - f0) / w0  # dimensionless axis keeps the Jacobian well scaled

    def resid(p):
        xc, w, d = p
        u = 2.0 * (x - xc) / w
        return 1.0 - d / (1.0 + u * u) - t

    res = least_squares(resid, x0=[0.0, 1.0, min(depth0, 1.0)],
                        bounds=([-np.inf, 1e-9, 0.0], [np.inf, np.inf, 1.0]),
                        method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                        max_nfev=max_iterations * 10)
    if res.status <= 0:
        raise NonConvergenceError(f"Lorentzian fit near {f0:.9g} Hz: {res.message}")
    xc, w, depth = (float(v) for v in res.x)
    center = float(f0 + xc * w0)
    fwhm = float(w * w0)
    if 1.0 - depth < FULL_EXTINCTION_TOL:
        depth = 1.0
    if not (f[0] < center < f[-1]) or depth <= 0.0:
        raise NonConvergenceError(f"Lorentzian fit near {f0:.9g} Hz left the window")

    q = center / fwhm
    er_db = -math.inf if depth >= 1.0 else 10.0 * math.log10(1.0 - depth)
    cands: tuple[CouplingCandidate, ...] = ()
    if group_index is not None and cavity_length is not None:
        cands = tuple(invert_coupling(q, er_db, group_index, cavity_length, C_LIGHT / center))
    rms = float(np.sqrt(np.mean(res.fun ** 2)))
    return ResonanceFit(center, fwhm, depth, q, er_db, cands, rms)


def fit_resonances(trace: TransmissionTrace, *, min_depth: float = 0.1,
                   min_separation: float = 1e9, half_window: float | None = None,
                   group_index: float | None = None,
                   cavity_length: float | None = None) -> list[ResonanceFit]:
    """Find every dip and fit each in a window of +-``half_window``.

    The default half window is ``min_separation / 2``.
    """
    half = 0.5 * min_separation if half_window is None else half_window
    fits = []
    for fc in find_resonances(trace, min_depth, min_separation):
        fits.append(fit_lorentzian(trace, (fc - half, fc + half),
                                   group_index=group_index, cavity_length=cavity_length))
    return fits


# --------------------------------------------------------------------------
# dispersion
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DispersionFit:
    """Fitted series plus the per-resonance bookkeeping behind it."""

    series: DispersionSeries
    centers: np.ndarray          # Hz, sorted, all inputs
    mode_indices: np.ndarray     # assigned mu per center
    residuals: np.ndarray        # Hz, measured - model, all inputs
    trimmed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def fsr(self) -> float:
        return self.series.fsr

    def higher_orders(self) -> tuple[float, ...]:
        """D_j / 2pi for j >= 2 [Hz]."""
        return tuple(d / (2 * math.pi) for d in self.series.coefficients[1:])


def _round_half_down(x: float) -> int:
    return int(math.ceil(x - 0.5))


def _assign_modes(c: np.ndarray, i0: int, fsr0: float) -> np.ndarray:
    """Greedy nearest-integer walk outwards from the pump resonance.

    Each step uses the local spacing of the last two assigned modes as the
    running FSR; half-integer ties go to the smaller |mu|.  A resonance that
    lands on an already-used mode keeps that index and is left for trimming.
    """
    mu = np.zeros(c.size, dtype=int)
    for direction in (1, -1):
        prev = i0
        prevprev = None
        k = i0 + direction
        while 0 <= k < c.size:
            if prevprev is not None and mu[prev] != mu[prevprev]:
                fsr = (c[prev] - c[prevprev]) / (mu[prev] - mu[prevprev])
            else:
                fsr = fsr0
            steps = _round_half_down(abs(c[k] - c[prev]) / fsr)
            mu[k] = mu[prev] + direction * steps
            if steps > 0:
                prevprev, prev = prev, k
            k += direction
    return mu


def _design(mu: np.ndarray, order: int) -> np.ndarray:
    return np.column_stack([mu.astype(float) ** j / math.factorial(j)
                            for j in range(order + 1)])


def fit_dispersion(fits: Sequence[ResonanceFit | float], pump_guess: float, order: int = 2,
                   *, outlier_fraction: float = 0.05,
                   trim_floor: float | None = None) -> DispersionFit:
    """Assign mode numbers and fit omega_mu = omega_0 + sum_j D_j mu^j / j!.

    The resonance nearest ``pump_guess`` is mu = 0.  After the global
    least-squares fit, the worst residual is trimmed while it exceeds
    max(5 robust sigma, ``trim_floor``) and no more than ``outlier_fraction``
    of the points have been removed.  Trimmed points are reported, not
    dropped.  Raises :class:`AssignmentError` if a kept residual exceeds
    FSR/4.
    """
    c = np.sort(np.asarray([getattr(x, "center_frequency", x) for x in fits], dtype=float))
    n = c.size
    if order < 1:
        raise DomainError("order must be >= 1")
    if n < order + 2:
        raise DomainError(f"need at least {order + 2} resonances for order {order}, got {n}")

    i0 = int(np.argmin(np.abs(c - pump_guess)))
    fsr0 = float(np.median(np.diff(c)))
    mu = _assign_modes(c, i0, fsr0)
    y = c - c[i0]

    floor = 1e-6 * fsr0 if trim_floor is None else trim_floor
    keep = np.ones(n, dtype=bool)
    max_trim = int(math.floor(outlier_fraction * n))
    while True:
        coef, *_ = np.linalg.lstsq(_design(mu[keep], order), y[keep], rcond=None)
        resid = y - _design(mu, order) @ coef
        kept = np.abs(resid[keep])
        scale = 1.4826 * float(np.median(np.abs(kept - np.median(kept))))
        worst = int(np.flatnonzero(keep)[np.argmax(kept)])
        if (n - keep.sum()) >= max_trim or abs(resid[worst]) <= max(5.0 * scale, floor):
            break
        keep[worst] = False

    fsr_fit = coef[1]
    if np.any(np.abs(resid[keep]) > fsr_fit / 4):
        raise AssignmentError(
            f"residual {np.max(np.abs(resid[keep])):.4g} Hz exceeds FSR/4 after trimming")
    trimmed = np.flatnonzero(~keep)
    if trimmed.size:
        log.info("dispersion fit trimmed %d resonance(s): %s", trimmed.size,
                 ", ".join(f"{c[i]:.6f}" for i in trimmed))

    series = DispersionSeries(2 * math.pi * (c[i0] + coef[0]),
                              tuple(2 * math.pi * coef[1:]),
                              max_mode=max(10_000, int(np.max(np.abs(mu)))))
    return DispersionFit(series, c, mu, resid, trimmed)


def with_mode_indices(fits: Sequence[ResonanceFit], disp: DispersionFit) -> list[ResonanceFit]:
    """Copy ``fits`` with ``mode_index`` filled from a dispersion fit."""
    lookup = dict(zip(disp.centers.tolist(), disp.mode_indices.tolist()))
    return [replace(f, mode_index=int(lookup[f.center_frequency])) for f in fits]


REPORT_COLUMNS = ("f_c_hz", "fwhm_hz", "q_total", "er_db", "r", "a", "branch",
                  "mu", "residual_hz", "trimmed")


def write_resonance_report(path, fits: Sequence[ResonanceFit],
                           disp: DispersionFit | None = None,
                           coupling: str = "auto") -> None:
    """Per-resonance CSV; one row per resonance with the selected branch."""
    from .core import select_branch

    resid = {}
    trimmed = set()
    if disp is not None:
        resid = dict(zip(disp.centers.tolist(), disp.residuals.tolist()))
        trimmed = {float(disp.centers[i]) for i in disp.trimmed}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for fit in fits:
            if fit.coupling_candidates:
                cand = select_branch(fit.coupling_candidates, coupling)
                r, a, branch = repr(float(cand.r)), repr(float(cand.a)), cand.branch
            else:
                r = a = branch = ""
            mu = "" if fit.mode_index is None else fit.mode_index
            res = resid.get(fit.center_frequency, "")
            w.writerow([repr(float(fit.center_frequency)), repr(float(fit.linewidth_fwhm)),
                        repr(float(fit.q_total)), repr(float(fit.er_db)), r, a, branch, mu,
                        "" if res == "" else repr(float(res)),
                        int(fit.center_frequency in trimmed)])
