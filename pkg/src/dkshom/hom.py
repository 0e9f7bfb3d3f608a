"""Two-source HOM interference with weak coherent states.

Model
-----
Each source emits one Gaussian pulse per slot.  With intensity standard
deviations ``s1, s2`` the normalised temporal modes are::

    psi_k(t) = (2 pi s_k^2)^(-1/4) exp(-t^2 / 4 s_k^2) exp(-i w_k t)

in a frame rotating at source 1's carrier (``w1 = 0``, ``w2 = dw``).  The
delayed source-2 pulse overlaps source 1 with amplitude
``gamma = <psi1 | psi2(t - tau)>``, times a scalar polarization factor.

Per pulse the coherent amplitudes are ``sqrt(mu_k) exp(i phi_k)``.  After a
50:50 combiner the mean photon numbers in the two outputs are::

    n_pm = (mu1 + mu2 +- 2 sqrt(mu1 mu2) Re(gamma exp(i dphi))) / 2

and detector ``k`` clicks with probability
``1 - (1 - p_dark) exp(-eta (n_k + b/2))`` where ``b`` is incoherent
background leaked from neighbouring channels.  With random phases the
coincidence dip depends on ``|gamma|^2`` only; its depth for equal, weak
sources is 1/2, the classical bound.

Sampling
--------
``n_+ + n_-`` does not depend on the phases, so the probability that a pulse
produces any click is the same for every pulse.  The sampler draws the
clicking pulses as a Bernoulli process (geometric gaps) and only then draws
phases, jitter and the click pattern for those pulses, conditioned on at
least one click.  This is exact and costs time per click, not per pulse.

Seeding
-------
Shots for delay ``d`` are cut into fixed-size chunks.  Chunk ``j`` draws from
``SeedSequence(entropy, spawn_key=base_key + (d, j))``.  Chunk results are
merged in index order, so the histogram does not depend on how many
workers ran the chunks.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import DomainError, InsufficientSpanError, NonConvergenceError, TraceIOError

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
CHUNK_SHOTS = 1 << 21
ORACLE_NODES = 256
PHASE_MODELS = ("random", "fixed")


@dataclass(frozen=True)
class PulseTrain:
    repetition_rate: float = 250e6
    pulse_fwhm: float = 400e-12
    mean_photons: float = 0.01
    carrier_frequency: float = 0.0
    phase_model: str = "random"

    def __post_init__(self) -> None:
        if self.repetition_rate <= 0.0 or self.pulse_fwhm <= 0.0:
            raise DomainError("repetition_rate and pulse_fwhm must be positive")
        if self.pulse_fwhm >= 1.0 / self.repetition_rate:
            raise DomainError("pulse_fwhm must be shorter than the pulse period")
        if not self.mean_photons >= 0.0:
            raise DomainError("mean_photons must be >= 0")
        if self.phase_model not in PHASE_MODELS:
            raise DomainError(f"phase_model must be one of {PHASE_MODELS}")

    @property
    def sigma(self) -> float:
        """Intensity standard deviation [s]."""
        return self.pulse_fwhm * FWHM_TO_SIGMA


@dataclass(frozen=True)
class DetectorModel:
    """Threshold detector pair; dark counts are gated to the coincidence window."""

    efficiency: float = 0.8
    dark_count_rate: float = 100.0
    dead_time: float = 40e-9
    coincidence_window: float = 1e-9

    def __post_init__(self) -> None:
        if not 0.0 <= self.efficiency <= 1.0:
            raise DomainError("efficiency must lie in [0, 1]")
        for name in ("dark_count_rate", "dead_time", "coincidence_window"):
            if getattr(self, name) < 0.0:
                raise DomainError(f"{name} must be >= 0")

    @property
    def dark_probability(self) -> float:
        return min(1.0, self.dark_count_rate * self.coincidence_window)


@dataclass(frozen=True)
class BackgroundModel:
    """Crosstalk from the two neighbouring channels on each side [dB]."""

    adjacent_channel_isolation: float = 28.0
    next_nearest_isolation: float = 35.0
    cascaded_isolation: float = 50.0

    def __post_init__(self) -> None:
        if min(self.adjacent_channel_isolation, self.next_nearest_isolation,
               self.cascaded_isolation) <= 0.0:
            raise DomainError("isolations must be positive")

    def leakage_fraction(self) -> float:
        """Fraction of a neighbour's photons reaching this channel, summed over neighbours.

        The cascade sets the adjacent isolation; next-nearest channels keep
        their extra single-filter margin on top of it.
        """
        adj = self.cascaded_isolation
        nn = self.cascaded_isolation + (self.next_nearest_isolation
                                        - self.adjacent_channel_isolation)
        return 2.0 * 10.0 ** (-adj / 10.0) + 2.0 * 10.0 ** (-nn / 10.0)


@dataclass(frozen=True)
class Imperfections:
    """Mode-mismatch knobs beyond what the pulse trains encode.

    ``timing_jitter`` is the rms relative delay between pulses and
    ``frequency_wander`` the rms relative carrier offset [Hz], both redrawn
    every pulse.
    """

    polarization_overlap: float = 1.0
    timing_jitter: float = 0.0
    frequency_wander: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.polarization_overlap <= 1.0:
            raise DomainError("polarization_overlap must lie in [0, 1]")
        if self.timing_jitter < 0.0 or self.frequency_wander < 0.0:
            raise DomainError("jitter and wander must be >= 0")


@dataclass(frozen=True, eq=False)
class CoincidenceHistogram:
    delays: np.ndarray
    coincidences: np.ndarray
    singles_1: np.ndarray
    singles_2: np.ndarray
    integration_time: float
    shots_per_delay: int = 0

    def __post_init__(self) -> None:
        arrs = {}
        for name in ("delays", "coincidences", "singles_1", "singles_2"):
            a = np.array(getattr(self, name), dtype=float if name == "delays" else np.int64)
            a.setflags(write=False)
            arrs[name] = a
            object.__setattr__(self, name, a)
        n = len(arrs["delays"])
        if any(len(a) != n for a in arrs.values()):
            raise DomainError("histogram columns differ in length")
        if n > 1 and np.any(np.diff(arrs["delays"]) <= 0.0):
            raise DomainError("delays must be strictly increasing")
        if np.any(arrs["coincidences"] > np.minimum(arrs["singles_1"], arrs["singles_2"])):
            raise DomainError("coincidences exceed singles")
        if np.any(arrs["coincidences"] < 0):
            raise DomainError("counts must be non-negative")

    def equals(self, other: "CoincidenceHistogram") -> bool:
        return (self.integration_time == other.integration_time
                and self.shots_per_delay == other.shots_per_delay
                and all(np.array_equal(getattr(self, n), getattr(other, n))
                        for n in ("delays", "coincidences", "singles_1", "singles_2")))


@dataclass(frozen=True)
class VisibilityFit:
    """Dip fit ``C = baseline * (1 - V exp(-tau^2 / 2 sigma^2) cos(tau dw))``.

    ``V`` is not clipped: a flat histogram may fit slightly negative.
    """

    V: float
    sigma: float
    delta_omega: float
    baseline: float
    uncertainties: dict = field(default_factory=dict)
    chi_square: float = 0.0
    dof: int = 0

    def __post_init__(self) -> None:
        if self.sigma <= 0.0:
            raise DomainError("sigma must be positive")
        if not -1.0 <= self.V <= 1.0:
            raise DomainError("V must lie in [-1, 1]")

    @property
    def V_err(self) -> float:
        return self.uncertainties.get("V", float("nan"))


# closed forms ---------------------------------------------------------------

def coincidence_probability(tau, V, sigma, delta_omega):
    """``1/2 - (V/4) exp(-tau^2 / 2 sigma^2) cos(tau dw)``.

    This literal form puts the dip at ``1 - V/2`` of the baseline, so its
    ``V`` is twice the dip-depth visibility returned by :func:`fit_visibility`.
    """
    if sigma <= 0.0:
        raise DomainError("sigma must be positive")
    tau = np.asarray(tau, dtype=float)
    out = 0.5 - 0.25 * V * np.exp(-tau ** 2 / (2.0 * sigma ** 2)) * np.cos(tau * delta_omega)
    return float(out) if out.ndim == 0 else out


def dip_profile(tau, baseline, V, sigma, delta_omega=0.0):
    """Coincidence model used by the fit; ``V`` is the fractional dip depth."""
    tau = np.asarray(tau, dtype=float)
    return baseline * (1.0 - V * np.exp(-tau ** 2 / (2.0 * sigma ** 2))
                       * np.cos(tau * delta_omega))


def gaussian_overlap(sigma1: float, sigma2: float, tau, delta_omega):
    """``<psi1 | psi2(t - tau)>`` for Gaussian modes; broadcasts over ``tau`` and ``delta_omega``."""
    tau = np.asarray(tau, dtype=float)
    dw = np.asarray(delta_omega, dtype=float)
    a1 = 1.0 / (4.0 * sigma1 ** 2)
    a2 = 1.0 / (4.0 * sigma2 ** 2)
    A = a1 + a2
    B = 2.0 * a2 * tau - 1j * dw
    C = -a2 * tau ** 2 + 1j * dw * tau
    norm = math.sqrt(math.pi / A) / math.sqrt(2.0 * math.pi * sigma1 * sigma2)
    return norm * np.exp(B ** 2 / (4.0 * A) + C)


def overlap_amplitude(pulse1: PulseTrain, pulse2: PulseTrain, tau,
                      polarization: float = 1.0):
    dw = 2.0 * math.pi * (pulse2.carrier_frequency - pulse1.carrier_frequency)
    g = polarization * gaussian_overlap(pulse1.sigma, pulse2.sigma, tau, dw)
    return complex(g) if np.ndim(g) == 0 else g


def click_probabilities(mu1, mu2, overlap, dphi, detector: DetectorModel,
                        background_photons: float = 0.0):
    """Click probabilities of the two output detectors for relative phase ``dphi``."""
    s = mu1 + mu2
    cross = 2.0 * np.sqrt(mu1 * mu2) * np.real(overlap * np.exp(1j * dphi))
    n_plus = np.maximum(0.5 * (s + cross), 0.0)
    n_minus = np.maximum(0.5 * (s - cross), 0.0)
    eta = detector.efficiency
    keep = 1.0 - detector.dark_probability
    b = 0.5 * background_photons
    return (1.0 - keep * np.exp(-eta * (n_plus + b)),
            1.0 - keep * np.exp(-eta * (n_minus + b)))


def analytic_oracle(mu1: float, mu2: float, overlap: complex, detector: DetectorModel,
                    background_photons: float = 0.0, nodes: int = ORACLE_NODES) -> float:
    """Per-pulse coincidence probability averaged over a uniform relative phase.

    Equispaced nodes on the circle (the periodic trapezoid rule), which
    converges geometrically for this smooth integrand.
    """
    if nodes < ORACLE_NODES:
        raise ValueError(f"use at least {ORACLE_NODES} nodes")
    phi = 2.0 * math.pi * np.arange(nodes) / nodes
    p1, p2 = click_probabilities(mu1, mu2, abs(overlap), phi, detector, background_photons)
    return float(np.mean(p1 * p2))


# Monte Carlo ----------------------------------------------------------------

@dataclass(frozen=True)
class PulseCounts:
    coincidences: int
    singles_1: int
    singles_2: int
    shots: int


def _active_slots(rng: np.random.Generator, n: int, p: float) -> np.ndarray:
    """Indices of successes in ``n`` Bernoulli(p) trials via geometric gaps."""
    if p <= 0.0 or n == 0:
        return np.empty(0, dtype=np.int64)
    if p >= 1.0:
        return np.arange(n, dtype=np.int64)
    parts = []
    pos = -1
    while True:
        m = int(n * p + 6.0 * math.sqrt(n * p) + 16)
        steps = np.cumsum(rng.geometric(p, size=m)) + pos
        parts.append(steps[steps < n])
        if steps[-1] >= n:
            break
        pos = int(steps[-1])
    return np.concatenate(parts).astype(np.int64)


def _click_chunk(rng, n, mu1, mu2, detector, background_photons, fixed_phase,
                 overlap_draw: Callable) -> tuple[np.ndarray, np.ndarray]:
    keep = 1.0 - detector.dark_probability
    eta = detector.efficiency
    s = mu1 + mu2 + background_photons
    p_any = 1.0 - keep ** 2 * math.exp(-eta * s)
    slots = _active_slots(rng, n, p_any)
    k = len(slots)
    gamma = overlap_draw(rng, k)
    dphi = 0.0 if fixed_phase else rng.uniform(0.0, 2.0 * math.pi, size=k)
    p1, p2 = click_probabilities(mu1, mu2, gamma, dphi, detector, background_photons)
    p1 = np.broadcast_to(p1, (k,))
    p2 = np.broadcast_to(p2, (k,))
    w_only1 = p1 * (1.0 - p2)
    w_only2 = (1.0 - p1) * p2
    u = rng.uniform(0.0, p_any, size=k)
    click1 = (u < w_only1) | (u >= w_only1 + w_only2)
    click2 = u >= w_only1
    return slots[click1], slots[click2]


def _apply_dead_time(t: np.ndarray, dead: float) -> np.ndarray:
    """Drop clicks inside the blanking window of the previous kept click."""
    if dead <= 0.0 or len(t) < 2:
        return t
    keep = np.ones(len(t), dtype=bool)
    ref = -math.inf
    for i in np.flatnonzero(np.diff(t) < dead) + 1:
        if keep[i - 1]:
            ref = t[i - 1]
        if t[i] - ref < dead:
            keep[i] = False
    return t[keep]


def _count(t1: np.ndarray, t2: np.ndarray, half_window: float) -> int:
    lo = np.searchsorted(t2, t1 - half_window, side="left")
    hi = np.searchsorted(t2, t1 + half_window, side="right")
    return int(np.sum(hi - lo))


def _as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def _chunk_rng(root: np.random.SeedSequence, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(root.entropy, spawn_key=tuple(root.spawn_key) + key)
    return np.random.Generator(np.random.PCG64(ss))


def _run_shots(root, key, shots, rate, mu1, mu2, detector, background_photons, fixed_phase,
               overlap_draw, workers, chunk_shots) -> PulseCounts:
    n_chunks = -(-shots // chunk_shots)

    def one(j):
        n = min(chunk_shots, shots - j * chunk_shots)
        a, b = _click_chunk(_chunk_rng(root, *key, j), n, mu1, mu2, detector,
                            background_photons, fixed_phase, overlap_draw)
        return a + j * chunk_shots, b + j * chunk_shots

    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, range(n_chunks)))
    else:
        parts = [one(j) for j in range(n_chunks)]
    t1 = np.concatenate([p[0] for p in parts]) / rate
    t2 = np.concatenate([p[1] for p in parts]) / rate
    t1 = _apply_dead_time(t1, detector.dead_time)
    t2 = _apply_dead_time(t2, detector.dead_time)
    half = 0.5 * detector.coincidence_window
    return PulseCounts(_count(t1, t2, half), len(t1), len(t2), shots)


def simulate_pulses(mu1: float, mu2: float, overlap: complex, detector: DetectorModel,
                    shots: int, seed, *, background_photons: float = 0.0,
                    fixed_phase: bool = False, repetition_rate: float = 250e6,
                    workers: int = 1, chunk_shots: int = CHUNK_SHOTS) -> PulseCounts:
    """Monte Carlo at one fixed mode overlap; the counterpart of :func:`analytic_oracle`."""
    if shots < 1:
        raise DomainError("shots must be >= 1")
    g = complex(overlap)
    root = _as_seed_sequence(seed)
    return _run_shots(root, (0,), int(shots), repetition_rate, mu1, mu2, detector,
                      background_photons, fixed_phase, lambda rng, k: g, workers, chunk_shots)


def background_photons(pulse1: PulseTrain, pulse2: PulseTrain,
                       background: BackgroundModel | None) -> float:
    if background is None:
        return 0.0
    return (pulse1.mean_photons + pulse2.mean_photons) * background.leakage_fraction()


def simulate_hom(pulse1: PulseTrain, pulse2: PulseTrain, detector: DetectorModel,
                 background: BackgroundModel | None, delays: Sequence[float],
                 shots_per_delay: int, seed, imperfections: Imperfections = Imperfections(),
                 *, workers: int = 1, chunk_shots: int = CHUNK_SHOTS) -> CoincidenceHistogram:
    """Delay scan of coincidences between the two combiner outputs.

    ``seed`` is an integer or a ``SeedSequence``; delay ``d`` chunk ``j``
    uses spawn key ``seed.spawn_key + (d, j)``.
    """
    if shots_per_delay < 1:
        raise DomainError("shots_per_delay must be >= 1")
    if pulse1.repetition_rate != pulse2.repetition_rate:
        raise DomainError("pulse trains must share a repetition rate")
    delays = np.asarray(delays, dtype=float)
    root = _as_seed_sequence(seed)
    fixed = pulse1.phase_model == "fixed" and pulse2.phase_model == "fixed"
    s1, s2 = pulse1.sigma, pulse2.sigma
    dw0 = 2.0 * math.pi * (pulse2.carrier_frequency - pulse1.carrier_frequency)
    imp = imperfections
    bg = background_photons(pulse1, pulse2, background)

    rows = []
    for d, tau in enumerate(delays):
        def draw(rng, k, tau=tau):
            t = tau + (rng.normal(0.0, imp.timing_jitter, size=k)
                       if imp.timing_jitter > 0.0 else 0.0)
            w = dw0 + (rng.normal(0.0, 2.0 * math.pi * imp.frequency_wander, size=k)
                       if imp.frequency_wander > 0.0 else 0.0)
            return imp.polarization_overlap * gaussian_overlap(s1, s2, t, w)

        c = _run_shots(root, (d,), int(shots_per_delay), pulse1.repetition_rate,
                       pulse1.mean_photons, pulse2.mean_photons, detector, bg, fixed, draw,
                       workers, chunk_shots)
        rows.append((c.coincidences, c.singles_1, c.singles_2))
    rows = np.array(rows, dtype=np.int64).reshape(-1, 3)
    return CoincidenceHistogram(delays, rows[:, 0], rows[:, 1], rows[:, 2],
                                shots_per_delay / pulse1.repetition_rate, int(shots_per_delay))


def expected_histogram(pulse1: PulseTrain, pulse2: PulseTrain, detector: DetectorModel,
                       background: BackgroundModel | None, delays: Sequence[float],
                       shots_per_delay: int, imperfections: Imperfections = Imperfections(),
                       nodes: int = 64) -> np.ndarray:
    """Oracle mean coincidence counts per delay (no dead time).

    Jitter and wander are averaged with Gauss-Hermite nodes, the phase with
    :func:`analytic_oracle`.
    """
    imp = imperfections
    x, w = np.polynomial.hermite_e.hermegauss(nodes if imp.timing_jitter > 0 else 1)
    y, v = np.polynomial.hermite_e.hermegauss(nodes if imp.frequency_wander > 0 else 1)
    w = w / w.sum()
    v = v / v.sum()
    dw0 = 2.0 * math.pi * (pulse2.carrier_frequency - pulse1.carrier_frequency)
    bg = background_photons(pulse1, pulse2, background)
    out = []
    for tau in np.asarray(delays, dtype=float):
        total = 0.0
        for xi, wi in zip(x, w):
            for yj, vj in zip(y, v):
                g = imp.polarization_overlap * gaussian_overlap(
                    pulse1.sigma, pulse2.sigma, tau + imp.timing_jitter * xi,
                    dw0 + 2.0 * math.pi * imp.frequency_wander * yj)
                total += wi * vj * analytic_oracle(pulse1.mean_photons, pulse2.mean_photons,
                                                   complex(g), detector, bg)
        out.append(total * shots_per_delay)
    return np.array(out)


# fitting --------------------------------------------------------------------

def _model(tau, baseline, V, sigma, delta_omega):
    return dip_profile(tau, baseline, V, sigma, delta_omega)


def fit_visibility(hist: CoincidenceHistogram, *, free_delta_omega: bool = False,
                   max_reweights: int = 5) -> VisibilityFit:
    """Poisson-weighted least squares of :func:`dip_profile` to a delay scan.

    Weights are iterated: first from the counts, then from the model (so
    empty bins keep a sensible weight).  With ``free_delta_omega`` several
    starting detunings are tried and the lowest chi-square wins.

    The span check (delays must reach beyond two fitted sigmas) is skipped
    when the histogram shows no significant dip, since a flat histogram
    leaves sigma undetermined.
    """
    tau = np.asarray(hist.delays, dtype=float)
    y = np.asarray(hist.coincidences, dtype=float)
    if len(tau) < 6:
        raise InsufficientSpanError(f"need >= 6 delay points, got {len(tau)}")
    span = float(min(-tau.min(), tau.max()))
    if span <= 0.0:
        raise InsufficientSpanError("delays must straddle zero")
    # work in units of the delay step so every parameter is O(1)
    step = float(np.min(np.diff(tau)))
    x = tau / step
    order = np.argsort(np.abs(x))
    outer = order[-max(2, len(x) // 4):]
    b0 = max(float(np.mean(y[outer])), 1.0)
    v0 = float(np.clip(1.0 - np.mean(y[order[:2]]) / b0, 0.05, 0.95))
    deficit = np.clip(b0 - y, 0.0, None)
    s0 = math.sqrt(np.sum(deficit * x ** 2) / np.sum(deficit)) if deficit.sum() > 0 else 1.0
    width = float(x.max() - x.min())

    lower = [0.0, -1.0, 0.1, 0.0]
    upper = [np.inf, 1.0, float(np.max(np.abs(x))) * 2.0, math.pi]
    sigma_starts = sorted({float(np.clip(s, 0.5, upper[2])) for s in (s0, width / 8.0, width / 4.0)})
    w_starts = [0.0] if not free_delta_omega else [
        0.0] + [2.0 * math.pi * k / width for k in (1, 2, 4, 8)]

    best = None
    last: Exception | None = None
    for s_init in sigma_starts:
        for w0 in w_starts:
            try:
                res = _irls(x, y, [b0, v0, s_init, w0], lower, upper,
                            free_delta_omega, max_reweights)
            except (RuntimeError, ValueError) as exc:
                last = exc
                continue
            if best is None or res[2] < best[2]:
                best = res
    if best is None:
        raise NonConvergenceError(f"visibility fit did not converge: {last}")
    popt, perr, chi2, dof = best
    scale = np.array([1.0, 1.0, step, 1.0 / step])
    popt, perr = popt * scale, perr * scale
    b, V, sigma, dw = (float(v) for v in popt)
    if span < 2.0 * sigma and _dip_significance(y, order, outer) > 3.0:
        raise InsufficientSpanError(
            f"fitted dip sigma {sigma * 1e12:.0f} ps exceeds half the scanned span "
            f"+-{span * 1e12:.0f} ps; widen the delay scan or add statistics")
    names = ("baseline", "V", "sigma", "delta_omega")
    unc = {n: float(e) for n, e in zip(names, perr)}
    return VisibilityFit(V, sigma, dw, b, unc, float(chi2), int(dof))


def _dip_significance(y, order, outer) -> float:
    """Poisson z-score of the outer bins over the two innermost bins."""
    inner = order[:2]
    a, b = float(np.mean(y[outer])), float(np.mean(y[inner]))
    var = a / len(outer) + b / len(inner)
    return (a - b) / math.sqrt(var) if var > 0 else 0.0


def _irls(x, y, p0, lower, upper, free_dw, rounds):
    """Iteratively reweighted least squares; returns (params, errors, chi2, dof).

    The baseline is fitted relative to its starting value so all parameters
    are O(1).  The covariance uses a pseudo-inverse, so a degenerate
    direction (sigma of a flat histogram) does not poison the others.
    """
    n_par = 4 if free_dw else 3
    scale = np.array([p0[0], 1.0, 1.0, 1.0])[:n_par]
    p = np.array(p0[:n_par], dtype=float) / scale
    lo = np.array(lower[:n_par]) / scale
    hi = np.array(upper[:n_par]) / scale

    def model(q):
        return _model(x, q[0] * scale[0], q[1], q[2], q[3] if free_dw else 0.0)

    sig = np.sqrt(np.maximum(y, 1.0))
    for _ in range(rounds + 1):
        res = least_squares(lambda q: (model(q) - y) / sig, p, bounds=(lo, hi),
                            x_scale="jac", max_nfev=5000)
        if not np.all(np.isfinite(res.x)) or res.status < 0:
            raise RuntimeError(res.message)
        moved = not np.allclose(res.x, p, rtol=1e-9, atol=1e-12)
        p = res.x
        sig = np.sqrt(np.maximum(model(p), 1e-12))
        if not moved:
            break
    res = least_squares(lambda q: (model(q) - y) / sig, p, bounds=(lo, hi),
                        x_scale="jac", max_nfev=5000)
    if res.status == 0:
        raise RuntimeError("iteration limit reached")
    J = res.jac
    cov = np.linalg.pinv(J.T @ J)
    perr = np.sqrt(np.clip(np.diag(cov), 0.0, None)) * scale
    popt = res.x * scale
    m = model(res.x)
    chi2 = float(np.sum((y - m) ** 2 / np.maximum(m, 1e-12)))
    if not free_dw:
        popt = np.append(popt, 0.0)
        perr = np.append(perr, 0.0)
    return popt, perr, chi2, len(x) - n_par


def aggregate(fits: Sequence[VisibilityFit]) -> tuple[float, float]:
    """Mean visibility and its standard error over repetitions.

    A single repetition falls back to its fit uncertainty.
    """
    if len(fits) == 0:
        raise ValueError("no fits to aggregate")
    v = np.array([f.V for f in fits])
    if len(v) == 1:
        return float(v[0]), float(fits[0].V_err)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


# I/O ------------------------------------------------------------------------

HISTOGRAM_COLUMNS = ("delay_ps", "coincidences", "singles_1", "singles_2")
FIT_COLUMNS = ("channel", "repetition", "V", "V_err", "sigma_ps", "sigma_err_ps",
               "delta_omega_rad_s", "baseline", "chi_square", "dof")


def write_histogram(path, hist: CoincidenceHistogram) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTOGRAM_COLUMNS)
        for d, c, s1, s2 in zip(hist.delays, hist.coincidences, hist.singles_1, hist.singles_2):
            w.writerow((repr(round(float(d) * 1e12, 6)), int(c), int(s1), int(s2)))


def read_histogram(path, integration_time: float = 0.0) -> CoincidenceHistogram:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise TraceIOError(f"{path}: {exc.strerror}") from exc
    if not rows or tuple(rows[0]) != HISTOGRAM_COLUMNS:
        raise TraceIOError(f"{path}:1: expected header {','.join(HISTOGRAM_COLUMNS)}")
    cols = []
    for i, r in enumerate(rows[1:], start=2):
        try:
            cols.append((float(r[0]) * 1e-12, int(r[1]), int(r[2]), int(r[3])))
        except (ValueError, IndexError) as exc:
            raise TraceIOError(f"{path}:{i}: bad row {r!r}") from exc
    d, c, s1, s2 = zip(*cols) if cols else ((), (), (), ())
    return CoincidenceHistogram(np.array(d), c, s1, s2, integration_time)


def fit_row(channel: str, repetition: int, fit: VisibilityFit) -> tuple:
    u = fit.uncertainties
    return (channel, repetition, repr(fit.V), repr(u.get("V", float("nan"))),
            repr(fit.sigma * 1e12), repr(u.get("sigma", float("nan")) * 1e12),
            repr(fit.delta_omega), repr(fit.baseline), repr(fit.chi_square), fit.dof)


def write_fits(path, rows: Sequence[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FIT_COLUMNS)
        w.writerows(rows)
