"""Microresonator and comb model.

Resonance grid, quality factors, extinction ratio, parametric threshold and
the mapping of comb lines onto a DWDM channel grid.

All frequencies are in Hz (cyclic) unless a name says ``omega``; lengths in
metres; powers in watts.  Wavelengths only appear at the boundaries, via
``f = c / lambda``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import AmbiguityError, DomainError, NoSolutionError

C_LIGHT = 299_792_458.0  # m/s

#: Kerr index of stoichiometric LPCVD Si3N4 near 1550 nm (Ikeda et al. 2008).
N2_SILICON_NITRIDE = 2.4e-19  # m^2/W

# sech^2(x) = 1/2 at x = arccosh(sqrt 2)
_SECH2_HALF = math.acosh(math.sqrt(2.0))


# --------------------------------------------------------------------------
# Resonator
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ResonatorParams:
    """All-pass ring geometry and coupling.

    Parameters
    ----------
    group_index : float
        Group index n_g of the guided mode.
    cavity_length : float
        Round-trip length L [m].
    self_coupling : float
        Field self-coupling r of the bus coupler, 0 < r < 1.
    round_trip_amplitude : float
        Single-pass field amplitude a (propagation loss), 0 < a < 1.
    resonance_wavelength : float
        Vacuum wavelength of the resonance [m].
    effective_mode_area : float
        A_eff [m^2].
    nonlinear_index : float
        Kerr coefficient n2 [m^2/W].
    """

    group_index: float
    cavity_length: float
    self_coupling: float
    round_trip_amplitude: float
    resonance_wavelength: float = 1.55e-6
    effective_mode_area: float = 1.26e-12
    nonlinear_index: float = N2_SILICON_NITRIDE

    def __post_init__(self) -> None:
        if not 0.0 < self.self_coupling < 1.0:
            raise DomainError(f"self_coupling must lie in (0, 1), got {self.self_coupling}")
        if not 0.0 < self.round_trip_amplitude < 1.0:
            raise DomainError(
                f"round_trip_amplitude must lie in (0, 1), got {self.round_trip_amplitude}"
            )
        if self.group_index <= 1.0:
            raise DomainError(f"group_index must exceed 1, got {self.group_index}")
        if self.cavity_length <= 0.0:
            raise DomainError(f"cavity_length must be positive, got {self.cavity_length}")
        if self.effective_mode_area <= 0.0:
            raise DomainError("effective_mode_area must be positive")
        if self.resonance_wavelength <= 0.0 or self.nonlinear_index <= 0.0:
            raise DomainError("resonance_wavelength and nonlinear_index must be positive")

    @property
    def r(self) -> float:
        return self.self_coupling

    @property
    def a(self) -> float:
        return self.round_trip_amplitude

    @property
    def fsr(self) -> float:
        """Free spectral range c / (n_g L) [Hz]."""
        return C_LIGHT / (self.group_index * self.cavity_length)

    @property
    def resonance_frequency(self) -> float:
        return C_LIGHT / self.resonance_wavelength


def _q_of_product(ra, group_index, cavity_length, wavelength):
    return (math.pi * group_index * cavity_length * np.sqrt(ra)
            / (wavelength * (1.0 - ra)))


def q_total(params: ResonatorParams) -> float:
    """Loaded quality factor of an all-pass ring.

    Q_tot = pi n_g L sqrt(ra) / (lambda (1 - ra))
    """
    ra = params.r * params.a
    if not 0.0 < ra < 1.0:
        raise DomainError(f"r*a must lie in (0, 1), got {ra}")
    return float(_q_of_product(ra, params.group_index, params.cavity_length,
                               params.resonance_wavelength))


def q_intrinsic(params: ResonatorParams) -> float:
    """Intrinsic Q: the loaded expression with the coupler removed (r -> 1)."""
    return float(_q_of_product(params.a, params.group_index, params.cavity_length,
                               params.resonance_wavelength))


def q_coupling(params: ResonatorParams) -> float:
    """External (coupling-limited) Q: the loaded expression with a -> 1."""
    return float(_q_of_product(params.r, params.group_index, params.cavity_length,
                               params.resonance_wavelength))


def extinction_ratio_db(params: ResonatorParams) -> float:
    """On/off resonance transmission ratio T_min / T_max in dB (<= 0).

    Returns ``-inf`` at critical coupling (r == a); callers must handle it.
    """
    r, a = params.r, params.a
    num = (r - a) ** 2 * (1.0 + r * a) ** 2
    if num == 0.0:
        return -math.inf
    den = (r + a) ** 2 * (1.0 - r * a) ** 2
    return 10.0 * math.log10(num / den)


class CouplingCandidate(NamedTuple):
    r: float
    a: float
    branch: str  # "under", "over" or "critical"


def invert_coupling(q_tot: float, er_db: float, group_index: float,
                    cavity_length: float, wavelength: float) -> list[CouplingCandidate]:
    """Solve the loaded-Q and extinction-ratio relations for (r, a).

    Both relations are symmetric in r and a, so two solutions come back:
    under-coupled (r > a, coupler loss below round-trip loss) first, then
    over-coupled (r < a).  At ``er_db == -inf`` the single critical solution
    r == a is returned.
    """
    if not q_tot > 0.0:
        raise DomainError(f"q_tot must be positive, got {q_tot}")
    if not er_db < 0.0:
        # every (Q > 0, ER < 0) pair has a solution inside the unit square
        raise NoSolutionError(f"er_db must be negative (a dip), got {er_db}")

    # sqrt(ra) = s solves K s^2 + s - K = 0, with K = Q lambda / (pi n_g L)
    k = q_tot * wavelength / (math.pi * group_index * cavity_length)
    s = 2.0 * k / (1.0 + math.sqrt(1.0 + 4.0 * k * k))
    ra = s * s

    if er_db == -math.inf:
        return [CouplingCandidate(s, s, "critical")]

    # |r - a| / (r + a) = sqrt(T_min/T_max) (1 - ra) / (1 + ra)
    g = 10.0 ** (er_db / 20.0) * (1.0 - ra) / (1.0 + ra)
    if g >= 1.0:
        raise NoSolutionError(
            f"extinction {er_db} dB is inconsistent with Q = {q_tot:.6g}")
    total = 2.0 * math.sqrt(ra / (1.0 - g * g))
    hi = 0.5 * total * (1.0 + g)
    lo = 0.5 * total * (1.0 - g)
    if not (hi < 1.0 and lo > 0.0):
        raise NoSolutionError(
            f"(Q={q_tot:.6g}, ER={er_db:.4g} dB) requires r or a outside (0, 1)")
    return [CouplingCandidate(hi, lo, "under"), CouplingCandidate(lo, hi, "over")]


def select_branch(candidates: Sequence[CouplingCandidate],
                  coupling: str = "auto") -> CouplingCandidate:
    """Pick one candidate; ``auto`` means under-coupled."""
    if coupling not in ("auto", "under", "over"):
        raise ValueError(f"coupling must be auto|under|over, got {coupling!r}")
    if len(candidates) == 1:
        return candidates[0]
    want = "under" if coupling == "auto" else coupling
    for cand in candidates:
        if cand.branch == want:
            return cand
    raise ValueError(f"no {want!r} candidate in {candidates}")


def intrinsic_q_from_linewidth(q_loaded: float, depth: float, branch: str = "under") -> float:
    """Intrinsic Q from a Lorentzian dip (loaded Q and fractional depth).

    Second route to Q_int, independent of the ring round-trip formulas:
    Q_i = 2 Q_L / (1 +- sqrt(1 - depth)), + for under-coupling.
    """
    if not 0.0 < depth <= 1.0:
        raise DomainError(f"depth must lie in (0, 1], got {depth}")
    root = math.sqrt(1.0 - depth)
    if branch == "under":
        return 2.0 * q_loaded / (1.0 + root)
    if branch == "over":
        return 2.0 * q_loaded / (1.0 - root)
    raise ValueError(f"branch must be 'under' or 'over', got {branch!r}")


def oscillation_threshold(params: ResonatorParams, q_loaded: float,
                          q_intrinsic: float) -> float:
    """Kerr parametric-oscillation threshold power in the bus waveguide [W].

    Standard closed form for a single-mode-family microresonator
    (Herr et al., Nat. Photon. 8, 145 (2014), supplementary)::

        P_th = kappa^2 n_g^2 V_eff / (8 eta omega_0 c n2)
             = pi n_g^2 A_eff L Q_c / (4 lambda n2 Q_L^3)

    with kappa = omega_0 / Q_L, eta = Q_L / Q_c, 1/Q_c = 1/Q_L - 1/Q_i and
    V_eff = A_eff L.  At a fixed ratio Q_c/Q_L this scales as 1/Q_L^2, and it
    is linear in A_eff.
    """
    if q_loaded <= 0.0 or q_intrinsic <= 0.0:
        raise DomainError("quality factors must be positive")
    if q_loaded >= q_intrinsic:
        raise DomainError(
            f"loaded Q ({q_loaded:.4g}) must be below intrinsic Q ({q_intrinsic:.4g})")
    q_c = 1.0 / (1.0 / q_loaded - 1.0 / q_intrinsic)
    return (math.pi * params.group_index ** 2 * params.effective_mode_area
            * params.cavity_length * q_c
            / (4.0 * params.resonance_wavelength * params.nonlinear_index * q_loaded ** 3))


# --------------------------------------------------------------------------
# Dispersion and combs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DispersionSeries:
    """omega_mu = omega_0 + sum_j D_j mu^j / j!  (angular units, rad/s)."""

    omega0: float
    coefficients: tuple[float, ...]  # D_1 .. D_J
    max_mode: int = 10_000

    def __post_init__(self) -> None:
        object.__setattr__(self, "coefficients", tuple(float(d) for d in self.coefficients))
        if len(self.coefficients) < 1:
            raise DomainError("at least D_1 is required")
        if self.coefficients[0] <= 0.0:
            raise DomainError("D_1 = 2 pi FSR must be positive")

    @classmethod
    def from_frequencies(cls, center: float, fsr: float, *higher: float,
                         max_mode: int = 10_000) -> "DispersionSeries":
        """Build from cyclic quantities: center [Hz], FSR [Hz], D_j/2pi [Hz]."""
        coeffs = (2 * math.pi * fsr,) + tuple(2 * math.pi * d for d in higher)
        return cls(2 * math.pi * center, coeffs, max_mode)

    @property
    def order(self) -> int:
        return len(self.coefficients)

    @property
    def fsr(self) -> float:
        return self.coefficients[0] / (2 * math.pi)

    def integrated(self, mu):
        """Integrated dispersion D_int(mu) = omega_mu - omega_0 - D_1 mu [rad/s]."""
        mu = np.asarray(mu, dtype=float)
        out = np.zeros_like(mu)
        for j, d in enumerate(self.coefficients[1:], start=2):
            out = out + d * mu ** j / math.factorial(j)
        return out


def mode_frequency(dispersion: DispersionSeries, mu):
    """Cold-cavity resonance frequency of mode ``mu`` [Hz]."""
    mu_arr = np.asarray(mu)
    if np.any(np.abs(mu_arr) > dispersion.max_mode):
        raise DomainError(f"|mu| exceeds max_mode={dispersion.max_mode}")
    mu_f = mu_arr.astype(float)
    offset = np.zeros_like(mu_f)
    for j, d in enumerate(dispersion.coefficients, start=1):
        offset = offset + d * mu_f ** j / math.factorial(j)
    out = (dispersion.omega0 + offset) / (2 * math.pi)
    return float(out) if np.ndim(out) == 0 else out


def sech2_envelope(pump_power: float, fsr: float, bandwidth_3db: float,
                   max_mode: int) -> dict[int, float]:
    """Soliton line powers P(mu) = P0 sech^2(x), halving at +-bandwidth/2."""
    if bandwidth_3db <= 0.0:
        raise DomainError("bandwidth_3db must be positive")
    scale = 2.0 * _SECH2_HALF / bandwidth_3db
    return {mu: pump_power / math.cosh(scale * mu * fsr) ** 2
            for mu in range(-max_mode, max_mode + 1)}


@dataclass(frozen=True)
class CombSpec:
    """One soliton comb.

    Soliton lines are strictly equidistant, ``f_mu = f_p + mu * fsr``; the
    dispersion series describes the cold-cavity resonances and is only used
    for characterization.
    """

    pump_frequency: float
    fsr: float
    line_power_envelope: dict = field(default_factory=dict)
    pump_channel_index: int = 0
    dispersion: DispersionSeries | None = None

    def __post_init__(self) -> None:
        if self.fsr <= 0.0:
            raise DomainError("fsr must be positive")
        if any(p < 0.0 for p in self.line_power_envelope.values()):
            raise DomainError("line powers must be non-negative")
        if self.dispersion is None:
            object.__setattr__(self, "dispersion", DispersionSeries.from_frequencies(
                self.pump_frequency, self.fsr))
        elif not math.isclose(self.dispersion.omega0 / (2 * math.pi), self.pump_frequency,
                              rel_tol=1e-14):
            raise DomainError("dispersion must be centred on the pump frequency")

    def line_frequency(self, mu):
        if np.ndim(mu):
            return self.pump_frequency + np.asarray(mu, dtype=float) * self.fsr
        return self.pump_frequency + mu * self.fsr

    def line_power(self, mu: int) -> float:
        return float(self.line_power_envelope.get(int(mu), 0.0))

    @property
    def modes(self) -> list[int]:
        return sorted(self.line_power_envelope)


_CHANNEL_RE = re.compile(r"^\s*(?:CH|C)?\s*(-?\d+)\s*$", re.IGNORECASE)


def parse_channel(name) -> int:
    """'CH38' -> 38; integers pass through."""
    if isinstance(name, (int, np.integer)):
        return int(name)
    m = _CHANNEL_RE.match(str(name))
    if not m:
        raise ValueError(f"not a channel name: {name!r}")
    return int(m.group(1))


def channel_name(index: int) -> str:
    return f"CH{index:02d}"


@dataclass(frozen=True)
class DwdmGrid:
    """Fixed channel grid: channel n sits at ``anchor + n * spacing``.

    The default anchor puts CH34 at 193.4 THz, the common 100 GHz ITU
    channel numbering.
    """

    anchor_frequency: float = 190.0e12
    channel_spacing: float = 100.0e9
    passband_fwhm: float = 50.0e9

    def __post_init__(self) -> None:
        if self.channel_spacing <= 0.0:
            raise DomainError("channel_spacing must be positive")
        if not 0.0 < self.passband_fwhm <= self.channel_spacing:
            raise DomainError("passband_fwhm must lie in (0, channel_spacing]")

    def center(self, channel) -> float:
        return self.anchor_frequency + parse_channel(channel) * self.channel_spacing

    def channel_of(self, frequency: float) -> int | None:
        """Channel whose passband contains ``frequency``, else None."""
        n = round((frequency - self.anchor_frequency) / self.channel_spacing)
        if abs(frequency - self.center(n)) <= 0.5 * self.passband_fwhm:
            return int(n)
        return None


class CombLine(NamedTuple):
    mu: int
    frequency: float
    power: float


def comb_lines(spec: CombSpec, grid: DwdmGrid, channels) -> dict[int, CombLine]:
    """Assign comb lines to the requested grid channels.

    Lines outside every requested passband are dropped; a requested channel
    with no line is absent from the result.  Two lines in one passband raise
    :class:`AmbiguityError`.
    """
    wanted = {parse_channel(c) for c in channels}
    out: dict[int, CombLine] = {}
    for mu in spec.modes:
        f = spec.line_frequency(mu)
        ch = grid.channel_of(f)
        if ch is None or ch not in wanted:
            continue
        if ch in out:
            raise AmbiguityError(
                f"{channel_name(ch)} holds two lines (mu={out[ch].mu} and mu={mu})")
        out[ch] = CombLine(mu, float(f), spec.line_power(mu))
    return dict(sorted(out.items()))

