"""Line-by-line frequency alignment of two combs.

Sign conventions, used everywhere in this module:

* the residual of a channel is ``f2 - f1``, comb 2's line minus comb 1's;
* every knob acts on comb 2 except ``pump_detuning_1``;
* positive ``f_ssb`` moves comb 2 up;
* the heater sits on cavity 2 and only red-shifts (moves comb 2 down).

With these, the residual for mode pair (mu1, mu2) is::

    (f_p2 + d2) - (f_p1 + d1) + mu2 FSR2 - mu1 FSR1 + f_ssb + f_heater

which for mu1 == mu2 == mu is the usual pump term + mu * dFSR + f_SSB +
f_heater budget.  The heater shift is taken at the comb-2 pump wavelength so
it is the same for every channel.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .core import C_LIGHT, CombSpec, DwdmGrid, channel_name, comb_lines, parse_channel
from .errors import DomainError, InfeasibleError

OBJECTIVES = ("max_abs", "rms")


@dataclass(frozen=True)
class TuningKnobs:
    """Knob settings plus the hardware limits they must respect.

    ``heater_response`` is in metres of wavelength shift per watt of heater
    power (2.26 pm/mW = 2.26e-9 m/W).
    """

    f_ssb: float = 0.0
    heater_voltage: float = 0.0
    pump_detuning_1: float = 0.0
    pump_detuning_2: float = 0.0
    heater_response: float = 2.26e-9
    heater_resistance: float = 1000.0
    heater_voltage_step: float = 0.01
    heater_max_shift: float = 50e9
    pump_detuning_range: float = 15e6
    ssb_range: float = 10e9
    ssb_resolution: float = 1e3

    def __post_init__(self) -> None:
        if self.heater_voltage < 0.0:
            raise DomainError("heater_voltage must be >= 0")
        if self.heater_resistance <= 0.0 or self.heater_voltage_step <= 0.0:
            raise DomainError("heater_resistance and heater_voltage_step must be positive")
        for name in ("heater_response", "heater_max_shift", "pump_detuning_range",
                     "ssb_range", "ssb_resolution"):
            if getattr(self, name) < 0.0:
                raise DomainError(f"{name} must be >= 0")
        steps = self.heater_voltage / self.heater_voltage_step
        if abs(steps - round(steps)) > 1e-6:
            raise DomainError(
                f"heater_voltage {self.heater_voltage} V is off the "
                f"{self.heater_voltage_step} V grid")
        for name in ("pump_detuning_1", "pump_detuning_2"):
            if abs(getattr(self, name)) > self.pump_detuning_range * (1 + 1e-12):
                raise DomainError(f"|{name}| exceeds pump_detuning_range")
        if abs(self.f_ssb) > self.ssb_range * (1 + 1e-12):
            raise DomainError("|f_ssb| exceeds ssb_range")

    def heater_coefficient(self, wavelength: float) -> float:
        """Red shift per volt squared [Hz/V^2] at ``wavelength``."""
        return C_LIGHT / wavelength ** 2 * self.heater_response / self.heater_resistance

    def heater_shift(self, wavelength: float) -> float:
        """Signed frequency shift of comb 2 from the heater [Hz] (<= 0)."""
        return -self.heater_coefficient(wavelength) * self.heater_voltage ** 2

    def max_heater_voltage(self, wavelength: float) -> float:
        k = self.heater_coefficient(wavelength)
        if k == 0.0:
            return 0.0
        n = math.floor(math.sqrt(self.heater_max_shift / k) / self.heater_voltage_step + 1e-9)
        return n * self.heater_voltage_step


def heater_wavelength(comb2: CombSpec) -> float:
    return C_LIGHT / comb2.pump_frequency


def residual(comb1: CombSpec, comb2: CombSpec, knobs: TuningKnobs, mu: int,
             mu2: int | None = None) -> float:
    """Frequency offset f2 - f1 of the line pair (mu, mu2) under ``knobs`` [Hz]."""
    mu2 = mu if mu2 is None else mu2
    pump = (comb2.pump_frequency - comb1.pump_frequency) + (
        knobs.pump_detuning_2 - knobs.pump_detuning_1)
    if mu == mu2:
        lines = mu * (comb2.fsr - comb1.fsr)
    else:
        lines = mu2 * comb2.fsr - mu * comb1.fsr
    return pump + lines + knobs.f_ssb + knobs.heater_shift(heater_wavelength(comb2))


@dataclass(frozen=True)
class AlignmentPlan:
    knobs: TuningKnobs
    channels: tuple[int, ...]
    mode_pairs: dict = field(default_factory=dict)              # channel -> (mu1, mu2)
    per_channel_residuals: dict = field(default_factory=dict)   # channel -> Hz
    objective: str = "max_abs"
    objective_value: float = 0.0
    binding: tuple[str, ...] = ()

    def recompute(self, comb1: CombSpec, comb2: CombSpec) -> dict:
        return {ch: residual(comb1, comb2, self.knobs, *self.mode_pairs[ch])
                for ch in self.channels}


def mode_pairs(comb1: CombSpec, comb2: CombSpec, grid: DwdmGrid,
               channels: Iterable) -> dict[int, tuple[int, int]]:
    """Map each channel to the (mu1, mu2) of the lines it passes."""
    chans = [parse_channel(c) for c in channels]
    l1 = comb_lines(comb1, grid, chans)
    l2 = comb_lines(comb2, grid, chans)
    missing = [channel_name(c) for c in chans if c not in l1 or c not in l2]
    if missing:
        raise DomainError(f"no line pair in {', '.join(missing)}")
    return {c: (l1[c].mu, l2[c].mu) for c in chans}


def _objective(res: np.ndarray, objective: str) -> np.ndarray:
    if objective == "max_abs":
        return np.max(np.abs(res), axis=-1)
    return np.sqrt(np.mean(res ** 2, axis=-1))


def solve_alignment(comb1: CombSpec, comb2: CombSpec, channels: Sequence, grid: DwdmGrid,
                    knobs_template: TuningKnobs, objective: str = "max_abs",
                    hard_cap: float = 1e9) -> AlignmentPlan:
    """One knob setting for all ``channels`` jointly.

    Exhaustive over the quantized heater voltages; at each voltage the
    continuous shift (SSB plus pump detunings) is set in closed form (the
    minimax or least-squares centre of the residuals, clipped to range).
    Among voltages within one SSB resolution step of the best objective, the
    one needing the smallest continuous shift wins, then the lowest voltage:
    heater for coarse, SSB for fine.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    if len(channels) == 0:
        raise DomainError("at least one channel is required")
    pairs = mode_pairs(comb1, comb2, grid, channels)
    chans = tuple(pairs)
    t = knobs_template
    zero = replace(t, f_ssb=0.0, heater_voltage=0.0, pump_detuning_1=0.0, pump_detuning_2=0.0)
    base = np.array([residual(comb1, comb2, zero, *pairs[c]) for c in chans])

    lam = heater_wavelength(comb2)
    k = t.heater_coefficient(lam)
    n_max = round(t.max_heater_voltage(lam) / t.heater_voltage_step)
    volts = np.round(np.arange(n_max + 1) * t.heater_voltage_step, 10)
    heat = -k * volts ** 2

    cont_limit = t.ssb_range + 2.0 * t.pump_detuning_range
    if objective == "max_abs":
        centre = -0.5 * (base.max() + base.min())
    else:
        centre = -base.mean()
    cont = np.clip(centre - heat, -cont_limit, cont_limit)
    obj = _objective(base[None, :] + heat[:, None] + cont[:, None], objective)

    tol = max(t.ssb_resolution, 1e-9 * max(1.0, abs(obj.min())))
    near = np.flatnonzero(obj <= obj.min() + tol)
    best = int(near[np.lexsort((volts[near], np.abs(cont[near])))[0]])

    knobs = _allocate(t, volts[best], float(cont[best]))
    res = {c: residual(comb1, comb2, knobs, *pairs[c]) for c in chans}
    value = float(_objective(np.array(list(res.values())), objective))
    binding = _binding(knobs, volts[best] == volts[-1] and n_max > 0)
    if value > hard_cap:
        raise InfeasibleError(
            f"best {objective} residual {value / 1e6:.3f} MHz exceeds cap "
            f"{hard_cap / 1e6:.3f} MHz" + (f"; binding: {', '.join(binding)}" if binding else
                                           "; knob ranges are all zero"),
            binding)
    return AlignmentPlan(knobs, chans, pairs, res, objective, value, binding)


def solve_per_channel(comb1: CombSpec, comb2: CombSpec, channels: Sequence, grid: DwdmGrid,
                      knobs_template: TuningKnobs, objective: str = "max_abs",
                      hard_cap: float = 1e9) -> list[AlignmentPlan]:
    """One plan per channel, each zeroing its own residual where ranges allow."""
    return [solve_alignment(comb1, comb2, [c], grid, knobs_template, objective, hard_cap)
            for c in channels]


def _allocate(t: TuningKnobs, volts: float, cont: float) -> TuningKnobs:
    """Split a continuous shift: SSB first (quantized), pump detunings take the rest."""
    ssb = max(-t.ssb_range, min(t.ssb_range, cont))
    if t.ssb_resolution > 0.0:
        q = round(ssb / t.ssb_resolution) * t.ssb_resolution
        if abs(q) > t.ssb_range:
            q = math.trunc(ssb / t.ssb_resolution) * t.ssb_resolution
        ssb = q
    rest = cont - ssb
    d2 = max(-t.pump_detuning_range, min(t.pump_detuning_range, rest))
    d1 = -max(-t.pump_detuning_range, min(t.pump_detuning_range, rest - d2))
    return replace(t, f_ssb=ssb, heater_voltage=float(volts),
                   pump_detuning_1=d1 + 0.0, pump_detuning_2=d2 + 0.0)


def _binding(k: TuningKnobs, heater_at_max: bool) -> tuple[str, ...]:
    out = []
    if k.ssb_range == 0.0 or abs(k.f_ssb) >= k.ssb_range:
        out.append("ssb_range")
    if k.pump_detuning_range == 0.0 or abs(k.pump_detuning_2) >= k.pump_detuning_range:
        out.append("pump_detuning_range")
    if heater_at_max or k.heater_max_shift == 0.0:
        out.append("heater_max_shift")
    return tuple(out)


PLAN_COLUMNS = ("channel", "mu1", "mu2", "residual_hz", "f_ssb_hz", "heater_voltage_v",
                "heater_shift_hz", "pump_detuning_1_hz", "pump_detuning_2_hz", "binding")


def plan_report(plans: AlignmentPlan | Sequence[AlignmentPlan],
                comb2: CombSpec | None = None) -> list[tuple]:
    """Header plus one row per channel, stable column order.

    ``comb2`` supplies the wavelength for the heater-shift column; without
    it that column is left blank.
    """
    if isinstance(plans, AlignmentPlan):
        plans = [plans]
    rows: list[tuple] = [PLAN_COLUMNS]
    for plan in plans:
        k = plan.knobs
        shift = "" if comb2 is None else repr(float(k.heater_shift(heater_wavelength(comb2))))
        for ch in plan.channels:
            mu1, mu2 = plan.mode_pairs[ch]
            rows.append((channel_name(ch), mu1, mu2, repr(float(plan.per_channel_residuals[ch])),
                         repr(float(k.f_ssb)), f"{k.heater_voltage:.2f}", shift,
                         repr(float(k.pump_detuning_1)), repr(float(k.pump_detuning_2)),
                         "|".join(plan.binding)))
    return rows


def write_plan_csv(path, plans, comb2: CombSpec | None = None) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(plan_report(plans, comb2))
