import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dkshom.core import (
    C_LIGHT,
    CombSpec,
    DispersionSeries,
    DwdmGrid,
    ResonatorParams,
    comb_lines,
    extinction_ratio_db,
    intrinsic_q_from_linewidth,
    invert_coupling,
    mode_frequency,
    oscillation_threshold,
    parse_channel,
    q_coupling,
    q_intrinsic,
    q_total,
    sech2_envelope,
    select_branch,
)
from dkshom.errors import AmbiguityError, DomainError, NoSolutionError


def ring(r, a, ng=2.0, length=1.0e-3, lam=1.55e-6, **kw):
    return ResonatorParams(ng, length, r, a, lam, **kw)


# mode_frequency ------------------------------------------------------------

def test_mode_frequency_at_zero_is_center():
    disp = DispersionSeries.from_frequencies(193.7e12, 100.41e9, 1.3e6)
    assert mode_frequency(disp, 0) == disp.omega0 / (2 * math.pi)


def test_mode_frequency_linear_fsr():
    disp = DispersionSeries.from_frequencies(193.7e12, 100.41e9)
    # 6 * 100.41 GHz = 602.46 GHz
    assert mode_frequency(disp, 6) == pytest.approx(193.7e12 + 602.46e9, rel=1e-15)


@given(mu=st.integers(-400, 400), d2=st.floats(-5e6, 5e6), d3=st.floats(-1e4, 1e4))
def test_second_difference_is_d2(mu, d2, d3):
    # third-order term contributes D3*mu to the second difference
    disp = DispersionSeries(0.0, (2 * math.pi * 100e9, 2 * math.pi * d2, 2 * math.pi * d3))
    second = (mode_frequency(disp, mu + 1) + mode_frequency(disp, mu - 1)
              - 2 * mode_frequency(disp, mu))
    assert second == pytest.approx(d2 + d3 * mu, abs=1e-3 * (abs(mu) + 1))


def test_second_difference_at_pump():
    d2 = 2 * math.pi * 1.7e6
    disp = DispersionSeries(2 * math.pi * 1.9e14, (2 * math.pi * 100e9, d2))
    second = (mode_frequency(disp, 1) + mode_frequency(disp, -1)
              - 2 * mode_frequency(disp, 0))
    assert second == pytest.approx(d2 / (2 * math.pi), rel=1e-6)


def test_mode_frequency_rejects_large_mu():
    disp = DispersionSeries.from_frequencies(1.9e14, 1e11, max_mode=50)
    with pytest.raises(DomainError):
        mode_frequency(disp, 51)


# quality factor and extinction -------------------------------------------

def test_q_total_example():
    # mpmath, 30 digits: pi*2*1e-3*0.999 / (1.55e-6 * (1 - 0.998001))
    assert q_total(ring(0.999, 0.999)) == pytest.approx(2025820.04611092865, rel=1e-12)


def test_q_total_diverges_monotonically():
    qs = [q_total(ring(x, x)) for x in (0.99, 0.999, 0.9999, 0.99999)]
    assert all(b > a for a, b in zip(qs, qs[1:]))


def test_extinction_ratio_example():
    # mpmath: 10 log10((0.04^2 1.9405^2) / (1.94^2 0.0595^2))
    assert extinction_ratio_db(ring(0.99, 0.95)) == pytest.approx(-3.44690114509559, rel=1e-12)


def test_extinction_ratio_critical_is_minus_inf():
    assert extinction_ratio_db(ring(0.97, 0.97)) == -math.inf


def test_extinction_ratio_swap_symmetric():
    assert extinction_ratio_db(ring(0.99, 0.95)) == extinction_ratio_db(ring(0.95, 0.99))


@pytest.mark.parametrize("r,a", [(1.0, 0.9), (0.9, 1.0), (0.0, 0.5), (0.5, 1.2)])
def test_params_reject_unphysical(r, a):
    with pytest.raises(DomainError):
        ring(r, a)


def test_q_split_matches_reciprocal_sum():
    # for high finesse 1/Q_L ~ 1/Q_i + 1/Q_c
    p = ring(0.9995, 0.9990)
    approx = 1.0 / (1.0 / q_intrinsic(p) + 1.0 / q_coupling(p))
    assert q_total(p) == pytest.approx(approx, rel=1e-6)


# inversion ---------------------------------------------------------------

def test_invert_coupling_returns_both_branches():
    p = ring(0.99, 0.95)
    cands = invert_coupling(q_total(p), extinction_ratio_db(p), 2.0, 1e-3, 1.55e-6)
    got = {(round(c.r, 12), round(c.a, 12)) for c in cands}
    assert got == {(0.99, 0.95), (0.95, 0.99)}
    assert select_branch(cands, "auto").branch == "under"
    assert select_branch(cands, "under") == (pytest.approx(0.99), pytest.approx(0.95), "under")
    assert select_branch(cands, "over").r == pytest.approx(0.95)


def test_invert_coupling_critical():
    p = ring(0.98, 0.98)
    cands = invert_coupling(q_total(p), -math.inf, 2.0, 1e-3, 1.55e-6)
    assert len(cands) == 1
    assert cands[0].r == cands[0].a == pytest.approx(0.98, rel=1e-14)
    assert cands[0].branch == "critical"


@pytest.mark.parametrize("er_db", [0.0, 1.0, math.nan])
def test_invert_coupling_no_solution(er_db):
    with pytest.raises(NoSolutionError):
        invert_coupling(1e5, er_db, 2.0, 1e-3, 1.55e-6)


def test_invert_coupling_shallow_dip_still_solvable():
    cands = invert_coupling(1e5, -1e-4, 2.0, 1e-3, 1.55e-6)
    assert all(0 < c.r < 1 and 0 < c.a < 1 for c in cands)


@settings(max_examples=300)
@given(r=st.floats(0.9, 0.9999), a=st.floats(0.9, 0.9999))
def test_forward_invert_forward_round_trip(r, a):
    if abs(r - a) < 1e-9:
        return
    p = ring(r, a)
    q, er = q_total(p), extinction_ratio_db(p)
    cands = invert_coupling(q, er, p.group_index, p.cavity_length, p.resonance_wavelength)
    assert len(cands) == 2
    for c in cands:
        back = ring(c.r, c.a)
        assert q_total(back) == pytest.approx(q, rel=1e-9)
        assert extinction_ratio_db(back) == pytest.approx(er, rel=1e-9)


def test_intrinsic_q_two_routes_agree():
    # Lorentzian route vs. ring route for a high-finesse resonator
    p = ring(0.9996, 0.9992, ng=2.1, length=1.42e-3)
    depth = 1.0 - 10 ** (extinction_ratio_db(p) / 10)
    via_lw = intrinsic_q_from_linewidth(q_total(p), depth, "under")
    assert via_lw == pytest.approx(q_intrinsic(p), rel=1e-3)


# threshold ---------------------------------------------------------------

def test_threshold_linear_in_area():
    p1 = ring(0.999, 0.998, effective_mode_area=1.26e-12)
    p2 = ring(0.999, 0.998, effective_mode_area=2.52e-12)
    assert oscillation_threshold(p2, 2e6, 4e6) == pytest.approx(
        2 * oscillation_threshold(p1, 2e6, 4e6), rel=1e-14)


def test_threshold_inverse_square_in_q():
    p = ring(0.999, 0.998)
    # fixed Q_c/Q_L: scale both Q_L and Q_i by 2
    assert oscillation_threshold(p, 4e6, 8e6) == pytest.approx(
        oscillation_threshold(p, 2e6, 4e6) / 4, rel=1e-14)


def test_threshold_rejects_bad_inputs():
    p = ring(0.999, 0.998)
    with pytest.raises(DomainError):
        oscillation_threshold(p, -1.0, 4e6)
    with pytest.raises(DomainError):
        oscillation_threshold(p, 5e6, 4e6)


def cavity1_threshold():
    ng = 2.1
    length = C_LIGHT / (ng * 100.41e9)
    p = ResonatorParams(ng, length, 0.999, 0.998, 1.5477e-6, effective_mode_area=1.26e-12)
    q_i = 4.1e6
    q_c = 2 * q_i  # Q_c = 2 Q_i minimises P_th at fixed Q_i
    q_l = 1 / (1 / q_i + 1 / q_c)
    return oscillation_threshold(p, q_l, q_i)


def test_threshold_cavity1_order_of_magnitude():
    # Same order of magnitude as the reported few-mW threshold.
    assert 1e-3 < cavity1_threshold() < 1e-2


@pytest.mark.xfail(strict=True, reason="standard threshold with literature n2 gives ~6.7 mW, "
                   "not within 2x of the reported 2.66 mW")
def test_threshold_cavity1_within_factor_two():
    assert 2.66e-3 / 2 <= cavity1_threshold() <= 2 * 2.66e-3


# combs on a grid ---------------------------------------------------------

def test_parse_channel():
    assert parse_channel("CH38") == 38
    assert parse_channel("ch07") == 7
    assert parse_channel(44) == 44
    with pytest.raises(ValueError):
        parse_channel("lane 4")


def test_grid_default_numbering():
    grid = DwdmGrid()
    assert grid.center("CH34") == 193.4e12
    assert grid.channel_of(193.4e12 + 20e9) == 34
    assert grid.channel_of(193.4e12 + 30e9) is None


def test_commensurate_grid_one_line_per_channel():
    grid = DwdmGrid()
    env = sech2_envelope(1e-3, 100e9, 3e12, 20)
    spec = CombSpec(grid.center(37), 100e9, env, 37)
    lines = comb_lines(spec, grid, range(30, 45))
    assert list(lines) == list(range(30, 45))
    for ch, line in lines.items():
        assert line.mu == ch - 37
        assert line.frequency == pytest.approx(grid.center(ch), rel=1e-15)


def test_fsr_mismatch_at_mu6():
    grid = DwdmGrid()
    env = sech2_envelope(1e-3, 100e9, 3e12, 12)
    f_p = grid.center(37)
    c1 = CombSpec(f_p, 100.41e9, env, 37)
    c2 = CombSpec(f_p, 100.54e9, env, 37)
    l1 = comb_lines(c1, grid, ["CH43"])[43]
    l2 = comb_lines(c2, grid, ["CH43"])[43]
    assert l1.mu == l2.mu == 6
    assert l2.frequency - l1.frequency == pytest.approx(780e6, abs=1e-3)


def test_ten_channels_populated_for_both_combs():
    grid = DwdmGrid()
    env = sech2_envelope(1e-3, 100.4e9, 3e12, 15)
    chans = [f"CH{n}" for n in range(38, 48)]
    for fsr in (100.41e9, 100.54e9):
        lines = comb_lines(CombSpec(grid.center(37), fsr, env, 37), grid, chans)
        assert sorted(lines) == list(range(38, 48))


def test_two_lines_in_one_passband_is_ambiguous():
    grid = DwdmGrid(passband_fwhm=100e9)
    env = sech2_envelope(1e-3, 40e9, 1e12, 5)
    spec = CombSpec(grid.center(37), 40e9, env, 37)
    with pytest.raises(AmbiguityError):
        comb_lines(spec, grid, [37])


def test_sech2_halves_at_half_bandwidth():
    env = sech2_envelope(2.0, 100e9, 2e12, 10)
    assert env[0] == 2.0
    assert env[10] == pytest.approx(1.0, rel=1e-12)  # 10 * 100 GHz = 1 THz = BW/2


@given(st.lists(st.integers(25, 55), min_size=1, max_size=10))
def test_comb_lines_power_never_exceeds_envelope(chans):
    grid = DwdmGrid()
    env = sech2_envelope(1e-3, 100.41e9, 2e12, 30)
    spec = CombSpec(grid.center(37), 100.41e9, env, 37)
    lines = comb_lines(spec, grid, chans)
    assert sum(l.power for l in lines.values()) <= sum(env.values())
    assert comb_lines(spec, grid, chans) == lines


def test_comb_requires_centred_dispersion():
    with pytest.raises(DomainError):
        CombSpec(193.7e12, 100e9, {}, 37,
                 DispersionSeries.from_frequencies(193.8e12, 100e9))


def test_comb_rejects_negative_power():
    with pytest.raises(DomainError):
        CombSpec(193.7e12, 100e9, {0: -1.0})
