import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import integrate

from relayee import channel as ch
from relayee.errors import (
    DegenerateChannelError,
    InvalidParameterError,
    InvalidTableError,
    SlowFadingViolation,
)

from .conftest import rayleigh


def unit_table(boundaries, modes=None):
    modes = modes or tuple(ch.AmcMode(b, 1.0, 1.0, 0.0) for b in range(1, len(boundaries) - 1))
    return ch.AmcModeTable(tuple(modes), tuple(boundaries))


def test_db_round_trip():
    assert ch.db_to_linear(10.0) == pytest.approx(10.0)
    assert ch.linear_to_db(ch.db_to_linear(-3.7)) == pytest.approx(-3.7)


@pytest.mark.parametrize(
    "m, sbar, s, expected",
    [(1.0, 1.0, 0.5, math.exp(-0.5)), (1.0, 2.0, 0.0, 0.5), (2.0, 1.0, 1.0, 4 * math.exp(-2))],
)
def test_gamma_pdf_values(m, sbar, s, expected):
    assert ch.gamma_pdf(s, ch.FadingModel(m, sbar)) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("m, sbar", [(1.0, 3.0), (2.5, 0.2), (4.0, 100.0)])
def test_gamma_pdf_integrates_to_one(m, sbar):
    fad = ch.FadingModel(m, sbar)
    total, _ = integrate.quad(lambda s: ch.gamma_pdf(s, fad), 0, sbar * 50 * m, limit=400, points=[sbar])
    assert total == pytest.approx(1.0, abs=1e-8)


def test_gamma_pdf_integrates_to_one_half_shape():
    # at m = 0.5 the tail beyond 25 mean SNRs still holds ~6e-7, so integrate to infinity;
    # s = x^2 removes the singularity at the origin
    fad = ch.FadingModel(0.5, 1.0)
    head, _ = integrate.quad(lambda x: 2 * x * ch.gamma_pdf(x * x, fad), 0, 1, epsabs=1e-12)
    tail, _ = integrate.quad(lambda s: ch.gamma_pdf(s, fad), 1, np.inf, epsabs=1e-12)
    assert head + tail == pytest.approx(1.0, abs=1e-8)


def test_invalid_fading_parameters():
    with pytest.raises(InvalidParameterError):
        ch.FadingModel(1.0, 0.0)
    with pytest.raises(InvalidParameterError):
        ch.FadingModel(0.3, 1.0)


def test_state_probabilities_small_tables():
    single = ch.AmcModeTable((ch.AmcMode(1, 1.0, 1.0, 0.0),), (0.0, 0.0, math.inf))
    assert ch.state_probabilities(single, ch.FadingModel(1.0, 1.0))[1] == pytest.approx(1.0)
    probs = ch.state_probabilities(unit_table((0.0, 1.0, math.inf)), ch.FadingModel(1.0, 1.0))
    assert probs == pytest.approx([1 - math.exp(-1), math.exp(-1)], rel=1e-12)


def test_state_probabilities_match_sampling(amc):
    fad = ch.FadingModel(2.0, ch.db_to_linear(10.0))
    rng = np.random.default_rng(7)
    s = rng.gamma(fad.m, fad.avg_snr / fad.m, 10**6)
    hist = np.histogram(s, bins=np.array(amc.boundaries[:-1] + (np.inf,)))[0] / s.size
    assert np.abs(hist - ch.state_probabilities(amc, fad)).sum() <= 0.01


@settings(max_examples=60, deadline=None)
@given(st.floats(0.5, 6.0), st.floats(-5.0, 35.0))
def test_state_probabilities_sum_to_one(m, snr_db):
    amc = ch.AmcModeTable(ch.default_amc_modes(), ch.msre_boundaries(ch.default_amc_modes(), 0.001 ** (1 / 7)))
    probs = ch.state_probabilities(amc, ch.FadingModel(m, ch.db_to_linear(snr_db)))
    assert np.all(probs >= 0)
    assert probs.sum() == pytest.approx(1.0, abs=1e-8)


def test_per_at_branches():
    mode = ch.AmcMode(1, 1.0, 1.0, 0.0)
    assert ch.per_at(2.0, mode) == pytest.approx(math.exp(-2))
    cut = ch.AmcMode(2, 5.0, 0.5, 4.0)
    assert ch.per_at(1.0, cut) == 1.0
    continuous = ch.AmcMode(1, math.exp(2.0), 1.0, 2.0)
    assert ch.per_at(2.0, continuous) == pytest.approx(1.0)
    assert ch.per_at(1.999999, continuous) == 1.0


def test_amc_mode_validation():
    with pytest.raises(InvalidParameterError):
        ch.AmcMode(1, -1.0, 1.0, 0.0)
    with pytest.raises(InvalidTableError):
        ch.AmcModeTable((ch.AmcMode(2, 1.0, 1.0, 0.0), ch.AmcMode(1, 1.0, 1.0, 0.0)), (0.0, 1.0, 2.0, math.inf))
    with pytest.raises(InvalidTableError):
        ch.AmcModeTable((ch.AmcMode(1, 1.0, 1.0, 0.0),), (0.0, 2.0, 1.0))


def test_avg_link_per_extremes():
    perfect = ch.AmcModeTable((ch.AmcMode(1, 1e-300, 1.0, 0.0),), (0.0, 0.0, math.inf))
    link = ch.LinkModel(ch.FadingModel(1.0, 10.0), perfect, ch.SpectrumAccess(1, 1))
    assert ch.avg_link_per(link) == pytest.approx(0.0, abs=1e-12)
    hopeless = ch.AmcModeTable((ch.AmcMode(1, 1.0, 1.0, 1e12),), (0.0, 0.0, math.inf))
    link = ch.LinkModel(ch.FadingModel(1.0, 10.0), hopeless, ch.SpectrumAccess(1, 1))
    assert ch.avg_link_per(link) == pytest.approx(1.0)


def test_avg_link_per_degenerate():
    outage = ch.AmcModeTable((ch.AmcMode(1, 1.0, 1.0, 0.0),), (0.0, math.inf, math.inf))
    link = ch.LinkModel(ch.FadingModel(1.0, 1.0), outage, ch.SpectrumAccess(1, 1))
    with pytest.raises(DegenerateChannelError):
        ch.avg_link_per(link)


def test_avg_link_per_matches_sampling(amc):
    link = rayleigh(5.0, amc)
    rng = np.random.default_rng(11)
    s = rng.exponential(link.fading.avg_snr, 10**6)
    state = np.searchsorted(np.array(amc.boundaries), s, side="right") - 1
    keep = state >= 1
    per = np.array([ch.per_at(x, amc.modes[n - 1]) for x, n in zip(s[keep][:200000], state[keep][:200000])])
    bits = np.array(amc.bits)[state[keep][:200000]]
    rng_err = rng.random(per.size) < per
    empirical = float(np.sum(bits * rng_err) / np.sum(bits))
    assert abs(empirical - ch.avg_link_per(link)) <= 0.005


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(0.0, 20.0), st.floats(1.0, 4.0))
def test_avg_link_per_nonincreasing_single_mode(g, start, m):
    mode = ch.AmcMode(1, 1.0, g, 0.0)
    table = ch.AmcModeTable((mode,), (0.0, start, math.inf))
    vals = []
    for snr_db in np.linspace(0, 30, 20):
        link = ch.LinkModel(ch.FadingModel(m, ch.db_to_linear(snr_db)), table, ch.SpectrumAccess(1, 1))
        vals.append(ch.avg_link_per(link))
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


def test_avg_link_per_default_table_shape(amc):
    # falls at low SNR and again once the top mode dominates; in between the
    # rate weighting shifts mass to modes entered at the target PER, so it rises
    vals = np.array([ch.avg_link_per(rayleigh(x, amc)) for x in np.linspace(0, 30, 25)])
    assert np.all(np.diff(vals[:7]) <= 0)
    assert np.all(np.diff(vals[17:]) <= 0)
    assert vals[-1] < vals[0]


@pytest.mark.parametrize(
    "args, expected",
    [((1.0, 1.0, 0.4), (1.0, 0.0, 1.0)), ((0.0, 0.3, 0.7), (0.0, 0.0, 0.0)), ((0.5, 0.2, 0.3), (0.1, 0.12, 0.22))],
)
def test_combined_error(args, expected):
    assert ch.combined_error(*args) == pytest.approx(expected, abs=1e-15)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_combined_error_bounded_by_direct(p_ld, p_l1, p_l2):
    p1, p2, p0 = ch.combined_error(p_ld, p_l1, p_l2)
    assert p0 <= p_ld + 1e-15
    assert p0 == pytest.approx(p1 + p2)


def test_msre_boundaries_examples():
    mode = ch.AmcMode(1, 1.0, 1.0, 0.0)
    assert ch.msre_boundaries((mode,), math.exp(-3))[1] == pytest.approx(3.0)
    cut = ch.AmcMode(1, 0.5, 1.0, 2.0)
    assert ch.msre_boundaries((cut,), 1.0)[1] == pytest.approx(2.0)


def test_msre_boundaries_hit_target(amc):
    target = 0.001 ** (1 / 7)
    for mode, s in zip(amc.modes, amc.boundaries[1:-1]):
        assert ch.per_at(s, mode) == pytest.approx(target, abs=1e-9)


def test_msre_non_monotone_table():
    modes = (ch.AmcMode(1, 1.0, 0.1, 0.0), ch.AmcMode(2, 1.0, 1.0, 0.0))
    with pytest.raises(InvalidTableError):
        ch.msre_boundaries(modes, 0.1)


def test_fsmc_static_channel(amc):
    P = ch.fsmc_transitions(amc, ch.FadingModel(1.0, 3.0, doppler_hz=0.0))
    assert np.array_equal(P, np.eye(P.shape[0]))


@settings(max_examples=40, deadline=None)
@given(st.floats(1.0, 4.0), st.floats(0.0, 30.0), st.floats(0.0, 20.0))
def test_fsmc_stochastic_tridiagonal(m, snr_db, doppler):
    amc = ch.AmcModeTable(ch.default_amc_modes(), ch.msre_boundaries(ch.default_amc_modes(), 0.001 ** (1 / 7)))
    fad = ch.FadingModel(m, ch.db_to_linear(snr_db), doppler_hz=doppler)
    try:
        P = ch.fsmc_transitions(amc, fad)
    except SlowFadingViolation:
        assume(False)
    assert np.all(P >= 0)
    assert np.abs(P.sum(axis=1) - 1).max() <= 1e-12
    assert np.count_nonzero(np.triu(P, 2)) == 0 and np.count_nonzero(np.tril(P, -2)) == 0
    pi = ch.state_probabilities(amc, fad)
    assert np.abs(pi @ P - pi).sum() <= 0.02


def test_fsmc_slow_fading_violation(amc):
    with pytest.raises(SlowFadingViolation):
        ch.fsmc_transitions(amc, ch.FadingModel(1.0, 3.0, doppler_hz=5000.0))


def test_fsmc_matches_sampled_rayleigh_process(amc):
    # Clarke/Jakes envelope by sum of sinusoids, sampled once per frame
    fad = ch.FadingModel(1.0, ch.db_to_linear(10.0), doppler_hz=10.0, frame_s=1e-3)
    rng = np.random.default_rng(3)
    n_paths, n_runs, n_frames = 32, 200, 5000
    t = np.arange(n_frames) * fad.frame_s
    P_emp = np.zeros((len(amc.boundaries) - 1,) * 2)
    bounds = np.array(amc.boundaries)
    for _ in range(n_runs):
        theta = rng.uniform(0, 2 * np.pi, n_paths)
        phi = rng.uniform(0, 2 * np.pi, (2, n_paths))
        w = 2 * np.pi * fad.doppler_hz * np.cos(theta)
        i = np.cos(np.outer(t, w) + phi[0]).sum(axis=1)
        q = np.cos(np.outer(t, w) + phi[1]).sum(axis=1)
        s = (i**2 + q**2) / n_paths * fad.avg_snr
        state = np.searchsorted(bounds, s, side="right") - 1
        np.add.at(P_emp, (state[:-1], state[1:]), 1)
    P = ch.fsmc_transitions(amc, fad)
    rows = P_emp.sum(axis=1)
    busy = rows > 20000
    P_emp = P_emp[busy] / rows[busy, None]
    assert np.abs(P_emp - P[busy]).max() <= 0.01


def test_level_crossing_rate_rayleigh():
    fad = ch.FadingModel(1.0, 4.0, doppler_hz=10.0)
    s = 2.0
    rho = s / fad.avg_snr
    expected = fad.doppler_hz * math.sqrt(2 * math.pi * rho) * math.exp(-rho)
    assert float(ch.level_crossing_rate(s, fad)) == pytest.approx(expected, rel=1e-12)


def test_stationary_access_examples():
    assert ch.stationary_access(2.0, 2.0) == pytest.approx((0.5, 0.5))
    assert ch.stationary_access(1.0, 3.0) == pytest.approx((0.25, 0.75))
    with pytest.raises(InvalidParameterError):
        ch.stationary_access(0.0, 1.0)


def test_access_fraction_of_simulated_exponential_process():
    q, u = 2.0, 1.0
    rng = np.random.default_rng(5)
    avail, total, state = 0.0, 0.0, 1
    while total < 20000.0:
        hold = rng.exponential(1.0 / (u if state else q))
        avail += hold if state else 0.0
        total += hold
        state = 1 - state
    assert avail / total == pytest.approx(2 / 3, abs=0.01)


@given(st.floats(0.01, 50.0), st.floats(0.01, 50.0))
def test_access_probabilities_complement(q, u):
    acc = ch.SpectrumAccess(q, u)
    assert acc.a_avail + acc.a_unavail == pytest.approx(1.0)
    leave_a, leave_u = acc.slot_transitions(1.0)
    assert 0 <= leave_a <= 1 and 0 <= leave_u <= 1
    # the discretised chain keeps the continuous-time stationary law
    assert leave_u / (leave_a + leave_u) == pytest.approx(acc.a_avail)


def test_fitted_modes_track_uncoded_per():
    for mode in ch.default_amc_modes():
        scale = (2.0**mode.bits - 1) / 1.5
        s = np.linspace(scale * 3.0, scale * 8.0, 20)
        exact = ch.uncoded_per(s, mode.bits, 100)
        fitted = np.array([ch.per_at(x, mode) for x in s])
        mask = exact > 1e-5
        assert np.all(np.abs(np.log(fitted[mask]) - np.log(exact[mask])) < 1.0)
    bits = [m.bits for m in ch.default_amc_modes()]
    assert bits == sorted(bits) and bits == list(range(1, 8))
