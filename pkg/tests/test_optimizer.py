import math
import warnings
from dataclasses import replace

import numpy as np
import pytest

from relayee import channel as ch
from relayee import metrics as me
from relayee import optimizer as op
from relayee.errors import InfeasibleDelayError, InvalidParameterError

from .conftest import symmetric

ALPHAS = [0.3, 0.5, 0.7]


# -- golden-section search --------------------------------------------------------------


def test_golden_quadratic():
    res = op.golden_section_max(lambda x: -((x - 2.0) ** 2), 0.0, 5.0, tol=1e-6)
    assert res.x == pytest.approx(2.0, abs=1e-6)
    assert res.unimodal


def test_golden_constant():
    res = op.golden_section_max(lambda x: 3.5, -1.0, 1.0)
    assert res.f == 3.5
    assert -1.0 <= res.x <= 1.0


def test_golden_monotone_returns_endpoint():
    res = op.golden_section_max(lambda x: x, 0.0, 1.0, tol=1e-8)
    assert res.x == pytest.approx(1.0, abs=1e-8)


def test_golden_warns_when_not_unimodal():
    # narrow spike near the left end, broad hump on the right
    f = lambda x: 10.0 if abs(x) < 1e-3 else -((x - 0.8) ** 2)
    with pytest.warns(op.NonUnimodalWarning):
        res = op.golden_section_max(f, 0.0, 1.0, tol=1e-6)
    assert res.x == 0.0 and res.f == 10.0 and not res.unimodal


def test_golden_bad_bracket():
    with pytest.raises(InvalidParameterError):
        op.golden_section_max(lambda x: x, 1.0, 1.0)


def test_golden_matches_grid_on_model(model):
    ev = op._Evaluator(model, "direct")
    grid = np.linspace(0.0, 30.0, 1000)
    vals = np.array([ev.ee(x) for x in grid])
    res = op.golden_section_max(ev.ee, 0.0, 30.0, tol=1e-3)
    assert abs(res.x - grid[np.argmax(vals)]) <= grid[1] - grid[0]


def test_db_tolerance():
    assert op._db_tol(1e-4) == pytest.approx(10 * math.log10(1.0001))


# -- relay and direct plans ---------------------------------------------------------------


@pytest.fixture(scope="module")
def relay_plan(model):
    return op.optimize_relay(model, alpha_grid=ALPHAS)


def test_relay_plan_is_argmax(model, relay_plan):
    assert relay_plan.alpha_star in ALPHAS
    assert relay_plan.feasible
    assert all(relay_plan.ee >= ee - 1e-9 for _, _, ee in relay_plan.curve)
    assert [a for a, _, _ in relay_plan.curve] == ALPHAS
    # reported EE is the model's EE at the reported point
    again = me.evaluate_relay(model.with_alpha(relay_plan.alpha_star).at_snr_db(relay_plan.snr_star_db))
    assert again.ee == pytest.approx(relay_plan.ee, rel=1e-12)


def test_relay_plan_grid_order_invariant(model, relay_plan):
    flipped = op.optimize_relay(model, alpha_grid=ALPHAS[::-1])
    assert flipped.alpha_star == relay_plan.alpha_star
    assert flipped.ee == relay_plan.ee


def test_relay_plan_snr_matches_grid(model, relay_plan):
    ev = op._Evaluator(model.with_alpha(relay_plan.alpha_star), "relay")
    grid = np.linspace(0.0, 30.0, 121)
    best = grid[np.argmax([ev.ee(x) for x in grid])]
    assert abs(relay_plan.snr_star_db - best) <= grid[1] - grid[0]


def test_delay_ladder_nested(model, relay_plan):
    free_delay = relay_plan.delay
    ees = [relay_plan.ee]
    for budget in (0.5 * free_delay, 0.1 * free_delay, 0.03 * free_delay):
        plan = op.optimize_relay(model, alpha_grid=[relay_plan.alpha_star], delay_budget=budget)
        assert plan.feasible
        assert plan.delay <= budget + 1e-9
        ees.append(plan.ee)
    assert all(b <= a + 1e-12 for a, b in zip(ees, ees[1:]))


def test_relay_infeasible_budget(model):
    with pytest.raises(InfeasibleDelayError) as info:
        op.optimize_relay(model, alpha_grid=[0.5], delay_budget=1.0)
    assert info.value.min_delay > 1.0


def test_relay_bad_inputs(model):
    with pytest.raises(InvalidParameterError):
        op.optimize_relay(model, alpha_grid=[0.0, 0.5])
    with pytest.raises(InvalidParameterError):
        op.optimize_relay(model, alpha_grid=[0.5], snr_min_db=10, snr_max_db=10)


def test_direct_plan_matches_grid(model):
    plan = op.optimize_direct(model)
    ev = op._Evaluator(model, "direct")
    grid = np.linspace(0.0, 30.0, 1000)
    best = grid[np.argmax([ev.ee(x) for x in grid])]
    assert abs(plan.snr_star_db - best) <= grid[1] - grid[0]
    assert plan.alpha_star is None


def test_direct_lossless_regime(model):
    # light load and every mode entered well above its target PER: no drops, no link errors,
    # so EE = lambda / power
    m = model.with_boundaries(tuple(10 * x for x in model.ar.amc.boundaries)).with_traffic(0.2)
    plan = op.optimize_direct(m, snr_min_db=29.0, snr_max_db=30.0)
    res = plan.metrics
    assert res.drop_source < 1e-3 and res.p_ld**m.system.max_tx < 1e-9
    a = m.ad.access.a_avail
    power = (a * res.tx_power_direct + (1 - a) * m.system.idle_power_w) * m.system.time_unit_s
    success = (1 - res.drop_source) * (1 - res.p_ld**m.system.max_tx)
    assert plan.ee == pytest.approx(0.2 * success / power, rel=1e-9)
    assert plan.ee == pytest.approx(0.2 / power, rel=1e-3)


def test_direct_boundary_optimum_on_rigged_config(model):
    # idle power swamps transmit power, so EE only grows with SNR
    m = replace(model, system=replace(model.system, idle_power_w=1e3))
    plan = op.optimize_direct(m, snr_min_db=0.0, snr_max_db=20.0)
    assert plan.snr_star_db == pytest.approx(20.0, abs=1e-3)


# -- policies -------------------------------------------------------------------------------


def test_policies(model, relay_plan):
    pol = op.amc_policy(relay_plan)
    assert [p.node for p in pol] == ["source", "relay"]
    assert pol[0].avg_snr == pol[1].avg_snr  # tied mean SNRs, equal gains
    assert pol[0].boundaries == model.ar.amc.boundaries
    direct = op.optimize_direct(model)
    assert len(direct.policy) == 1 and direct.policy[0].node == "source"


def test_policy_of_infeasible_plan(relay_plan):
    with pytest.raises(InfeasibleDelayError):
        op.amc_policy(replace(relay_plan, feasible=False))


# -- energy-efficient partition ---------------------------------------------------------


def test_eep_single_mode_untouched(model):
    mode = model.ar.amc.modes[0]
    table = ch.AmcModeTable((mode,), (0.0, model.ar.amc.boundaries[1], math.inf))
    m = replace(model, ar=replace(model.ar, amc=table), rd=replace(model.rd, amc=table), ad=replace(model.ad, amc=table))
    res = op.eep_boundaries(m)
    assert res.boundaries == table.boundaries
    assert res.ee == res.start_ee
    assert len(res.history) == 1


def test_eep_improves_and_converges(model):
    res = op.eep_boundaries(model.at_snr_db(5.0))
    assert res.ee >= res.start_ee
    assert all(b >= a for a, b in zip(res.history, res.history[1:]))
    assert len(res.history) == 1 or res.history[-1] <= res.history[-2] * (1 + 1e-6) or len(res.history) == 21
    b = res.boundaries
    assert b[0] == 0.0 and math.isinf(b[-1]) and all(x < y for x, y in zip(b[1:-1], b[2:-1]))
    again = me.evaluate_relay(model.at_snr_db(5.0).with_boundaries(b)).ee
    assert again == pytest.approx(res.ee, rel=1e-12)


def test_eep_power_domain_guard(model):
    # mode 1 confined below its PER cutoff runs at BERs the power model cannot price
    b = list(model.ar.amc.boundaries)
    b[1], b[2] = 1e-3, 0.3
    assert not op._in_power_domain(model.with_boundaries(tuple(b)), "relay")
    assert op._in_power_domain(model, "relay")


# -- mode switching -------------------------------------------------------------------------


def test_switch_identical_links_prefers_direct(model):
    m = symmetric(model)
    dec = op.switch_decision(m, alpha=0.5)
    assert dec.mode == "direct"
    assert dec.ee_direct > dec.ee_relay


def test_switch_infeasible_relay_gives_direct(model):
    dec = op.switch_decision(model, delay_budget=3.5)
    assert dec.ee_relay == -math.inf
    assert dec.mode == "direct"


def test_switch_consistent_with_plans(model):
    budget = 200.0
    dec = op.switch_decision(model, delay_budget=budget)
    relay = op.optimize_relay(model, alpha_grid=[model.alpha], delay_budget=budget)
    direct = op.optimize_direct(model, delay_budget=budget)
    assert relay.ee == pytest.approx(dec.ee_relay, rel=1e-3)
    assert direct.ee == pytest.approx(dec.ee_direct, rel=1e-3)
    assert dec.mode == ("relay" if relay.ee > direct.ee else "direct")
    assert dec.access_rhs_ratio == pytest.approx((0.8 + 0.6 * 0.5) / 1.5)
    assert dec.access_rhs_convex == pytest.approx(0.5 * 0.8 + 0.5 * 0.6)


def test_switch_nobody_feasible(model):
    with pytest.raises(InfeasibleDelayError):
        op.switch_decision(model, delay_budget=1.0)


def test_limit_regimes_closed_forms_agree(model):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        out = {c.regime: c for c in op.limit_regimes(model)}
    assert set(out) == {"transmit", "idle"}
    for c in out.values():
        assert c.full_choice == c.closed_choice
    assert out["transmit"].closed_relay == pytest.approx(out["transmit"].ee_relay, rel=0.05)
    assert out["transmit"].closed_direct == pytest.approx(out["transmit"].ee_direct, rel=0.05)
