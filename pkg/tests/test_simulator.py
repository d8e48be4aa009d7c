import math
from dataclasses import fields, replace

import numpy as np
import pytest

from relayee import channel as ch
from relayee import metrics as me
from relayee import simulator as sim
from relayee.errors import ComparabilityError, InvalidParameterError


def short(model, slots=200_000, seed=1, warmup=5_000, **kw):
    return sim.run(sim.SimConfig(model, horizon_slots=slots, seed=seed, warmup_slots=warmup, **kw))


def as_report(analytic, model):
    """A simulation report carrying the analytic values, for self-validation."""

    def grid(chain, pi, n_states):
        out = np.zeros((n_states, chain.buffer + 1))
        labels = chain.states if chain.states.ndim == 1 else chain.states[:, -1]
        np.add.at(out, labels, pi.pi.reshape(chain.n_service, chain.buffer + 1))
        return out

    n_a = len(model.ar.amc.boundaries) - 1
    n_r = len(model.rd.amc.boundaries) - 1
    return sim.SimReport(
        seed=0,
        slots=1,
        arrived=1,
        delivered=1,
        drop_source=analytic.drop_source,
        drop_relay=analytic.drop_relay,
        delay=analytic.delay,
        sojourn_count=1,
        throughput=analytic.throughput,
        energy_j=analytic.energy_per_period,
        power_total=analytic.power_total,
        ee=analytic.ee,
        availability=(model.ar.access.a_avail, model.rd.access.a_avail, model.ad.access.a_avail),
        occupancy_source=grid(analytic.source_chain, analytic.source_pi, n_a),
        occupancy_relay=grid(analytic.relay_chain, analytic.relay_pi, n_r),
        halfwidths={},
        totals={},
    )


def full_access(model):
    links = {name: replace(getattr(model, name), access=ch.SpectrumAccess(1e6, 1e-6)) for name in ("ar", "rd", "ad")}
    return replace(model, **links)


def test_zero_arrivals_idle_energy(model):
    m = model.with_traffic(0.0)
    rep = short(m, slots=50_000, accounting="busy")
    assert rep.arrived == rep.delivered == 0
    assert rep.drop_source == rep.drop_relay == 0.0
    assert all(v == 0 for k, v in rep.totals.items())
    window = 50_000 - 5_000
    assert rep.energy_j == pytest.approx(m.system.idle_power_w * window * m.system.time_unit_s, rel=1e-12)


def test_lossless_regime(model):
    # every mode entered far above its target PER, full spectrum access, light load
    m = full_access(model).with_boundaries(tuple(30 * x for x in model.ar.amc.boundaries)).with_traffic(0.05)
    m = m.at_snr_db(30.0)
    rep = short(m, slots=200_000)
    assert rep.drop_source <= 1e-3 and rep.drop_relay <= 1e-3
    assert rep.totals["delivered"] / rep.totals["arrived"] >= 0.999


def test_same_seed_same_report(model):
    a = short(model, slots=60_000, seed=7, trace=True)
    b = short(model, slots=60_000, seed=7, trace=True)
    for f in fields(sim.SimReport):
        x, y = getattr(a, f.name), getattr(b, f.name)
        if isinstance(x, np.ndarray):
            np.testing.assert_array_equal(x, y)
        elif isinstance(x, dict):
            assert x.keys() == y.keys()
            for k in x:
                np.testing.assert_array_equal(x[k], y[k])
        elif isinstance(x, float) and math.isnan(x):
            assert math.isnan(y)
        else:
            assert x == y
    c = short(model, slots=60_000, seed=8)
    assert c.arrived != a.arrived or c.energy_j != a.energy_j


@pytest.mark.parametrize("seed, snr_db, buffer", [(1, 0.0, 5), (2, 5.0, 50), (3, 15.0, 10), (4, 30.0, 2)])
def test_conservation(model, seed, snr_db, buffer):
    rep = short(model.at_snr_db(snr_db).with_buffer(buffer), slots=80_000, seed=seed, warmup=1_000)
    assert rep.conservation_gap() == 0
    assert rep.delivered <= rep.arrived
    for p in (rep.drop_source, rep.drop_relay):
        assert 0.0 <= p <= 1.0


def test_availability_and_rates(model):
    rep = short(model, slots=300_000, seed=5)
    for link, emp in zip((model.ar, model.rd, model.ad), rep.availability):
        assert emp == pytest.approx(link.access.a_avail, abs=0.01)
    assert rep.arrived / rep.slots == pytest.approx(model.traffic.mean_rate, rel=0.01)


def test_mmpp_arrival_rate(model):
    traffic = replace(model.traffic, mmpp_rates=(1.0, 2.0), mmpp_switch=((0.99, 0.01), (0.03, 0.97)))
    rep = short(replace(model, traffic=traffic), slots=300_000, seed=3)
    assert rep.arrived / rep.slots == pytest.approx(traffic.mixture_mean, rel=0.03)


def test_trace_columns(model):
    rep = short(model, slots=3_000, warmup=100, trace=True)
    assert rep.trace.shape == (3_000, len(sim.TRACE_COLUMNS))
    np.testing.assert_array_equal(rep.trace[:, 0], np.arange(3_000))
    assert np.all(np.isin(rep.trace[:, 3:5], (0, 1)))
    assert np.all(rep.trace[:, 5] <= model.system.buffer)
    measured = rep.trace[100:, 8].sum()
    assert measured == pytest.approx(rep.energy_j, rel=1e-9)


def test_sim_config_validation(model):
    with pytest.raises(InvalidParameterError):
        sim.SimConfig(model, horizon_slots=100, warmup_slots=100)
    with pytest.raises(InvalidParameterError):
        sim.SimConfig(model, horizon_slots=100, warmup_slots=0, accounting="lazy")
    with pytest.raises(InvalidParameterError):
        sim.SimConfig(model, horizon_slots=100, warmup_slots=0, batches=1)


def test_validate_against_itself(model):
    analytic = me.evaluate_relay(model)
    items = sim.validate(analytic, as_report(analytic, model), model=model)
    assert {i.metric for i in items} >= {"ee", "drop_source", "drop_relay", "delay", "occupancy_source", "availability_ar"}
    assert all(i.passed and i.gap == pytest.approx(0.0, abs=1e-12) for i in items)


def test_validate_flags_corrupted_drop(model):
    analytic = me.evaluate_relay(model)
    report = as_report(analytic, model)
    corrupted = replace(analytic, drop_source=min(1.0, 2 * analytic.drop_source))
    corrupted = replace(analytic, drop_source=analytic.drop_source / 2) if corrupted.drop_source == analytic.drop_source else corrupted
    failed = [i.metric for i in sim.validate(corrupted, report, model=model) if not i.passed]
    assert failed == ["drop_source"]


def test_validate_rejects_mismatches(model):
    direct = me.evaluate_direct(model)
    relay = me.evaluate_relay(model)
    rep = as_report(relay, model)
    with pytest.raises(ComparabilityError):
        sim.validate(direct, rep)
    with pytest.raises(ComparabilityError):
        sim.validate(relay, rep, model=model.with_alpha(0.3))
    with pytest.raises(ComparabilityError):
        sim.validate(me.evaluate_relay(model.with_buffer(10)), rep)


def test_halfwidths_shrink_with_horizon(model):
    m = model.at_snr_db(10.0)
    ratios = []
    for key in ("ee", "throughput"):
        small = np.mean([short(m, slots=100_000, seed=s, warmup=2_000).halfwidths[key] for s in range(10)])
        large = np.mean([short(m, slots=198_000, seed=s, warmup=2_000).halfwidths[key] for s in range(10)])
        ratios.append(large / small)
    for r in ratios:
        assert r == pytest.approx(1 / math.sqrt(2), rel=0.20)


def test_pool_sums_counts(model):
    reps = [short(model, slots=30_000, seed=s, warmup=1_000) for s in (1, 2)]
    pooled = sim.pool(reps)
    assert pooled.arrived == sum(r.arrived for r in reps)
    assert pooled.totals["delivered"] == sum(r.totals["delivered"] for r in reps)
    assert pooled.ee == pytest.approx(np.mean([r.ee for r in reps]))
    with pytest.raises(InvalidParameterError):
        sim.pool([])
    with pytest.raises(ComparabilityError):
        sim.pool([reps[0], short(model.with_buffer(5), slots=5_000, warmup=100)])
