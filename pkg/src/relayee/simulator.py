"""Slot-level Monte-Carlo simulation of the buffer-aided relay link.

Each slot the simulator

1. records the joint (channel state, buffer level) occupancy of both queues,
2. charges energy for the source phase (fraction ``alpha`` of the slot) and
   the relay phase, using the transmit power at an SNR drawn inside the
   current channel state when the spectrum is available and the idle power
   otherwise,
3. serves the relay queue: every departing packet runs up to ``max_tx``
   ARQ attempts; an attempt fails when the direct copy fails and either hop
   of the relay path fails, each drawn at an SNR sampled for the link,
4. serves the source queue and hands its departures to the relay buffer,
5. admits new arrivals at the source, dropping overflow,
6. advances the channel chains, the occupancy processes and the traffic state.

Per-slot service counts are ``floor(chi) + Bernoulli(frac(chi))`` of the
state's service rate, as in the analytic chain.  Randomness comes from one
Philox stream per subsystem (arrivals, fading, occupancy, service, errors,
traffic modulation) spawned from the run's seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import special, stats

from . import channel as ch
from . import metrics as me
from . import queueing as qu
from .errors import ComparabilityError, InvalidParameterError

STREAMS = ("arrivals", "fading", "occupancy", "service", "errors", "traffic")
CHUNK = 1 << 16
POOL = 1 << 20
QUANTILES = 2048

# counter layout
C_ARRIVED, C_DROP_SRC, C_RELAY_IN, C_DROP_REL, C_DELIVERED, C_FAILED = range(6)
W_OFFSET = 6  # window copies of the six counters follow
C_ENERGY, C_SOJOURN, C_AV_AR, C_AV_RD, C_AV_AD, C_SLOTS, C_ATTEMPTS = range(12, 19)
N_COUNTERS = 19
# batch layout
B_ARRIVED, B_DROP_SRC, B_RELAY_IN, B_DROP_REL, B_DELIVERED, B_ENERGY, B_SOJOURN, B_SLOTS = range(8)

TRACE_COLUMNS = ("slot", "chan_src", "chan_rly", "avail_ar", "avail_rd", "q_src", "q_rly", "tx_ok", "energy_j")


@dataclass(frozen=True)
class SimConfig:
    model: me.Model
    horizon_slots: int = 1_000_000
    seed: int = 0
    warmup_slots: int = 20_000
    accounting: str = "continuous"
    batches: int = 20
    trace: bool = False

    def __post_init__(self):
        if int(self.horizon_slots) != self.horizon_slots or self.horizon_slots < 1:
            raise InvalidParameterError("horizon_slots must be a positive integer")
        if int(self.warmup_slots) != self.warmup_slots or not 0 <= self.warmup_slots < self.horizon_slots:
            raise InvalidParameterError("need 0 <= warmup_slots < horizon_slots")
        if self.accounting not in ("continuous", "busy"):
            raise InvalidParameterError("accounting must be 'continuous' or 'busy'")
        if self.batches < 2:
            raise InvalidParameterError("need at least two batches")
        if self.model.system.slot != 1.0:
            raise InvalidParameterError("the simulator advances the channel once per slot; slot must be 1 time unit")


@dataclass(frozen=True, eq=False)
class SimReport:
    seed: int
    slots: int
    arrived: int
    delivered: int
    drop_source: float
    drop_relay: float
    delay: float
    sojourn_count: int
    throughput: float
    energy_j: float
    power_total: float
    ee: float
    availability: tuple
    occupancy_source: np.ndarray
    occupancy_relay: np.ndarray
    halfwidths: dict
    totals: dict
    trace: np.ndarray = None
    batch_values: dict = field(default_factory=dict)

    def conservation_gap(self):
        t = self.totals
        return t["arrived"] - (
            t["delivered"] + t["dropped_source"] + t["dropped_relay"] + t["failed"] + t["in_system"]
        )


# -- numba kernel -------------------------------------------------------------


@njit(cache=True)
def _step_chain(cdf_row, u):
    k = 0
    while k < cdf_row.size - 1 and u >= cdf_row[k]:
        k += 1
    return k


@njit(cache=True)
def _quantile(table, u):
    k = int(u * table.size)
    if k >= table.size:
        k = table.size - 1
    return table[k]


@njit(cache=True)
def _link_fails(link, pool, cur, mode_cdf, err_q, err_alpha, err_g, err_cut):
    n = _step_chain(mode_cdf[link], pool[cur])
    s = _quantile(err_q[link, n], pool[cur + 1])
    if s < err_cut[link, n]:
        per = 1.0
    else:
        per = err_alpha[link, n] * math.exp(-err_g[link, n] * s)
        if per > 1.0:
            per = 1.0
    return pool[cur + 2] < per


@njit(cache=True)
def _kernel(
    t_start, n_slots, offset, warmup, batch_len, n_batches,
    u_arr, u_fad, u_occ, u_srv, u_mm,
    pool, cursor, pool_need,
    arr_cdf, mm_cdf,
    fsmc_a, base_a, frac_a, powk_a, snrq_a,
    fsmc_r, base_r, frac_r, powk_r, snrq_r,
    mode_cdf, err_q, err_alpha, err_g, err_cut,
    p_leave, alpha, slot_s, idle_power, max_tx, cap, busy,
    st, ring_a, ring_r, counters, batch, occ_a, occ_r,
    trace, trace_on,
):
    size = ring_a.size
    for i in range(n_slots):
        if pool.size - cursor < pool_need:
            return i, cursor
        t = t_start + i
        j = offset + i
        xa, xr, ava, avr, avd, mmk = st[0], st[1], st[2], st[3], st[4], st[5]
        head_a, cnt_a, head_r, cnt_r = st[6], st[7], st[8], st[9]
        measure = t >= warmup
        b = 0
        if measure:
            b = (t - warmup) // batch_len
            if b >= n_batches:
                b = n_batches - 1
            occ_a[xa, cnt_a] += 1.0
            occ_r[xr, cnt_r] += 1.0
            counters[C_AV_AR] += ava
            counters[C_AV_RD] += avr
            counters[C_AV_AD] += avd
            counters[C_SLOTS] += 1.0
            batch[b, B_SLOTS] += 1.0

        # energy for this slot
        if ava == 1 and xa > 0 and (busy == 0 or cnt_a > 0):
            e_src = powk_a[xa] / _quantile(snrq_a[xa], u_fad[j, 3])
        elif ava == 1 and busy == 0:
            e_src = 0.0
        else:
            e_src = idle_power
        if avr == 1 and xr > 0 and (busy == 0 or cnt_r > 0):
            e_rel = powk_r[xr] / _quantile(snrq_r[xr], u_fad[j, 4])
        elif avr == 1 and busy == 0:
            e_rel = 0.0
        else:
            e_rel = idle_power
        energy = slot_s * (alpha * e_src + (1.0 - alpha) * e_rel)

        # relay service with ARQ
        c_r = base_r[xr]
        if u_srv[j, 1] < frac_r[xr]:
            c_r += 1
        n_r = min(cnt_r, c_r)
        ok_slot = 0
        for _ in range(n_r):
            t_arr = ring_r[head_r]
            head_r = (head_r + 1) % size
            cnt_r -= 1
            success = False
            for _k in range(max_tx):
                counters[C_ATTEMPTS] += 1.0
                fail = _link_fails(2, pool, cursor, mode_cdf, err_q, err_alpha, err_g, err_cut)
                cursor += 3
                if fail:
                    f1 = _link_fails(0, pool, cursor, mode_cdf, err_q, err_alpha, err_g, err_cut)
                    cursor += 3
                    if not f1:
                        fail = _link_fails(1, pool, cursor, mode_cdf, err_q, err_alpha, err_g, err_cut)
                        cursor += 3
                if not fail:
                    success = True
                    break
            if success:
                ok_slot += 1
                counters[C_DELIVERED] += 1.0
                if measure:
                    counters[W_OFFSET + C_DELIVERED] += 1.0
                    counters[C_SOJOURN] += t - t_arr
                    batch[b, B_DELIVERED] += 1.0
                    batch[b, B_SOJOURN] += t - t_arr
            else:
                counters[C_FAILED] += 1.0
                if measure:
                    counters[W_OFFSET + C_FAILED] += 1.0

        # source service, departures join the relay buffer
        c_a = base_a[xa]
        if u_srv[j, 0] < frac_a[xa]:
            c_a += 1
        n_a = min(cnt_a, c_a)
        for _ in range(n_a):
            t_arr = ring_a[head_a]
            head_a = (head_a + 1) % size
            cnt_a -= 1
            counters[C_RELAY_IN] += 1.0
            if measure:
                counters[W_OFFSET + C_RELAY_IN] += 1.0
                batch[b, B_RELAY_IN] += 1.0
            if cnt_r < cap:
                ring_r[(head_r + cnt_r) % size] = t_arr
                cnt_r += 1
            else:
                counters[C_DROP_REL] += 1.0
                if measure:
                    counters[W_OFFSET + C_DROP_REL] += 1.0
                    batch[b, B_DROP_REL] += 1.0

        # arrivals at the source
        a = _step_chain(arr_cdf[mmk], u_arr[j])
        room = cap - cnt_a
        take = a if a < room else room
        for _ in range(take):
            ring_a[(head_a + cnt_a) % size] = t
            cnt_a += 1
        counters[C_ARRIVED] += a
        counters[C_DROP_SRC] += a - take
        if measure:
            counters[W_OFFSET + C_ARRIVED] += a
            counters[W_OFFSET + C_DROP_SRC] += a - take
            counters[C_ENERGY] += energy
            batch[b, B_ARRIVED] += a
            batch[b, B_DROP_SRC] += a - take
            batch[b, B_ENERGY] += energy

        if trace_on:
            trace[t, 0] = t
            trace[t, 1] = xa
            trace[t, 2] = xr
            trace[t, 3] = ava
            trace[t, 4] = avr
            trace[t, 5] = cnt_a
            trace[t, 6] = cnt_r
            trace[t, 7] = ok_slot
            trace[t, 8] = energy

        # advance the Markov processes
        xa = _step_chain(fsmc_a[xa], u_fad[j, 0])
        xr = _step_chain(fsmc_r[xr], u_fad[j, 1])
        if ava == 1:
            if u_occ[j, 0] < p_leave[0, 0]:
                ava = 0
        elif u_occ[j, 0] < p_leave[0, 1]:
            ava = 1
        if avr == 1:
            if u_occ[j, 1] < p_leave[1, 0]:
                avr = 0
        elif u_occ[j, 1] < p_leave[1, 1]:
            avr = 1
        if avd == 1:
            if u_occ[j, 2] < p_leave[2, 0]:
                avd = 0
        elif u_occ[j, 2] < p_leave[2, 1]:
            avd = 1
        mmk = _step_chain(mm_cdf[mmk], u_mm[j])

        st[0], st[1], st[2], st[3], st[4], st[5] = xa, xr, ava, avr, avd, mmk
        st[6], st[7], st[8], st[9] = head_a, cnt_a, head_r, cnt_r
    return n_slots, cursor


# -- input preparation ----------------------------------------------------------


def _cdf_rows(mat):
    cdf = np.cumsum(np.asarray(mat, dtype=float), axis=1)
    cdf[:, -1] = 1.0 + 1e-12  # guard against round-off at the top
    return cdf


def _truncated_gamma_quantiles(fading, lo, hi, n=QUANTILES):
    """SNR quantiles at the midpoints of ``n`` equal-probability cells of the interval."""
    m, rate = fading.m, fading.m / fading.avg_snr
    u = (np.arange(n) + 0.5) / n
    if hi <= lo:
        return np.full(n, max(lo, 1e-300))
    # work on whichever tail keeps precision
    p_lo = special.gammainc(m, rate * lo)
    if p_lo < 0.5:
        p_hi = 1.0 if math.isinf(hi) else special.gammainc(m, rate * hi)
        s = special.gammaincinv(m, p_lo + u * (p_hi - p_lo)) / rate
    else:
        q_lo = special.gammaincc(m, rate * lo)
        q_hi = 0.0 if math.isinf(hi) else special.gammaincc(m, rate * hi)
        s = special.gammainccinv(m, q_lo - u * (q_lo - q_hi)) / rate
    s = np.clip(s, lo, hi)
    return np.where(s > 0, s, max(lo, 1e-300))


def _state_tables(link, system):
    """Per-state power constants and SNR quantile tables for energy accounting."""
    amc, fading = link.amc, link.fading
    probs = ch.state_probabilities(amc, fading)
    per = ch.mode_error_rates(amc, fading)
    ref = me.reference_power(link, system)
    b = amc.boundaries
    n = amc.n_modes + 1
    powk = np.zeros(n)
    snrq = np.ones((n, QUANTILES))
    for k, mode in enumerate(amc.modes, start=1):
        if probs[k] <= 0:
            continue
        ber = me.ber_from_per(per[k], system.packet_bits)
        if ber < 0.2:
            powk[k] = ref * (2.0**mode.bits - 1.0) / 1.5 * math.log(0.2 / ber)
        snrq[k] = _truncated_gamma_quantiles(fading, b[k], b[k + 1])
    return powk, snrq


def _error_tables(links):
    """Rate-weighted mode choice and SNR quantiles per mode for per-attempt errors."""
    n_modes = max(l.amc.n_modes for l in links)
    mode_cdf = np.ones((3, n_modes))
    err_q = np.ones((3, n_modes, QUANTILES))
    err_alpha = np.ones((3, n_modes))
    err_g = np.ones((3, n_modes))
    err_cut = np.zeros((3, n_modes))
    for i, link in enumerate(links):
        amc, fading = link.amc, link.fading
        probs = ch.state_probabilities(amc, fading)
        w = amc.bits[1:] * probs[1:]
        if not w.sum() > 0:
            mode_cdf[i] = 1.0
            err_cut[i] = np.inf  # every attempt fails
        else:
            cdf = np.cumsum(w) / w.sum()
            cdf[-1] = 1.0 + 1e-12
            mode_cdf[i, : amc.n_modes] = cdf
        for k, mode in enumerate(amc.modes):
            err_alpha[i, k], err_g[i, k], err_cut[i, k] = mode.per_alpha, mode.per_g, mode.per_cutoff
            err_q[i, k] = _truncated_gamma_quantiles(fading, amc.boundaries[k + 1], amc.boundaries[k + 2])
    return mode_cdf, err_q, err_alpha, err_g, err_cut


def _arrival_tables(traffic):
    rates = traffic.mmpp_rates or (traffic.mean_rate,)
    k = np.arange(traffic.max_arrivals + 1)
    cdf = np.empty((len(rates), k.size))
    for i, lam in enumerate(rates):
        pmf = stats.poisson.pmf(k, lam) if lam > 0 else (k == 0).astype(float)
        cdf[i] = np.cumsum(pmf / pmf.sum())
        cdf[i, -1] = 1.0 + 1e-12
    switch = np.asarray(traffic.mmpp_switch, dtype=float) if traffic.mmpp_rates else np.ones((1, 1))
    return cdf, _cdf_rows(switch)


def _service_tables(model):
    sysp = model.system
    p_ld, p_l1, p_l2 = me.link_error_rates(model)
    p1, _, _ = ch.combined_error(p_ld, p_l1, p_l2)
    times = qu.packet_times(model.ar, model.rd, model.ad, sysp, p_ld)
    chi = qu.source_service_rates(times, p1, model.alpha, sysp.max_tx)
    eps_r, eps_bar_r = qu.relay_packet_times(model.rd, sysp)
    chi_r = qu.relay_service_rates(eps_r, eps_bar_r, p_l2, model.alpha, sysp.max_tx)
    base_a, frac_a = qu.service_counts(chi, sysp.slot)
    base_r, frac_r = qu.service_counts(chi_r, sysp.slot)
    return base_a, frac_a, base_r, frac_r


def _ratio_halfwidth(num, den):
    """95% batch-means half-width of ``sum(num)/sum(den)`` from per-batch ratios."""
    mask = den > 0
    if mask.sum() < 2:
        return math.nan
    r = num[mask] / den[mask]
    return float(stats.t.ppf(0.975, r.size - 1) * r.std(ddof=1) / math.sqrt(r.size))


def run(sim):
    model = sim.model
    sysp = model.system
    links = (model.ar, model.rd, model.ad)
    base_a, frac_a, base_r, frac_r = _service_tables(model)
    fsmc_a = _cdf_rows(ch.fsmc_transitions(model.ar.amc, model.ar.fading))
    fsmc_r = _cdf_rows(ch.fsmc_transitions(model.rd.amc, model.rd.fading))
    powk_a, snrq_a = _state_tables(model.ar, sysp)
    powk_r, snrq_r = _state_tables(model.rd, sysp)
    mode_cdf, err_q, err_alpha, err_g, err_cut = _error_tables(links)
    arr_cdf, mm_cdf = _arrival_tables(model.traffic)
    p_leave = np.array([l.access.slot_transitions(sysp.slot) for l in links])

    streams = dict(zip(STREAMS, np.random.SeedSequence(sim.seed).spawn(len(STREAMS))))
    gens = {k: np.random.Generator(np.random.Philox(v)) for k, v in streams.items()}

    # initial state drawn from the stationary laws
    init = gens["fading"].random(2)
    pr_a = ch.state_probabilities(model.ar.amc, model.ar.fading)
    pr_r = ch.state_probabilities(model.rd.amc, model.rd.fading)
    occ_init = gens["occupancy"].random(3)
    st = np.zeros(10, dtype=np.int64)
    st[0] = min(int(np.searchsorted(np.cumsum(pr_a), init[0], side="right")), pr_a.size - 1)
    st[1] = min(int(np.searchsorted(np.cumsum(pr_r), init[1], side="right")), pr_r.size - 1)
    for i, link in enumerate(links):
        st[2 + i] = int(occ_init[i] < link.access.a_avail)
    if model.traffic.mmpp_rates:
        st[5] = min(int(np.searchsorted(np.cumsum(model.traffic.mmpp_stationary()), gens["traffic"].random(), side="right")),
                    len(model.traffic.mmpp_rates) - 1)

    cap = sysp.buffer
    ring_a = np.zeros(max(cap, 1), dtype=np.int64)
    ring_r = np.zeros(max(cap, 1), dtype=np.int64)
    counters = np.zeros(N_COUNTERS)
    window = sim.horizon_slots - sim.warmup_slots
    batch_len = max(1, window // sim.batches)
    batch = np.zeros((sim.batches, 8))
    occ_a = np.zeros((pr_a.size, cap + 1))
    occ_r = np.zeros((pr_r.size, cap + 1))
    trace = np.zeros((sim.horizon_slots if sim.trace else 0, len(TRACE_COLUMNS)))
    pool_need = 9 * sysp.max_tx * (int(base_r.max()) + 1) + 9
    pool = gens["errors"].random(POOL)
    cursor = 0

    t = 0
    while t < sim.horizon_slots:
        n = min(CHUNK, sim.horizon_slots - t)
        u_arr = gens["arrivals"].random(n)
        u_fad = gens["fading"].random((n, 5))
        u_occ = gens["occupancy"].random((n, 3))
        u_srv = gens["service"].random((n, 2))
        u_mm = gens["traffic"].random(n)
        done = 0
        while done < n:
            k, cursor = _kernel(
                t + done, n - done, done, sim.warmup_slots, batch_len, sim.batches,
                u_arr, u_fad, u_occ, u_srv, u_mm,
                pool, cursor, pool_need,
                arr_cdf, mm_cdf,
                fsmc_a, base_a, frac_a, powk_a, snrq_a,
                fsmc_r, base_r, frac_r, powk_r, snrq_r,
                mode_cdf, err_q, err_alpha, err_g, err_cut,
                p_leave, model.alpha, model.period * sysp.time_unit_s, sysp.idle_power_w, sysp.max_tx, cap,
                int(sim.accounting == "busy"),
                st, ring_a, ring_r, counters, batch, occ_a, occ_r,
                trace, sim.trace,
            )
            done += k
            if done < n:
                pool = np.concatenate([pool[cursor:], gens["errors"].random(POOL)])
                cursor = 0
        t += n

    w = counters[W_OFFSET : W_OFFSET + 6]
    slots = counters[C_SLOTS]
    arrived, drop_src, relay_in, drop_rel, delivered, _failed = w
    energy = counters[C_ENERGY]
    delay = counters[C_SOJOURN] / delivered if delivered > 0 else math.nan
    thr = delivered / (slots * model.period)
    ee = delivered / energy if energy > 0 else math.nan
    hw = {
        "drop_source": _ratio_halfwidth(batch[:, B_DROP_SRC], batch[:, B_ARRIVED]),
        "drop_relay": _ratio_halfwidth(batch[:, B_DROP_REL], batch[:, B_RELAY_IN]),
        "delay": _ratio_halfwidth(batch[:, B_SOJOURN], batch[:, B_DELIVERED]),
        "throughput": _ratio_halfwidth(batch[:, B_DELIVERED], batch[:, B_SLOTS] * model.period),
        "ee": _ratio_halfwidth(batch[:, B_DELIVERED], batch[:, B_ENERGY]),
    }
    totals = {
        "arrived": int(counters[C_ARRIVED]),
        "dropped_source": int(counters[C_DROP_SRC]),
        "dropped_relay": int(counters[C_DROP_REL]),
        "delivered": int(counters[C_DELIVERED]),
        "failed": int(counters[C_FAILED]),
        "in_system": int(st[7] + st[9]),
        "attempts": int(counters[C_ATTEMPTS]),
    }
    return SimReport(
        seed=sim.seed,
        slots=int(slots),
        arrived=int(arrived),
        delivered=int(delivered),
        drop_source=drop_src / arrived if arrived > 0 else 0.0,
        drop_relay=drop_rel / relay_in if relay_in > 0 else 0.0,
        delay=delay,
        sojourn_count=int(delivered),
        throughput=thr,
        energy_j=energy,
        power_total=energy / (slots * model.period * sysp.time_unit_s),
        ee=ee,
        availability=tuple(counters[[C_AV_AR, C_AV_RD, C_AV_AD]] / slots),
        occupancy_source=occ_a / slots,
        occupancy_relay=occ_r / slots,
        halfwidths=hw,
        totals=totals,
        trace=trace if sim.trace else None,
        batch_values={"delivered": batch[:, B_DELIVERED].copy(), "energy": batch[:, B_ENERGY].copy()},
    )


# -- comparison -------------------------------------------------------------------

DEFAULT_TOLERANCES = {
    "ee": ("rel", 0.10),
    "drop_source": ("prob", 0.10),
    "drop_relay": ("prob", 0.10),
    "throughput": ("rel", 0.10),
    "delay": ("rel", 0.15),
    "occupancy_source": ("l1", 0.05),
    "occupancy_relay": ("l1", 0.05),
    "availability": ("abs", 0.01),
}


@dataclass(frozen=True)
class ValidationItem:
    metric: str
    analytic: float
    simulated: float
    gap: float
    limit: float
    passed: bool


def _gap(kind, tol, a, s):
    if kind == "rel":
        return abs(s - a) / abs(a) if a != 0 else abs(s - a), tol
    if kind in ("abs", "l1"):
        return abs(s - a), tol
    if kind == "prob":  # relative, or 0.02 absolute for small probabilities
        if a < 0.05:
            return abs(s - a), 0.02
        return abs(s - a) / a, tol
    raise InvalidParameterError(f"unknown tolerance kind {kind!r}")


def occupancy_l1(chain, pi, occupancy):
    """L1 distance between a solved chain's stationary law and an empirical occupancy grid."""
    grid = np.asarray(pi.pi).reshape(chain.n_service, chain.buffer + 1)
    emp = np.asarray(occupancy)
    full = np.zeros_like(emp)
    labels = chain.states if chain.states.ndim == 1 else chain.states[:, -1]
    np.add.at(full, labels, grid)
    return float(np.abs(full - emp).sum())


def validate(analytic, sim, tolerances=None, model=None):
    """Compare analytic metrics with a simulation report metric by metric."""
    if analytic.mode != "relay":
        raise ComparabilityError("the simulator models the relay-assisted mode only")
    if model is not None and abs(model.alpha - analytic.alpha) > 1e-12:
        raise ComparabilityError("analytic metrics and simulation use different time allocation ratios")
    if sim.occupancy_source.shape[1] != analytic.source_chain.buffer + 1:
        raise ComparabilityError("analytic metrics and simulation use different buffer sizes")
    tol = dict(DEFAULT_TOLERANCES if tolerances is None else tolerances)
    items = []
    for metric, (kind, limit) in tol.items():
        if metric == "occupancy_source":
            gap = occupancy_l1(analytic.source_chain, analytic.source_pi, sim.occupancy_source)
            a, s, lim = 0.0, gap, limit
        elif metric == "occupancy_relay":
            gap = occupancy_l1(analytic.relay_chain, analytic.relay_pi, sim.occupancy_relay)
            a, s, lim = 0.0, gap, limit
        elif metric == "availability":
            if model is None:
                continue
            for name, link, emp in zip(("ar", "rd", "ad"), (model.ar, model.rd, model.ad), sim.availability):
                a = link.access.a_avail
                gap, lim = _gap(kind, limit, a, emp)
                items.append(ValidationItem(f"availability_{name}", float(a), float(emp), float(gap), float(lim), bool(gap <= lim)))
            continue
        else:
            a, s = getattr(analytic, metric), getattr(sim, metric)
            gap, lim = _gap(kind, limit, a, s)
        items.append(ValidationItem(metric, float(a), float(s), float(gap), float(lim), bool(gap <= lim)))
    return items


def pool(reports):
    """Combine independent runs of one model: metrics averaged over seeds, counts summed."""
    if not reports:
        raise InvalidParameterError("nothing to pool")
    if len({r.occupancy_source.shape for r in reports}) != 1 or len({r.occupancy_relay.shape for r in reports}) != 1:
        raise ComparabilityError("runs with different state spaces cannot be pooled")
    mean = lambda name: float(np.mean([getattr(r, name) for r in reports]))
    return SimReport(
        seed=reports[0].seed,
        slots=sum(r.slots for r in reports),
        arrived=sum(r.arrived for r in reports),
        delivered=sum(r.delivered for r in reports),
        drop_source=mean("drop_source"),
        drop_relay=mean("drop_relay"),
        delay=mean("delay"),
        sojourn_count=sum(r.sojourn_count for r in reports),
        throughput=mean("throughput"),
        energy_j=sum(r.energy_j for r in reports),
        power_total=mean("power_total"),
        ee=mean("ee"),
        availability=tuple(np.mean([r.availability for r in reports], axis=0)),
        occupancy_source=np.mean([r.occupancy_source for r in reports], axis=0),
        occupancy_relay=np.mean([r.occupancy_relay for r in reports], axis=0),
        halfwidths={k: float(np.mean([r.halfwidths[k] for r in reports])) / math.sqrt(len(reports)) for k in reports[0].halfwidths},
        totals={k: sum(r.totals[k] for r in reports) for k in reports[0].totals},
    )
