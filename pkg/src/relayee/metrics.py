"""Closed-form performance of the relay-assisted and direct transmission modes.

:class:`Model` bundles every input; :func:`evaluate_relay` and
:func:`evaluate_direct` turn one into a :class:`LinkMetrics`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, special

from . import channel as ch
from . import markov
from . import queueing as qu
from .errors import InvalidParameterError, NumericError, UndefinedRateError

OPTION_CHOICES = {
    "l1_weighting": ("inter-node", "direct"),
    "little_rate": ("accepted", "offered"),
    "direct_throughput": ("consistent", "paper-literal"),
    "relay_arrivals": ("modulated", "quantized", "paper-hybrid"),
}


@dataclass(frozen=True)
class ModelOptions:
    l1_weighting: str = "inter-node"
    little_rate: str = "accepted"
    direct_throughput: str = "consistent"
    relay_arrivals: str = "modulated"

    def __post_init__(self):
        for name, allowed in OPTION_CHOICES.items():
            if getattr(self, name) not in allowed:
                raise InvalidParameterError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")


@dataclass(frozen=True)
class Model:
    system: qu.SystemParams
    traffic: qu.TrafficModel
    ar: ch.LinkModel
    rd: ch.LinkModel
    ad: ch.LinkModel
    alpha: float = 0.5
    period: float = 1.0  # time units per transmission period
    options: ModelOptions = field(default_factory=ModelOptions)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidParameterError(f"time allocation ratio must lie in (0, 1), got {self.alpha}")
        if not self.period > 0:
            raise InvalidParameterError("period must be positive")

    @property
    def snr_db(self):
        """Transmit power level in dB, the sweep coordinate: each link's mean SNR is this plus its gain."""
        return ch.linear_to_db(self.ar.power_level)

    def at_snr_db(self, snr_db):
        """Move every link to mean SNR ``snr_db + gain_db``."""
        links = {
            name: getattr(self, name).with_snr(ch.db_to_linear(snr_db + getattr(self, name).gain_db))
            for name in ("ar", "rd", "ad")
        }
        return replace(self, **links)

    def with_alpha(self, alpha):
        return replace(self, alpha=float(alpha))

    def with_boundaries(self, boundaries):
        return replace(
            self,
            ar=replace(self.ar, amc=self.ar.amc.with_boundaries(boundaries)),
            rd=replace(self.rd, amc=self.rd.amc.with_boundaries(boundaries)),
            ad=replace(self.ad, amc=self.ad.amc.with_boundaries(boundaries)),
        )

    def with_traffic(self, mean_rate):
        return replace(self, traffic=replace(self.traffic, mean_rate=float(mean_rate), mmpp_rates=(), mmpp_switch=()))

    def with_buffer(self, buffer):
        return replace(self, system=replace(self.system, buffer=int(buffer)))


@dataclass(frozen=True, eq=False)
class LinkMetrics:
    mode: str
    alpha: float
    snr_db: float
    drop_source: float
    drop_relay: float
    qlen_source: float
    qlen_relay: float
    delay: float
    throughput: float
    tx_power_source: float
    tx_power_relay: float
    tx_power_direct: float
    energy_per_period: float
    power_total: float
    ee: float
    p_ld: float
    p_l1: float
    p_l2: float
    p0: float
    state_delay: np.ndarray = None
    source_pi: np.ndarray = None
    relay_pi: np.ndarray = None
    source_chain: object = None
    relay_chain: object = None


# -- queue quantities ---------------------------------------------------------


def drop_rate(pi, chain):
    """Fraction of offered packets lost to buffer overflow."""
    lam = markov.expected_arrivals(pi, chain)
    if not lam > 0:
        raise UndefinedRateError("drop rate is undefined for a zero arrival rate")
    return float(np.clip(markov.expected_drops(pi, chain) / lam, 0.0, 1.0))


def avg_queue_length(pi, chain, x):
    """Mass-weighted buffer content in service state ``x``: sum_q pi(x, q) q."""
    p = np.asarray(pi.pi if isinstance(pi, markov.StationaryDistribution) else pi)
    grid = p.reshape(chain.n_service, chain.buffer + 1)
    return float(grid[x] @ np.arange(chain.buffer + 1))


def throughput(mode, drop_source, drop_relay, p_fail, mean_rate, max_tx, literal=False):
    """Delivered packets per time unit.

    ``p_fail`` is the per-attempt failure probability ``P_0`` (relay mode)
    or ``P_LD`` (direct mode).  ``literal`` selects the direct-mode variant
    ``1 - (1 - P_LD)^N`` for the delivery factor.
    """
    if mode == "relay":
        return mean_rate * (1.0 - drop_source) * (1.0 - drop_relay) * (1.0 - p_fail**max_tx)
    if mode == "direct":
        success = 1.0 - (1.0 - p_fail) ** max_tx if literal else 1.0 - p_fail**max_tx
        return mean_rate * (1.0 - drop_source) * success
    raise InvalidParameterError(f"unknown mode {mode!r}")


# -- power and energy -----------------------------------------------------------


def mode_power(bits, s, ref_power, ber):
    """Transmit power that holds bit error rate ``ber`` at SNR ``s`` with modulation ``bits``."""
    if ber >= BER_CEILING:
        warnings.warn(f"target BER {ber:.3g} >= 0.2: transmit power clamped to zero", RuntimeWarning, stacklevel=2)
        return 0.0 * np.asarray(s, dtype=float)
    return ref_power * (2.0**bits - 1.0) / (1.5 * np.asarray(s, dtype=float)) * math.log(0.2 / ber)


def ber_from_per(per, packet_bits):
    """Bit error rate of independent bit errors giving packet error rate ``per``."""
    return -math.expm1(math.log1p(-min(per, 1.0 - 1e-16)) / packet_bits)


def inverse_snr_mass(fading, lo, hi):
    """Integral of f(s)/s over [lo, hi)."""
    if hi <= lo:
        return 0.0
    if lo <= 0 and fading.m <= 1:
        return math.inf
    m, sbar = fading.m, fading.avg_snr
    rate = m / sbar
    if m == 1:
        upper = 0.0 if math.isinf(hi) else special.exp1(rate * hi)
        return float((special.exp1(rate * lo) - upper) * rate)
    if m > 1:
        return float(rate / (m - 1) * ch._gamma_interval(m - 1, rate, lo, hi))
    val, err = integrate.quad(lambda s: ch.gamma_pdf(s, fading) / s, lo, hi, epsabs=1e-10, limit=200)
    if not np.isfinite(val):
        raise NumericError(f"quadrature of f(s)/s failed on [{lo}, {hi}) (error estimate {err:g})")
    return float(val)


def reference_power(link, system):
    """Reference power ``e`` of a link.

    Under ``power_scaling = 'snr'`` the mean SNR is reached by raising the
    transmit power, so ``e`` is ``ref_power_w`` times the power level
    (mean SNR over path gain); under ``'fixed'`` it is ``ref_power_w``.
    """
    if system.power_scaling == "snr":
        return system.ref_power_w * link.power_level
    return system.ref_power_w


BER_CEILING = 0.2  # the power model needs ln(0.2 / ber) > 0


def mode_bers(link, system):
    """Bit error rate implied by each state's conditional packet error rate (NaN where unused)."""
    probs = ch.state_probabilities(link.amc, link.fading)
    per = ch.mode_error_rates(link.amc, link.fading)
    out = np.full(link.amc.n_modes + 1, np.nan)
    for n in range(1, link.amc.n_modes + 1):
        if probs[n] > 0:
            out[n] = ber_from_per(per[n], system.packet_bits)
    return out


def mode_powers(link, system):
    """Conditional mean transmit power in each channel state (0 in outage)."""
    amc, fading = link.amc, link.fading
    probs = ch.state_probabilities(amc, fading)
    bers = mode_bers(link, system)
    ref = reference_power(link, system)
    b = amc.boundaries
    out = np.zeros(amc.n_modes + 1)
    for n, mode in enumerate(amc.modes, start=1):
        if probs[n] <= 0:
            continue
        ber = bers[n]
        if ber == 0.0:
            # conditional PER underflows only in states with (sub)denormal mass
            if probs[n] > 1e-250:
                raise NumericError(f"link {link.label} mode {n}: zero bit error rate, power undefined")
            continue
        if ber >= BER_CEILING:
            if probs[n] > 1e-9:
                warnings.warn(f"link {link.label} mode {n}: BER {ber:.3g} >= 0.2, power set to zero", RuntimeWarning, stacklevel=2)
            continue
        inv = inverse_snr_mass(fading, b[n], b[n + 1])
        if not math.isfinite(inv):
            raise NumericError(f"link {link.label} mode {n}: transmit power diverges for an interval starting at 0")
        out[n] = ref * (2.0**mode.bits - 1.0) / 1.5 * math.log(0.2 / ber) * inv / probs[n]
    return out


def avg_power(link, system):
    probs = ch.state_probabilities(link.amc, link.fading)
    return float(np.dot(mode_powers(link, system), probs))


def total_energy(mode, powers, access, alpha, period, idle_power):
    """Energy drawn over one period.

    Relay mode: ``powers = (P_source, P_relay)``, ``access = (a_AR, a_RD)``
    availability probabilities.  Direct mode: one power and one probability.
    """
    if mode == "relay":
        (p_s, p_r), (a1, a2) = powers, access
        return (a1 * p_s + (1 - a1) * idle_power) * alpha * period + (a2 * p_r + (1 - a2) * idle_power) * (1 - alpha) * period
    if mode == "direct":
        p, a = (powers[0], access[0]) if np.ndim(powers) else (powers, access)
        return (a * p + (1 - a) * idle_power) * period
    raise InvalidParameterError(f"unknown mode {mode!r}")


def energy_efficiency(throughput_rate, energy, period):
    """Delivered packets per joule; ``throughput_rate`` per time unit, ``period`` in time units."""
    if not energy > 0:
        raise UndefinedRateError("energy efficiency is undefined for zero energy")
    return period * throughput_rate / energy


# -- evaluation --------------------------------------------------------------------


def link_error_rates(model):
    """``(P_LD, P_L1, P_L2)`` for the model's three links."""
    p_ld = ch.avg_link_per(model.ad)
    weighting = model.ad.fading if model.options.l1_weighting == "direct" else None
    p_l1 = ch.avg_link_per(model.ar, weighting=weighting)
    p_l2 = ch.avg_link_per(model.rd)
    return p_ld, p_l1, p_l2


TAIL_PROB = 1e-13


def _live_states(link):
    """Channel states kept in a chain: nonempty intervals up to the last one above ``TAIL_PROB``."""
    probs = ch.state_probabilities(link.amc, link.fading)
    b = link.amc.boundaries
    live = [n for n in range(len(probs)) if probs[n] > 0 and b[n + 1] > b[n]]
    top = max((n for n in live if probs[n] > TAIL_PROB), default=live[-1])
    return np.array([n for n in live if n <= top]), probs


def _sub_fsmc(link, live):
    full = ch.fsmc_transitions(link.amc, link.fading)
    sub = full[np.ix_(live, live)].copy()
    sub[np.diag_indices_from(sub)] += 1.0 - sub.sum(axis=1)  # moves into pruned tail states stay put
    return sub


def solve_queue(arrivals, rates, link, system):
    """Build and solve the joint chain of a queue served over ``link``.

    Returns ``(chain, stationary, state_probs)``.  Channel states whose SNR
    interval is empty, or that sit in the upper tail with probability below
    ``TAIL_PROB``, are left out of the chain.
    """
    live, probs = _live_states(link)
    chain = markov.build_chain(
        arrivals, np.asarray(rates)[live], _sub_fsmc(link, live), system.buffer, slot=system.slot, states=live
    )
    return chain, markov.recurrent_stationary(chain), probs


def solve_relay_queue(src_chain, src_pi, rates, link, system, mode, state_probs=None):
    """Relay queue fed by the solved source queue.

    ``modulated`` keeps the source service state in the chain so that relay
    arrivals follow the source channel; ``quantized`` and ``paper-hybrid``
    use a single i.i.d. arrival PMF.
    """
    live, probs = _live_states(link)
    fsmc = _sub_fsmc(link, live)
    if mode == "modulated":
        chain = markov.build_modulated_chain(
            markov.departure_pmfs(src_pi, src_chain),
            src_chain.channel,
            np.asarray(rates)[live],
            fsmc,
            system.buffer,
            slot=system.slot,
            mod_states=src_chain.states,
            states=live,
        )
    else:
        arrivals = qu.relay_arrival_pmf(src_chain, src_pi, mode=mode, state_probs=state_probs)
        chain = markov.build_chain(arrivals, np.asarray(rates)[live], fsmc, system.buffer, slot=system.slot, states=live)
    return chain, markov.recurrent_stationary(chain), probs


def _state_queue(pi, chain, n_states):
    """Mass-weighted queue length and stationary mass per channel state.

    For a modulated chain the last label column is the channel state.
    """
    out = np.zeros(n_states)
    mass = np.zeros(n_states)
    grid = pi.pi.reshape(chain.n_service, chain.buffer + 1)
    labels = chain.states if chain.states.ndim == 1 else chain.states[:, -1]
    np.add.at(out, labels, grid @ np.arange(chain.buffer + 1))
    np.add.at(mass, labels, grid.sum(axis=1))
    return out, mass


def _conditional(q, mass):
    return np.divide(q, mass, out=np.zeros_like(q), where=mass > 0)


def _mean_over_modes(values, probs):
    w = probs[1:]
    if not w.sum() > 0:
        raise UndefinedRateError("no transmission-capable channel state")
    v = np.where(w > 0, values[1:], 0.0)
    return float(np.dot(v, w) / w.sum())


def _service_times(eps, eps_bar, p_err, max_tx):
    out = np.full(len(eps), np.inf)
    finite = np.isfinite(eps)
    out[finite] = qu.expected_service_time(eps[finite], eps_bar, p_err, max_tx)
    return out


def avg_delay(service, probs, queues):
    """Per-state and average packet delay.

    ``service`` is the mean service time per channel state (inf in outage),
    ``probs`` the channel state probabilities, and ``queues`` a list of
    ``(queue_per_state, mass_per_state, rate)``: the mass-weighted queue
    length and stationary mass of each queue per channel state and the rate
    used in Little's law.  Queue states are paired with service states by
    index.  A packet caught in outage is served in a later mode, so the
    outage state gets the mean service time.
    """
    service = np.array(service, dtype=float)
    mean_service = _mean_over_modes(service, probs)
    service[~np.isfinite(service)] = mean_service
    n = service.size
    state_delay, delay = service, mean_service
    for q, mass, rate in queues:
        if not rate > 0:
            raise UndefinedRateError("delay is undefined when no packets enter a queue")
        cond = np.zeros(n)
        k = min(n, len(q))
        cond[:k] = _conditional(np.asarray(q, dtype=float), np.asarray(mass, dtype=float))[:k]
        state_delay = state_delay + cond / rate
        delay += float(np.sum(q)) / rate
    return state_delay, float(delay)


def evaluate_relay(model):
    sysp, opts, alpha = model.system, model.options, model.alpha
    p_ld, p_l1, p_l2 = link_error_rates(model)
    p1, _, p0 = ch.combined_error(p_ld, p_l1, p_l2)
    times = qu.packet_times(model.ar, model.rd, model.ad, sysp, p_ld)
    chi = qu.source_service_rates(times, p1, alpha, sysp.max_tx)
    arrivals = qu.arrival_pmf(model.traffic)
    lam = float(np.dot(np.arange(arrivals.size), arrivals))

    src_chain, src_pi, pr_ar = solve_queue(arrivals, chi, model.ar, sysp)
    drop_src = drop_rate(src_pi, src_chain)

    eps_r, eps_bar_r = qu.relay_packet_times(model.rd, sysp)
    chi_r = qu.relay_service_rates(eps_r, eps_bar_r, p_l2, alpha, sysp.max_tx)
    rel_chain, rel_pi, _ = solve_relay_queue(src_chain, src_pi, chi_r, model.rd, sysp, opts.relay_arrivals, pr_ar)
    lam_r = markov.expected_arrivals(rel_pi, rel_chain)
    drop_rel = drop_rate(rel_pi, rel_chain) if lam_r > 0 else 0.0

    n_states = len(pr_ar)
    q_src, mass_src = _state_queue(src_pi, src_chain, n_states)
    q_rel, mass_rel = _state_queue(rel_pi, rel_chain, len(model.rd.amc.boundaries) - 1)

    if opts.little_rate == "accepted":
        rate_src, rate_rel = lam * (1.0 - drop_src), lam_r * (1.0 - drop_rel)
    else:
        rate_src, rate_rel = lam, lam_r
    service = _service_times(times.eps, times.eps_bar, p1, sysp.max_tx)
    state_delay, delay = avg_delay(service, pr_ar, [(q_src, mass_src, rate_src), (q_rel, mass_rel, rate_rel)])

    thr = throughput("relay", drop_src, drop_rel, p0, lam, sysp.max_tx)
    p_src = avg_power(model.ar, sysp)
    p_rel = avg_power(model.rd, sysp)
    period_s = model.period * sysp.time_unit_s
    energy = total_energy(
        "relay", (p_src, p_rel), (model.ar.access.a_avail, model.rd.access.a_avail), alpha, period_s, sysp.idle_power_w
    )
    return LinkMetrics(
        mode="relay",
        alpha=alpha,
        snr_db=model.snr_db,
        drop_source=drop_src,
        drop_relay=drop_rel,
        qlen_source=float(q_src.sum()),
        qlen_relay=float(q_rel.sum()),
        delay=delay,
        throughput=float(thr),
        tx_power_source=p_src,
        tx_power_relay=p_rel,
        tx_power_direct=0.0,
        energy_per_period=float(energy),
        power_total=float(energy / period_s),
        ee=float(energy_efficiency(thr, energy, model.period)),
        p_ld=p_ld,
        p_l1=p_l1,
        p_l2=p_l2,
        p0=p0,
        state_delay=state_delay,
        source_pi=src_pi,
        relay_pi=rel_pi,
        source_chain=src_chain,
        relay_chain=rel_chain,
    )


def evaluate_direct(model):
    sysp, opts = model.system, model.options
    p_ld = ch.avg_link_per(model.ad)
    eps, eps_bar = qu.direct_packet_times(model.ad, sysp)
    chi = qu.direct_service_rates(eps, eps_bar, p_ld, sysp.max_tx)
    arrivals = qu.arrival_pmf(model.traffic)
    lam = float(np.dot(np.arange(arrivals.size), arrivals))
    chain, pi, pr = solve_queue(arrivals, chi, model.ad, sysp)
    drop = drop_rate(pi, chain)
    q, mass = _state_queue(pi, chain, len(pr))
    rate = lam * (1.0 - drop) if opts.little_rate == "accepted" else lam
    service = _service_times(eps, eps_bar, p_ld, sysp.max_tx)
    state_delay, delay = avg_delay(service, pr, [(q, mass, rate)])
    thr = throughput("direct", drop, 0.0, p_ld, lam, sysp.max_tx, literal=opts.direct_throughput == "paper-literal")
    p_sd = avg_power(model.ad, sysp)
    period_s = model.period * sysp.time_unit_s
    energy = total_energy("direct", p_sd, model.ad.access.a_avail, None, period_s, sysp.idle_power_w)
    return LinkMetrics(
        mode="direct",
        alpha=math.nan,
        snr_db=model.snr_db,
        drop_source=drop,
        drop_relay=0.0,
        qlen_source=float(q.sum()),
        qlen_relay=0.0,
        delay=delay,
        throughput=float(thr),
        tx_power_source=0.0,
        tx_power_relay=0.0,
        tx_power_direct=p_sd,
        energy_per_period=float(energy),
        power_total=float(energy / period_s),
        ee=float(energy_efficiency(thr, energy, model.period)),
        p_ld=p_ld,
        p_l1=math.nan,
        p_l2=math.nan,
        p0=p_ld,
        state_delay=state_delay,
        source_pi=pi,
        source_chain=chain,
    )


def evaluate(model, mode="relay"):
    if mode == "relay":
        return evaluate_relay(model)
    if mode == "direct":
        return evaluate_direct(model)
    raise InvalidParameterError(f"unknown mode {mode!r}")
