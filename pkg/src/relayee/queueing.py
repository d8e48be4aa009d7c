"""Traffic, ARQ service times and per-state service rates of the two queues.

Time is measured in *time units* (``SystemParams.time_unit_s`` seconds,
one slot by default); service rates are packets per time unit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .channel import state_probabilities
from .errors import (
    DivergenceError,
    InvalidParameterError,
    OrderingError,
    StarvedLinkError,
)


@dataclass(frozen=True)
class TrafficModel:
    mean_rate: float
    max_arrivals: int = 15
    mmpp_rates: tuple = ()
    mmpp_switch: tuple = ()

    def __post_init__(self):
        if not self.mean_rate >= 0:
            raise InvalidParameterError(f"mean arrival rate must be nonnegative, got {self.mean_rate}")
        if int(self.max_arrivals) != self.max_arrivals or self.max_arrivals < 1:
            raise InvalidParameterError("max_arrivals must be an integer >= 1")
        object.__setattr__(self, "mmpp_rates", tuple(float(r) for r in self.mmpp_rates))
        object.__setattr__(self, "mmpp_switch", tuple(tuple(float(x) for x in row) for row in self.mmpp_switch))
        if self.mmpp_rates:
            k = len(self.mmpp_rates)
            sw = np.asarray(self.mmpp_switch, dtype=float)
            if sw.shape != (k, k) or np.any(sw < 0) or not np.allclose(sw.sum(axis=1), 1.0, atol=1e-12):
                raise InvalidParameterError("MMPP switch matrix must be a K x K stochastic matrix")
            if any(r < 0 for r in self.mmpp_rates):
                raise InvalidParameterError("MMPP rates must be nonnegative")

    @property
    def mmpp_states(self):
        return max(1, len(self.mmpp_rates))

    def mmpp_stationary(self):
        sw = np.asarray(self.mmpp_switch, dtype=float)
        k = sw.shape[0]
        a = np.vstack([(sw.T - np.eye(k))[:-1], np.ones(k)])
        rhs = np.zeros(k)
        rhs[-1] = 1.0
        return np.linalg.solve(a, rhs)

    @property
    def mixture_mean(self):
        if not self.mmpp_rates:
            return self.mean_rate
        return float(self.mmpp_stationary() @ np.asarray(self.mmpp_rates))


@dataclass(frozen=True)
class SystemParams:
    packet_bits: int = 100
    symbol_rate: float = 100e3
    buffer: int = 50
    max_tx: int = 6
    ref_power_w: float = 1e-3
    idle_power_w: float = 0.01
    loss_budget: float = 1e-3
    time_unit_s: float = 1e-3
    slot: float = 1.0
    power_scaling: str = "snr"

    def __post_init__(self):
        for name in ("packet_bits", "symbol_rate", "ref_power_w", "time_unit_s", "slot"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive")
        if not self.idle_power_w >= 0:
            raise InvalidParameterError("idle_power_w must be nonnegative")
        if int(self.buffer) != self.buffer or self.buffer < 0:
            raise InvalidParameterError("buffer must be a nonnegative integer")
        if int(self.max_tx) != self.max_tx or self.max_tx < 1:
            raise InvalidParameterError("max_tx must be an integer >= 1")
        if not 0 < self.loss_budget < 1:
            raise InvalidParameterError("loss_budget must lie in (0, 1)")
        if self.power_scaling not in ("snr", "fixed"):
            raise InvalidParameterError("power_scaling must be 'snr' or 'fixed'")

    def airtime(self, bits_per_symbol, a_avail):
        """Time units needed to push one packet at ``bits_per_symbol`` through a link
        that is available a fraction ``a_avail`` of the time."""
        if not a_avail > 0:
            raise StarvedLinkError("link has zero spectrum-access probability")
        with np.errstate(divide="ignore"):
            seconds = self.packet_bits / (np.asarray(bits_per_symbol, dtype=float) * self.symbol_rate * a_avail)
        return seconds / self.time_unit_s


@dataclass(frozen=True)
class PacketTimes:
    """Per-channel-state transmission times of the source (index 0 = outage)."""

    tau_direct: np.ndarray
    tau_relay: np.ndarray
    eps: np.ndarray
    eps_bar: float


def _conditional_mean(values, probs):
    w = np.asarray(probs[1:], dtype=float)
    total = w.sum()
    if not total > 0:
        return math.inf
    return float(np.dot(values[1:], w) / total)


def packet_times(ar, rd, ad, params, p_ld):
    """Direct, relay-path and blended transmission times for each source state.

    The first hop uses the mode of the source state; the second hop runs at
    the average rate ``sum_n b_n Pr_RD(n)`` of the relay-to-destination link.
    Retransmission time ``eps_bar`` averages over transmission-capable states.
    """
    bits = ar.amc.bits
    tau_ad = params.airtime(bits, ad.access.a_avail)
    p_rd = state_probabilities(rd.amc, rd.fading)
    b_bar = float(np.dot(rd.amc.bits, p_rd))
    if not b_bar > 0:
        raise StarvedLinkError("relay-to-destination link is always in outage")
    tau_rel = params.airtime(bits, ar.access.a_avail) + params.airtime(b_bar, rd.access.a_avail)
    with np.errstate(invalid="ignore"):
        eps = tau_ad * (1.0 - p_ld) + tau_rel * p_ld
    eps[0] = math.inf  # no transmission in outage
    p_ad = state_probabilities(ad.amc, ad.fading)
    p_ar = state_probabilities(ar.amc, ar.fading)
    eps_bar = _conditional_mean(tau_ad, p_ad) * (1.0 - p_ld) + _conditional_mean(tau_rel, p_ar) * p_ld
    return PacketTimes(tau_direct=tau_ad, tau_relay=tau_rel, eps=eps, eps_bar=eps_bar)


def relay_packet_times(rd, params):
    """``(eps', eps_bar')`` for the relay-to-destination hop."""
    p_rd = state_probabilities(rd.amc, rd.fading)
    b_bar = float(np.dot(rd.amc.bits, p_rd))
    if not b_bar > 0:
        raise StarvedLinkError("relay-to-destination link is always in outage")
    eps = params.airtime(rd.amc.bits, rd.access.a_avail)
    return eps, float(params.airtime(b_bar, rd.access.a_avail))


def direct_packet_times(ad, params):
    p_ad = state_probabilities(ad.amc, ad.fading)
    eps = params.airtime(ad.amc.bits, ad.access.a_avail)
    return eps, _conditional_mean(eps, p_ad)


# -- ARQ service time -----------------------------------------------------------


@dataclass(frozen=True)
class ServiceTimePmf:
    """Service time after ``k`` retransmissions, ``k = 0..max_tx``.

    ``probs[k] = (1 - p) p^k``.  The residual mass ``p^(max_tx + 1)`` is the
    packet given up after the last attempt; it is carried separately in
    ``drop_prob`` (occupying the server for ``drop_time``) so that ``mean``
    is the closed-form expected service time.
    """

    times: np.ndarray
    probs: np.ndarray
    drop_prob: float
    drop_time: float

    def total(self):
        return float(self.probs.sum() + self.drop_prob)

    def mean(self):
        return float(np.dot(self.times, self.probs))

    def support_masses(self):
        """Mass per distinct service time, terminal outcome merged in."""
        out = {}
        for t, p in zip(self.times, self.probs):
            out[float(t)] = out.get(float(t), 0.0) + float(p)
        out[float(self.drop_time)] = out.get(float(self.drop_time), 0.0) + self.drop_prob
        return {t: p for t, p in out.items() if p > 0}


def _check_error_prob(p_err):
    if not 0.0 <= p_err <= 1.0:
        raise InvalidParameterError(f"error probability must lie in [0, 1], got {p_err}")
    if 1.0 - p_err < 1e-12:
        raise DivergenceError("per-attempt error probability is one; the packet never gets through")


def service_time_pmf(eps, eps_bar, p_err, max_tx):
    _check_error_prob(p_err)
    k = np.arange(max_tx + 1)
    probs = (1.0 - p_err) * p_err**k
    times = eps + k * eps_bar
    return ServiceTimePmf(times=times, probs=probs, drop_prob=p_err ** (max_tx + 1), drop_time=eps + max_tx * eps_bar)


def expected_service_time(eps, eps_bar, p_err, max_tx):
    _check_error_prob(p_err)
    p, n = p_err, max_tx
    f = eps * (1.0 - p ** (n + 1)) * (1.0 - p)
    return (f + eps_bar * p * (1.0 - p**n * (1.0 + n * (1.0 - p)))) / (1.0 - p)


def _rates(share, eps, eps_bar, p_err, max_tx):
    eps = np.asarray(eps, dtype=float)
    out = np.zeros_like(eps)
    finite = np.isfinite(eps)
    if np.any(finite):
        mean = expected_service_time(eps[finite], eps_bar, p_err, max_tx)
        out[finite] = share / mean
    return out


def source_service_rates(times, p1, alpha, max_tx):
    """Source service rate per channel state; zero in the outage state."""
    return _rates(alpha, times.eps, times.eps_bar, p1, max_tx)


def relay_service_rates(eps_relay, eps_bar_relay, p_l2, alpha, max_tx):
    return _rates(1.0 - alpha, eps_relay, eps_bar_relay, p_l2, max_tx)


def direct_service_rates(eps_direct, eps_bar_direct, p_ld, max_tx):
    return _rates(1.0, eps_direct, eps_bar_direct, p_ld, max_tx)


def source_service_rate(n, times, p1, alpha, max_tx):
    return float(source_service_rates(times, p1, alpha, max_tx)[n])


def relay_service_rate(n, eps_relay, eps_bar_relay, p_l2, alpha, max_tx):
    return float(relay_service_rates(eps_relay, eps_bar_relay, p_l2, alpha, max_tx)[n])


def service_counts(rates, slot=1.0):
    """Split per-slot service into ``floor`` and the Bernoulli probability of one more."""
    x = np.asarray(rates, dtype=float) * slot
    base = np.floor(x)
    return base.astype(int), x - base


# -- arrivals -----------------------------------------------------------------------


def arrival_pmf(traffic):
    """Truncated Poisson PMF of arrivals per slot on ``0..max_arrivals``."""
    lam = traffic.mixture_mean
    k = np.arange(traffic.max_arrivals + 1)
    if lam == 0:
        pmf = np.zeros(k.size)
        pmf[0] = 1.0
        return pmf
    pmf = stats.poisson.pmf(k, lam)
    return pmf / pmf.sum()


def relay_arrival_pmf(chain, stationary, mode="quantized", state_probs=None):
    """PMF of packets handed to the relay per slot.

    ``quantized`` (also the marginal of ``modulated``) is the exact
    departure distribution of the solved source queue.  ``paper-hybrid``
    puts mass ``Pr(n)`` on the rounded service rate of each state and
    Poisson mass with the mean service rate elsewhere, renormalised.
    """
    from .markov import departure_pmfs, marginals

    if stationary is None:
        raise OrderingError("relay arrivals need the solved source chain first")
    if mode in ("quantized", "modulated"):
        _, mass = marginals(stationary, chain)
        pmf = np.clip(mass @ departure_pmfs(stationary, chain), 0.0, None)
        return pmf / pmf.sum()
    if mode == "paper-hybrid":
        if state_probs is None:
            raise InvalidParameterError("paper-hybrid relay arrivals need the channel state probabilities")
        rates = chain.rates
        probs = np.asarray(state_probs)[chain.states]
        chi_bar = float(np.dot(probs, rates))
        atoms = np.rint(rates).astype(int)
        kmax = int(max(atoms.max(), math.ceil(chi_bar + 10 * math.sqrt(chi_bar + 1))))
        k = np.arange(kmax + 1)
        pmf = stats.poisson.pmf(k, chi_bar) if chi_bar > 0 else (k == 0).astype(float)
        pmf[np.isin(k, atoms)] = 0.0
        np.add.at(pmf, atoms, probs)
        return pmf / pmf.sum()
    raise InvalidParameterError(f"unknown relay arrival mode {mode!r}")
