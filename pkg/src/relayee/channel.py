"""Nakagami-m fading, AMC partitioning and per-link error statistics.

All SNR values in this module are linear.  Conversion from dB happens at
the configuration boundary (:func:`db_to_linear`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from .errors import (
    DegenerateChannelError,
    InvalidParameterError,
    InvalidTableError,
    SlowFadingViolation,
)

LINK_LABELS = ("A,R", "R,D", "A,D")


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class AmcMode:
    """One AMC transmission mode and its exponential PER curve.

    ``per_alpha * exp(-per_g * s)`` is the packet error rate above the
    cutoff ``per_cutoff``; below it every packet is lost.
    """

    bits: int
    per_alpha: float
    per_g: float
    per_cutoff: float

    def __post_init__(self):
        if int(self.bits) != self.bits or self.bits < 1:
            raise InvalidParameterError(f"bits per symbol must be a positive integer, got {self.bits}")
        if not self.per_alpha > 0 or not self.per_g > 0:
            raise InvalidParameterError("PER curve parameters alpha and g must be positive")
        if not self.per_cutoff >= 0:
            raise InvalidParameterError("PER cutoff must be nonnegative")
        if self.per_alpha * math.exp(-self.per_g * self.per_cutoff) > 1.0 + 1e-9:
            raise InvalidParameterError(
                f"mode b={self.bits}: PER exceeds 1 at its cutoff "
                f"({self.per_alpha * math.exp(-self.per_g * self.per_cutoff):.6g})"
            )

    @property
    def effective_cutoff(self):
        """SNR above which the exponential branch is a valid probability."""
        return max(self.per_cutoff, math.log(self.per_alpha) / self.per_g, 0.0)


@dataclass(frozen=True)
class AmcModeTable:
    modes: tuple
    boundaries: tuple  # S_0 = 0, S_1 .. S_N, S_{N+1} = inf

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "boundaries", tuple(float(b) for b in self.boundaries))
        n = len(self.modes)
        if n < 1:
            raise InvalidTableError("AMC table needs at least one mode")
        if len(self.boundaries) != n + 2:
            raise InvalidTableError(f"expected {n + 2} boundaries for {n} modes, got {len(self.boundaries)}")
        if self.boundaries[0] != 0.0 or not math.isinf(self.boundaries[-1]):
            raise InvalidTableError("boundaries must start at 0 and end at +inf")
        if any(hi < lo for lo, hi in zip(self.boundaries, self.boundaries[1:])):
            raise InvalidTableError("boundaries must be nondecreasing")
        bits = [m.bits for m in self.modes]
        if any(b2 <= b1 for b1, b2 in zip(bits, bits[1:])):
            raise InvalidTableError("bits per symbol must be strictly increasing across modes")

    @property
    def n_modes(self):
        return len(self.modes)

    @property
    def bits(self):
        """Bits per symbol per channel state, with 0 for the outage state."""
        return np.array([0] + [m.bits for m in self.modes], dtype=float)

    def with_boundaries(self, boundaries):
        return replace(self, boundaries=tuple(boundaries))


@dataclass(frozen=True)
class FadingModel:
    m: float
    avg_snr: float
    doppler_hz: float = 10.0
    frame_s: float = 1e-3

    def __post_init__(self):
        if not self.m >= 0.5:
            raise InvalidParameterError(f"Nakagami m must be >= 0.5, got {self.m}")
        if not self.avg_snr > 0:
            raise InvalidParameterError(f"average SNR must be positive, got {self.avg_snr}")
        if not self.doppler_hz >= 0:
            raise InvalidParameterError("Doppler frequency must be nonnegative")
        if not self.frame_s > 0:
            raise InvalidParameterError("frame duration must be positive")


@dataclass(frozen=True)
class SpectrumAccess:
    """Two-state primary-user occupancy seen by one link.

    ``q`` is the rate at which an unavailable spell ends and ``u`` the rate
    at which an available spell ends (per time unit), so the stationary
    availability is ``q / (q + u)``.
    """

    q: float
    u: float

    def __post_init__(self):
        if not self.q > 0 or not self.u > 0:
            raise InvalidParameterError(f"occupancy rates must be positive, got q={self.q}, u={self.u}")

    @property
    def a_avail(self):
        return self.q / (self.q + self.u)

    @property
    def a_unavail(self):
        return self.u / (self.q + self.u)

    def slot_transitions(self, slot):
        """Exact discretisation of the occupancy process on a slot grid.

        Returns ``(p_leave_available, p_leave_unavailable)``.
        """
        s = self.q + self.u
        decay = -math.expm1(-s * slot)
        return self.u / s * decay, self.q / s * decay


@dataclass(frozen=True)
class LinkModel:
    fading: FadingModel
    amc: AmcModeTable
    access: SpectrumAccess
    label: str = "A,R"
    gain_db: float = 0.0  # path gain relative to the transmit power level

    def __post_init__(self):
        if self.label not in LINK_LABELS:
            raise InvalidParameterError(f"unknown link label {self.label!r}")
        if not math.isfinite(self.gain_db):
            raise InvalidParameterError("gain_db must be finite")

    @property
    def power_level(self):
        """Linear transmit power level (mean SNR the link would have at unit gain)."""
        return self.fading.avg_snr / db_to_linear(self.gain_db)

    def with_snr(self, avg_snr):
        return replace(self, fading=replace(self.fading, avg_snr=float(avg_snr)))


def stationary_access(q, u):
    acc = SpectrumAccess(q, u)
    return acc.a_avail, acc.a_unavail


# -- fading statistics --------------------------------------------------------


def gamma_pdf(s, fading):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise InvalidParameterError("SNR must be nonnegative")
    m, sbar = fading.m, fading.avg_snr
    with np.errstate(divide="ignore", invalid="ignore"):
        log_pdf = (
            m * math.log(m)
            + special.xlogy(m - 1, s)
            - m * math.log(sbar)
            - special.gammaln(m)
            - m * s / sbar
        )
    out = np.exp(log_pdf)
    return out[()] if out.ndim == 0 else out


def _gamma_interval(shape, rate, lo, hi):
    """P(lo <= X < hi) for X ~ Gamma(shape, rate), computed on the accurate tail."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    p_lo = special.gammainc(shape, rate * lo)
    p_hi = special.gammainc(shape, rate * np.where(np.isinf(hi), 0.0, hi))
    p_hi = np.where(np.isinf(hi), 1.0, p_hi)
    q_lo = special.gammaincc(shape, rate * lo)
    q_hi = np.where(np.isinf(hi), 0.0, special.gammaincc(shape, rate * np.where(np.isinf(hi), 0.0, hi)))
    use_upper = p_lo > 0.5
    out = np.where(use_upper, q_lo - q_hi, p_hi - p_lo)
    return np.clip(out, 0.0, 1.0)


def state_probabilities(amc, fading):
    b = np.asarray(amc.boundaries)
    rate = fading.m / fading.avg_snr
    return _gamma_interval(fading.m, rate, b[:-1], b[1:])


def per_at(s, mode):
    s = np.asarray(s, dtype=float)
    per = np.where(s < mode.per_cutoff, 1.0, mode.per_alpha * np.exp(-mode.per_g * s))
    per = np.clip(per, 0.0, 1.0)
    return per[()] if per.ndim == 0 else per


def _per_mass(mode, fading, lo, hi):
    """Integral of PER(s) f(s) over [lo, hi)."""
    if hi <= lo:
        return 0.0
    m, rate = fading.m, fading.m / fading.avg_snr
    cut = min(max(mode.effective_cutoff, lo), hi)
    certain = float(_gamma_interval(m, rate, lo, cut)) if cut > lo else 0.0
    if cut >= hi:
        return certain
    # alpha e^{-g s} against a Gamma(m, rate) density is a scaled Gamma(m, rate + g)
    tilted = rate + mode.per_g
    scale = mode.per_alpha * (rate / tilted) ** m
    return certain + scale * float(_gamma_interval(m, tilted, cut, hi))


def mode_error_rates(amc, fading):
    """Conditional mean PER of each transmission mode over its SNR interval.

    Index 0 (outage) is always 1.  A mode with an empty interval reports the
    PER at its lower boundary.
    """
    probs = state_probabilities(amc, fading)
    b = amc.boundaries
    out = np.ones(amc.n_modes + 1)
    for n, mode in enumerate(amc.modes, start=1):
        if probs[n] > 0:
            out[n] = min(1.0, _per_mass(mode, fading, b[n], b[n + 1]) / probs[n])
        else:
            out[n] = float(per_at(b[n], mode))
    return out


def avg_link_per(link, weighting=None):
    """Rate-weighted average packet error rate of one link.

    ``weighting`` optionally supplies a different fading model whose state
    probabilities weight the modes (the ``direct`` option for the
    source-to-relay error rate).
    """
    amc = link.amc
    per_n = mode_error_rates(amc, link.fading)
    probs = state_probabilities(amc, weighting if weighting is not None else link.fading)
    w = amc.bits[1:] * probs[1:]
    denom = w.sum()
    if not denom > 0:
        raise DegenerateChannelError(f"link {link.label}: channel never leaves the outage state")
    return float(np.clip(np.dot(w, per_n[1:]) / denom, 0.0, 1.0))


def combined_error(p_ld, p_l1, p_l2):
    """Per-attempt failure probabilities of the two-phase relay transmission.

    Returns ``(P_1, P_2, P_0)``: both first-phase receivers fail, the relay
    decodes but the second hop fails, and their sum.
    """
    for p in (p_ld, p_l1, p_l2):
        if not 0.0 <= p <= 1.0:
            raise InvalidParameterError(f"error probabilities must lie in [0, 1], got {p}")
    p1 = p_ld * p_l1
    p2 = p_ld * (1.0 - p_l1) * p_l2
    return p1, p2, p1 + p2


def msre_boundaries(modes, p_target):
    """Smallest SNR per mode whose PER does not exceed ``p_target``."""
    if not 0.0 < p_target <= 1.0:
        raise InvalidParameterError(f"target PER must lie in (0, 1], got {p_target}")
    inner = []
    for mode in modes:
        s = math.log(mode.per_alpha / p_target) / mode.per_g
        inner.append(max(s, mode.per_cutoff, 0.0))
    if any(b < a for a, b in zip(inner, inner[1:])):
        raise InvalidTableError(f"mode parameters give non-monotone thresholds {inner}")
    return (0.0, *inner, math.inf)


def level_crossing_rate(s, fading):
    """Rate (1/s) at which the SNR process crosses level ``s`` downwards."""
    m = fading.m
    ratio = np.asarray(s, dtype=float) / fading.avg_snr
    log_n = (
        0.5 * math.log(2 * math.pi)
        + (m - 0.5) * math.log(m)
        - special.gammaln(m)
        + (m - 0.5) * np.log(np.where(ratio > 0, ratio, 1.0))
        - m * ratio
    )
    out = fading.doppler_hz * np.exp(log_n)
    return np.where((ratio > 0) & np.isfinite(ratio), out, 0.0)


def fsmc_transitions(amc, fading):
    """Tridiagonal transition matrix of the quantised SNR process, one step per frame.

    Adjacent-state probabilities are level-crossing rate times frame length
    over the state probability.  States with an empty interval keep a unit
    self-loop and are skipped by their neighbours.
    """
    probs = state_probabilities(amc, fading)
    b = amc.boundaries
    n_states = len(probs)
    P = np.eye(n_states)
    live = [n for n in range(n_states) if probs[n] > 0 and b[n + 1] > b[n]]
    for i, j in zip(live, live[1:]):
        flux = float(level_crossing_rate(b[j], fading)) * fading.frame_s
        P[i, j] = flux / probs[i]
        P[j, i] = flux / probs[j]
    for n in live:
        off = P[n].sum() - P[n, n]
        if off > 1.0:
            raise SlowFadingViolation(
                f"state {n}: adjacent transition mass {off:.4g} > 1; "
                f"f_d*T_f = {fading.doppler_hz * fading.frame_s:.3g} too large for this partition"
            )
        P[n, n] = 1.0 - off
    return P


# -- default mode table -------------------------------------------------------


def uncoded_per(s, bits, packet_bits):
    """Packet error rate implied by the exponential M-QAM BER bound at reference power."""
    ber = 0.2 * np.exp(-1.5 * np.asarray(s, dtype=float) / (2.0**bits - 1.0))
    return -np.expm1(packet_bits * np.log1p(-ber))


def fit_amc_mode(bits, packet_bits, per_range=(1e-5, 0.5), n_points=400):
    """Least-squares fit of ``log PER = log(alpha) - g s`` to :func:`uncoded_per`.

    The fit is done over the SNR span where the exact PER lies inside
    ``per_range``; the cutoff is placed where the fitted curve reaches one.
    """
    lo_per, hi_per = per_range
    # invert the exact curve at the range ends
    scale = (2.0**bits - 1.0) / 1.5

    def snr_at(per):
        ber = -math.expm1(math.log1p(-per) / packet_bits)
        return scale * math.log(0.2 / ber)

    s = np.linspace(snr_at(hi_per), snr_at(lo_per), n_points)
    slope, intercept = np.polyfit(s, np.log(uncoded_per(s, bits, packet_bits)), 1)
    alpha, g = math.exp(intercept), -slope
    return AmcMode(bits=int(bits), per_alpha=float(alpha), per_g=float(g), per_cutoff=float(max(math.log(alpha) / g, 0.0)))


def default_amc_modes(packet_bits=100, bits=(1, 2, 3, 4, 5, 6, 7)):
    return tuple(fit_amc_mode(b, packet_bits) for b in bits)

