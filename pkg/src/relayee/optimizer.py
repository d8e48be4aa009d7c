"""Energy-efficiency optimisation: SNR search, time allocation, AMC boundaries, mode switching.

SNR searches run over the transmit power level in dB (see
:meth:`relayee.metrics.Model.at_snr_db`); every link moves with it.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import channel as ch
from . import metrics as me
from .errors import InfeasibleDelayError, InvalidParameterError, NumericError

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class NonUnimodalWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class GoldenResult:
    x: float
    f: float
    iterations: int
    evaluations: int
    unimodal: bool


def golden_section_max(objective, lo, hi, tol=1e-6, max_iter=200):
    """Maximise a scalar function on ``[lo, hi]`` by golden-section search.

    Stops when the bracket is narrower than ``tol``.  The endpoints are
    evaluated as well; if the best value seen is not at the final bracket
    (the function is not unimodal) that point is returned and a
    :class:`NonUnimodalWarning` is issued.
    """
    if not lo < hi:
        raise InvalidParameterError(f"need lo < hi, got [{lo}, {hi}]")
    seen = {}

    def f(x):
        if x not in seen:
            seen[x] = float(objective(x))
        return seen[x]

    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while b - a > tol and it < max_iter:
        it += 1
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    x_in, f_in = (c, fc) if fc >= fd else (d, fd)
    f(lo), f(hi)
    best_x = max(seen, key=lambda x: (seen[x], -abs(x - x_in)))
    if seen[best_x] <= f_in:
        return GoldenResult(x_in, f_in, it, len(seen), True)
    # a better sample outside the final bracket means the bracketing failed
    unimodal = a - tol <= best_x <= b + tol
    if not unimodal:
        warnings.warn(
            f"golden-section bracket ended near {x_in:.6g} but {best_x:.6g} scored higher; "
            "objective is not unimodal",
            NonUnimodalWarning,
            stacklevel=2,
        )
    return GoldenResult(best_x, seen[best_x], it, len(seen), unimodal)


def _db_tol(rel_tol):
    """SNR tolerance in dB equivalent to a relative tolerance on the linear SNR."""
    return 10.0 * math.log10(1.0 + rel_tol)


def _threads():
    try:
        return max(1, int(os.environ.get("RELAYEE_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    n = _threads()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


class _Evaluator:
    """Memoised metrics along the SNR axis for one mode and one model."""

    def __init__(self, model, mode):
        self.model = model
        self.mode = mode
        self.cache = {}

    def __call__(self, snr_db):
        key = round(float(snr_db), 12)
        if key not in self.cache:
            try:
                self.cache[key] = me.evaluate(self.model.at_snr_db(key), self.mode)
            except NumericError:
                self.cache[key] = None
        return self.cache[key]

    def ee(self, snr_db):
        r = self(snr_db)
        return -math.inf if r is None else r.ee

    def delay(self, snr_db):
        r = self(snr_db)
        return math.inf if r is None else r.delay


# -- plans --------------------------------------------------------------------


@dataclass(frozen=True)
class NodePolicy:
    node: str
    boundaries: tuple
    avg_snr: float


@dataclass(frozen=True, eq=False)
class PlanResult:
    mode: str
    alpha_star: float
    snr_star_db: float
    snr_star: float  # linear mean SNR of the source link (A,R in relay mode, A,D in direct mode)
    snr_star_relay: float
    ee: float
    delay: float
    boundaries: tuple
    feasible: bool
    delay_budget: float = math.inf
    metrics: me.LinkMetrics = None
    curve: tuple = ()  # (alpha, best snr_db, ee) for each grid point searched

    @property
    def policy(self):
        return amc_policy(self)


def amc_policy(plan):
    """Boundary set and mean SNR per transmitting node."""
    if not plan.feasible:
        raise InfeasibleDelayError("no policy for an infeasible plan", getattr(plan.metrics, "delay", None))
    if plan.mode == "direct":
        return (NodePolicy("source", plan.boundaries, plan.snr_star),)
    return (
        NodePolicy("source", plan.boundaries, plan.snr_star),
        NodePolicy("relay", plan.boundaries, plan.snr_star_relay),
    )


def _feasible_floor(ev, lo, hi, budget, tol_db):
    """Smallest SNR level in ``[lo, hi]`` meeting the delay budget (delay decreases with SNR).

    The root of ``log D(snr) = log budget`` is found with Brent's method,
    bracketed by the closest points already evaluated, and then nudged onto
    the feasible side.
    """
    if ev.delay(lo) <= budget:
        return lo
    if ev.delay(hi) > budget:
        return None
    a, b = lo, hi
    for x, r in ev.cache.items():
        if r is None or not lo <= x <= hi:
            continue
        if r.delay > budget:
            a = max(a, x)
        else:
            b = min(b, x)
    if b - a <= tol_db:
        return b
    target = math.log(budget)

    def g(x):
        d = ev.delay(x)
        return (math.log(d) if math.isfinite(d) else 700.0) - target

    try:
        root = optimize.brentq(g, a, b, xtol=0.25 * tol_db)
    except ValueError:  # delay not monotone inside the bracket
        return b
    x = min(root + 0.5 * tol_db, b)
    return x if ev.delay(x) <= budget else b


def _best_snr(ev, lo, hi, budget, tol_db, max_iter):
    """``(snr_db, ee)`` maximising EE subject to the delay budget, or ``None`` if infeasible."""
    floor = lo if math.isinf(budget) else _feasible_floor(ev, lo, hi, budget, tol_db)
    if floor is None:
        return None
    if hi - floor <= tol_db:
        return floor, ev.ee(floor)
    res = golden_section_max(ev.ee, floor, hi, tol=tol_db, max_iter=max_iter)
    x = res.x
    if ev.delay(x) > budget:  # delay not monotone here; keep the best feasible sample
        ok = [s for s in ev.cache if floor <= s <= hi and ev.delay(s) <= budget]
        if not ok:
            return None
        x = max(ok, key=ev.ee)
    return x, ev.ee(x)


def _plan(model, mode, alpha, snr_db, ee_value, budget):
    final = model.with_alpha(alpha).at_snr_db(snr_db) if mode == "relay" else model.at_snr_db(snr_db)
    metrics = me.evaluate(final, mode)
    return PlanResult(
        mode=mode,
        alpha_star=alpha if mode == "relay" else None,
        snr_star_db=snr_db,
        snr_star=(final.ar if mode == "relay" else final.ad).fading.avg_snr,
        snr_star_relay=final.rd.fading.avg_snr if mode == "relay" else math.nan,
        ee=metrics.ee,
        delay=metrics.delay,
        boundaries=final.ar.amc.boundaries,
        feasible=metrics.delay <= budget + 1e-9,
        delay_budget=budget,
        metrics=metrics,
    )


def _min_delay(model, mode, hi):
    try:
        return me.evaluate(model.at_snr_db(hi), mode).delay
    except NumericError:
        return math.inf


def optimize_relay(model, alpha_grid=None, snr_min_db=0.0, snr_max_db=30.0, delay_budget=math.inf, tol=1e-4, max_iter=200):
    """Two-stage search: golden section over the SNR level for each ``alpha``, then the best ``alpha``."""
    if alpha_grid is None:
        alpha_grid = np.round(np.arange(1, 100) * 0.01, 2)
    alphas = [float(a) for a in alpha_grid]
    if not alphas or any(not 0.0 < a < 1.0 for a in alphas):
        raise InvalidParameterError("alpha grid must be a nonempty subset of (0, 1)")
    if not snr_min_db < snr_max_db:
        raise InvalidParameterError("need snr_min_db < snr_max_db")
    budget = math.inf if delay_budget is None else float(delay_budget)
    tol_db = _db_tol(tol)

    def one(alpha):
        ev = _Evaluator(model.with_alpha(alpha), "relay")
        return _best_snr(ev, snr_min_db, snr_max_db, budget, tol_db, max_iter)

    results = _map(one, alphas)
    feasible = [(a, r) for a, r in zip(alphas, results) if r is not None]
    if not feasible:
        best_delay = min(_min_delay(model.with_alpha(a), "relay", snr_max_db) for a in alphas)
        raise InfeasibleDelayError(
            f"no alpha in the grid meets delay budget {budget:g}; smallest achievable delay is {best_delay:.6g}",
            best_delay,
        )
    # ties resolved toward the smaller alpha so the grid order never matters
    alpha, (snr, ee) = max(feasible, key=lambda ar: (ar[1][1], -ar[0]))
    plan = _plan(model, "relay", alpha, snr, ee, budget)
    curve = tuple((a, r[0], r[1]) if r is not None else (a, math.nan, math.nan) for a, r in zip(alphas, results))
    return _with_curve(plan, curve)


def _with_curve(plan, curve):
    from dataclasses import replace

    return replace(plan, curve=curve)


def optimize_direct(model, snr_min_db=0.0, snr_max_db=30.0, delay_budget=math.inf, tol=1e-4, max_iter=200):
    if not snr_min_db < snr_max_db:
        raise InvalidParameterError("need snr_min_db < snr_max_db")
    budget = math.inf if delay_budget is None else float(delay_budget)
    ev = _Evaluator(model, "direct")
    best = _best_snr(ev, snr_min_db, snr_max_db, budget, _db_tol(tol), max_iter)
    if best is None:
        d = _min_delay(model, "direct", snr_max_db)
        raise InfeasibleDelayError(
            f"direct transmission cannot meet delay budget {budget:g}; smallest achievable delay is {d:.6g}", d
        )
    return _plan(model, "direct", None, best[0], best[1], budget)


def ee_alpha_curve(model, alpha_grid=None, snr_db=None):
    """EE at a fixed SNR level for every ``alpha`` in the grid."""
    if alpha_grid is None:
        alpha_grid = np.round(np.arange(1, 100) * 0.01, 2)
    base = model if snr_db is None else model.at_snr_db(snr_db)
    return np.array(_map(lambda a: me.evaluate_relay(base.with_alpha(float(a))).ee, list(alpha_grid)))


# -- energy-efficient AMC partition ------------------------------------------------------


@dataclass(frozen=True)
class EepResult:
    boundaries: tuple
    ee: float
    start_ee: float
    history: tuple  # EE after each coordinate sweep
    evaluations: int


FLAT_MASS = 1e-9
LOCAL_WINDOW = 0.25  # log-SNR half-width searched after the first sweep


def _in_power_domain(model, mode):
    """False when an occupied state's error rate exceeds what the power model covers (it would cost nothing)."""
    for link in (model.ar, model.rd, model.ad) if mode == "relay" else (model.ad,):
        probs = ch.state_probabilities(link.amc, link.fading)
        bers = me.mode_bers(link, model.system)
        if np.any((probs[1:] > FLAT_MASS) & (bers[1:] >= me.BER_CEILING)):
            return False
    return True


def eep_boundaries(model, mode="relay", start=None, tol=1e-2, improvement=1e-6, max_sweeps=20, max_iter=200):
    """Coordinate-wise golden-section search of the AMC boundaries for maximum EE.

    Each inner boundary moves between its neighbours (in log SNR) while the
    others are held.  Moves are accepted only when they raise EE, so the
    result is never worse than ``start`` (the model's own boundaries by
    default).  Sweeps stop once a full sweep improves EE by less than
    ``improvement`` (relative).  Boundaries whose adjacent states carry
    less than ``FLAT_MASS`` probability on every link are skipped: EE does
    not depend on them.  After the first sweep each boundary is searched
    within ``LOCAL_WINDOW`` of its current log value.  Boundary sets that
    put an occupied state outside the power model's BER range score -inf.
    """
    links = (model.ar, model.rd, model.ad) if mode == "relay" else (model.ad,)
    b = list(start if start is not None else model.ar.amc.boundaries)
    n_modes = len(b) - 2
    count = 0

    def ee_of(bounds):
        nonlocal count
        count += 1
        trial = model.with_boundaries(tuple(bounds))
        if not _in_power_domain(trial, mode):
            return -math.inf
        try:
            return me.evaluate(trial, mode).ee
        except NumericError:
            return -math.inf

    current = ee_of(b)
    start_ee = current
    history = [current]
    if n_modes <= 1 and len(b) <= 3:
        return EepResult(tuple(b), current, start_ee, tuple(history), count)
    for sweep in range(max_sweeps):
        before = current
        for n in range(1, n_modes + 1):
            lo_nb, hi_nb = b[n - 1], b[n + 1]
            mass = 0.0
            for link in links:
                fad = link.fading
                rate = fad.m / fad.avg_snr
                mass = max(mass, float(ch._gamma_interval(fad.m, rate, lo_nb, hi_nb)))
            if mass < FLAT_MASS:
                continue
            lo = math.log(lo_nb) if lo_nb > 0 else math.log(b[n]) - math.log(1e3)
            hi = math.log(hi_nb) if math.isfinite(hi_nb) else math.log(b[n]) + math.log(1e3)
            if sweep > 0:  # later sweeps refine locally
                x0 = math.log(b[n])
                lo, hi = max(lo, x0 - LOCAL_WINDOW), min(hi, x0 + LOCAL_WINDOW)
            if not lo < hi:
                continue

            def obj(x, n=n):
                trial = list(b)
                trial[n] = math.exp(x)
                if not trial[n - 1] < trial[n] < trial[n + 1]:
                    return -math.inf
                return ee_of(trial)

            res = golden_section_max(obj, lo, hi, tol=tol, max_iter=max_iter)
            if res.f > current:
                b[n] = math.exp(res.x)
                current = res.f
        history.append(current)
        if not current > before * (1.0 + improvement):
            break
    return EepResult(tuple(b), current, start_ee, tuple(history), count)


def eep_alpha_sweep(model, alpha_grid=None, tol=1e-2, improvement=1e-6, max_sweeps=20):
    """EEP boundaries for every ``alpha`` in the grid, each warm-started.

    Every search starts from whichever of the model's own boundaries and
    the previous grid point's result scores higher at this ``alpha``, so
    each result is still at least as good as the model's boundaries.
    Returns ``(alphas, baseline_ee, results)``.
    """
    if alpha_grid is None:
        alpha_grid = np.round(np.arange(1, 100) * 0.01, 2)
    base = model.ar.amc.boundaries
    prev = None
    baseline, results = [], []
    for a in alpha_grid:
        m = model.with_alpha(float(a))
        ee_base = me.evaluate_relay(m).ee
        start = base
        if prev is not None and _in_power_domain(m.with_boundaries(prev), "relay"):
            try:
                if me.evaluate_relay(m.with_boundaries(prev)).ee > ee_base:
                    start = prev
            except NumericError:
                pass
        res = eep_boundaries(m, "relay", start=start, tol=tol, improvement=improvement, max_sweeps=max_sweeps)
        baseline.append(ee_base)
        results.append(res)
        prev = res.boundaries
    return np.asarray(alpha_grid, dtype=float), np.array(baseline), results


# -- mode switching ------------------------------------------------------------------


@dataclass(frozen=True)
class SwitchDecision:
    threshold: float  # D*, None when the curves do not cross in the searched range
    access_lhs: float
    access_rhs_ratio: float
    access_rhs_convex: float
    mode: str
    mode_below: str
    mode_above: str
    ee_relay: float
    ee_direct: float
    delay_budget: float
    search_range: tuple


class _ModeCurve:
    """Constrained-optimal EE of one mode as a function of the delay budget."""

    def __init__(self, model, mode, lo, hi, tol_db, max_iter):
        self.ev = _Evaluator(model, mode)
        self.lo, self.hi, self.tol_db, self.max_iter = lo, hi, tol_db, max_iter
        best = _best_snr(self.ev, lo, hi, math.inf, tol_db, max_iter)
        self.free_snr, self.free_ee = best
        self.free_delay = self.ev.delay(self.free_snr)
        self.min_delay = self.ev.delay(hi)

    def ee(self, budget):
        if budget >= self.free_delay:
            return self.free_ee
        floor = _feasible_floor(self.ev, self.lo, self.hi, budget, self.tol_db)
        if floor is None:
            return -math.inf
        # EE is unimodal in SNR with its peak below the floor here: the floor is optimal
        return self.ev.ee(floor)


def _choose(ee_relay, ee_direct):
    return "relay" if ee_relay > ee_direct else "direct"


def switch_decision(model, delay_budget=math.inf, alpha=None, snr_min_db=0.0, snr_max_db=30.0, tol=1e-4, max_iter=200,
                    grid_points=16, rel_tol=1e-3):
    """Direct-versus-relay choice for a delay budget and the budget ``D*`` where it flips.

    Each mode is evaluated at its own delay-feasible EE optimum.  ``D*`` is
    the crossing of the two constrained-optimal EE curves, bracketed on a
    geometric grid of budgets and refined by bisection.
    """
    m = model if alpha is None else model.with_alpha(alpha)
    tol_db = _db_tol(tol)
    relay = _ModeCurve(m, "relay", snr_min_db, snr_max_db, tol_db, max_iter)
    direct = _ModeCurve(m, "direct", snr_min_db, snr_max_db, tol_db, max_iter)
    a_ar, a_rd, a_ad = m.ar.access.a_avail, m.rd.access.a_avail, m.ad.access.a_avail
    rhs_ratio = (a_ar + a_rd * m.alpha) / (1.0 + m.alpha)
    rhs_convex = m.alpha * a_ar + (1.0 - m.alpha) * a_rd

    d_lo = min(relay.min_delay, direct.min_delay)
    d_hi = max(relay.free_delay, direct.free_delay)
    if not (math.isfinite(d_lo) and math.isfinite(d_hi)) or d_lo <= 0:
        raise NumericError("mode delays are not finite over the SNR range")
    d_hi = max(d_hi, d_lo * (1.0 + 1e-6))
    grid = np.geomspace(d_lo, d_hi * 1.5, grid_points)

    def diff(d):
        return relay.ee(d) - direct.ee(d)

    vals = [diff(d) for d in grid]
    signs = [np.sign(v) for v in vals]
    threshold = None
    for i in range(len(grid) - 1):
        if signs[i] != 0 and signs[i + 1] != 0 and signs[i] != signs[i + 1]:
            a, b = grid[i], grid[i + 1]
            sa = signs[i]
            while b / a - 1.0 > rel_tol:
                mid = math.sqrt(a * b)
                if np.sign(diff(mid)) == sa:
                    a = mid
                else:
                    b = mid
            threshold = math.sqrt(a * b)
            break
    mode_below = _choose(relay.ee(grid[0]), direct.ee(grid[0]))
    mode_above = _choose(relay.free_ee, direct.free_ee)
    budget = math.inf if delay_budget is None else float(delay_budget)
    ee_r, ee_d = relay.ee(budget), direct.ee(budget)
    if math.isinf(ee_r) and math.isinf(ee_d):
        raise InfeasibleDelayError(
            f"neither mode meets delay budget {budget:g}; smallest achievable delay is {d_lo:.6g}", d_lo
        )
    return SwitchDecision(
        threshold=threshold,
        access_lhs=a_ad,
        access_rhs_ratio=rhs_ratio,
        access_rhs_convex=rhs_convex,
        mode=_choose(ee_r, ee_d),
        mode_below=mode_below,
        mode_above=mode_above,
        ee_relay=ee_r,
        ee_direct=ee_d,
        delay_budget=budget,
        search_range=(float(grid[0]), float(grid[-1])),
    )


@dataclass(frozen=True)
class LimitComparison:
    regime: str
    ee_relay: float
    ee_direct: float
    closed_relay: float
    closed_direct: float

    @property
    def full_choice(self):
        return _choose(self.ee_relay, self.ee_direct)

    @property
    def closed_choice(self):
        return _choose(self.closed_relay, self.closed_direct)


def limit_regimes(model, snr_max_db=30.0, idle_snr_db=0.0, idle_rate=0.01, idle_scale=1e6):
    """Full model against the closed-form limits of the mode comparison.

    ``transmit``: highest SNR level with the idle power switched off, so
    transmit power dominates.  The closed forms are ``lambda / (a_AD P_AD)``
    and ``lambda / (alpha a_AR P + (1 - alpha) a_RD P_R)`` with the mean
    transmit powers of the full model.
    ``idle``: a low SNR level, light traffic and an idle power
    ``idle_scale`` times the configured one (at least 1 mW), so idle power
    dominates.  The closed forms use ``a^u P_0`` in place of ``a^a P``.
    """
    from dataclasses import replace

    alpha = model.alpha
    a_ar, a_rd, a_ad = model.ar.access.a_avail, model.rd.access.a_avail, model.ad.access.a_avail
    tu = model.system.time_unit_s
    out = []

    m1 = replace(model, system=replace(model.system, idle_power_w=0.0)).at_snr_db(snr_max_db)
    r, d = me.evaluate_relay(m1), me.evaluate_direct(m1)
    lam = model.traffic.mixture_mean
    relay_w = alpha * a_ar * r.tx_power_source + (1 - alpha) * a_rd * r.tx_power_relay
    out.append(LimitComparison("transmit", r.ee, d.ee, lam / (relay_w * tu), lam / (a_ad * d.tx_power_direct * tu)))

    p0 = max(model.system.idle_power_w, 1e-3) * idle_scale
    m2 = replace(model, system=replace(model.system, idle_power_w=p0)).with_traffic(idle_rate).at_snr_db(idle_snr_db)
    r, d = me.evaluate_relay(m2), me.evaluate_direct(m2)
    idle_relay = (alpha * (1 - a_ar) + (1 - alpha) * (1 - a_rd)) * p0
    out.append(LimitComparison("idle", r.ee, d.ee, idle_rate / (idle_relay * tu), idle_rate / ((1 - a_ad) * p0 * tu)))
    return out

