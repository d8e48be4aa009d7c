"""Command-line front end: analysis, sweeps, optimisation, switching, simulation, validation.

Every command writes CSV (header row, fixed columns, ``%.9g`` numbers) to
``--output`` or stdout.  Exit codes: 0 ok, 1 numeric or model error (or a
failed validation), 2 usage or configuration error, 3 infeasible delay
budget.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from contextlib import contextmanager
from dataclasses import replace

import numpy as np

from . import config as cfgmod
from . import markov
from . import metrics as me
from . import optimizer as op
from . import simulator as si
from .errors import ConfigError, InfeasibleDelayError, InvalidParameterError, RelayEEError

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2, 3

METRIC_COLUMNS = ("mode", "lambda", "buffer", "alpha", "snr_db", "drop_src", "drop_relay", "delay",
                  "throughput", "power_w", "energy_j", "ee")
PLAN_COLUMNS = ("mode", "alpha_star", "snr_star_db", "snr_star", "snr_star_relay", "ee", "delay", "feasible",
                "delay_budget", "boundaries_db")
SWITCH_COLUMNS = ("kind", "delay_budget", "threshold", "ee_relay", "ee_direct", "choice", "access_lhs",
                  "access_rhs_ratio", "access_rhs_convex")
SIM_COLUMNS = ("seed", "snr_db", "alpha", "slots", "arrived", "delivered", "drop_src", "drop_relay", "delay",
               "throughput", "power_w", "energy_j", "ee", "avail_ar", "avail_rd", "avail_ad")
VALIDATE_COLUMNS = ("snr_db", "metric", "analytic", "simulated", "gap", "limit", "passed")


def fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.9g" % value
    return str(value)


class CsvOut:
    def __init__(self, stream, columns):
        self.writer = csv.writer(stream, lineterminator="\n")
        self.columns = columns
        self.writer.writerow(columns)

    def row(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        self.writer.writerow([fmt(v) for v in values])


@contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
        return
    buf = io.StringIO()
    yield buf
    with open(path, "w", newline="") as fh:  # written only once the command has finished
        fh.write(buf.getvalue())


def metric_row(out, r, model):
    out.row(r.mode, model.traffic.mixture_mean, model.system.buffer, r.alpha if r.mode == "relay" else None,
            r.snr_db, r.drop_source, r.drop_relay, r.delay, r.throughput, r.power_total, r.energy_per_period, r.ee)


def _parse_grid(text):
    """``start:stop:step`` (inclusive) or a comma-separated list."""
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return tuple(float(x) for x in np.round(start + step * np.arange(n), 10))
        vals = tuple(float(x) for x in text.split(",") if x.strip())
        if not vals:
            raise ValueError
        return vals
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}: use start:stop:step or a comma list") from None


def _settings(cfg, args):
    o = cfg.optimizer
    return replace(
        o,
        alpha_grid=args.alpha_grid if getattr(args, "alpha_grid", None) else o.alpha_grid,
        snr_min_db=o.snr_min_db if getattr(args, "snr_min_db", None) is None else args.snr_min_db,
        snr_max_db=o.snr_max_db if getattr(args, "snr_max_db", None) is None else args.snr_max_db,
        delay_budget=o.delay_budget if getattr(args, "delay_budget", None) is None else args.delay_budget,
        tol=o.tol if getattr(args, "tol", None) is None else args.tol,
    )


def _model(cfg, args):
    m = cfg.model
    if getattr(args, "snr_db", None) is not None:
        m = m.at_snr_db(args.snr_db)
    if getattr(args, "alpha", None) is not None:
        m = m.with_alpha(args.alpha)
    return m


# -- commands ---------------------------------------------------------------------


def cmd_analyze(cfg, args, stream):
    m = _model(cfg, args)
    relay, direct = me.evaluate_relay(m), me.evaluate_direct(m)
    out = CsvOut(stream, METRIC_COLUMNS)
    metric_row(out, relay, m)
    metric_row(out, direct, m)
    if args.dump_chain:
        markov.dump_chain(args.dump_chain, relay.source_chain, relay.source_pi)
    return EXIT_OK


def cmd_sweep_alpha(cfg, args, stream):
    m = _model(cfg, args)
    grid = _settings(cfg, args).alpha_grid
    if args.partition == "eep":
        _, _, results = op.eep_alpha_sweep(m, grid)
        rows = [me.evaluate_relay(m.with_alpha(a).with_boundaries(r.boundaries)) for a, r in zip(grid, results)]
    else:
        rows = op._map(lambda a: me.evaluate_relay(m.with_alpha(a)), list(grid))
    out = CsvOut(stream, METRIC_COLUMNS)
    for r in rows:
        metric_row(out, r, m)
    return EXIT_OK


def cmd_sweep_snr(cfg, args, stream):
    m = _model(cfg, args)
    alphas = args.alphas or (m.alpha,)
    rates = args.rates or cfg.sweep_rates
    snrs = args.snr_grid or cfg.sweep_snr_db
    jobs = [(lam, a, s) for lam in rates for a in alphas for s in snrs]

    def one(job):
        lam, a, s = job
        mm = m.with_traffic(lam).with_alpha(a).at_snr_db(s)
        return mm, me.evaluate(mm, args.mode)

    out = CsvOut(stream, METRIC_COLUMNS)
    for mm, r in op._map(one, jobs):
        metric_row(out, r, mm)
    return EXIT_OK


def cmd_sweep_buffer(cfg, args, stream):
    m = _model(cfg, args)
    buffers = args.buffers or cfg.sweep_buffers
    snrs = args.snr_grid or (m.snr_db,)
    jobs = [(b, s) for b in buffers for s in snrs]

    def one(job):
        mm = m.with_buffer(job[0]).at_snr_db(job[1])
        return mm, me.evaluate(mm, args.mode)

    out = CsvOut(stream, METRIC_COLUMNS)
    for mm, r in op._map(one, jobs):
        metric_row(out, r, mm)
    return EXIT_OK


def _plan_row(out, plan):
    bounds = ";".join("%.9g" % (10 * math.log10(b)) for b in plan.boundaries[1:-1])
    out.row(plan.mode, plan.alpha_star, plan.snr_star_db, plan.snr_star, plan.snr_star_relay, plan.ee, plan.delay,
            plan.feasible, plan.delay_budget, bounds)


def cmd_optimize(cfg, args, stream):
    m = _model(cfg, args)
    st = _settings(cfg, args)
    if args.partition == "eep":
        m = m.with_boundaries(op.eep_boundaries(m, "relay" if args.mode != "direct" else "direct").boundaries)
    out = CsvOut(stream, PLAN_COLUMNS)
    plans = []
    if args.mode in ("relay", "both"):
        plans.append(op.optimize_relay(m, st.alpha_grid, st.snr_min_db, st.snr_max_db, st.delay_budget, st.tol, st.max_iter))
    if args.mode in ("direct", "both"):
        plans.append(op.optimize_direct(m, st.snr_min_db, st.snr_max_db, st.delay_budget, st.tol, st.max_iter))
    for p in plans:
        _plan_row(out, p)
    return EXIT_OK


def cmd_switch(cfg, args, stream):
    m = _model(cfg, args)
    st = _settings(cfg, args)
    d = op.switch_decision(m, st.delay_budget, None, st.snr_min_db, st.snr_max_db, st.tol, st.max_iter)
    out = CsvOut(stream, SWITCH_COLUMNS)
    out.row("decision", d.delay_budget, d.threshold, d.ee_relay, d.ee_direct, d.mode, d.access_lhs,
            d.access_rhs_ratio, d.access_rhs_convex)
    if args.limits:
        for c in op.limit_regimes(m, st.snr_max_db, st.snr_min_db):
            out.row(f"limit-{c.regime}", None, None, c.ee_relay, c.ee_direct, c.full_choice, d.access_lhs,
                    d.access_rhs_ratio, d.access_rhs_convex)
            out.row(f"closed-{c.regime}", None, None, c.closed_relay, c.closed_direct, c.closed_choice, d.access_lhs,
                    d.access_rhs_ratio, d.access_rhs_convex)
    return EXIT_OK


def _sim_config(cfg, args, model, seed, trace=False):
    s = cfg.simulate
    return si.SimConfig(
        model,
        horizon_slots=args.slots or s.horizon_slots,
        seed=seed,
        warmup_slots=s.warmup_slots if args.warmup is None else args.warmup,
        accounting=s.accounting,
        batches=s.batches,
        trace=trace,
    )


def _write_trace(path, report):
    with open(path, "w", newline="") as fh:
        out = CsvOut(fh, si.TRACE_COLUMNS)
        for row in report.trace:
            out.row(*(int(x) for x in row[:-1]), float(row[-1]))


def cmd_simulate(cfg, args, stream):
    m = _model(cfg, args)
    seeds = args.seeds or cfg.simulate.seeds
    out = CsvOut(stream, SIM_COLUMNS)
    for i, seed in enumerate(seeds):
        trace = bool(args.trace) and i == 0
        r = si.run(_sim_config(cfg, args, m, seed, trace))
        if trace:
            _write_trace(args.trace, r)
        out.row(seed, m.snr_db, m.alpha, r.slots, r.arrived, r.delivered, r.drop_source, r.drop_relay, r.delay,
                r.throughput, r.power_total, r.energy_j, r.ee, *r.availability)
    return EXIT_OK


def cmd_validate(cfg, args, stream):
    m = _model(cfg, args)
    seeds = args.seeds or cfg.simulate.seeds
    snrs = args.snr_grid or (5.0, 10.0, 15.0)
    out = CsvOut(stream, VALIDATE_COLUMNS)
    ok = True
    for s in snrs:
        mm = m.at_snr_db(s)
        analytic = me.evaluate_relay(mm)
        pooled = si.pool([si.run(_sim_config(cfg, args, mm, seed)) for seed in seeds])
        for item in si.validate(analytic, pooled, model=mm):
            ok &= item.passed
            out.row(s, item.metric, item.analytic, item.simulated, item.gap, item.limit, item.passed)
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {
    "analyze": cmd_analyze,
    "sweep-alpha": cmd_sweep_alpha,
    "sweep-snr": cmd_sweep_snr,
    "sweep-buffer": cmd_sweep_buffer,
    "optimize": cmd_optimize,
    "switch-threshold": cmd_switch,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="relayee", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def common(p):
        p.add_argument("--config", "-c", default=cfgmod.DEFAULT_NAME,
                       help="config file, or 'paper-default' for the shipped one (default)")
        p.add_argument("--output", "-o", default=None, help="CSV destination (default stdout)")
        p.add_argument("--snr-db", type=float, default=None, help="transmit power level in dB (overrides [model] snr_db)")
        p.add_argument("--alpha", type=float, default=None, help="time allocation ratio (overrides [model] alpha)")
        p.add_argument("--echo-config", action="store_true", help="print the resolved configuration to stderr")
        return p

    def opt_flags(p):
        p.add_argument("--alpha-grid", type=_parse_grid, default=None, help="start:stop:step or comma list")
        p.add_argument("--snr-min-db", type=float, default=None)
        p.add_argument("--snr-max-db", type=float, default=None)
        p.add_argument("--delay-budget", type=float, default=None, help="delay budget D_0 in time units")
        p.add_argument("--tol", type=float, default=None, help="relative SNR tolerance of the golden-section search")

    def sim_flags(p):
        p.add_argument("--seeds", type=lambda t: tuple(int(x) for x in t.split(",")), default=None)
        p.add_argument("--slots", type=int, default=None, help="simulated slots per seed")
        p.add_argument("--warmup", type=int, default=None)

    p = common(sub.add_parser("analyze", help="metrics of both modes at one operating point"))
    p.add_argument("--dump-chain", default=None, help="write the source queue chain and its stationary law")

    p = common(sub.add_parser("sweep-alpha", help="relay metrics over the alpha grid"))
    opt_flags(p)
    p.add_argument("--partition", choices=("msre", "eep"), default="msre")

    p = common(sub.add_parser("sweep-snr", help="metrics over SNR for each traffic load and alpha"))
    p.add_argument("--mode", choices=("relay", "direct"), default="relay")
    p.add_argument("--snr-grid", type=_parse_grid, default=None)
    p.add_argument("--alphas", type=_parse_grid, default=None)
    p.add_argument("--rates", type=_parse_grid, default=None)

    p = common(sub.add_parser("sweep-buffer", help="metrics over buffer sizes"))
    p.add_argument("--mode", choices=("relay", "direct"), default="relay")
    p.add_argument("--buffers", type=lambda t: tuple(int(x) for x in t.split(",")), default=None)
    p.add_argument("--snr-grid", type=_parse_grid, default=None)

    p = common(sub.add_parser("optimize", help="energy-efficient alpha and SNR"))
    opt_flags(p)
    p.add_argument("--mode", choices=("relay", "direct", "both"), default="both")
    p.add_argument("--partition", choices=("msre", "eep"), default="msre")

    p = common(sub.add_parser("switch-threshold", help="direct-versus-relay decision and threshold D*"))
    opt_flags(p)
    p.add_argument("--limits", action="store_true", help="add the limiting-regime comparisons")

    p = common(sub.add_parser("simulate", help="Monte-Carlo run of the relay mode"))
    sim_flags(p)
    p.add_argument("--trace", default=None, help="per-slot trace CSV of the first seed")

    p = common(sub.add_parser("validate", help="analytic versus simulated metrics"))
    sim_flags(p)
    p.add_argument("--snr-grid", type=_parse_grid, default=None)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config)
        if args.echo_config:
            print("\n".join(cfgmod.echo_lines(cfg)), file=sys.stderr)
        with _output(args.output) as stream:
            return COMMANDS[args.command](cfg, args, stream)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"relayee: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleDelayError as exc:
        print(f"relayee: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (RelayEEError, ArithmeticError) as exc:
        print(f"relayee: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"relayee: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
