"""TOML configuration: loading, validation and defaults.

Every SNR a user writes is in dB; everything handed to the model is
linear.  Errors name the offending section and key.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import channel as ch
from . import metrics as me
from . import queueing as qu
from .errors import ConfigError, RelayEEError

DEFAULT_NAME = "paper-default"
LINKS = {"AR": "A,R", "RD": "R,D", "AD": "A,D"}

SECTIONS = ("system", "traffic", "amc", "link", "access", "model", "optimizer", "simulate")


@dataclass(frozen=True)
class OptimizerSettings:
    alpha_grid: tuple = tuple(np.round(np.arange(1, 100) * 0.01, 2))
    snr_min_db: float = 0.0
    snr_max_db: float = 30.0
    tol: float = 1e-4
    max_iter: int = 200
    delay_budget: float = math.inf


@dataclass(frozen=True)
class SimulateSettings:
    horizon_slots: int = 1_000_000
    warmup_slots: int = 20_000
    seeds: tuple = (1, 2, 3)
    accounting: str = "continuous"
    batches: int = 20


@dataclass(frozen=True)
class Config:
    model: me.Model
    optimizer: OptimizerSettings
    simulate: SimulateSettings
    sweep_rates: tuple = (1.0, 2.0)
    sweep_snr_db: tuple = tuple(float(x) for x in np.linspace(0.0, 30.0, 20))
    sweep_buffers: tuple = (5, 10, 25, 50)
    source: str = ""
    echo: dict = field(default_factory=dict)


def default_config_path():
    return resources.files("relayee") / "data" / f"{DEFAULT_NAME}.toml"


def _read(path):
    if str(path) == DEFAULT_NAME:
        path = default_config_path()
    try:
        text = path.read_text() if hasattr(path, "read_text") else Path(path).read_text()
    except OSError as exc:
        raise ConfigError("file", str(path), f"cannot read: {exc.strerror or exc}") from None
    try:
        return tomllib.loads(text), str(path)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("file", str(path), f"not valid TOML: {exc}") from None


class _Section:
    """Typed access to one table that records what was read and rejects leftovers."""

    def __init__(self, name, table):
        if table is None:
            table = {}
        if not isinstance(table, dict):
            raise ConfigError(name, "*", "must be a table")
        self.name = name
        self.table = table
        self.used = {}

    def _get(self, key, default, required):
        if key in self.table:
            return self.table[key]
        if required:
            raise ConfigError(self.name, key, "required key is missing")
        return default

    def number(self, key, default=None, required=False, lo=None, hi=None, lo_open=False, integer=False):
        v = self._get(key, default, required)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(self.name, key, f"must be a number, got {v!r}")
        if integer and int(v) != v:
            raise ConfigError(self.name, key, f"must be an integer, got {v!r}")
        v = int(v) if integer else float(v)
        if lo is not None and (v <= lo if lo_open else v < lo):
            raise ConfigError(self.name, key, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
        if hi is not None and v > hi:
            raise ConfigError(self.name, key, f"must be <= {hi}, got {v}")
        self.used[key] = v
        return v

    def choice(self, key, default, allowed):
        v = self._get(key, default, False)
        if v not in allowed:
            raise ConfigError(self.name, key, f"must be one of {list(allowed)}, got {v!r}")
        self.used[key] = v
        return v

    def raw(self, key, default=None, required=False):
        v = self._get(key, default, required)
        self.used[key] = v
        return v

    def finish(self):
        extra = sorted(set(self.table) - set(self.used))
        if extra:
            raise ConfigError(self.name, extra[0], "unknown key")
        return dict(self.used)


def _float_list(sec, key, default, lo=None):
    v = sec.raw(key, default)
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(sec.name, key, "must be a nonempty list of numbers")
    out = []
    for x in v:
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(sec.name, key, f"entries must be numbers, got {x!r}")
        if lo is not None and x < lo:
            raise ConfigError(sec.name, key, f"entries must be >= {lo}, got {x}")
        out.append(float(x))
    sec.used[key] = out
    return tuple(out)


def _system(data):
    sec = _Section("system", data.get("system"))
    try:
        sysp = qu.SystemParams(
            packet_bits=sec.number("packet_bits", 100, lo=1, integer=True),
            symbol_rate=sec.number("symbol_rate_hz", 100e3, lo=0, lo_open=True),
            buffer=sec.number("buffer", 50, lo=1, integer=True),
            max_tx=sec.number("max_tx", 6, lo=1, integer=True),
            ref_power_w=sec.number("ref_power_w", 1e-3, lo=0, lo_open=True),
            idle_power_w=sec.number("idle_power_w", 0.01, lo=0),
            loss_budget=sec.number("loss_budget", 1e-3, lo=0, lo_open=True, hi=1),
            time_unit_s=sec.number("time_unit_s", 1e-3, lo=0, lo_open=True),
            slot=sec.number("slot", 1.0, lo=0, lo_open=True),
            power_scaling=sec.choice("power_scaling", "snr", ("snr", "fixed")),
        )
    except RelayEEError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("system", "*", str(exc)) from None
    period = sec.number("period", 1.0, lo=0, lo_open=True)
    return sysp, period, sec.finish()


def _traffic(data):
    if "traffic" not in data:
        raise ConfigError("traffic", "lambda", "required key is missing")
    sec = _Section("traffic", data["traffic"])
    lam = sec.number("lambda", required=True, lo=0)
    max_arr = sec.number("max_arrivals", 15, lo=1, integer=True)
    rates = _float_list(sec, "sweep_rates", [1.0, 2.0], lo=0)
    mmpp = sec.raw("mmpp", None)
    mmpp_rates, mmpp_switch = (), ()
    if mmpp is not None:
        if not isinstance(mmpp, dict) or "rates" not in mmpp or "switch" not in mmpp:
            raise ConfigError("traffic", "mmpp", "must be a table with 'rates' and 'switch'")
        mmpp_rates, mmpp_switch = tuple(mmpp["rates"]), tuple(tuple(r) for r in mmpp["switch"])
    try:
        traffic = qu.TrafficModel(lam, max_arr, mmpp_rates, mmpp_switch)
    except RelayEEError as exc:
        raise ConfigError("traffic", "mmpp" if mmpp is not None else "lambda", str(exc)) from None
    return traffic, rates, sec.finish()


def _amc(data, packet_bits):
    sec = _Section("amc", data.get("amc"))
    rows = sec.raw("modes", None, required=True)
    if not isinstance(rows, list) or not rows:
        raise ConfigError("amc", "modes", "must be a nonempty list of [bits, alpha, g, s_p] rows")
    modes = []
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != 4:
            raise ConfigError("amc", "modes", f"row {i} must be [bits, alpha, g, s_p]")
        try:
            modes.append(ch.AmcMode(int(row[0]), float(row[1]), float(row[2]), float(row[3])))
        except (RelayEEError, TypeError, ValueError) as exc:
            raise ConfigError("amc", "modes", f"row {i}: {exc}") from None
    partition = sec.choice("partition", "msre", ("msre", "explicit"))
    try:
        if partition == "msre":
            p_target = sec.number("p_target", 0.001 ** (1.0 / 7.0), lo=0, lo_open=True, hi=1)
            bounds = ch.msre_boundaries(modes, p_target)
        else:
            inner = _float_list(sec, "boundaries_db", None)
            if len(inner) != len(modes):
                raise ConfigError("amc", "boundaries_db", f"need {len(modes)} values (one per mode), got {len(inner)}")
            bounds = (0.0, *(ch.db_to_linear(x) for x in inner), math.inf)
        table = ch.AmcModeTable(tuple(modes), tuple(bounds))
    except ConfigError:
        raise
    except RelayEEError as exc:
        raise ConfigError("amc", "modes", str(exc)) from None
    return table, sec.finish()


def _links(data, amc, snr_db):
    link_tables = data.get("link", {})
    access_tables = data.get("access", {})
    for group, tables in (("link", link_tables), ("access", access_tables)):
        if not isinstance(tables, dict):
            raise ConfigError(group, "*", "must be a table of per-link tables")
        for key in tables:
            if key not in LINKS:
                raise ConfigError(f"{group}.{key}", "*", f"unknown link; expected one of {list(LINKS)}")
    links, echo = {}, {}
    for key, label in LINKS.items():
        lsec = _Section(f"link.{key}", link_tables.get(key))
        asec = _Section(f"access.{key}", access_tables.get(key))
        gain = lsec.number("gain_db", 0.0)
        try:
            fading = ch.FadingModel(
                m=lsec.number("m", 1.0, lo=0.5),
                avg_snr=ch.db_to_linear(snr_db + gain),
                doppler_hz=lsec.number("doppler_hz", 10.0, lo=0),
                frame_s=lsec.number("frame_s", 1e-3, lo=0, lo_open=True),
            )
            access = ch.SpectrumAccess(
                asec.number("q", required=True, lo=0, lo_open=True),
                asec.number("u", required=True, lo=0, lo_open=True),
            )
        except ConfigError:
            raise
        except RelayEEError as exc:
            raise ConfigError(f"link.{key}", "*", str(exc)) from None
        links[key] = ch.LinkModel(fading, amc, access, label, gain)
        echo[f"link.{key}"] = lsec.finish()
        echo[f"access.{key}"] = asec.finish()
    return links, echo


def _optimizer(data):
    sec = _Section("optimizer", data.get("optimizer"))
    step = sec.number("alpha_step", 0.01, lo=0, lo_open=True, hi=0.5)
    a_min = sec.number("alpha_min", step, lo=0, lo_open=True)
    a_max = sec.number("alpha_max", 1.0 - step, hi=1)
    if not a_min <= a_max or a_max >= 1.0:
        raise ConfigError("optimizer", "alpha_max", "need alpha_min <= alpha_max < 1")
    n = int(math.floor((a_max - a_min) / step + 1e-9)) + 1
    grid = tuple(float(x) for x in np.round(a_min + step * np.arange(n), 10))
    lo = sec.number("snr_min_db", 0.0)
    hi = sec.number("snr_max_db", 30.0)
    if not lo < hi:
        raise ConfigError("optimizer", "snr_max_db", "must exceed snr_min_db")
    budget = sec.raw("delay_budget", None)
    if budget is not None and (isinstance(budget, bool) or not isinstance(budget, (int, float)) or budget <= 0):
        raise ConfigError("optimizer", "delay_budget", "must be a positive number")
    settings = OptimizerSettings(
        alpha_grid=grid,
        snr_min_db=lo,
        snr_max_db=hi,
        tol=sec.number("tol", 1e-4, lo=0, lo_open=True),
        max_iter=sec.number("max_iter", 200, lo=1, integer=True),
        delay_budget=math.inf if budget is None else float(budget),
    )
    return settings, sec.finish()


def _simulate(data):
    sec = _Section("simulate", data.get("simulate"))
    horizon = sec.number("horizon_slots", 1_000_000, lo=1, integer=True)
    warmup = sec.number("warmup_slots", 20_000, lo=0, integer=True)
    if not horizon > warmup:
        raise ConfigError("simulate", "horizon_slots", "must exceed warmup_slots")
    seeds = sec.raw("seeds", [1, 2, 3])
    if not isinstance(seeds, list) or not seeds or any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in seeds):
        raise ConfigError("simulate", "seeds", "must be a nonempty list of nonnegative integers")
    settings = SimulateSettings(
        horizon_slots=horizon,
        warmup_slots=warmup,
        seeds=tuple(seeds),
        accounting=sec.choice("accounting", "continuous", ("continuous", "busy")),
        batches=sec.number("batches", 20, lo=2, integer=True),
    )
    return settings, sec.finish()


def _model_section(data):
    sec = _Section("model", data.get("model"))
    alpha = sec.number("alpha", 0.5, lo=0, lo_open=True)
    if not alpha < 1:
        raise ConfigError("model", "alpha", f"must lie in (0, 1), got {alpha}")
    snr_db = sec.number("snr_db", 5.0)
    opts = me.ModelOptions(**{k: sec.choice(k, getattr(me.ModelOptions(), k), v) for k, v in me.OPTION_CHOICES.items()})
    sweep_snr = _float_list(sec, "sweep_snr_db", list(np.linspace(0.0, 30.0, 20)))
    buffers = sec.raw("sweep_buffers", [5, 10, 25, 50])
    if not isinstance(buffers, list) or not buffers or any(isinstance(b, bool) or not isinstance(b, int) or b < 1 for b in buffers):
        raise ConfigError("model", "sweep_buffers", "must be a nonempty list of positive integers")
    return alpha, snr_db, opts, sweep_snr, tuple(buffers), sec.finish()


def load_config(path=DEFAULT_NAME):
    """Parse and validate a configuration file; ``'paper-default'`` loads the shipped one."""
    data, source = _read(path)
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(unknown[0], "*", "unknown section")
    sysp, period, echo_sys = _system(data)
    traffic, rates, echo_tr = _traffic(data)
    amc, echo_amc = _amc(data, sysp.packet_bits)
    alpha, snr_db, opts, sweep_snr, buffers, echo_model = _model_section(data)
    links, echo_links = _links(data, amc, snr_db)
    opt, echo_opt = _optimizer(data)
    sim, echo_sim = _simulate(data)
    model = me.Model(sysp, traffic, links["AR"], links["RD"], links["AD"], alpha=alpha, period=period, options=opts)
    echo = {"system": {**echo_sys, "period": period}, "traffic": echo_tr, "amc": echo_amc, "model": echo_model,
            **echo_links, "optimizer": echo_opt, "simulate": echo_sim}
    return Config(model, opt, sim, rates, sweep_snr, buffers, source, echo)


def echo_lines(cfg):
    """Resolved configuration, one ``[section] key = value`` line per entry."""
    out = []
    for section, table in cfg.echo.items():
        for key, value in table.items():
            out.append(f"[{section}] {key} = {value!r}")
    return out
