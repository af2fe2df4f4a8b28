"""Scenario configuration, parameter sweeps and CSV output."""
from __future__ import annotations

import configparser
import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Sequence

from . import codecs
from .codecs import Scheme
from .delay import (DEFAULT_HOPS, DEFAULT_OPTIONS, DEFAULT_PARAMS, DelayParams, HandoverKind,
                    HopCounts, ModelOptions, handover_delay, ttd_4g, ttd_icna)
from .procedures import (ProcedureKind, Step, Msg, WL, EXT, attach_all, make_world,
                         run_procedure, run_ttd_scenario, _Run, _roles)
from .sim import WireMode, WirelessMode, to_ms, to_ticks
from .topology import Arch, TopologyError


class ConfigError(ValueError):
    pass


SWEEP_PARAMS = ("T_q", "L_wl", "gamma", "lambda", "S_d", "n_enbs")
INTEGER_SWEEPS = {"gamma", "lambda", "n_enbs"}
METRICS = ("ttd", "handover_x2", "handover_s1", "dto", "attach_data",
           "handover_chain", "handover_chain_mean")

_PARAM_KEYS = {f.name for f in fields(DelayParams)}
_HOP_KEYS = {"alpha", "beta", "gamma", "delta", "epsilon", "lambda"}
_OPT_KEYS = {f.name for f in fields(ModelOptions)}


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    metric: str = "ttd"
    sweep: str = "T_q"
    start: float = 1.0
    stop: float = 10.0
    step: float = 1.0
    arch: str = "both"
    params: DelayParams = DEFAULT_PARAMS
    hops: HopCounts = DEFAULT_HOPS
    opts: ModelOptions = DEFAULT_OPTIONS
    mode: WirelessMode = WirelessMode()
    simulate: bool = False
    fidelity: str = "equation"
    outer_header: str = codecs.OUTER_COMPACT
    n_enbs: int = 2
    ue_speed_kmh: float = 60.0
    cell_distance_m: float = 100.0
    out: Optional[str] = None
    jobs: int = 1

    def __post_init__(self):
        if self.sweep not in SWEEP_PARAMS:
            raise ConfigError(f"unknown sweep parameter {self.sweep!r}; "
                              f"choose from {', '.join(SWEEP_PARAMS)}")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}; choose from {', '.join(METRICS)}")
        if not self.step > 0:
            raise ConfigError("sweep step must be > 0")
        if self.start > self.stop:
            raise ConfigError("sweep start must not exceed stop")
        if self.sweep in INTEGER_SWEEPS:
            for v in (self.start, self.stop, self.step):
                if v != int(v):
                    raise ConfigError(f"{self.sweep} sweeps need integer bounds and step")
        if self.arch != "both":
            object.__setattr__(self, "arch", Arch.parse(self.arch).value)
        if self.ue_speed_kmh <= 0:
            raise ConfigError("UE speed must be > 0")

    def points(self) -> List[float]:
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        vals = [round(self.start + i * self.step, 12) for i in range(n)]
        if self.sweep in INTEGER_SWEEPS:
            vals = [int(v) for v in vals]
        return vals

    @property
    def handover_interval_ms(self) -> float:
        """Time for the UE to cross one cell at its configured speed."""
        return self.cell_distance_m / (self.ue_speed_kmh / 3.6) * 1000.0


@dataclass
class ResultRow:
    sweep_value: float
    metric: str
    value_4g: Optional[float] = None
    value_icna: Optional[float] = None
    sim_4g: Optional[float] = None
    sim_icna: Optional[float] = None
    gtp: Optional[float] = None
    ipinip: Optional[float] = None
    gre: Optional[float] = None
    error: Optional[str] = None


# -- point evaluation -------------------------------------------------------------

def _at_point(s: Scenario, value):
    p, h, n_enbs = s.params, s.hops, s.n_enbs
    if s.sweep in ("T_q", "L_wl", "S_d"):
        p = p.with_(**{s.sweep: float(value)})
    elif s.sweep == "n_enbs":
        n_enbs = int(value)
    else:
        h = h.with_(**{s.sweep: int(value)})
    return p, h, n_enbs


def _world(s: Scenario, arch, p, h, n_bs=2):
    return make_world(arch, p, h, s.opts, s.mode, n_bs=n_bs, fidelity=s.fidelity,
                      outer_header=s.outer_header)


def _sim_handover(s: Scenario, arch, kind, p, h) -> float:
    w = _world(s, arch, p, h)
    attach_all(w)
    return run_procedure(w, kind).final_latency_ms


UPLINK_4G_STEPS = (
    Step(Msg.DataPacket, "ue", "bs", WL, "1", "S_d", effect="bs_uplink"),
    Step(Msg.DataPacket, "bs", "sgw", "alpha", "2", "S_d"),
    Step(Msg.DataPacket, "sgw", "pgw", "beta", "3", "S_d"),
    Step(Msg.DataPacket, "pgw", "host", EXT, "4", "S_d"),
)


def _sim_attach_data(s: Scenario, arch, p, h) -> float:
    """Attach, then one uplink packet to the Internet host, timed from the first message."""
    w = _world(s, arch, p, h)
    start = w.sim.now
    ue = w.topology.ues[0]
    if w.arch is Arch.ICNA:
        run_procedure(w, ProcedureKind.ATTACH_ICNA, ue)
        tr = run_procedure(w, ProcedureKind.DATA_MH_IH, ue)
    else:
        run_procedure(w, ProcedureKind.ATTACH_4G, ue)
        run = _Run(w, "DATA_UPLINK_4G", UPLINK_4G_STEPS,
                   _roles(w, ProcedureKind.ATTACH_4G, ue, None, None), "figure")
        run.start()
        w.sim.run()
        tr = run.transcript
    return to_ms(tr.entries[-1].at - start)


def _sim_chain(s: Scenario, arch, p, h, n_enbs) -> float:
    """Cumulative delay of a UE handing over along BS0 -> BS1 -> ... -> BS(n-1)."""
    w = _world(s, arch, p, h, n_bs=n_enbs)
    ue = w.topology.ues[0]
    kind = ProcedureKind.ATTACH_4G if w.arch is Arch.EPC_4G else ProcedureKind.ATTACH_ICNA
    run_procedure(w, kind, ue)
    ho = ProcedureKind.X2_HO_4G if w.arch is Arch.EPC_4G else ProcedureKind.INTER_GW_HO_ICNA
    interval = to_ticks(s.handover_interval_ms)
    t0 = w.sim.now
    total = 0
    for i in range(1, n_enbs):
        trigger = max(w.sim.now, t0 + i * interval)
        w.sim.run_until(to_ms(trigger))
        tr = run_procedure(w, ho, ue, target=w.topology.base_stations[i])
        total += tr.final_latency_ticks
    return to_ms(total)


def evaluate_point(s: Scenario, value) -> ResultRow:
    row = ResultRow(value, s.metric)
    try:
        p, h, n_enbs = _at_point(s, value)
        m = s.metric
        if m == "dto":
            size = int(round(p.S_d))
            row.gtp = codecs.tunneling_overhead_percent(Scheme.GTP_4G, size)
            row.ipinip = codecs.tunneling_overhead_percent(Scheme.IPINIP_ICNA, size, s.outer_header)
            row.gre = codecs.tunneling_overhead_percent(Scheme.GRE_HANDOVER, size)
        elif m == "ttd":
            row.value_4g = ttd_4g(p, h, s.opts).total_ms
            row.value_icna = ttd_icna(p, h, s.opts).total_ms
            if s.simulate:
                row.sim_4g = run_ttd_scenario(_world(s, Arch.EPC_4G, p, h)).final_latency_ms
                row.sim_icna = run_ttd_scenario(_world(s, Arch.ICNA, p, h)).final_latency_ms
        elif m in ("handover_x2", "handover_s1"):
            k4, ki = ((HandoverKind.X2_4G, HandoverKind.INTER_GW_ICNA) if m == "handover_x2"
                      else (HandoverKind.S1_4G, HandoverKind.INTRA_GW_ICNA))
            row.value_4g = handover_delay(k4, p, h, s.opts).total_ms
            row.value_icna = handover_delay(ki, p, h, s.opts).total_ms
            if s.simulate:
                p4, pi = ((ProcedureKind.X2_HO_4G, ProcedureKind.INTER_GW_HO_ICNA) if m == "handover_x2"
                          else (ProcedureKind.S1_HO_4G, ProcedureKind.INTRA_GW_HO_ICNA))
                row.sim_4g = _sim_handover(s, Arch.EPC_4G, p4, p, h)
                row.sim_icna = _sim_handover(s, Arch.ICNA, pi, p, h)
        elif m == "attach_data":
            row.value_4g = _sim_attach_data(s, Arch.EPC_4G, p, h)
            row.value_icna = _sim_attach_data(s, Arch.ICNA, p, h)
        else:
            if n_enbs < 1:
                raise ConfigError("n_enbs must be >= 1")
            n_ho = n_enbs - 1
            x2 = handover_delay(HandoverKind.X2_4G, p, h, s.opts).total_ms
            ig = handover_delay(HandoverKind.INTER_GW_ICNA, p, h, s.opts).total_ms
            c4 = _sim_chain(s, Arch.EPC_4G, p, h, n_enbs)
            ci = _sim_chain(s, Arch.ICNA, p, h, n_enbs)
            if m == "handover_chain_mean":
                scale = 1 if n_ho else 0
                c4, ci = (c4 / n_ho, ci / n_ho) if n_ho else (0.0, 0.0)
            else:
                scale = n_ho
            row.value_4g, row.value_icna = x2 * scale, ig * scale
            row.sim_4g, row.sim_icna = c4, ci
    except (TopologyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        row = ResultRow(value, s.metric, error=f"{type(exc).__name__}: {exc}")
    if s.arch != "both":
        drop = "icna" if Arch.parse(s.arch) is Arch.EPC_4G else "4g"
        setattr(row, f"value_{drop}", None)
        setattr(row, f"sim_{drop}", None)
    return row


def _eval(args):
    return evaluate_point(*args)


def run_sweep(s: Scenario) -> List[ResultRow]:
    pts = s.points()
    if s.jobs > 1 and len(pts) > 1:
        with ProcessPoolExecutor(max_workers=s.jobs) as ex:
            rows = list(ex.map(_eval, [(s, v) for v in pts]))
    else:
        rows = [evaluate_point(s, v) for v in pts]
    return sorted(rows, key=lambda r: r.sweep_value)


# -- CSV -------------------------------------------------------------------------

def _columns(rows: Sequence[ResultRow]) -> List[str]:
    if rows[0].metric == "dto":
        cols = ["sweep_value", "metric", "gtp", "ipinip", "gre"]
    else:
        cols = ["sweep_value", "metric", "value_4g", "value_icna"]
        if any(r.sim_4g is not None or r.sim_icna is not None for r in rows):
            cols += ["sim_4g", "sim_icna"]
    if any(r.error for r in rows):
        cols.append("error")
    return cols


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return f"{v:.6f}"


def format_csv(rows: Sequence[ResultRow]) -> str:
    if not rows:
        raise ValueError("no rows to write")
    cols = _columns(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in sorted(rows, key=lambda r: r.sweep_value):
        w.writerow([_fmt(getattr(r, c)) for c in cols])
    return buf.getvalue()


def emit_csv(rows: Sequence[ResultRow], path) -> None:
    text = format_csv(rows)
    with open(path, "w", newline="") as fh:
        fh.write(text)


# -- config files -------------------------------------------------------------------

def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def scenario_from_mapping(name: str, cfg: Dict[str, str]) -> Scenario:
    cfg = {k.strip(): v.strip() for k, v in cfg.items()}
    params, hops, opts, kw = {}, {}, {}, {}
    mode = cfg.pop("mode", "expected")
    seed = int(cfg.pop("seed", "0"))
    for key, val in cfg.items():
        if key in _PARAM_KEYS:
            params[key] = float(val)
        elif key in _HOP_KEYS:
            hops[key] = int(val)
        elif key in _OPT_KEYS:
            opts[key] = val
        elif key in ("from", "start"):
            kw["start"] = float(val)
        elif key in ("to", "stop"):
            kw["stop"] = float(val)
        elif key == "step":
            kw["step"] = float(val)
        elif key in ("ue_speed_kmh", "cell_distance_m"):
            kw[key] = float(val)
        elif key in ("n_enbs", "jobs"):
            kw[key] = int(val)
        elif key == "simulate":
            kw[key] = _bool(val)
        elif key in ("metric", "sweep", "arch", "fidelity", "outer_header", "out"):
            kw[key] = val
        else:
            raise ConfigError(f"[{name}] unknown key {key!r}")
    try:
        return Scenario(name=name, params=DEFAULT_PARAMS.with_(**params),
                        hops=DEFAULT_HOPS.with_(**hops), opts=ModelOptions(**opts),
                        mode=WirelessMode(WireMode(mode), seed), **kw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def load_scenarios(path) -> List[Scenario]:
    """Read ``key = value`` sections, one scenario per section."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep S_d, L_wl case
    with open(path) as fh:
        cp.read_file(fh)
    out = []
    for section in cp.sections():
        out.append(scenario_from_mapping(section, dict(cp[section])))
    if not out:
        raise ConfigError(f"{path}: no scenario sections")
    return out
