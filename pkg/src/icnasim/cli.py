"""Command-line entry point: ``icnasim analyze|simulate|codec|topology``."""
from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from . import codecs
from .delay import DEFAULT_HOPS, DEFAULT_PARAMS, ModelOptions
from .experiments import (METRICS, SWEEP_PARAMS, ConfigError, Scenario, format_csv,
                          load_scenarios, run_sweep)
from .procedures import (ProcedureError, ProcedureKind, ARCH_OF, handover_with_traffic,
                         make_world, attach_all, run_procedure, run_ttd_scenario)
from .sim import WireMode, WirelessMode
from .topology import Arch, TopologyError, build_topology

_HOP_FLAGS = ("alpha", "beta", "gamma", "delta", "epsilon", "lambda")
_PARAM_FLAGS = ("L_wl", "L_w", "q", "T_q", "S_c", "S_d", "B_wl", "B_w")


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model parameters")
    for name in _PARAM_FLAGS:
        g.add_argument(f"--{name}", type=float, default=None)
    for name in _HOP_FLAGS:
        g.add_argument(f"--{name}", type=int, default=None, dest=f"hop_{name}")
    g.add_argument("--wireless-latency", choices=("L_wl", "L_w"))
    g.add_argument("--prefactor", choices=("printed", "retransmission"))
    g.add_argument("--eq1-data-hops", choices=("epsilon", "alpha"))
    g.add_argument("--s1-signaling-hops", choices=("lam", "gamma"))


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=[m.value for m in WireMode], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--fidelity", choices=("equation", "topology"), default=None)
    p.add_argument("--out", help="output file (default: stdout)")


def _add_sweep_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", help="scenario file with key = value sections")
    p.add_argument("--section", help="run only this section of the scenario file")
    p.add_argument("--metric", choices=METRICS)
    p.add_argument("--sweep", choices=SWEEP_PARAMS)
    p.add_argument("--from", dest="start", type=float)
    p.add_argument("--to", dest="stop", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--arch", help="4g or icna (default: both)")


def _overrides(args) -> dict:
    params = {n: getattr(args, n) for n in _PARAM_FLAGS if getattr(args, n) is not None}
    hops = {n: getattr(args, f"hop_{n}") for n in _HOP_FLAGS
            if getattr(args, f"hop_{n}") is not None}
    opts = {k: getattr(args, k) for k in ("wireless_latency", "prefactor", "eq1_data_hops",
                                          "s1_signaling_hops") if getattr(args, k) is not None}
    return {"params": params, "hops": hops, "opts": opts}


def _apply(s: Scenario, args, simulate: bool) -> Scenario:
    o = _overrides(args)
    kw = {}
    for k in ("metric", "sweep", "start", "stop", "step", "jobs", "fidelity", "arch"):
        v = getattr(args, k, None)
        if v is not None:
            kw[k] = v
    if o["params"]:
        kw["params"] = s.params.with_(**o["params"])
    if o["hops"]:
        kw["hops"] = s.hops.with_(**o["hops"])
    if o["opts"]:
        kw["opts"] = replace(s.opts, **o["opts"])
    if args.mode is not None or args.seed is not None:
        kw["mode"] = WirelessMode(WireMode(args.mode or s.mode.mode),
                                  s.mode.seed if args.seed is None else args.seed)
    if simulate:
        kw["simulate"] = True
    return replace(s, **kw)


def _scenarios(args, simulate: bool) -> List[Scenario]:
    if args.scenario:
        found = load_scenarios(args.scenario)
        if args.section:
            found = [s for s in found if s.name == args.section]
            if not found:
                raise ConfigError(f"no section {args.section!r} in {args.scenario}")
    else:
        if args.metric is None or args.sweep is None:
            raise ConfigError("give --scenario or both --metric and --sweep")
        found = [Scenario(metric=args.metric, sweep=args.sweep)]
    return [_apply(s, args, simulate) for s in found]


def _sweep_output(scenarios: List[Scenario], out: Optional[str]) -> None:
    if len(scenarios) == 1:
        _write(format_csv(run_sweep(scenarios[0])), out or scenarios[0].out)
        return
    for s in scenarios:
        text = format_csv(run_sweep(s))
        if out:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / f"{s.name}.csv").write_text(text)
        elif s.out:
            Path(s.out).write_text(text)
        else:
            sys.stdout.write(f"# {s.name}\n{text}")


def cmd_analyze(args) -> int:
    _sweep_output(_scenarios(args, simulate=False), args.out)
    return 0


def _world_from_args(args, arch: Arch, n_bs: int = 2, trace: bool = False):
    o = _overrides(args)
    return make_world(arch, DEFAULT_PARAMS.with_(**o["params"]), DEFAULT_HOPS.with_(**o["hops"]),
                      ModelOptions(**o["opts"]),
                      WirelessMode(WireMode(args.mode or "expected"), args.seed or 0),
                      n_bs=n_bs, fidelity=args.fidelity or "equation", trace=trace)


def cmd_simulate(args) -> int:
    if args.procedure is None and args.traffic_rate is None:
        _sweep_output(_scenarios(args, simulate=True), args.out)
        return 0
    arch = Arch.parse(args.arch) if args.arch else None
    if args.traffic_rate is not None:
        w = _world_from_args(args, Arch.ICNA, trace=bool(args.trace))
        tr = handover_with_traffic(w, args.traffic_rate, bridging=not args.no_bridging)
        summary = (f"injected={tr.packets_injected} delivered={tr.packets_delivered} "
                   f"lost={tr.packets_lost} in_flight={tr.packets_in_flight} "
                   f"handover_ms={tr.final_latency_ms:.6f}\n")
        _write(summary, args.out)
    else:
        kind = ProcedureKind(args.procedure) if args.procedure != "TTD" else None
        if kind is not None:
            want = ARCH_OF.get(kind, Arch.ICNA)
            if arch is not None and arch is not want:
                raise ProcedureError(f"{kind.value} cannot run on a {arch.value} core")
            arch = want
        elif arch is None:
            raise ConfigError("--procedure TTD needs --arch")
        w = _world_from_args(args, arch, trace=bool(args.trace))
        if kind is None:
            tr = run_ttd_scenario(w)
        elif kind.name.startswith("ATTACH"):
            tr = run_procedure(w, kind, scope=args.scope)
        else:
            attach_all(w)
            tr = run_procedure(w, kind, scope=args.scope)
        buf = io.StringIO()
        cols = ["t_ms", "step", "name", "from", "to", "size_bytes"]
        wr = csv.DictWriter(buf, cols, lineterminator="\n")
        wr.writeheader()
        wr.writerows(tr.to_rows())
        _write(buf.getvalue(), args.out)
    if args.trace:
        Path(args.trace).write_text("".join(line + "\n" for line in w.sim.trace))
    return 0


def cmd_codec(args) -> int:
    if args.action == "dump":
        _write(codecs.format_vectors(codecs.golden_frames()), args.out)
        return 0
    text = Path(args.file).read_text() if args.file else sys.stdin.read()
    lines = []
    for scheme, raw in codecs.parse_vectors(text):
        frame = codecs.decode_vector(scheme, raw)
        d = codecs.decapsulate(frame)
        a = d.addressing
        lines.append(f"{scheme.value} src={a.src} dst={a.dst} inner_src={a.inner_src} "
                     f"inner_dst={a.inner_dst} teid={a.teid} key={a.key} "
                     f"payload={len(d.payload)}\n")
    _write("".join(lines), args.out)
    return 0


def cmd_topology(args) -> int:
    o = _overrides(args)
    t = build_topology(DEFAULT_HOPS.with_(**o["hops"]), Arch.parse(args.arch), n_bs=args.n_bs)
    _write(t.edge_list(), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="icnasim",
                                 description="Delay analysis and simulation of 4G EPC vs ICN-based cores")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="closed-form parameter sweeps to CSV")
    _add_sweep_flags(p)
    _add_run_flags(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="event-driven runs: sweeps, single procedures, traffic")
    _add_sweep_flags(p)
    _add_run_flags(p)
    _add_model_flags(p)
    p.add_argument("--procedure", choices=[k.value for k in ProcedureKind] + ["TTD"])
    p.add_argument("--scope", choices=("figure", "equation"), default="figure")
    p.add_argument("--traffic-rate", type=float, help="downlink packets per ms during handover")
    p.add_argument("--no-bridging", action="store_true")
    p.add_argument("--trace", help="write the event trace here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("codec", help="golden frame vectors")
    p.add_argument("action", choices=("dump", "decode"))
    p.add_argument("--file", help="hex vector file to decode (default: stdin)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_codec)

    p = sub.add_parser("topology", help="print the edge list of a built topology")
    p.add_argument("--arch", required=True, help="4g or icna")
    p.add_argument("--n-bs", type=int, default=2)
    p.add_argument("--out")
    _add_model_flags(p)
    p.set_defaults(func=cmd_topology)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ProcedureError, TopologyError, codecs.CodecError, ValueError) as exc:
        print(f"icnasim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
