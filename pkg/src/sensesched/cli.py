"""Command-line front end.

Exit codes: 0 success, 2 invalid input (bad flags, spec parse or validation
failure), 3 infeasible even after bound relaxation, 4 simulator invariant breach.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path
from typing import Sequence

from . import presets, simulator
from .model import Constants, DagSpec, SpecError, load_spec, render_spec, validate
from .stage1 import Stage1Problem, Unsatisfiable, solve_core_allocation
from .stage2 import FractionsInfeasible, GlobalSchedule, build_global_schedule

OUT_ENV = "SENSESCHED_OUT_DIR"
EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_SIM = 0, 2, 3, 4

SWEEP_METRICS = ("rt_mean_ms", "rt_p95_ms", "rt_max_ms", "latency_mean_ms", "latency_max_ms", "samples")
_RUN_KEYS = ("seed", "duration", "warmup", "cores")


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_INVALID):
        super().__init__(msg)
        self.code = code


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _coerce(key: str, raw: str):
    types = {f.name: f.type for f in fields(Constants)}
    try:
        if key in ("seed", "cores") or types.get(key) in (int, "int"):
            return int(raw)
        return float(raw)
    except ValueError:
        raise CliError(f"--set {key}: {raw!r} is not a number") from None


def _overrides(pairs: Sequence[str]) -> dict[str, float]:
    known = {f.name for f in fields(Constants)} | set(_RUN_KEYS)
    out = {}
    for item in pairs or ():
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise CliError(f"--set expects key=value, got {item!r}")
        if key not in known:
            raise CliError(f"--set: unknown key {key!r}; choose from {', '.join(sorted(known))}")
        out[key] = _coerce(key, raw.strip())
    return out


def _apply(spec: DagSpec, ov: dict) -> DagSpec:
    consts = {k: v for k, v in ov.items() if k not in _RUN_KEYS}
    if consts:
        spec = spec.with_constants(**consts)
    if "cores" in ov:
        spec = spec.with_cores(ov["cores"])
    return spec


def _load(args) -> DagSpec:
    if args.preset:
        spec = presets.preset(args.preset)
    elif args.spec:
        try:
            spec = load_spec(args.spec)
        except OSError as exc:
            raise CliError(f"cannot read {args.spec}: {exc.strerror}") from None
    else:
        raise CliError("give --spec PATH or --preset NAME")
    ov = _overrides(getattr(args, "set", None))
    spec = _apply(spec, ov)
    if getattr(args, "cores", None):
        spec = spec.with_cores(args.cores)
    report = validate(spec)
    if not report.ok:
        raise CliError("invalid spec:\n  " + "\n  ".join(report.entries))
    args._ov = ov
    return spec


def _run_opt(args, key: str, default):
    ov = getattr(args, "_ov", {})
    if key in ov:
        return ov[key]
    v = getattr(args, key, None)
    return default if v is None else v


def _out_dir(args) -> Path:
    d = Path(args.out) if args.out else Path(os.environ.get(OUT_ENV, "sensesched_out"))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _out_file(args, default_name: str) -> Path:
    if args.out:
        p = Path(args.out)
    else:
        p = Path(os.environ.get(OUT_ENV, "sensesched_out")) / default_name
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="")


def _fmt(v: float) -> str:
    if isinstance(v, float) and math.isnan(v):
        return ""
    return f"{v:.6g}"


def solve_static(spec: DagSpec) -> GlobalSchedule:
    """Stage I + Stage II on the spec's planning costs."""
    alloc = solve_core_allocation(Stage1Problem.from_spec(spec))
    return build_global_schedule(spec, alloc)


def _sim_config(spec: DagSpec, args, seed: int, label: str = "") -> simulator.SimConfig:
    cfg = simulator.SimConfig(duration=float(_run_opt(args, "duration", 10.0)), seed=seed,
                              warmup_discard=float(_run_opt(args, "warmup", 2.0)),
                              stealing=not args.no_steal, label=label)
    if args.static:
        cfg = replace(cfg, adaptive=False, static_schedule=solve_static(spec))
    return cfg


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _schedule_summary(g: GlobalSchedule) -> list[str]:
    lines = [f"objective {g.objective:.6g}"]
    for s in g.subchain_order or sorted(g.periods):
        if s in g.plans:
            p = g.plans[s]
            lines.append(f"  {s:<16} exclusive q={p.q} b={p.b} period_ms={p.period:.4g} "
                         f"rt_ms={p.predicted_response_time:.4g}")
        elif s in g.periods:
            j = g.core_of(s)
            f = g.shared[j].fraction(s)
            lines.append(f"  {s:<16} shared core={j} fraction={f:.4g} period_ms={g.periods[s]:.4g}")
    for c, m in sorted(g.chain_metrics.items()):
        lines.append(f"  chain {c:<24} latency_ms={m.latency:.4g} rt_ms={m.response_time:.4g}")
    return lines


def _schedule_csv(g: GlobalSchedule) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subchain", "mode", "core", "fraction", "q", "period_ms", "execution_ms"])
    for s in sorted(g.periods):
        if s in g.plans:
            p = g.plans[s]
            w.writerow([s, "exclusive", " ".join(map(str, p.cores)), "", p.q, _fmt(p.period),
                        _fmt(g.execution_times[s])])
        else:
            j = g.core_of(s)
            w.writerow([s, "shared", j, _fmt(g.shared[j].fraction(s)), "", _fmt(g.periods[s]),
                        _fmt(g.execution_times[s])])
    return buf.getvalue()


def cmd_solve(args) -> int:
    spec = _load(args)
    g = solve_static(spec)
    for wmsg in g.warnings:
        print(f"warning: {wmsg}", file=sys.stderr)
    for line in _schedule_summary(g):
        print(line)
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        _write(path, _schedule_csv(g) if path.suffix == ".csv" else g.to_json() + "\n")
    return EXIT_OK


def simulate_once(spec: DagSpec, cfg: simulator.SimConfig):
    trace = simulator.run(spec, cfg)
    return trace, simulator.measure(trace, spec)


def _summary_line(metrics: simulator.EmpiricalMetrics) -> str:
    parts = []
    for c in sorted(metrics.chains):
        cs = metrics.chains[c]
        mean = sum(cs.response_time) / len(cs.response_time) if cs.response_time else math.nan
        parts.append(f"{c}.rt_mean_ms={_fmt(mean)}")
    parts.append(f"violation_total_s={_fmt(metrics.violation_seconds)}")
    return " ".join(parts)


def cmd_simulate(args) -> int:
    spec = _load(args)
    seed = int(_run_opt(args, "seed", 0))
    cfg = _sim_config(spec, args, seed, "static" if args.static else "adaptive")
    trace, metrics = simulate_once(spec, cfg)
    out = _out_dir(args)
    _write(out / "trace.csv", trace.to_csv())
    _write(out / "metrics.csv", metrics.to_csv())
    _write(out / "metrics.json", metrics.to_json() + "\n")
    print(_summary_line(metrics))
    return EXIT_OK


def _parse_axis(text: str) -> tuple[str, list[float]]:
    name, sep, vals = (text or "").partition("=")
    if not sep or not name.strip():
        raise CliError("--axis expects name=v1,v2,...")
    try:
        values = [float(v) for v in vals.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"--axis {name}: values must be numbers") from None
    if not values:
        raise CliError("--axis needs at least one value")
    return name.strip(), values


def _sweep_point(spec: DagSpec, axis: str, value: float, cfg: simulator.SimConfig,
                 base: GlobalSchedule | None) -> dict[str, dict[str, float]]:
    if axis == "period" or axis.startswith("period."):
        sc = axis.partition(".")[2] or next(iter(base.plans), "")
        if sc not in base.plans:
            raise CliError(f"period axis needs an exclusive subchain; {sc or 'none'} is not one")
        cfg = replace(cfg, adaptive=False, static_schedule=base.with_period(sc, value))
    elif axis == "cores":
        spec = spec.with_cores(int(value))
        if not cfg.adaptive:
            cfg = replace(cfg, static_schedule=solve_static(spec))
    else:
        spec = _apply(spec, {axis: _coerce(axis, repr(value))})
        if not cfg.adaptive:
            cfg = replace(cfg, static_schedule=solve_static(spec))
    _, m = simulate_once(spec, cfg)
    out = {}
    for c, cs in sorted(m.chains.items()):
        rt = simulator._agg(cs.response_time)
        lat = simulator._agg(cs.latency)
        out[c] = {"rt_mean_ms": rt["mean"], "rt_p95_ms": rt["p95"], "rt_max_ms": rt["max"],
                  "latency_mean_ms": lat["mean"], "latency_max_ms": lat["max"],
                  "samples": float(len(cs.response_time))}
    return out


def sweep(spec: DagSpec, axis: str, values: Sequence[float], cfg: simulator.SimConfig,
          jobs: int = 1) -> list[tuple[float, str, str, float]]:
    """Long-form rows (axis value, chain, metric, value) in axis order."""
    known = {f.name for f in fields(Constants)} | {"cores", "period"}
    if axis not in known and not axis.startswith("period."):
        raise CliError(f"unknown sweep axis {axis!r}")
    base = solve_static(spec) if axis.startswith("period") else None
    cfgs = [replace(cfg, seed=cfg.seed ^ i) for i in range(len(values))]
    if jobs > 1 and len(values) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_sweep_point, [spec] * len(values), [axis] * len(values), values, cfgs,
                                  [base] * len(values)))
    else:
        results = [_sweep_point(spec, axis, v, c, base) for v, c in zip(values, cfgs)]
    rows = []
    chains = [c.id for c in spec.chains]
    for v, res in zip(values, results):
        for c in chains:
            for k in SWEEP_METRICS:
                rows.append((v, c, k, res.get(c, {}).get(k, math.nan)))
    return rows


def _axis_column(axis: str) -> str:
    # constants already carry their unit in the name
    return "period_ms" if axis.startswith("period") else axis


def cmd_sweep(args) -> int:
    spec = _load(args)
    axis, values = _parse_axis(args.axis)
    seed = int(_run_opt(args, "seed", 0))
    cfg = _sim_config(spec, args, seed, "sweep")
    rows = sweep(spec, axis, values, cfg, jobs=args.jobs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([_axis_column(axis), "chain", "metric", "value"])
    for v, c, k, x in rows:
        w.writerow([_fmt(v), c, k, _fmt(x)])
    _write(_out_file(args, "sweep.csv"), buf.getvalue())
    # best point per chain by mean response time
    for c in sorted({r[1] for r in rows}):
        pts = [(x, v) for v, ch, k, x in rows if ch == c and k == "rt_mean_ms" and not math.isnan(x)]
        if pts:
            x, v = min(pts)
            print(f"{c}: min rt_mean_ms={_fmt(x)} at {axis}={_fmt(v)}")
    return EXIT_OK


def cmd_compare(args) -> int:
    spec = _load(args)
    names = [b.strip() for b in (args.baselines or "").split(",") if b.strip()]
    if len(names) < 2:
        raise CliError("--baselines needs at least two names")
    bad = [b for b in names if b not in simulator.BASELINES]
    if bad:
        raise CliError(f"unknown baseline {bad[0]!r}; choose from {', '.join(simulator.BASELINES)}")
    seed = int(_run_opt(args, "seed", 0))
    dur = float(_run_opt(args, "duration", 10.0))
    warm = float(_run_opt(args, "warmup", 2.0))
    cfgs = [simulator.baseline_config(spec, b, seed, dur, warm) for b in names]
    cmp = simulator.compare_schedules(spec, cfgs)
    path = _out_file(args, "compare.csv")
    if path.suffix == ".json":
        doc = {"labels": cmp.labels, "rows": [{k: (None if math.isnan(v) else v) for k, v in r.items()}
                                              for r in cmp.rows], "winners": cmp.winners}
        _write(path, json.dumps(doc, indent=2) + "\n")
    else:
        _write(path, cmp.to_csv())
    for key in ("violation.total_s",):
        vals = " ".join(f"{lab}={_fmt(r.get(key, math.nan))}" for lab, r in zip(cmp.labels, cmp.rows))
        print(f"{key}: {vals} winner={cmp.winners.get(key, '')}")
    return EXIT_OK


def cmd_preset(args) -> int:
    if not args.name:
        print("\n".join(presets.PRESETS))
        return EXIT_OK
    spec = presets.preset(args.name)
    if args.cores:
        spec = spec.with_cores(args.cores)
    text = render_spec(spec)
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_validate(args) -> int:
    _load(args)
    print("ok")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sensesched", description="Two-stage CPU scheduler and simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sim: bool = False):
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--spec", help="spec document (JSON)")
        src.add_argument("--preset", choices=presets.PRESETS)
        sp.add_argument("--out", help=f"output path (default: ${OUT_ENV} or ./sensesched_out)")
        sp.add_argument("--cores", type=int)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a constant, or seed/duration/warmup/cores")
        if sim:
            sp.add_argument("--seed", type=int)
            sp.add_argument("--duration", type=float, help="simulated seconds")
            sp.add_argument("--warmup", type=float, help="seconds discarded before measuring")
            mode = sp.add_mutually_exclusive_group()
            mode.add_argument("--adaptive", dest="static", action="store_false", help="re-solve online (default)")
            mode.add_argument("--static", dest="static", action="store_true", help="solve once up front")
            sp.add_argument("--no-steal", action="store_true")
            sp.set_defaults(static=False)

    common(sub.add_parser("solve", help="solve and print/write a schedule"))
    common(sub.add_parser("simulate", help="simulate and write trace + metrics"), sim=True)
    sp = sub.add_parser("sweep", help="simulate across an axis of values")
    common(sp, sim=True)
    sp.add_argument("--axis", required=True, help="name=v1,v2,... (period, period.<subchain>, cores, or a constant)")
    sp.add_argument("--jobs", type=int, default=1)
    sp = sub.add_parser("compare", help="compare baselines")
    common(sp, sim=True)
    sp.add_argument("--baselines", required=True, help=",".join(simulator.BASELINES))
    sp = sub.add_parser("preset", help="list presets or export one as a spec document")
    sp.add_argument("name", nargs="?", choices=presets.PRESETS)
    sp.add_argument("--cores", type=int)
    sp.add_argument("--out")
    common(sub.add_parser("validate", help="check a spec and report problems"))
    return p


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "sweep": cmd_sweep, "compare": cmd_compare,
            "preset": cmd_preset, "validate": cmd_validate}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (Unsatisfiable, FractionsInfeasible) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except simulator.SimulationError as exc:
        print(f"simulation invariant broken: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
