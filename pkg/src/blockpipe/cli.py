"""Command-line driver: run scripts, calibrate time models, compare
schedulers, export schedules and ILP models, run desk-scale benchmarks.

Exit codes: 0 ok, 1 script parse error, 2 shape/config error, 3 engine
failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time

import numpy as np

from .coeffs import load_model
from .engine import EngineConfig, EngineError
from .matrix import ConfigError, Opcode, Precision, ShapeError
from .script import ScriptError, parse_script, run_program
from .timemodel import (TimeModel, fit, read_samples_csv, write_samples_csv)
from .trace import Session, TraceConfig

ENV_WORKERS = "BLOCKPIPE_WORKERS"


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workers", type=int,
                   default=int(os.environ.get(ENV_WORKERS, "4")))
    p.add_argument("--buffer-elems", type=int, default=None,
                   help="staging buffer capacity S in elements")
    p.add_argument("--divisor", type=int, default=None,
                   help="block dimension divisor")
    p.add_argument("--precision", choices=["single", "double"],
                   default="single")
    p.add_argument("--scheduler", choices=["heuristic", "naive", "exact"],
                   default="heuristic")
    p.add_argument("--trace-threshold", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coeffs", default=None, help="coefficients JSON file")
    p.add_argument("--overlap", choices=["on", "off"], default="off")
    p.add_argument("--exact-budget", type=float, default=None,
                   help="time budget (s) for the exact scheduler")


def _config(args) -> TraceConfig:
    cfg = TraceConfig(
        precision=Precision(args.precision),
        divisor=args.divisor,
        buffer_elems=args.buffer_elems,
        workers=args.workers,
        threshold=args.trace_threshold,
        seed=args.seed,
        scheduler=args.scheduler,
        overlap=args.overlap == "on",
        coeffs_path=args.coeffs,
        exact_budget=args.exact_budget,
        instrumented=getattr(args, "instrumented", False),
    )
    cfg.validate()
    return cfg


def _engine_config(cfg: TraceConfig) -> EngineConfig:
    return EngineConfig(workers=cfg.workers,
                        buffer_elems=cfg.resolved_buffer_elems,
                        divisor=cfg.resolved_divisor,
                        precision=cfg.precision,
                        mailbox_capacity=cfg.mailbox_capacity)


def cmd_run(args) -> int:
    with open(args.script) as fh:
        text = fh.read()
    stmts = parse_script(text)
    cfg = _config(args)
    with Session(cfg) as session:
        run_program(stmts, session, sys.stdout)
        jobs = session.pipeline.jobs
        for job in jobs:
            session.pipeline.wait(job)
        if args.schedule:
            payload = [json.loads(job.schedule.to_json(job.costed))
                       for job in jobs if job.schedule is not None]
            with open(args.schedule, "w") as fh:
                json.dump(payload, fh, indent=1)
        if args.report:
            payload = [job.report.to_json_dict() for job in jobs
                       if job.report is not None]
            with open(args.report, "w") as fh:
                json.dump(payload, fh, indent=1)
    return 0


def cmd_profile(args) -> int:
    from .profiling import profile
    cfg = _config(args)
    samples = profile(_engine_config(cfg), stride=args.stride,
                      mm_stride=args.mm_stride, reps=args.reps, seed=cfg.seed)
    write_samples_csv(args.out, samples)
    print(f"wrote {len(samples)} samples to {args.out}")
    if args.coeffs_out:
        model = fit(samples)
        with open(args.coeffs_out, "w") as fh:
            fh.write(model.to_json())
        for key in sorted(model.residuals):
            print(f"  {key}: residual {model.residuals[key]:.3e}")
        print(f"wrote coefficients to {args.coeffs_out}")
    return 0


def cmd_fit(args) -> int:
    samples = read_samples_csv(args.from_samples)
    model = fit(samples)
    with open(args.out, "w") as fh:
        fh.write(model.to_json())
    for key in sorted(model.residuals):
        print(f"  {key}: residual {model.residuals[key]:.3e}")
    print(f"wrote coefficients to {args.out}")
    return 0


def _record_script(text: str, cfg: TraceConfig):
    """Record a script's binds without forcing; returns session and its ops."""
    from .script import LiteralBind, OpBind, PrintStmt, RandBind
    from .matrix import make_matrix
    stmts = parse_script(text)
    session = Session(cfg)
    env = {}
    for stmt in stmts:
        if isinstance(stmt, LiteralBind):
            rows = stmt.rows
            mat = make_matrix(cfg.precision, len(rows), len(rows[0]),
                              cfg.resolved_divisor,
                              [v for r in rows for v in r])
            env[stmt.name] = session.constant(mat)
        elif isinstance(stmt, RandBind):
            env[stmt.name] = session.rand(stmt.n, stmt.m)
        elif isinstance(stmt, OpBind):
            env[stmt.name] = session.apply(stmt.opcode,
                                           [env[a] for a in stmt.args],
                                           stmt.scalar)
    return session


def cmd_compare(args) -> int:
    cfg = _config(args)
    with open(args.script) as fh:
        text = fh.read()
    stmts = parse_script(text)
    rows = []
    for kind in ("heuristic", "naive"):
        run_cfg = TraceConfig(**{**cfg.__dict__, "scheduler": kind})
        with Session(run_cfg) as session:
            sink = io.StringIO()
            t0 = time.perf_counter()
            run_program(stmts, session, sink)
            session.flush()
            for job in session.pipeline.jobs:
                session.pipeline.wait(job)
            jobs = session.pipeline.jobs
            sched_wall = sum((job.ts["sched_end"] - job.ts["sched_start"])
                             for job in jobs) / 1e9
            z_est = sum(job.schedule.makespan for job in jobs)
            z_meas = sum(job.report.makespan_measured_ns for job in jobs)
            rows.append({"scheduler": kind,
                         "schedule_wall_s": f"{sched_wall:.6f}",
                         "makespan_est_ns": f"{z_est:.0f}",
                         "makespan_meas_ns": f"{z_meas:.0f}"})
    exists = os.path.exists(args.csv)
    with open(args.csv, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        if not exists:
            w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(",".join(r.values()))
    return 0


def cmd_export(args) -> int:
    cfg = _config(args)
    with open(args.script) as fh:
        text = fh.read()
    session = _record_script(text, cfg)
    try:
        from .lowering import lower_graph
        from .scheduler import costed_from_lowered, heuristic_schedule
        live = list(session.live)
        ops = [(nid, session.nodes[nid].opcode, session.nodes[nid].operands,
                session.nodes[nid].scalar, session.nodes[nid].shape)
               for nid in live]
        in_trace = set(live)
        src = {}
        for (_, _, operand_ids, _, _) in ops:
            for oid in operand_ids:
                if oid not in in_trace:
                    src[oid] = session.shape_of(oid)
        lg = lower_graph(ops, src, cfg.resolved_divisor,
                         cfg.resolved_buffer_elems)
        if args.what == "lowered":
            payload = lg.to_json()
        else:
            model = load_model(cfg.coeffs_path)
            g = costed_from_lowered(lg, model)
            if args.what == "ilp":
                from .ilp import emit_ilp
                payload = emit_ilp(g, cfg.workers)
            else:  # gantt
                sched = heuristic_schedule(g, cfg.workers)
                bars = []
                labels = g.labels
                for k, stream in enumerate(sched.streams):
                    for i in stream:
                        t = sched.start[i]
                        bars.append({"worker": k, "id": labels[i],
                                     "stage": "df", "start": t,
                                     "end": t + g.df[i]})
                        bars.append({"worker": k, "id": labels[i],
                                     "stage": "ex", "start": t + g.df[i],
                                     "end": t + g.df[i] + g.ex[i]})
                        bars.append({"worker": k, "id": labels[i],
                                     "stage": "wb",
                                     "start": t + g.df[i] + g.ex[i],
                                     "end": t + g.total(i)})
                payload = json.dumps({"makespan": sched.makespan,
                                      "bars": bars}, indent=1)
        with open(args.out, "w") as fh:
            fh.write(payload)
        print(f"wrote {args.what} to {args.out}")
    finally:
        session.close()
    return 0


# benchmarks ------------------------------------------------------------------

def _skewness(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    m = x.mean()
    s = x.std()
    if s == 0:
        return 0.0
    return float(np.mean(((x - m) / s) ** 3))


def bench_deviation(args) -> int:
    """Estimated-vs-measured makespan deviation over many traces."""
    from .profiling import calibrate
    from .randprog import random_program
    precision = Precision(args.precision)
    buffer_elems = args.buffer_elems or 65536
    divisor = args.divisor or precision.default_divisor
    ecfg = EngineConfig(workers=args.workers, buffer_elems=buffer_elems,
                        divisor=divisor, precision=precision)
    if args.coeffs:
        model = load_model(args.coeffs)
    else:
        print("calibrating on this machine ...")
        _, model = calibrate(ecfg, stride=args.stride,
                             reps=args.reps, seed=args.seed)
    deviations = []
    for i in range(args.traces):
        text = random_program(args.seed + 1000 + i, n_ops=args.ops_per_trace,
                              max_dim=args.max_dim, min_dim=32,
                              matmul_weight=0.45)
        cfg = TraceConfig(precision=precision, divisor=divisor,
                          buffer_elems=buffer_elems, workers=args.workers,
                          seed=args.seed + i, scheduler="heuristic")
        with Session(cfg) as session:
            session.set_model(model)
            sink = io.StringIO()
            run_program(parse_script(text), session, sink)
            session.flush()
            for job in session.pipeline.jobs:
                session.pipeline.wait(job)
            for job in session.pipeline.jobs:
                if job.schedule is None or job.schedule.makespan <= 0:
                    continue
                z_est = job.schedule.makespan
                z_meas = job.report.makespan_measured_ns
                deviations.append((z_meas - z_est) / z_est)
    dev = np.array(deviations)
    median = float(np.median(dev))
    skew = _skewness(dev)
    print(f"traces: {len(dev)}  median deviation: {median * 100:.2f}%  "
          f"skewness: {skew:.3f}")
    if args.csv:
        counts, edges = np.histogram(dev, bins=args.bins)
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_low", "bin_high", "count"])
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([f"{lo:.4f}", f"{hi:.4f}", int(c)])
        print(f"wrote histogram to {args.csv}")
    return 0


def bench_scaling(args) -> int:
    """Measured makespan of the chain workload across worker counts."""
    from .randprog import chain_program
    text = chain_program(args.chains, args.length, dim=96)
    stmts = parse_script(text)
    results = {}
    for p in args.worker_list:
        cfg = TraceConfig(precision=Precision.SINGLE, workers=p,
                          seed=args.seed, scheduler="heuristic")
        with Session(cfg) as session:
            sink = io.StringIO()
            run_program(stmts, session, sink)
            session.flush()
            for job in session.pipeline.jobs:
                session.pipeline.wait(job)
            meas = sum(job.report.makespan_measured_ns
                       for job in session.pipeline.jobs)
        results[p] = meas
        print(f"workers={p}: measured makespan {meas / 1e6:.2f} ms")
    base = results[args.worker_list[0]]
    for p in args.worker_list[1:]:
        print(f"ratio p={p} / p={args.worker_list[0]}: {results[p] / base:.3f}")
    return 0


def bench_ratio(args) -> int:
    """Heuristic vs exact makespan on random tiny instances."""
    from .exact import exact_schedule
    from .scheduler import heuristic_schedule
    from .randgraph import random_costed_graph
    rng = np.random.default_rng(args.seed)
    ratios = []
    for i in range(args.instances):
        n = int(rng.integers(3, args.max_nodes + 1))
        p = int(rng.choice([2, 3]))
        g = random_costed_graph(rng, n)
        h = heuristic_schedule(g, p)
        ex, optimal = exact_schedule(g, p)
        assert optimal
        ratios.append(h.makespan / ex.makespan if ex.makespan else 1.0)
    r = np.array(ratios)
    print(f"instances: {len(r)}  median ratio: {np.median(r):.4f}  "
          f"optimal fraction: {np.mean(r <= 1.0 + 1e-9):.2%}  "
          f"max ratio: {r.max():.4f}")
    return 0


def bench_feasibility(args) -> int:
    """Random costed graphs: both schedulers must validate cleanly."""
    from .randgraph import random_costed_graph
    from .scheduler import (critical_path, heuristic_schedule, naive_schedule,
                            validate)
    rng = np.random.default_rng(args.seed)
    violations = 0
    for i in range(args.instances):
        n = int(rng.integers(2, args.max_nodes + 1))
        p = int(rng.integers(1, 9))
        g = random_costed_graph(rng, n)
        lb = critical_path(g)
        for sched in (heuristic_schedule(g, p), naive_schedule(g, p)):
            v = validate(sched, g)
            violations += len(v)
            if sched.makespan < lb - 1e-9:
                violations += 1
    print(f"instances: {args.instances}  violations: {violations}")
    return 0 if violations == 0 else 3


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="blockpipe", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a trace script")
    p_run.add_argument("script")
    p_run.add_argument("--report", default=None)
    p_run.add_argument("--schedule", default=None)
    _add_common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_prof = sub.add_parser("profile", help="measure stage durations")
    p_prof.add_argument("--out", required=True, help="samples CSV path")
    p_prof.add_argument("--coeffs-out", default=None)
    p_prof.add_argument("--stride", type=int, default=16)
    p_prof.add_argument("--mm-stride", type=int, default=None)
    p_prof.add_argument("--reps", type=int, default=5)
    _add_common(p_prof)
    p_prof.set_defaults(fn=cmd_profile)

    p_fit = sub.add_parser("fit", help="fit coefficients from a samples CSV")
    p_fit.add_argument("--from-samples", required=True)
    p_fit.add_argument("--out", required=True)
    p_fit.set_defaults(fn=cmd_fit)

    p_cmp = sub.add_parser("compare", help="heuristic vs naive scheduling")
    p_cmp.add_argument("script")
    p_cmp.add_argument("--csv", required=True)
    _add_common(p_cmp)
    p_cmp.set_defaults(fn=cmd_compare)

    p_exp = sub.add_parser("export", help="export ilp / gantt / lowered data")
    p_exp.add_argument("what", choices=["ilp", "gantt", "lowered"])
    p_exp.add_argument("--script", required=True)
    p_exp.add_argument("--out", required=True)
    _add_common(p_exp)
    p_exp.set_defaults(fn=cmd_export)

    p_bench = sub.add_parser("bench", help="desk-scale experiment harness")
    bsub = p_bench.add_subparsers(dest="bench", required=True)

    b_dev = bsub.add_parser("deviation")
    b_dev.add_argument("--traces", type=int, default=50)
    b_dev.add_argument("--ops-per-trace", type=int, default=10)
    b_dev.add_argument("--max-dim", type=int, default=384)
    b_dev.add_argument("--bins", type=int, default=20)
    b_dev.add_argument("--csv", default=None)
    b_dev.add_argument("--stride", type=int, default=32)
    b_dev.add_argument("--reps", type=int, default=5)
    _add_common(b_dev)
    b_dev.set_defaults(fn=bench_deviation)

    b_scal = bsub.add_parser("scaling")
    b_scal.add_argument("--chains", type=int, default=64)
    b_scal.add_argument("--length", type=int, default=6)
    b_scal.add_argument("--workers-list", dest="worker_list",
                        type=lambda s: [int(x) for x in s.split(",")],
                        default=[1, 4])
    b_scal.add_argument("--seed", type=int, default=0)
    b_scal.set_defaults(fn=bench_scaling)

    b_rat = bsub.add_parser("ratio")
    b_rat.add_argument("--instances", type=int, default=300)
    b_rat.add_argument("--max-nodes", type=int, default=8)
    b_rat.add_argument("--seed", type=int, default=0)
    b_rat.set_defaults(fn=bench_ratio)

    b_feas = bsub.add_parser("feasibility")
    b_feas.add_argument("--instances", type=int, default=1000)
    b_feas.add_argument("--max-nodes", type=int, default=200)
    b_feas.add_argument("--seed", type=int, default=0)
    b_feas.set_defaults(fn=bench_feasibility)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ScriptError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 1
    except (ShapeError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EngineError as exc:
        print(f"engine failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
