"""Command-line front end: exact values, raw simulations and named experiments.

Exit codes: 0 success, 1 experiment or kernel failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import analytic
from .coupling import check_realization
from .errors import DomainError
from .experiments import EXPERIMENTS, _Batch, load_config, parse_control, run_experiment
from .policies import run_b_policy, run_i_policy, sample_lis_lengths, sample_planar, threshold_count
from .processes import sample_entrance_counts, sample_exit_counts, sample_urn_counts, sample_waiting_integrals
from .rng import RngStream
from .stats import SummaryStats, mc_sample

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

EXACT = ("mean", "cdf", "variance", "bounds", "borel", "gap")
PROCESSES = ("exit", "entrance", "urn", "integrals", "policy", "lis", "coupling")


class UsageError(Exception):
    pass


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not math.isfinite(v):
            return repr(v)
        s = format(v, ".17g")
        if "e" not in s and "." not in s:
            s += ".0"
        return s
    return str(v)


def _json_value(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _emit(header: list[str], rows: list[list], fmt: str, meta: dict | None = None) -> str:
    if fmt == "json":
        obj = dict(meta or {})
        obj["rows"] = [{h: _json_value(v) for h, v in zip(header, r)} for r in rows]
        return json.dumps(obj, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _require(args, name: str):
    v = getattr(args, name)
    if v is None:
        raise UsageError(f"--{name} is required here")
    return v


# ---------------------------------------------------------------------------


def cmd_exact(args) -> tuple[int, str]:
    q = args.quantity
    if q == "borel":
        n = _require(args, "n")
        header, rows = ["j", "pmf"], [[n, analytic.borel_pmf(n)]]
    elif q == "cdf":
        n, t = _require(args, "n"), _require(args, "t")
        header, rows = ["n", "t", "p_at_least_n"], [[n, t, analytic.entrance_cdf(n, t)]]
    else:
        t = _require(args, "t")
        if q == "mean":
            ev = analytic.mean_exit_count(t)
            header, rows = ["t", "mean", "error_bound"], [[t, ev.value, ev.tail_bound]]
        elif q == "variance":
            header, rows = ["t", "variance"], [[t, analytic.exit_variance(t)]]
        elif q == "bounds":
            lo, hi = analytic.mean_bounds(t)
            header, rows = ["t", "lower", "upper"], [[t, lo, hi]]
        else:
            header, rows = ["t", "gap"], [[t, math.sqrt(2 * t) - analytic.mean_exit_count(t).value]]
    if args.format == "text":
        r = rows[0]
        return EXIT_OK, "".join(f"{h} = {_fmt(v)}\n" for h, v in zip(header, r))
    return EXIT_OK, _emit(header, rows, args.format, {"quantity": q})


def _stream(args, label: str) -> RngStream:
    return RngStream(args.seed).child(label)


def _summary_rows(named: list[tuple[str, np.ndarray]]):
    header = ["label", "n", "mean", "variance", "se", "skewness", "excess_kurtosis"]
    rows = []
    for label, x in named:
        s = SummaryStats.from_samples(x)
        rows.append([label, s.n, s.mean, s.variance, s.se, s.skewness, s.excess_kurtosis])
    return header, rows


def cmd_simulate(args) -> tuple[int, str]:
    proc = args.process
    reps = args.reps if args.reps is not None else 1
    if reps < 1:
        raise UsageError("--reps must be >= 1")
    if args.summary and reps < 2:
        raise UsageError("--summary needs --reps >= 2")
    fmt = "csv" if args.format == "text" else args.format
    rng = _stream(args, f"simulate-{proc}")
    meta = {"process": proc, "seed": args.seed, "reps": reps}

    if proc in ("exit", "entrance", "urn", "lis"):
        t = _require(args, "t")
        fn = {
            "exit": sample_exit_counts,
            "entrance": sample_entrance_counts,
            "urn": sample_urn_counts,
            "lis": sample_lis_lengths,
        }[proc]
        x = mc_sample(_Batch(fn, t), reps, rng, args.workers)
        meta["t"] = t
        if args.summary:
            header, rows = _summary_rows([(proc, x)])
        else:
            header, rows = ["replica", proc], [[i, v] for i, v in enumerate(x.tolist())]
        return EXIT_OK, _emit(header, rows, fmt, meta)

    if proc == "integrals":
        x = _require(args, "t")
        T, S = mc_sample(_Batch(sample_waiting_integrals, x), reps, rng, args.workers)
        meta["x"] = x
        if args.summary:
            header, rows = _summary_rows([("T", T), ("S", S)])
        else:
            header, rows = ["replica", "T", "S"], [[i, a, b] for i, (a, b) in enumerate(zip(T.tolist(), S.tolist()))]
        return EXIT_OK, _emit(header, rows, fmt, meta)

    t = _require(args, "t")
    control = parse_control(args.control, t)
    meta.update(t=t, control=args.control)

    if proc == "policy":
        counts = []
        traces = []
        for r in range(reps):
            sample = sample_planar(t, rng.generator(block=r))
            if control.kind == "threshold":
                counts.append(threshold_count(sample, control.theta))
                continue
            tr = run_i_policy(sample, control) if args.kind == "i" else run_b_policy(sample, control)
            counts.append(tr.count)
            traces.append((r, tr))
        if args.summary:
            header, rows = _summary_rows([("count", np.array(counts, dtype=float))])
        elif control.kind == "threshold":
            header, rows = ["replica", "count"], [[i, c] for i, c in enumerate(counts)]
        else:
            header = ["replica", "k", "time", "mark", "path"]
            rows = [
                [r, k + 1, tm, mk, pv]
                for r, tr in traces
                for k, (tm, mk, pv) in enumerate(zip(tr.times.tolist(), tr.marks.tolist(), tr.path.tolist()))
            ]
            if fmt == "json":
                meta["traces"] = [{"replica": r, **tr.as_dict()} for r, tr in traces]
                return EXIT_OK, json.dumps(meta, indent=2) + "\n"
        return EXIT_OK, _emit(header, rows, fmt, meta)

    # coupling
    if control.kind == "threshold":
        raise UsageError("the coupling needs a window control, not a threshold")
    header = ["replica", "points", "i_count", "b_count", "times_fixed", "same_atoms", "telescoping", "invertible"]
    rows = []
    failed = False
    for r in range(reps):
        sample = sample_planar(t, rng.generator(block=r))
        chk, res = check_realization(sample, control)
        failed |= not chk.ok
        rows.append([r, len(sample), res.i_trace.count, res.b_trace.count,
                     chk.times_fixed, chk.same_atoms, chk.telescoping, chk.invertible])
    if args.summary:
        header, rows = _summary_rows([("i_count", np.array([r[2] for r in rows], dtype=float))])
    return (EXIT_FAIL if failed else EXIT_OK), _emit(header, rows, fmt, meta)


def cmd_experiment(args) -> tuple[int, str]:
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    seed = args.seed_given if args.seed_given is not None else cfg.getint("general", "seed")
    overrides = {}
    for key in ("t", "n", "reps", "capacity"):
        v = getattr(args, key)
        if v is not None:
            overrides[key] = repr(v)
    names = list(EXPERIMENTS) if args.name == "all" else [args.name]
    reports = [run_experiment(n, cfg, seed, args.workers, overrides) for n in names]
    ok = all(r.passed for r in reports)
    if args.format == "csv":
        header = ["experiment", "target", "observed", "expected", "tolerance", "passed"]
        rows = [
            [r.name, t.label, t.observed, json.dumps(t.expected) if isinstance(t.expected, list) else t.expected,
             "" if t.tolerance is None else t.tolerance, t.passed]
            for r in reports
            for t in r.targets
        ]
        text = _emit(header, rows, "csv")
    elif len(reports) == 1:
        text = reports[0].to_json() + "\n"
    else:
        text = json.dumps([r.as_dict() for r in reports], indent=2) + "\n"
    return (EXIT_OK if ok else EXIT_FAIL), text


# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, default_format: str):
    p.add_argument("--t", type=float, help="time horizon (or x for integrals)")
    p.add_argument("--n", type=int, help="index or sample size")
    p.add_argument("--capacity", type=float, help="bin capacity C")
    p.add_argument("--control", default="optimal",
                   help="optimal | greedy | stationary | threshold=THETA | custom=FILE (default: optimal)")
    p.add_argument("--reps", type=int, help="number of replications")
    p.add_argument("--seed", type=int, dest="seed_given", help="master seed (default from config)")
    p.add_argument("--workers", type=int, default=1, help="worker processes (default: 1)")
    p.add_argument("--format", choices=("text", "csv", "json"), default=default_format)
    p.add_argument("--summary", action="store_true", help="print one summary row instead of every replication")
    p.add_argument("--config", help="INI file overriding the packaged experiment defaults")
    p.add_argument("--out", help="write output to this file instead of standard output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="firstpassage",
        description="Exact values, simulations and verification experiments for Poisson first-passage counts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("exact", help="evaluate an exact quantity")
    p.add_argument("quantity", choices=EXACT)
    _common(p, "text")

    p = sub.add_parser("simulate", help="draw replications of a process")
    p.add_argument("process", choices=PROCESSES)
    p.add_argument("--kind", choices=("i", "b"), default="i", help="policy run to dump (default: i)")
    _common(p, "csv")

    p = sub.add_parser("experiment", help="run a named verification experiment")
    p.add_argument("name", choices=list(EXPERIMENTS) + ["all"])
    _common(p, "json")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if args.command != "experiment":
        if args.seed_given is None:
            args.seed_given = load_config().getint("general", "seed")
        args.seed = args.seed_given
    handler = {"exact": cmd_exact, "simulate": cmd_simulate, "experiment": cmd_experiment}[args.command]
    try:
        code, text = handler(args)
    except (UsageError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every failure maps to exit code 1 with context
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
