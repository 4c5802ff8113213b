"""Command-line entry point: ``mrppsel <command> ...``.

Commands read a CSV with one group column and numeric variables, and
write JSON or CSV. With ``--out`` the result goes to a file and a
``<out>.manifest.json`` sidecar records the run; results never contain
timings so reruns with the same seed are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataError, load_csv, standardize
from .dist import euclidean
from .energy import disco_test, energy_test
from .importance import (
    BandwidthRule,
    ImportanceVector,
    Measure,
    PermutationState,
    grad_p_values,
    select_bandwidth,
    tau,
)
from .modsel import modified_mrpp, parse_r0_rule
from .mrpp import mrpp_test
from .perm import build_plan
from .select import average_ranks, backward_select, important_by_sign
from .sim import ConfigError, load_sim_config, results_csv, results_json, run_size_power, size_table


class CliError(Exception):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def run_manifest(args, wall_clock: float, inputs) -> dict:
    config = {k: v for k, v in vars(args).items() if k not in ("func",)}
    return {
        "command": args.command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "input_sha256": {str(p): file_digest(p) for p in inputs},
        "wall_clock_seconds": wall_clock,
    }


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _load(args):
    sample = load_csv(args.input, args.group_col)
    if getattr(args, "standardize", False):
        sample = standardize(sample)
    return sample


# commands return (text to emit, extra stdout text or None)

def cmd_test(args):
    sample = _load(args)
    plan = build_plan(sample.labels, args.permutations, args.seed)
    d = euclidean(sample)
    if args.method == "mrpp":
        res = mrpp_test(d, plan, args.weights)
        stat, p = res.z0, res.p_value
    elif args.method == "disco":
        res = disco_test(d, plan)
        stat, p = res.statistic, res.p_value
    else:
        if sample.K != 2:
            raise CliError(f"energy test needs exactly 2 groups, found {sample.K}")
        res = energy_test(d, plan)
        stat, p = res.statistic, res.p_value
    out = {
        "method": args.method, "statistic": _num(stat), "p_value": p,
        "permutations": plan.B, "plan": plan.mode, "seed": args.seed,
        "weights": args.weights if args.method == "mrpp" else None,
        "standardized": bool(args.standardize),
    }
    return _dumps(out), None


def _num(x):
    x = float(x)
    return x if np.isfinite(x) else None


def _parse_bandwidth(text):
    if text.startswith("fixed:"):
        try:
            h = float(text[6:])
        except ValueError:
            raise CliError(f"bad bandwidth {text!r}") from None
        if not h > 0:
            raise CliError("bandwidth h must be positive")
        return h
    if text.startswith("auto-"):
        try:
            return BandwidthRule(text[5:])
        except ValueError:
            pass
    raise CliError(f"bad bandwidth {text!r}; use auto-sse-both, auto-curvature or fixed:<h>")


def cmd_importance(args):
    sample = _load(args)
    measure = Measure(args.measure)
    d = euclidean(sample)
    if measure is Measure.TAU:
        if args.bandwidth is not None:
            print("warning: tau needs no bandwidth; --bandwidth ignored", file=sys.stderr)
        vec = tau(d, sample.labels, args.weights)
    else:
        plan = build_plan(sample.labels, args.permutations, args.seed)
        state = PermutationState(d, plan, args.weights)
        if measure is Measure.GRAD_P:
            vec = grad_p_values(d, plan, state=state)
        else:
            bw = _parse_bandwidth(args.bandwidth or "auto-sse-both")
            h = bw if isinstance(bw, float) else select_bandwidth(d, plan, rule=bw, state=state).h
            args.resolved_h = h
            if measure is Measure.IOTA:
                vals = state.iota(h)
            else:
                back, fwd, cen = state.finite_diffs(h)
                vals = {Measure.BACKWARD: back, Measure.FORWARD: fwd, Measure.CENTRAL: cen}[measure]
            vec = ImportanceVector(measure, vals, state.variables)
    # ascending by value; constant columns carry no information and go last
    cols = sample.values[:, list(vec.variables)]
    constant = np.ptp(cols, axis=0) == 0
    order = np.lexsort((np.arange(len(vec.values)), vec.values, constant))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variable", "value", "rank"])
    for rank, i in enumerate(order, start=1):
        w.writerow([sample.variable_names[vec.variables[i]], repr(float(vec.values[i])), rank])
    return buf.getvalue(), None


def cmd_select(args):
    sample = _load(args)
    trace = backward_select(sample, args.weights, alpha=args.alpha,
                            checkpoint=args.checkpoint == "on",
                            budget=args.permutations, seed=args.seed,
                            min_selected=args.min_selected)
    data = trace.to_dict()
    avg = average_ranks(trace)
    names = sample.variable_names
    sign_set = important_by_sign(trace, args.delta)
    data["summary"] = {
        "selected": [names[r] for r in trace.selected],
        "important_by_sign": [names[r] for r in sign_set],
        "delta": args.delta,
        "average_ranks": [float(a) for a in avg],
    }
    lines = [
        f"L = {trace.L} ({trace.stop_reason.value})",
        f"S(L) [{len(trace.selected)}]: " + " ".join(names[r] for r in trace.selected),
        f"sign-based (delta={args.delta:g}) [{len(sign_set)}]: "
        + " ".join(names[r] for r in sign_set),
        "top average ranks:",
    ]
    for r in np.argsort(avg, kind="stable")[:20]:
        lines.append(f"  {names[r]:<16} {avg[r]:.3f}")
    if args.checkpoint == "on":
        lines.append("iteration  p(selected)  p(deleted+candidate)")
        for it in trace.iterations:
            if it.checkpoint_p is not None:
                lines.append(f"  {it.ell:>7}  {it.selected_p:11.4f}  {it.checkpoint_p:20.4f}")
    return _dumps(data), "\n".join(lines) + "\n"


def cmd_modified_test(args):
    sample = load_csv(args.input, args.group_col)
    try:
        rule = parse_r0_rule(args.r0)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = modified_mrpp(sample, rule, args.weights, args.permutations, args.seed,
                            n_jobs=args.threads)
    out = res.to_dict()
    out["selected_names_observed"] = [sample.variable_names[r] for r in res.selected_vars_observed]
    return _dumps(out), None


def cmd_simulate(args):
    try:
        configs = load_sim_config(args.config)
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}") from None
    if args.seed is not None:
        configs = [type(c)(**{**c.__dict__, "seed": args.seed}) for c in configs]
    results = [run_size_power(c, n_jobs=args.threads) for c in configs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.json").write_text(results_json(results), encoding="utf-8")
    (out / "results.csv").write_text(results_csv(results), encoding="utf-8")
    args.per_config_seconds = [r.wall_clock for r in results]
    table = size_table(results)
    summary = f"wrote {out / 'results.json'} and {out / 'results.csv'}\n"
    if table:
        summary += "empirical size at alpha:\n" + table + "\n"
    return None, summary


def _common(p, permutations=True):
    p.add_argument("input", help="CSV file with a header row")
    p.add_argument("--group-col", default="group", help="name of the group column")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")
    p.add_argument("--weights", choices=["nk", "nk-1"], default="nk",
                   help="group weights n_k/N or (n_k-1)/(N-K)")
    if permutations:
        p.add_argument("--permutations", type=int, default=1000,
                       help="labelings per test, observed included")
    p.add_argument("--out", help="write the result here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mrppsel", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="MRPP, DISCO or energy permutation test")
    _common(p)
    p.add_argument("--method", choices=["mrpp", "disco", "energy"], default="mrpp")
    p.add_argument("--standardize", action="store_true", help="pooled z-scores first")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("importance", help="per-variable importance table (CSV)")
    _common(p)
    p.add_argument("--measure", choices=[m.value for m in Measure], default="tau")
    p.add_argument("--bandwidth", default=None,
                   help="auto-sse-both (default), auto-curvature, auto-sse-central, ... or fixed:<h>")
    p.add_argument("--standardize", action="store_true")
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("select", help="backward selection trace (JSON) and summary")
    _common(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--delta", type=float, default=0.8)
    p.add_argument("--checkpoint", choices=["on", "off"], default="on")
    p.add_argument("--min-selected", type=int, default=2)
    p.add_argument("--standardize", action="store_true")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("modified-test", help="MRPP with selection inside every permutation")
    _common(p)
    p.add_argument("--r0", default="sqrt", help="sl, sign:<delta>, fixed:<k> or sqrt")
    p.set_defaults(func=cmd_modified_test)

    p = sub.add_parser("simulate", help="Monte Carlo size and power runs")
    p.add_argument("config", help="key = value file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    if getattr(args, "permutations", 2) < 2:
        print("error: --permutations must be >= 2", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    try:
        text, summary = args.func(args)
    except (CliError, DataError, ConfigError, ValueError, OSError) as exc:
        print(f"error: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    except Exception as exc:  # still one line, never a traceback
        print(f"error: {type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    wall = time.perf_counter() - t0
    if text is not None:
        _emit(text, args.out)
    if summary is not None:
        # keep stdout parseable when it already carries the result
        stream = sys.stdout if args.out is not None or text is None else sys.stderr
        stream.write(summary)
    if args.out is not None:
        inputs = [args.input] if hasattr(args, "input") else [args.config]
        target = Path(args.out) / "manifest.json" if args.command == "simulate" \
            else Path(str(args.out) + ".manifest.json")
        target.write_text(_dumps(run_manifest(args, wall, inputs)), encoding="utf-8")
    return 0


if __name__ == "__main__":
    sys.exit(main())
