"""Command-line harness: validate configs, run single simulations and V-sweeps, report verdicts.

Exit codes: 0 ok, 1 config or CSV error, 2 invariant violation in strict
mode, 3 at least one sweep run failed, 4 a report verdict failed.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .metrics import SUMMARY_COLUMNS, CSVFormatError, all_verdicts, format_rows, read_summary
from .model import ConfigError, SweepPlan, default_config, derive_bounds, load_config, validate_config
from .queues import InvariantViolation
from .scheduler import Simulation, variant_for

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_PARTIAL, EXIT_VERDICT = 0, 1, 2, 3, 4
SUMMARY_NAME = "sweep_summary.csv"
FAILURES_NAME = "sweep_failures.csv"
TRACE_COLUMNS = ("t", "node", "session", "Q", "Qtilde", "Z", "E", "r", "D")


def _load(path):
    """Model from a config path, or the shipped default when ``path`` is None."""
    if path is None:
        return validate_config(default_config())
    return load_config(path)


def _fmt_bound(x):
    return "inf" if not np.isfinite(x) else f"{x:g}"


def bounds_table(model, V):
    """Text table of the per-(node, session) bounds at one V."""
    b = derive_bounds(model.with_params(V=float(V)))
    lines = [f"V={V:g}", "node session z_max qtilde_max q_max theta_E w_max"]
    for n, node in enumerate(model.nodes):
        for f, sess in enumerate(model.sessions):
            if not model.holds[n, f]:
                continue
            lines.append(
                f"{node.id} {sess.id} z_max={_fmt_bound(b.z_max[n, f])} "
                f"qtilde_max={_fmt_bound(b.qtilde_max[n, f])} q_max={_fmt_bound(b.q_max[n, f])} "
                f"theta_E={_fmt_bound(b.theta_E[n])} w_max={_fmt_bound(b.w_max[n, f])}"
            )
    return "\n".join(lines)


def cmd_validate(args):
    try:
        model = _load(args.config)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    caps = model.caps
    print(f"nodes={model.n_nodes} links={model.n_links} sessions={model.n_sessions}")
    print("node mu_in_max mu_out_max p_total_max")
    for n, node in enumerate(model.nodes):
        print(f"{node.id} {caps.mu_in_max[n]:g} {caps.mu_out_max[n]:g} {caps.p_total_max[n]:g}")
    for w in model.warnings:
        print(f"warning: {w}")
    grid = [args.v] if args.v is not None else list(model.sweep.v_grid if model.sweep else [model.params.V])
    if args.print_bounds:
        for V in grid:
            print(bounds_table(model, V))
    else:
        for V in grid:
            b = derive_bounds(model.with_params(V=float(V)))
            print(
                f"V={V:g} max z_max={b.z_max.max():g} max qtilde_max={b.qtilde_max.max():g} "
                f"max q_max={b.q_max.max():g} max theta_E={b.theta_E.max():g} "
                f"max w_max={_fmt_bound(b.w_max.max())}"
            )
    return EXIT_OK


def _row_key(row):
    return (float(row["V"]), int(row["seed"]), str(row["algo"]))


def merge_rows(path, new_rows):
    """Write ``new_rows`` into the summary at ``path``, replacing rows with the same key."""
    rows = {}
    if path.exists():
        for r in read_summary(path):
            rows[_row_key(r)] = r
    for r in new_rows:
        rows[_row_key(r)] = r
    path.write_text(format_rows(rows.values()))


class TraceWriter:
    """Per-slot CSV trace, one row per (node, session) the node can hold."""

    def __init__(self, fh, model):
        self.writer = csv.writer(fh, lineterminator="\n")
        self.writer.writerow(TRACE_COLUMNS)
        self.pairs = list(zip(*np.nonzero(model.holds)))
        self.node_ids = [n.id for n in model.nodes]
        self.session_ids = [s.id for s in model.sessions]

    def __call__(self, t, sim, dec):
        s = sim.state
        virt = s.Qtilde if sim.variant.name == "clca" else s.Zp
        for n, f in self.pairs:
            self.writer.writerow(
                [t, self.node_ids[n], self.session_ids[f]]
                + [repr(float(x)) for x in (s.Q[n, f], virt[n, f], s.Z[n, f], s.E[n], dec.r[n, f], dec.D[n, f])]
            )


def cmd_simulate(args):
    try:
        model = _load(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.v is not None:
        model = model.with_params(V=float(args.v))
    slots = args.slots if args.slots is not None else model.params.T
    seed = args.seed if args.seed is not None else model.params.seed
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sim = Simulation(model, seed=seed, variant=variant_for(args.algo), strict=args.strict_invariants)
    try:
        if args.trace:
            with open(out / "trace.csv", "w", newline="") as fh:
                report = sim.run(slots, trace=TraceWriter(fh, model))
        else:
            report = sim.run(slots)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    try:
        merge_rows(out / SUMMARY_NAME, [report.to_row()])
    except CSVFormatError as exc:
        print(f"error: existing summary is malformed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    row = report.to_row()
    print(" ".join(f"{k}={row[k]}" for k in SUMMARY_COLUMNS))
    if report.violation_counts:
        print("violations by kind: " + ", ".join(f"{k}={v}" for k, v in sorted(report.violation_counts.items())))
    return EXIT_OK


def _sweep_task(task):
    """Worker: one (V, seed, algo) run.  Returns ``(key, row or None, error or None)``."""
    raw, V, seed, algo, slots = task
    key = (V, seed, algo)
    try:
        model = validate_config(raw).with_params(V=float(V))
        report = Simulation(model, seed=seed, variant=variant_for(algo)).run(slots)
        return key, report.to_row(), None
    except Exception as exc:  # a failed run is reported, the sweep goes on
        return key, None, f"{type(exc).__name__}: {exc}"


def sweep_tasks(model, plan):
    raw = model.to_config()
    return [
        (raw, float(V), int(seed), algo, int(plan.slots))
        for V in plan.v_grid
        for seed in plan.seeds
        for algo in plan.algos
    ]


def run_sweep(model, plan, parallel=1):
    """Run every (V, seed, algo) of ``plan``; returns ``(rows, failures)``."""
    tasks = sweep_tasks(model, plan)
    if parallel <= 1:
        results = [_sweep_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_sweep_task, tasks))
    rows = [row for _, row, err in results if err is None]
    failures = [(key, err) for key, _, err in results if err is not None]
    return rows, sorted(failures)


def cmd_sweep(args):
    try:
        model = _load(args.config)
        plan = model.sweep
        if plan is None:
            raise ConfigError(["config has no 'sweep' section"])
        if args.slots is not None:
            plan = SweepPlan(plan.v_grid, plan.seeds, plan.algos, int(args.slots))
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, failures = run_sweep(model, plan, parallel=args.parallel)
    # single writer: all rows are written here, after the workers finish
    (out / SUMMARY_NAME).write_text(format_rows(rows))
    fail_path = out / FAILURES_NAME
    if failures:
        with open(fail_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("V", "seed", "algo", "error"))
            for (V, seed, algo), err in failures:
                w.writerow((repr(V), seed, algo, err))
        print(f"{len(failures)} of {len(rows) + len(failures)} runs failed; see {fail_path}", file=sys.stderr)
        return EXIT_PARTIAL
    if fail_path.exists():
        fail_path.unlink()
    print(f"wrote {len(rows)} rows to {out / SUMMARY_NAME}")
    return EXIT_OK


def summary_table(rows):
    """Per (algo, V) means over seeds of the headline columns."""
    groups = {}
    for r in rows:
        groups.setdefault((r["algo"], r["V"]), []).append(r)
    cols = ("phi_bar", "avg_Q", "drops_realized", "max_delay_ratio", "violations")
    lines = ["algo V seeds " + " ".join(cols)]
    for (algo, V), rs in sorted(groups.items()):
        means = [np.mean([r[c] for r in rs]) for c in cols]
        lines.append(f"{algo} {V:g} {len(rs)} " + " ".join(f"{m:.6g}" for m in means))
    return "\n".join(lines)


def cmd_report(args):
    try:
        rows = read_summary(args.summary)
    except (CSVFormatError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not rows:
        print("error: summary has no rows", file=sys.stderr)
        return EXIT_CONFIG
    print(summary_table(rows))
    verdicts = all_verdicts(rows)
    for v in verdicts:
        print(f"{v.status}: {v.name} ({v.detail})")
    return EXIT_OK if all(v.ok for v in verdicts) else EXIT_VERDICT


def build_parser():
    p = argparse.ArgumentParser(prog="clca", description=__doc__.splitlines()[0])
    p.add_argument("-q", "--quiet", action="store_true", help="silence config warnings")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a config and print derived caps and bounds")
    v.add_argument("config", nargs="?", help="config path (default: shipped scenario)")
    v.add_argument("--print-bounds", action="store_true", help="full per-(node, session) bound table")
    v.add_argument("--v", type=float, help="only this V (default: the sweep grid)")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("simulate", help="one run; merges its row into sweep_summary.csv")
    s.add_argument("config", nargs="?")
    s.add_argument("--algo", choices=("clca", "neely"), default="clca")
    s.add_argument("--v", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--slots", type=int)
    s.add_argument("--out-dir", default=".")
    s.add_argument("--strict-invariants", action="store_true", help="stop with exit 2 at the first violation")
    s.add_argument("--trace", action="store_true", help="write per-slot trace.csv")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="run the config's V x seed x algo plan")
    w.add_argument("config", nargs="?")
    w.add_argument("--out-dir", default=".")
    w.add_argument("--parallel", type=int, default=1)
    w.add_argument("--slots", type=int, help="override the plan's slot count")
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="summarize a sweep_summary.csv and print verdicts")
    r.add_argument("summary")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
