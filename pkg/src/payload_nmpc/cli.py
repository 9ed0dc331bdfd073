"""Command line: ``payload-nmpc run | export-plots | summarize``.

Exit codes: 0 success, 2 configuration or log-format error, 3 dynamics
blowup, 4 persistent safety violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ScenarioError
from .export import LogFormatError, export_plots, load_log, save_log
from .plant import run_closed_loop
from .scenario import bundled_scenarios, load_scenario, resolve_scenario
from .summary import summarize, timing_stats

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_UNSAFE = 4


def exit_code(summary) -> int:
    if summary.completion == "blowup":
        return EXIT_BLOWUP
    if summary.completion != "completed":
        return EXIT_CONFIG
    if summary.violation_class == "persistent":
        return EXIT_UNSAFE
    return EXIT_OK


def write_summary(summary, timing: dict | None, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(summary.to_json())
    (out / "summary.txt").write_text(summary.text())
    if timing is not None:
        (out / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")


def _progress(total: int):
    step = max(1, total // 20)

    def on_tick(k, t, x, res):
        if (k + 1) % step == 0:
            print(f"  t={t:6.2f}s  iters={res.iterations}  {res.status}  {res.solve_time_ms:6.1f} ms", file=sys.stderr)

    return on_tick


def cmd_run(args) -> int:
    try:
        spec = load_scenario(resolve_scenario(args.scenario))
        measurement = None
        if args.exact_measure:
            measurement = "exact"
        elif args.reconstruct_payload:
            measurement = "reconstruct"
        spec = spec.with_overrides(seed=args.seed, horizon=args.horizon, dt_s=args.dt, duration_s=args.duration,
                                   measurement=measurement, safety=False if args.no_safety else None)
    except (ScenarioError, TypeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else Path("runs") / spec.name
    n_ticks = int(round(spec.duration_s / spec.dt_s))
    log = run_closed_loop(spec, on_tick=None if args.quiet else _progress(n_ticks))
    save_log(log, out)
    summary = summarize(log)
    t = timing_stats(log)
    write_summary(summary, t, out)
    sys.stdout.write(summary.text())
    if t["n"]:
        print(f"solve time: mean {t['mean_ms']:.2f} ms, std {t['std_ms']:.2f} ms over {t['n']} solves")
    print(f"wrote {out}")
    return exit_code(summary)


def cmd_export(args) -> int:
    try:
        log = load_log(args.log)
    except LogFormatError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    run_dir = Path(args.log).parent if Path(args.log).is_file() else Path(args.log)
    out = Path(args.out) if args.out else run_dir / "plots"
    for p in export_plots(log, out):
        print(p)
    return EXIT_OK


def cmd_summarize(args) -> int:
    try:
        log = load_log(args.log)
    except LogFormatError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    summary = summarize(log)
    if args.out:
        write_summary(summary, timing_stats(log), Path(args.out))
    sys.stdout.write(summary.to_json() if args.json else summary.text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="payload-nmpc", description="Safety-critical NMPC for two-robot payload transport.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario in closed loop",
                       epilog="bundled scenarios: " + ", ".join(bundled_scenarios()))
    r.add_argument("scenario", help="scenario file or bundled scenario name")
    r.add_argument("--out", help="output directory (default runs/<name>)")
    r.add_argument("--seed", type=int)
    r.add_argument("--horizon", type=int)
    r.add_argument("--dt", type=float, help="control period in seconds")
    r.add_argument("--duration", type=float, help="override the run length in seconds")
    m = r.add_mutually_exclusive_group()
    m.add_argument("--exact-measure", action="store_true", help="feed the exact plant state back")
    m.add_argument("--reconstruct-payload", action="store_true",
                   help="rebuild the payload state from the two robot states")
    r.add_argument("--no-safety", action="store_true", help="drop the barrier rows (ablation)")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("export-plots", help="write figure data tables from a stored log")
    e.add_argument("log", help="log.npz or the run directory")
    e.add_argument("--out")
    e.set_defaults(func=cmd_export)

    s = sub.add_parser("summarize", help="recompute the summary of a stored log")
    s.add_argument("log", help="log.npz or the run directory")
    s.add_argument("--out", help="also write summary files here")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_summarize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
