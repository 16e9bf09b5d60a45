"""Command-line experiment runner.

One subcommand per experiment plus ``compare``.  Exit codes: 0 success,
2 invalid configuration, 3 numerical gate failure (including failed
self-convergence checks).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .errors import AdlabError, ConfigInvalid, SchemaMismatch
from .experiments import (
    EXPERIMENT_NAMES,
    compare,
    run_experiment,
    self_check,
    write_outputs,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adlab",
        description="non-adiabatic transition experiments: sweeps, profiles, "
        "scattering; writes CSV tables, figures and a run manifest",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENT_NAMES:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
        p.add_argument(
            "--self-check",
            action="store_true",
            help="rerun with halved tolerances and gate on <10%% drift",
        )
        p.add_argument(
            "--no-figures", action="store_true", help="skip figure rendering"
        )
    pc = sub.add_parser("compare", help="column-wise diff of two run manifests")
    pc.add_argument("manifest_a")
    pc.add_argument("manifest_b")
    return parser


def _run_experiment_command(args) -> int:
    try:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: cannot read config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.get("experiment") != args.command:
        print(
            f"error: config is for {cfg.get('experiment')!r}, not {args.command!r}",
            file=sys.stderr,
        )
        return EXIT_CONFIG

    outdir = args.out or cfg.get("output_dir") or f"out-{args.command}"
    timings = {}
    t0 = time.time()
    try:
        result = run_experiment(cfg, threads=args.threads)
    except ConfigInvalid as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except AdlabError as e:
        print(f"numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    timings["run_seconds"] = time.time() - t0

    check = None
    if args.self_check:
        t1 = time.time()
        check = self_check(result, threads=args.threads)
        timings["self_check_seconds"] = time.time() - t1

    manifest = write_outputs(
        result,
        outdir,
        figures=not args.no_figures,
        self_check_report=check,
        timings=timings,
    )

    for name, ok in sorted(result.gates.items()):
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
    if check is not None:
        print(f"[{'PASS' if check['pass'] else 'FAIL'}] self_convergence "
              + " ".join(f"{k}={v:.2e}" for k, v in check.items() if k != "pass"))
    print(f"wrote {len(manifest['outputs'])} tables to {outdir}")

    ok = result.all_gates_pass and (check is None or check["pass"])
    return EXIT_OK if ok else EXIT_NUMERICAL


def _run_compare(args) -> int:
    try:
        report = compare(args.manifest_a, args.manifest_b)
    except SchemaMismatch as e:
        print(f"schema mismatch: {e}", file=sys.stderr)
        return EXIT_CONFIG
    for fname, diffs in sorted(report.items()):
        if not isinstance(diffs, dict):
            continue
        worst = max(diffs.values()) if diffs else 0.0
        print(f"{fname}: max column rel. diff {worst:.3e}")
        for col, v in sorted(diffs.items()):
            if v > 0:
                print(f"    {col}: {v:.3e}")
    print("identical" if report["identical"] else "runs differ")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "compare":
        return _run_compare(args)
    return _run_experiment_command(args)


if __name__ == "__main__":
    sys.exit(main())
