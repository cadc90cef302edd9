"""Command line: ``trcl verify | run | sweep``.

Exit codes: 0 success, 1 verification failure, 2 config error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness.config import ConfigError, config_to_tree, expand_grid, parse_config, read_tree
from .harness.io import export_results, summarize, write_summary
from .harness.runner import DivergenceError, run_continual
from .harness.streams import make_task_stream
from .harness.verify import Suite, run_verify

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _cmd_verify(args) -> int:
    report = run_verify(args.suite, args.seed)
    for c in report.checks:
        print(c.line())
    print(f"{sum(c.passed for c in report.checks)}/{len(report.checks)} checks passed")
    return EXIT_OK if report.passed else EXIT_VERIFY


def _run_tree(tree: dict, out: Path, tag: str, logs_by_method: dict) -> bool:
    """Run every seed of one config tree; returns False if any seed diverged."""
    stream_spec, cfg = parse_config(tree)
    stream = make_task_stream(stream_spec)
    meta = config_to_tree(stream_spec, cfg)
    ok = True
    logs = logs_by_method.setdefault(tag, {})
    for seed in cfg.seeds:
        try:
            lg = run_continual(stream, cfg, seed, stream_spec)
        except DivergenceError as exc:
            logging.error("%s seed %d diverged: %s", tag, seed, exc)
            lg, ok = exc.log, False
        logs[seed] = lg
        export_results(lg, out / f"{tag}_seed{seed}.csv", "csv", {**meta, "seed": seed})
    return ok


def _cmd_run(args) -> int:
    tree = read_tree(args.config)
    _, cfg = parse_config(tree)
    logs: dict = {}
    ok = _run_tree(tree, args.out, cfg.method.value, logs)
    write_summary(summarize(logs), args.out / "summary.json")
    return EXIT_OK if ok else EXIT_DIVERGED


def _cmd_sweep(args) -> int:
    base = read_tree(args.config)
    grid = read_tree(args.grid)
    logs: dict = {}
    ok = True
    for point, tree in expand_grid(base, grid):
        _, cfg = parse_config(tree)
        tag = cfg.method.value + "".join(f"_{k.split('.')[-1]}={v}" for k, v in sorted(point.items())
                                         if k != "run.method")
        ok &= _run_tree(tree, args.out, tag, logs)
    write_summary(summarize(logs), args.out / "summary.json")
    return EXIT_OK if ok else EXIT_DIVERGED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trcl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run the numerical oracle suites")
    v.add_argument("--suite", default=Suite.ALL.value, choices=[s.value for s in Suite])
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=_cmd_verify)

    r = sub.add_parser("run", help="run one continual-learning config over its seeds")
    r.add_argument("--config", type=Path, required=True)
    r.add_argument("--out", type=Path, default=Path("results"))
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="run a config over a grid of overrides")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--grid", type=Path, required=True)
    s.add_argument("--out", type=Path, default=Path("results"))
    s.set_defaults(func=_cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
