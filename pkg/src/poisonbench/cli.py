"""Command-line entry point: ``poisonbench run|sweep|report`` and registry listings."""
from __future__ import annotations

import argparse
import glob
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import load_config
from .errors import BenchError, NumericError
from .experiment import append_summary, run_experiment
from .registry import algorithms, attacks, defenses


def _listing(registry) -> list[str]:
    lines = []
    for name in registry.names():
        obj = registry.lookup(name)
        params = getattr(obj, "defaults", None)
        lines.append(f"{name}  {params}" if params else name)
    return lines


def _run_one(path: str, out: str | None, seed: int | None, write_summary: bool):
    cfg = load_config(path, seed=seed)
    dest = Path(out) if out else Path(cfg.out)
    result = run_experiment(cfg, dest, write_summary=write_summary)
    return cfg, result


def cmd_run(args) -> int:
    cfg, result = _run_one(args.config, args.out, args.seed, True)
    asr = "" if result.asr is None else f" asr={result.asr:.4f}"
    print(f"{result.config_hash[:12]} acc={result.acc:.4f}{asr} -> {result.out_dir}")
    if args.plot:
        from .plotting import render_report

        render_report(result.out_dir)
    return 0


def cmd_sweep(args) -> int:
    paths = sorted(glob.glob(args.configs))
    if not paths:
        print(f"no configs match {args.configs!r}", file=sys.stderr)
        return 2
    root = Path(args.out or "runs")
    jobs = [(p, str(root / Path(p).stem), args.seed, False) for p in paths]
    status = 0
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_run_one, *job) for job in jobs]
            outcomes = []
            for p, fut in zip(paths, futures):
                try:
                    outcomes.append((p, fut.result()))
                except BenchError as exc:
                    print(f"{p}: {exc}", file=sys.stderr)
                    status = 1
    else:
        outcomes = []
        for job in jobs:
            try:
                outcomes.append((job[0], _run_one(*job)))
            except BenchError as exc:
                print(f"{job[0]}: {exc}", file=sys.stderr)
                status = 1
    for p, (cfg, result) in outcomes:
        append_summary(root / "summary.csv", result.summary_row(cfg))
        print(f"{p}: acc={result.acc:.4f}" + ("" if result.asr is None else f" asr={result.asr:.4f}"))
    return status


def cmd_report(args) -> int:
    from .plotting import render_report

    made = render_report(args.dir)
    for path in made:
        print(path)
    return 0 if made else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poisonbench", description="Federated poisoning benchmark")
    p.add_argument("--list-attacks", action="store_true")
    p.add_argument("--list-defenses", action="store_true")
    p.add_argument("--list-algorithms", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--plot", action="store_true", help="also render curves.png")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run every config matching a glob")
    s.add_argument("--configs", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    rep = sub.add_parser("report", help="render figures next to existing logs")
    rep.add_argument("dir", nargs="?", default="runs")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    listed = False
    for flag, registry in (("list_attacks", attacks), ("list_defenses", defenses),
                           ("list_algorithms", algorithms)):
        if getattr(args, flag):
            lines = registry.names() if registry is algorithms else _listing(registry)
            print("\n".join(lines))
            listed = True
    if listed:
        return 0
    if not getattr(args, "func", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except BenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
