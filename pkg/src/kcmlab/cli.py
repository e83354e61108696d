"""Command line entry point.

    kcmlab run CONFIG [--seed N] [--jobs K] [--out DIR]
    kcmlab classify --family fa:2:2
    kcmlab verify MANIFEST.json
    kcmlab bench [--n N] [--horizon T]

Exit code 0 only when every verdict passes.  KCMLAB_OUT sets the default
output directory.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, load_config
from .lattice import UpdateFamily, classify


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="kcmlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config (TOML or JSON)")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--jobs", type=int, default=None)
    p_run.add_argument("--out", default=None)

    p_cls = sub.add_parser("classify", help="classify an update family")
    p_cls.add_argument("--family", required=True,
                       help="family spec like fa:2:2 or corner:2, or a JSON file path")

    p_ver = sub.add_parser("verify", help="re-check exact invariants of a stored run")
    p_ver.add_argument("manifest")

    p_bench = sub.add_parser("bench", help="compare the compiled and pure-Python engines")
    p_bench.add_argument("--n", type=int, default=24)
    p_bench.add_argument("--horizon", type=float, default=30.0)

    args = parser.parse_args(argv)

    if args.command == "run":
        from .experiments import emit_summary, run_experiment

        try:
            cfg = load_config(args.config)
        except ConfigError as e:
            print(f"config error: {e}", file=sys.stderr)
            return 2
        out = args.out or cfg.out or os.environ.get("KCMLAB_OUT", ".")
        rec = run_experiment(cfg, out_dir=out, seed=args.seed, jobs=args.jobs)
        print(emit_summary([rec]))
        return 0 if rec.passed else 1

    if args.command == "classify":
        spec = args.family
        if spec.endswith(".json"):
            with open(spec) as f:
                fam = UpdateFamily.from_json(f.read())
        else:
            fam = UpdateFamily.named(spec)
        print(classify(fam).value)
        return 0

    if args.command == "verify":
        from .experiments import verify_manifest

        ok, msgs = verify_manifest(args.manifest)
        for m in msgs:
            print(m)
        print("verify: " + ("PASS" if ok else "FAIL"))
        return 0 if ok else 1

    if args.command == "bench":
        from .benchmark import run_benchmark

        print(run_benchmark(n=args.n, horizon=args.horizon))
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
