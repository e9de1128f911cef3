"""Command-line harness: ``gen``, ``run``, ``verify``, ``emit-plotdata`` and ``presets``."""
import argparse
import os
import sys

import numpy as np

from . import experiments, verify
from .errors import ConfigError, MixWeightsError


def _common(parser):
    parser.add_argument("--seed", type=int, default=None, help="base seed (replicate r uses seed + r)")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--paper-scale", action="store_true", help="use the full feature dimension (d = 1000)")
    parser.add_argument("--replicates", type=int, default=None, metavar="N", help="number of replicates")


def build_parser():
    ap = argparse.ArgumentParser(prog="mixweights", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write synthetic datasets to CSV (MNIST: export bundled IDX files)")
    p.add_argument("config", help="TOML config file or preset name")
    _common(p)

    p = sub.add_parser("run", help="run an experiment config or preset")
    p.add_argument("config", help="TOML config file or preset name")
    _common(p)

    p = sub.add_parser("verify", help="run an oracle suite")
    p.add_argument("suite", help=", ".join(verify.SUITES))
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("emit-plotdata", help="reshape trace CSVs into long-format plot data")
    p.add_argument("dir", help="directory holding trace CSVs")
    p.add_argument("figure", help="experiment name recorded in the traces")
    p.add_argument("--out", default=None, help="output CSV path")

    p = sub.add_parser("presets", help="list presets, or dump them as TOML")
    p.add_argument("--dump", action="store_true")
    return ap


def _load(args):
    cfg = experiments.resolve(args.config, full_scale=args.paper_scale)
    if args.seed is not None:
        cfg = experiments.with_seed(cfg, args.seed)
    if args.replicates is not None:
        if args.replicates < 1:
            raise ConfigError("replicates", "must be >= 1")
        cfg = experiments.with_replicates(cfg, args.replicates)
    return cfg


def _cmd_run(args):
    cfg = _load(args)
    out = args.out or cfg.out or os.path.join("runs", cfg.name)

    def progress(method, r, tr):
        print(f"  {method:24s} replicate {r}: {cfg.primary_metric} = {tr.last(cfg.primary_metric):.6g}", flush=True)

    print(f"{cfg.name}: {len(cfg.methods)} methods x {cfg.replicates} replicates -> {out}")
    result = experiments.run(cfg, out, progress=progress)
    print(f"{'method':24s} {cfg.primary_metric:>12s} {'stderr':>10s}   w_1/w_2")
    for m in cfg.methods:
        mean, se = result.summary(m, cfg.primary_metric)
        ratio = np.mean(result.values(m, "w_1") / result.values(m, "w_2")) if "w_2" in result.finals[m] else 1.0
        print(f"{m:24s} {mean:12.6g} {se:10.3g}   {ratio:.4g}")
    return 0


def _cmd_gen(args):
    cfg = _load(args)
    out = args.out or os.path.join("data", cfg.name)
    for path in experiments.generate(cfg, out):
        print(path)
    return 0


def _cmd_verify(args):
    checks = verify.run_suite(args.suite, seed=args.seed)
    for c in checks:
        print(c.line())
    ok = all(c.passed for c in checks)
    print(f"{args.suite}: {'all checks passed' if ok else 'FAILED'}")
    return 0 if ok else 1


def _cmd_plot(args):
    print(experiments.emit_plotdata(args.dir, args.figure, args.out))
    return 0


def _cmd_presets(args):
    if args.dump:
        sys.stdout.write(experiments.dump_presets())
    else:
        for name in experiments.PRESETS:
            print(name)
    return 0


COMMANDS = {"run": _cmd_run, "gen": _cmd_gen, "verify": _cmd_verify, "emit-plotdata": _cmd_plot, "presets": _cmd_presets}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MixWeightsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
