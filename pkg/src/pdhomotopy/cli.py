"""Command line entry point: ``pdhomotopy {gen,run,plotdata,verify}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace

from . import checks
from .bench import (ConfigError, ExperimentConfig, emit_plot_data, generate_instance,
                    run_experiment, write_plot_data)
from .metrics import SchemaError

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(pairs):
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        out[key] = _parse_value(value)
    return out


def _config_from_args(args):
    doc = {}
    if args.config:
        doc = ExperimentConfig.load(args.config).to_dict()
    doc.update(_overrides(args.set))
    doc.setdefault("version", 1)
    return ExperimentConfig.from_dict(doc)


def cmd_gen(args):
    cfg = ExperimentConfig(n=args.n, d=args.d, connectivity_ratio=args.ratio,
                           seed=args.seed, data_low=args.low, data_high=args.high,
                           D_mode="explicit" if args.D else "ten_sqrt_d", D=args.D)
    inst = generate_instance(cfg, args.output)
    if inst.radius_D < inst.theory_radius():
        print(f"warning: D={inst.radius_D:g} < 2n max||b_i-b_j||={inst.theory_radius():g}; "
              "error-bound guarantee not certified", file=sys.stderr)
    print(f"wrote {args.output}: n={inst.n} d={inst.d} edges={len(inst.graph.edges())}")
    return EXIT_OK


def cmd_run(args):
    cfg = _config_from_args(args)
    if args.output:
        cfg = replace(cfg, output_dir=args.output)
    result = run_experiment(cfg)
    for name, entry in result.summary["algorithms"].items():
        if "error" in entry:
            print(f"{name}: FAILED {entry['error']}")
        else:
            print(f"{name}: {entry['iterations']} iterations, final relative error "
                  f"{entry['final_relative_error']:.3e}, to-threshold "
                  f"{entry['iterations_to_threshold']}")
    return result.exit_code


def cmd_plotdata(args):
    rows = emit_plot_data(args.csv, points=args.points)
    write_plot_data(rows, args.output)
    print(f"wrote {len(rows)} rows to {args.output}")
    return EXIT_OK


def cmd_verify(args):
    results = checks.run_all(quick=args.quick)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


def build_parser():
    p = argparse.ArgumentParser(prog="pdhomotopy", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a random instance file")
    g.add_argument("-n", type=int, default=20)
    g.add_argument("-d", type=int, default=100)
    g.add_argument("--ratio", type=float, default=0.15)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--low", type=float, default=0.0)
    g.add_argument("--high", type=float, default=10.0)
    g.add_argument("--D", type=float, default=None, help="ball radius (default 10 sqrt(d))")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("-c", "--config", help="flat JSON config file")
    keys = ", ".join(f.name for f in fields(ExperimentConfig))
    r.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help=f"override a config key ({keys})")
    r.add_argument("-o", "--output", help="output directory")
    r.set_defaults(func=cmd_run)

    pd = sub.add_parser("plotdata", help="merge and thin trace CSVs")
    pd.add_argument("csv", nargs="+")
    pd.add_argument("--points", type=int, default=200)
    pd.add_argument("-o", "--output", required=True)
    pd.set_defaults(func=cmd_plotdata)

    v = sub.add_parser("verify", help="run the randomized property checks")
    v.add_argument("--quick", action="store_true", help="fewer samples")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
