"""Command-line entry point.

Exit codes
----------
simulate   : 0 success, 2 validation error, 3 numerical error
experiment : 0 all gated criteria PASS, 1 FAIL, 4 INCONCLUSIVE, 2 validation
             error or unknown experiment, 3 numerical error
report     : 0 success, 2 missing or empty run directory
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np
from scipy import fft as sfft

from .errors import NegativeSpectrum, UnresolvableMollifier, ValidationError
from .harness import EXPERIMENTS, run_experiments, write_record
from .kernel import mollifier_by_name
from .manifest import config_from_manifest, load_manifest
from .report import render_run
from .sampler import TailSynthesizer, lattice_model, mollify_field, replicate_rng, sample_layers
from .stats import FAIL, INCONCLUSIVE

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_NUMERIC, EXIT_INCONCLUSIVE = 0, 1, 2, 3, 4


def _load(args):
    doc = load_manifest(args.manifest)
    cfg = config_from_manifest(doc, seed_override=args.seed_override,
                               gate_policy=getattr(args, "gate_policy", None), threads=args.threads)
    out = args.out or doc.get("output_dir") or "run"
    return cfg, out


def _write_array(path_stem, columns, header, fmt):
    data = np.column_stack(columns)
    if fmt == "npy":
        np.save(path_stem + ".npy", data)
    else:
        np.savetxt(path_stem + ".csv", data, delimiter=",", header=header, comments="", fmt="%.17g")


def cmd_simulate(args) -> int:
    cfg, out = _load(args)
    grid = cfg.grid
    for eps in cfg.eps_list:
        if eps < 4.0 * grid.spacing:
            raise UnresolvableMollifier(f"eps={eps:g} is below 4*spacing={4 * grid.spacing:g}")
        if cfg.t_max + 1e-12 < math.log(1.0 / eps) + 4.0:
            raise ValidationError(f"t_max={cfg.t_max} is below log(1/eps)+4 for eps={eps:g}")
    model = lattice_model(grid, cfg.schedule(), cfg.params)
    synth = TailSynthesizer(model) if cfg.eps_list else None
    os.makedirs(out, exist_ok=True)
    index = np.arange(grid.size)
    for r in range(cfg.simulate_replicates):
        snaps = sample_layers(model, cfg.seed, r, cfg.bridge)
        for level in sorted(snaps):
            s = snaps[level]
            stem = os.path.join(out, f"snapshot_seed{cfg.seed}_rep{r:05d}_t{level:.6g}")
            _write_array(stem, [index, s.cumulative.ravel(), s.barrier_max.ravel()],
                         "index,xbar,barrier_max", cfg.snapshot_format)
        if synth is not None:
            top = snaps[max(snaps)]
            noise = sfft.rfftn(replicate_rng(cfg.seed, r, 3).standard_normal(grid.shape))
            for eps in cfg.eps_list:
                for name in cfg.mollifiers:
                    mf = mollify_field(top, eps, synth, mollifier_by_name(name, grid.dim), noise)
                    stem = os.path.join(out, f"mollified_seed{cfg.seed}_rep{r:05d}_eps{eps:g}_{name}")
                    _write_array(stem, [index, mf.values.ravel()], "index,x_eps", cfg.snapshot_format)
    with open(os.path.join(out, "simulate_config.json"), "w") as fh:
        json.dump({k: v for k, v in cfg.to_dict().items() if k != "threads"}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {cfg.simulate_replicates} replicate(s) to {out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg, out = _load(args)
    if args.name == "all":
        names = list(cfg.experiments)
    elif args.name in EXPERIMENTS:
        names = [args.name]
    else:
        print(f"error: unknown experiment {args.name!r}; choose from {', '.join(EXPERIMENTS)} or all",
              file=sys.stderr)
        return EXIT_INVALID
    records = run_experiments(cfg, names)
    verdicts = []
    for name, rec in records.items():
        write_record(rec, out)
        print(f"== {name}: {rec.verdict}")
        for c in rec.criteria:
            print("   " + c.line())
        verdicts.append(rec.verdict)
    if FAIL in verdicts:
        return EXIT_FAIL
    if INCONCLUSIVE in verdicts:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def cmd_report(args) -> int:
    paths = render_run(args.run_dir)
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="critchaos", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--manifest", required=True, help="JSON run manifest")
        p.add_argument("--out", default=None, help="output directory (overrides the manifest)")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
        p.add_argument("--seed-override", type=int, default=None, help="replace the manifest seed")

    p = sub.add_parser("simulate", help="write field snapshots")
    common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("experiment", help="run a named experiment (or 'all')")
    p.add_argument("name")
    common(p)
    p.add_argument("--gate-policy", choices=["3se", "5se", "report-only"], default=None)
    p.set_defaults(func=cmd_experiment)
    p = sub.add_parser("report", help="render SVG plots and a markdown summary")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NegativeSpectrum, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
