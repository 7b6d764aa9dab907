"""Run every gated manifest, then render the reports.

    python3 scripts/run_all_experiments.py [--out runs] [--threads 4]
"""
import argparse
import os
import sys
import time

from critchaos import cli

MANIFESTS = ("acceptance_main.json", "acceptance_mollified.json", "acceptance_formula.json", "smoke_d2.json")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs")
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args()
    here = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "manifests")
    codes = {}
    for name in MANIFESTS:
        out = os.path.join(args.out, os.path.splitext(name)[0])
        t0 = time.perf_counter()
        codes[name] = cli.main(["experiment", "all", "--manifest", os.path.join(here, name), "--out", out,
                                "--threads", str(args.threads)])
        cli.main(["report", out])
        print(f"{name}: exit {codes[name]} in {time.perf_counter() - t0:.0f}s")
    return max(codes.values())


if __name__ == "__main__":
    sys.exit(main())
