"""Lipschitz dependence of the corrected data on the input data.

Runs the iteration for two nearby admissible data sets and reports, for a range of
separations, ||corrected(a) - corrected(b)||_S~ / ||a - b||_S~ and the same ratio for the
correction alone (corrected - data).  No threshold is asserted.
"""
import argparse

import numpy as np

from blowup_lab.cli import admissible, build_or_load, load_config, random_pair, reference_pair
from blowup_lab.conditions import weighted_norm
from blowup_lab.iteration import make_context, run_iteration
from blowup_lab.scaling import ScalingLaw


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs")
    ap.add_argument("--nu", type=float, default=1 / 3)
    ap.add_argument("--tau0", type=float, default=40.0)
    ap.add_argument("--amplitude", type=float, default=1e-2)
    ap.add_argument("--seps", type=float, nargs="+", default=[1e-1, 3e-2, 1e-2])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    table, tm, _ = build_or_load(load_config("build-table", overrides={"out": args.out}), build=True)
    law = ScalingLaw(args.nu, args.tau0, allow_large_nu=True)
    ctx = make_context(law, table, tm)
    base = reference_pair(table, args.amplitude)
    bump = random_pair(table, np.random.default_rng(args.seed), args.amplitude)
    a = admissible(table, law, base)
    ra = run_iteration(ctx, a, 2).corrected_data
    for s in args.seps:
        b = admissible(table, law, base + bump * s)
        rb = run_iteration(ctx, b, 2).corrected_data
        num = weighted_norm(table, ctx.nc, "S~", rb + ra * -1.0)
        den = weighted_norm(table, ctx.nc, "S~", b + a * -1.0)
        dc = (rb + b * -1.0) + (ra + a * -1.0) * -1.0
        corr = weighted_norm(table, ctx.nc, "S~", dc)
        print(f"separation {s:g}: corrected {num / den:.4f}, correction only {corr / den:.2e}")


if __name__ == "__main__":
    main()
