"""Optimal denoising MSE against noise level, with fitted log-log slopes.

    python scripts/mse_curve.py --n-core 16 32 --ranges 0.05 0.1 0.2 0.3 --out mse_curve.csv
"""
import argparse

import numpy as np

from agrf.denoise import GaussianFieldPrior, mse_slope, optimal_mse, power_law_sigmas
from agrf.grf import FieldModel, build_mesh, isotropic_field
from agrf.io import write_csv


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--n-core", type=int, nargs="+", default=[16, 32])
    p.add_argument("--ranges", type=float, nargs="+", default=[0.05, 0.1, 0.2, 0.3])
    p.add_argument("--nu", type=float, default=2.0)
    p.add_argument("--num", type=int, default=40, help="points on the sigma grid")
    p.add_argument("--out", default="mse_curve.csv")
    args = p.parse_args(argv)

    rows = []
    print(f"{'n_core':>6} {'a':>6} {'slope':>7}   target {args.nu / (args.nu + 1):.4f}")
    for n_core in args.n_core:
        mesh = build_mesh(n_core, 0.1)
        for a in args.ranges:
            prior = GaussianFieldPrior.from_model(FieldModel.build(mesh, isotropic_field(mesh), a, args.nu))
            fit = power_law_sigmas(prior)
            slope = mse_slope(prior, fit)
            for s in np.geomspace(1e-3, 10.0, args.num):
                rows.append([n_core, a, s**2, optimal_mse(prior, s), ""])
            rows.append([n_core, a, "", "", slope])
            print(f"{n_core:>6} {a:>6.3f} {slope:>7.4f}")
    write_csv(args.out, "agrf-mse-sweep/1", ["n_core", "a", "sigma2", "mse", "slope"], rows)


if __name__ == "__main__":
    main()
