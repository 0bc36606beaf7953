"""Posterior samplers against the exact Gaussian posterior on small inpainting problems.

For each problem seed: conjugate sampling (reference), DPS over a grid of
(T, zeta), and parameter MCMC followed by conditional field draws.  Reports
the relative error of the posterior mean and the mean CRPS against the truth.

    python scripts/posterior_benchmark.py --seeds 0 1 2 3 --n 500
"""
import argparse
import time

import numpy as np

from agrf.denoise import ExactGaussianDenoiser, GaussianFieldPrior
from agrf.diffusion import karras_schedule
from agrf.grf import FieldModel, build_mesh, isotropic_field
from agrf.inverse import (
    GlobalAnisotropyFamily,
    conjugate_posterior,
    guided_sample,
    mh_mcmc_parameters,
    observe,
    posterior_field_draw,
    uniform_mask,
)
from agrf.io import write_csv
from agrf.metrics import crps
from agrf.rng import make_rng, normal


def mean_crps(x, truth):
    return float(np.mean([crps(x[:, j], truth[j]) for j in range(truth.size)]))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--n-core", type=int, default=8)
    p.add_argument("--range", type=float, default=0.2)
    p.add_argument("--d-y", type=int, default=12)
    p.add_argument("--sigma-y", type=float, default=0.05)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--dps", default="300:1,1000:1,1000:0.3,1000:0.1", help="comma-separated T:zeta pairs")
    p.add_argument("--mcmc-steps", type=int, default=2000)
    p.add_argument("--out", default="posterior_benchmark.csv")
    args = p.parse_args(argv)

    mesh = build_mesh(args.n_core, 0.1)
    model = FieldModel.build(mesh, isotropic_field(mesh), args.range)
    prior = GaussianFieldPrior.from_model(model)
    chol = np.linalg.cholesky(prior.covariance)
    d = ExactGaussianDenoiser(prior)
    grid = [(int(t), float(z)) for t, z in (item.split(":") for item in args.dps.split(","))]
    family = GlobalAnisotropyFamily(mesh, degree=64)

    rows = []
    for seed in args.seeds:
        truth = chol @ normal(make_rng(seed, "truth"), prior.dim)
        op = uniform_mask(args.n_core, args.d_y, seed)
        obs = observe(op, truth, args.sigma_y, seed)
        post = conjugate_posterior(prior, op, obs)
        ref_norm = np.linalg.norm(post.mean)

        def record(method, x, elapsed):
            err = np.linalg.norm(x.mean(0) - post.mean) / ref_norm
            rows.append([seed, method, x.shape[0], err, mean_crps(x, truth), elapsed])
            print(f"seed {seed} {method:<22} mean rel err {err:.3f}  CRPS {rows[-1][4]:.4f}  [{elapsed:.1f}s]")

        t0 = time.perf_counter()
        record("conjugate", post.sample(seed + 1000, args.n), time.perf_counter() - t0)
        for steps, zeta in grid:
            t0 = time.perf_counter()
            x = guided_sample(d, karras_schedule(steps + 1), op, obs, zeta, seed, n=args.n)
            record(f"dps T={steps} zeta={zeta}", x, time.perf_counter() - t0)
        t0 = time.perf_counter()
        res = mh_mcmc_parameters(family, op, obs, args.mcmc_steps, None, seed)
        kept = res.kept_states
        x = np.stack([posterior_field_draw(family, kept[(i * len(kept)) // args.n].theta, op, obs, seed * 100_003 + i)
                      for i in range(args.n)])
        record(f"mcmc (acc {res.acceptance_rate:.2f})", x, time.perf_counter() - t0)
    write_csv(args.out, "agrf-posterior-benchmark/1", ["seed", "method", "n", "mean_rel_err", "crps", "seconds"], rows)


if __name__ == "__main__":
    main()
