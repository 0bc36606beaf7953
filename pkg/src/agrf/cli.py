"""Command-line driver: ``agrf <command> [options]``.

Every command writes ``config.ini`` (the resolved configuration, including the
seed) and an append-only ``manifest.txt`` into ``--out``.  All randomness is
derived from the base seed and a per-command key, so re-running a command with
the same inputs reproduces the numeric files byte for byte.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ExperimentConfig, build_model, draw_hyperparameters, load_config
from .denoise import (
    ExactGaussianDenoiser,
    GaussianFieldPrior,
    MixtureDenoiser,
    MixturePrior,
    mse_slope,
    optimal_mse,
    power_law_sigmas,
)
from .diffusion import SAMPLERS, NoiseSchedule, karras_schedule
from .grf import derive_seed, sample_prior, sample_prior_batch
from .inverse import (
    AtomFamily,
    GlobalAnisotropyFamily,
    MeasurementOperator,
    Observation,
    clustered_mask,
    conjugate_posterior,
    guided_sample,
    mh_mcmc_parameters,
    mixture_posterior_sample,
    observe,
    posterior_field_draw,
    uniform_mask,
)
from .metrics import crps, energy_score, max_sliced_wasserstein
from .rng import make_rng

log = logging.getLogger("agrf")

SAMPLE_METHODS = ("prior", "ddpm", "ddim", "heun")
SOLVE_METHODS = ("conjugate", "mixture-oracle", "dps", "mcmc")
METRIC_KINDS = ("maxsw", "crps", "es", "mse-curve")


class UsageError(Exception):
    pass


def command_seed(base: int, command: str, index: int = 0) -> int:
    """Subseed for ``(command, index)`` under the base seed."""
    return int(make_rng(base, command, index).integers(0, 2**62))


def _apply_threads(n: int | None) -> None:
    if not n:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    threadpool_limits(n)


def _prepare_out(cfg: ExperimentConfig, out) -> tuple[Path, io.Manifest]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.ini")
    man_path = out / "manifest.txt"
    if man_path.exists():
        man_path.unlink()
    return out, io.Manifest(man_path)


def _schedule(cfg: ExperimentConfig):
    s = cfg.schedule
    if s.sigma_min == 0.0:
        # zero floor: same interpolation with the bottom level pinned at 0 (DDPM only)
        u = np.linspace(0.0, 1.0, s.steps + 1)
        return NoiseSchedule((u * s.sigma_max ** (1.0 / s.rho)) ** s.rho, s.rho)
    return karras_schedule(s.steps + 1, s.rho, s.sigma_min, s.sigma_max)


def _mixture_ranges(cfg: ExperimentConfig) -> list[float]:
    raw = cfg.prior.mixture_ranges.strip()
    return [float(v) for v in raw.split(",")] if raw else []


def _gaussian_prior(cfg, range_a=None) -> GaussianFieldPrior:
    return GaussianFieldPrior.from_model(build_model(cfg.prior, range_a=range_a), degree=cfg.prior.degree)


def _prior_for(cfg):
    ranges = _mixture_ranges(cfg)
    if ranges:
        return MixturePrior([_gaussian_prior(cfg, a) for a in ranges], np.full(len(ranges), 1.0 / len(ranges)))
    return _gaussian_prior(cfg)


# -- commands -----------------------------------------------------------------


def cmd_gen_dataset(cfg: ExperimentConfig, count: int, out) -> Path:
    out, man = _prepare_out(cfg, out)
    per = cfg.prior.per_param
    if per < 1:
        raise UsageError("prior.per_param must be >= 1")
    man.append("command", "gen-dataset")
    man.append("count", count)
    rows, made, draw = [], 0, 0
    while made < count:
        rng = make_rng(cfg.seeds.base, "gen-dataset", draw)
        hp = draw_hyperparameters(cfg.prior, rng)
        model = build_model(cfg.prior, range_a=hp["range_a"], rho2=hp["rho_min"], angle=hp["angle"],
                            aniso_seed=hp["aniso_seed"])
        for _ in range(min(per, count - made)):
            seed = command_seed(cfg.seeds.base, "gen-dataset-field", made)
            f = sample_prior(model.ops, model.sd, model.mesh, seed, cfg.prior.degree)
            name = f"field_{made:06d}.agrf"
            io.write_fields(out / name, f.values, cfg.prior.n_core, seed)
            rows.append([made, draw, hp["range_a"], hp["rho_min"], hp["angle"], cfg.prior.nu, seed, name])
            made += 1
        draw += 1
    io.write_csv(out / "params.csv", "agrf-params/1",
                 ["index", "draw", "a", "rho_min", "angle", "nu", "seed", "file"], rows)
    man.append("parameter_draws", draw)
    man.complete()
    return out


def cmd_sample(cfg: ExperimentConfig, method: str, n: int, out) -> Path:
    if method not in SAMPLE_METHODS:
        raise UsageError(f"unknown sampling method {method!r}; choose from {SAMPLE_METHODS}")
    out, man = _prepare_out(cfg, out)
    seed = command_seed(cfg.seeds.base, "sample")
    man.append("command", "sample")
    man.append("method", method)
    if method == "prior":
        model = build_model(cfg.prior)
        x = sample_prior_batch(model.ops, model.sd, model.mesh, seed, n, cfg.prior.degree)
        seeds = [derive_seed(seed, i) for i in range(n)]
    else:
        prior = _prior_for(cfg)
        d = MixtureDenoiser(prior) if isinstance(prior, MixturePrior) else ExactGaussianDenoiser(prior)
        sched = _schedule(cfg)
        x = SAMPLERS[method](d, sched, prior.dim, seed, n=n) if n else np.empty((0, prior.dim))
        seeds = [seed] * n
        man.append("T", sched.steps)
        man.append("rho", cfg.schedule.rho)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite samples produced")
    if n:
        io.write_fields(out / "samples.agrf", x, cfg.prior.n_core, seeds)
    man.append("seed_range", f"{seed}:{n}")
    man.append("samples", "samples.agrf" if n else "")
    man.complete()
    return out


def cmd_make_problem(cfg: ExperimentConfig, out) -> Path:
    out, man = _prepare_out(cfg, out)
    base = cfg.seeds.base
    ranges = _mixture_ranges(cfg)
    range_a = None
    if ranges:
        range_a = ranges[int(make_rng(base, "problem-component").integers(0, len(ranges)))]
    model = build_model(cfg.prior, range_a=range_a)
    truth = sample_prior(model.ops, model.sd, model.mesh, command_seed(base, "problem-truth"), cfg.prior.degree).values
    p = cfg.problem
    if p.mask == "unif":
        op = uniform_mask(cfg.prior.n_core, p.d_y, command_seed(base, "problem-mask"))
    else:
        op = clustered_mask(cfg.prior.n_core, p.mean_clusters, p.radius, p.points_per_cluster,
                            command_seed(base, "problem-mask"))
    obs = observe(op, truth, p.sigma_y, command_seed(base, "problem-noise"))
    io.write_mask(out / "mask.amsk", op.rows, cfg.prior.n_core)
    io.write_array(out / "obs.agrf", obs.y, seed=base, n_core=cfg.prior.n_core)
    io.write_fields(out / "truth.agrf", truth, cfg.prior.n_core, base)
    for key, val in [("command", "make-problem"), ("config", "config.ini"), ("mask", "mask.amsk"),
                     ("observation", "obs.agrf"), ("truth", "truth.agrf"), ("sigma_y", repr(p.sigma_y)),
                     ("d_y", op.d_y)]:
        man.append(key, val)
    man.complete()
    return out


def load_problem(path):
    """``(cfg, op, obs)`` from a problem directory or its manifest file."""
    path = Path(path)
    root = path if path.is_dir() else path.parent
    entries, done = io.read_manifest(root / "manifest.txt" if path.is_dir() else path)
    if not done:
        raise UsageError(f"problem at {root} is incomplete")
    cfg = load_config(root / entries["config"])
    rows, n_core = io.read_mask(root / entries["mask"])
    op = MeasurementOperator(n_core * n_core, rows=rows)
    obs = Observation(io.read_array(root / entries["observation"]), float(entries["sigma_y"]))
    return cfg, op, obs


def cmd_solve(cfg: ExperimentConfig | None, problem, method: str, n: int, out, seed: int | None = None) -> Path:
    """Without ``cfg`` the configuration stored with the problem is used."""
    if method not in SOLVE_METHODS:
        raise UsageError(f"unknown solver {method!r}; choose from {SOLVE_METHODS}")
    pcfg, op, obs = load_problem(problem)
    cfg = cfg or pcfg
    if seed is not None:
        cfg.seeds.base = seed
    prior = _prior_for(cfg)
    if prior.dim != op.dim:
        raise UsageError(f"prior has {prior.dim} nodes but the problem has {op.dim}")
    mixture = isinstance(prior, MixturePrior)
    if method == "conjugate" and mixture:
        raise UsageError("conjugate solver needs a single Gaussian prior; use mixture-oracle")
    if method == "mixture-oracle" and not mixture:
        raise UsageError("mixture-oracle needs prior.mixture_ranges")
    out, man = _prepare_out(cfg, out)
    man.append("command", "solve")
    man.append("method", method)
    man.append("problem", Path(problem).resolve())
    seed = command_seed(cfg.seeds.base, "solve")
    x = np.empty((0, op.dim))
    if method == "conjugate" and n:
        x = conjugate_posterior(prior, op, obs).sample(seed, n)
    elif method == "mixture-oracle" and n:
        x = mixture_posterior_sample(prior, op, obs, seed, n)
    elif method == "dps":
        d = MixtureDenoiser(prior) if mixture else ExactGaussianDenoiser(prior)
        if n:
            x = guided_sample(d, _schedule(cfg), op, obs, cfg.sampler.zeta, seed, n)
        man.append("zeta", cfg.sampler.zeta)
    elif method == "mcmc":
        x = _solve_mcmc(cfg, op, obs, n, seed, out, man)
    if n:
        io.write_fields(out / "posterior.agrf", x, cfg.prior.n_core, seed)
        man.append("samples", "posterior.agrf")
    man.complete()
    return out


def _solve_mcmc(cfg, op, obs, n, seed, out, man):
    ranges = _mixture_ranges(cfg)
    pc = cfg.prior
    if ranges:
        family = AtomFamily([(a, pc.rho2, pc.angle) for a in ranges],
                            builder=lambda th: _gaussian_prior(cfg, th[0]))
        scales = (1.0, 1.0, 1.0)
    else:
        family = GlobalAnisotropyFamily(build_model(pc).mesh, pc.nu, pc.target_variance,
                                        (pc.a_min, pc.a_max), (pc.ratio_min, pc.ratio_max), degree=pc.degree)
        scales = family.default_scales(cfg.sampler.scale_fraction)
    sc = cfg.sampler
    res = mh_mcmc_parameters(family, op, obs, sc.mcmc_steps, scales, seed, burn_in=sc.burn_in, thin=sc.thin)
    kept = set(res.kept.tolist())
    rows = [[k, *s.theta, s.log_marginal, int(res.accepted[k - 1]) if k else 1, int(k in kept)]
            for k, s in enumerate(res.states)]
    io.write_csv(out / "acceptance.csv", "agrf-mcmc/1",
                 ["step", "range_a", "aniso_ratio", "angle", "log_marginal", "accepted", "kept"], rows)
    man.append("acceptance_rate", f"{res.acceptance_rate:.6f}")
    man.append("proposal_scales", ",".join(repr(float(s)) for s in scales))
    states = res.kept_states
    x = np.empty((n, op.dim))
    for i in range(n):
        theta = states[(i * len(states)) // n].theta
        x[i] = posterior_field_draw(family, theta, op, obs, derive_seed(seed, i))
    return x


def cmd_metrics(cfg: ExperimentConfig, kind: str, inputs, out_csv) -> Path:
    if kind not in METRIC_KINDS:
        raise UsageError(f"unknown metric {kind!r}; choose from {METRIC_KINDS}")
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    m = cfg.metrics
    base = command_seed(cfg.seeds.base, "metrics")
    if kind == "mse-curve":
        prior = _gaussian_prior(cfg)
        sig = np.geomspace(m.sigma_lo, m.sigma_hi, m.sigma_num)
        fit = power_law_sigmas(prior)
        slope = mse_slope(prior, fit)
        rows = [["mse", s**2, optimal_mse(prior, s), ""] for s in sig]
        rows.append(["slope", fit[0] ** 2, fit[-1] ** 2, slope])
        io.write_csv(out_csv, "agrf-mse-curve/1", ["row", "sigma2", "mse", "slope"], rows)
        return out_csv
    need = 2
    if len(inputs) != need:
        raise UsageError(f"{kind} needs exactly {need} input files")
    a, _, _ = io.read_fields(inputs[0])
    b, _, _ = io.read_fields(inputs[1])
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise UsageError("empty input ensemble")
    labels = f"{Path(inputs[0]).name}|{Path(inputs[1]).name}"
    if kind == "maxsw":
        vals = [max_sliced_wasserstein(a, b, m.n_slices, derive_seed(base, r)) for r in range(m.replicates)]
        rows = [["maxsw", v, m.n_slices, derive_seed(base, r), labels] for r, v in enumerate(vals)]
        size = m.n_slices
    else:
        truth = b[0]
        if kind == "crps":
            vals = [float(np.mean([crps(a[:, j], truth[j]) for j in range(a.shape[1])]))]
        else:
            vals = [energy_score(a, truth)]
        rows = [[kind, vals[0], a.shape[0], cfg.seeds.base, labels]]
        size = a.shape[0]
    rows.append([f"{kind}-mean", float(np.mean(vals)), size, cfg.seeds.base, labels])
    rows.append([f"{kind}-std", float(np.std(vals)), size, cfg.seeds.base, labels])
    io.write_csv(out_csv, "agrf-metric/1", ["metric", "value", "n_slices_or_m", "seed", "labels"], rows)
    return out_csv


# -- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agrf", description="Anisotropic Gaussian random field experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file; defaults apply when omitted")
    common.add_argument("--seed", type=int, help="override seeds.base")
    common.add_argument("--threads", type=int, default=None, help="BLAS threads (fallback: AGRF_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-dataset", parents=[common], help="draw fields from the hyper-prior")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--out", required=True)

    s = sub.add_parser("sample", parents=[common], help="draw fields from a fixed prior")
    s.add_argument("--method", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)

    mp = sub.add_parser("make-problem", parents=[common], help="synthesize an inverse problem")
    mp.add_argument("--out", required=True)

    so = sub.add_parser("solve", parents=[common], help="sample a posterior")
    so.add_argument("--problem", required=True)
    so.add_argument("--method", required=True)
    so.add_argument("--n", type=int, required=True)
    so.add_argument("--out", required=True)

    m = sub.add_parser("metrics", parents=[common], help="compute a metric report")
    m.add_argument("--method", dest="kind", required=True, help=f"one of {', '.join(METRIC_KINDS)}")
    m.add_argument("inputs", nargs="*")
    m.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads or (int(os.environ["AGRF_THREADS"]) if os.environ.get("AGRF_THREADS") else None)
    _apply_threads(threads)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seeds.base = args.seed
        if getattr(args, "n", 0) is not None and getattr(args, "n", 0) < 0:
            raise UsageError("--n must be non-negative")
        if args.command == "gen-dataset":
            cmd_gen_dataset(cfg, args.n, args.out)
        elif args.command == "sample":
            cmd_sample(cfg, args.method, args.n, args.out)
        elif args.command == "make-problem":
            cmd_make_problem(cfg, args.out)
        elif args.command == "solve":
            cmd_solve(cfg if args.config else None, args.problem, args.method, args.n, args.out, args.seed)
        else:
            cmd_metrics(cfg, args.kind, args.inputs, args.out)
    except UsageError as exc:
        print(f"agrf: usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"agrf: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
