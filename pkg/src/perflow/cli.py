"""Command-line driver: gen-data, train, observe, sample, eval, check-invariants.

Configs are JSON objects parsed strictly (unknown keys are errors).  Every
command writes into ``--out`` and never records wall-clock times in its
artifacts, so identical inputs give byte-identical outputs.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import plotting
from .checkpoint import load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .flow import TrainConfig, broadcast_mask, make_condition, sample_mask, train
from .invariants import CHECK_HEADER, run_all
from .io import append_csv_row, read_csv, read_json, read_tensor, write_csv, write_json, write_tensor
from .metrics import EvalReport, evaluate
from .priors import PRIORS
from .problems import DataConfig, Problem, generate_dataset, problem_for, solver_metadata
from .sampler import SamplerConfig, reconstruct
from .seeding import child_seed

log = logging.getLogger("perflow")

RUN_KEYS = {"dataset", "train", "sampler", "seed"}
INVARIANT_KEYS = {"n_random", "steps", "seed", "check_derivative"}


class CliError(Exception):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    cfg = read_json(path)
    if not isinstance(cfg, dict):
        raise CliError(f"{path}: config must be a JSON object")
    return cfg


def _strict(d: dict, allowed: set, what: str) -> dict:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise CliError(f"unknown {what} key(s): {', '.join(unknown)}")
    return d


def _out(args) -> Path:
    if args.out is None:
        raise CliError("--out DIR is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------ gen-data


def cmd_gen_data(args) -> int:
    raw = _load_config(args.config)
    if args.kind:
        raw["kind"] = args.kind
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.n_samples is not None:
        raw["n_samples"] = args.n_samples
    if "kind" not in raw:
        raise CliError("data config needs a 'kind' (or pass --kind)")
    cfg = DataConfig.from_dict(raw)
    out = _out(args)
    t0 = time.perf_counter()
    data, residuals = generate_dataset(cfg)
    problem = problem_for(cfg)
    manifest = {
        "config": cfg.to_dict(),
        "grid": {"shape": list(cfg.sample_shape()[1:]), "boundary": "periodic" if cfg.kind in ("burgers", "navier_stokes") else "dirichlet"},
        "grf": cfg.grf_spec().to_dict(),
        "solver": solver_metadata(cfg),
        "seeds": {"master": cfg.seed, "per_sample": "child_seed(master, 'grf', index)"},
        "residuals": {"max": float(residuals.max()), "mean": float(residuals.mean())},
        "constraint": problem.phys_variant,
    }
    save_dataset(out, data, problem, manifest)
    write_csv(out / "residuals.csv", ["sample", "solver_residual"], [[i, f"{r:.6e}"] for i, r in enumerate(residuals)])
    plotting.plot_fields(problem.components, data[0], out / "sample0.png", title="sample 0")
    log.info("generated %d %s samples in %.1fs", cfg.n_samples, cfg.kind, time.perf_counter() - t0)
    print(f"wrote {cfg.n_samples} samples to {out}")
    return 0


# ------------------------------------------------------------ train


def _train_config(args, raw: dict) -> TrainConfig:
    d = dict(raw.get("train", {}))
    if args.seed is not None:
        d["seed"] = args.seed
    elif "seed" in raw:
        d.setdefault("seed", raw["seed"])
    if args.epochs is not None:
        d["epochs"] = args.epochs
    if args.no_projection:
        d["projection"] = False
    if args.prior:
        d["prior"] = args.prior
    if args.noise_level is not None:
        d["noise_level"] = args.noise_level
    return TrainConfig.from_dict(d)


def cmd_train(args) -> int:
    raw = _strict(_load_config(args.config), RUN_KEYS, "run config")
    data_dir = args.data or raw.get("dataset")
    if not data_dir:
        raise CliError("no dataset: pass --data DIR or set 'dataset' in the config")
    cfg = _train_config(args, raw)
    data, problem, _ = load_dataset(data_dir)
    out = _out(args)
    t0 = time.perf_counter()
    result = train(data, problem, cfg, on_epoch=lambda e, l, r: log.info("epoch %d loss %.6g", e, l))
    save_checkpoint(out, result, problem, {"train_config": cfg.to_dict(), "dataset": str(data_dir)})
    write_csv(out / "loss.csv", ["epoch", "loss"], [[i, f"{l:.12g}"] for i, l in enumerate(result.losses)])
    plotting.plot_losses(result.losses, out / "loss.png")
    log.info("trained %d epochs in %.1fs", cfg.epochs, time.perf_counter() - t0)
    print(f"checkpoint written to {out}")
    return 0


# ------------------------------------------------------------ observe


def cmd_observe(args) -> int:
    if not args.data:
        raise CliError("observe needs --data DIR")
    data, problem, _ = load_dataset(args.data)
    if not 0 <= args.index < len(data):
        raise CliError(f"--index {args.index} outside dataset of {len(data)} samples")
    seed = 0 if args.seed is None else args.seed
    k = args.k or problem.default_k
    x = data[args.index]
    frames = sample_mask(x.shape[-2:], k, child_seed(seed, "mask"), problem.n_frames, problem.mask_mode)
    mask = broadcast_mask(frames, problem.channel_frames)
    cond = make_condition(x, mask, args.noise_level or 0.0, child_seed(seed, "obs-noise"))
    out = _out(args)
    write_tensor(out / "y.pflw", cond.observed)
    write_tensor(out / "mask.pflw", cond.mask.astype(float))
    write_tensor(out / "truth.pflw", x)
    write_json(out / "manifest.json", {"problem": problem.to_dict(), "dataset": str(args.data), "index": args.index,
                                       "k": k, "mask_mode": problem.mask_mode, "noise_level": args.noise_level or 0.0,
                                       "seed": seed})
    print(f"wrote observations ({k} per frame) to {out}")
    return 0


# ------------------------------------------------------------ sample


def _sampler_config(args, raw: dict) -> SamplerConfig:
    d = dict(raw.get("sampler", {}))
    if args.steps is not None:
        d["steps"] = args.steps
    if args.ensemble is not None:
        d["ensemble"] = args.ensemble
    if args.no_projection:
        d["projection"] = False
    if args.prior:
        d["prior"] = args.prior
    if args.integrator:
        d["integrator"] = args.integrator
    return SamplerConfig.from_dict(d)


def cmd_sample(args) -> int:
    raw = _strict(_load_config(args.config), RUN_KEYS, "run config")
    if not args.checkpoint or not args.observations:
        raise CliError("sample needs --checkpoint DIR and --observations DIR")
    cfg = _sampler_config(args, raw)
    ckpt = load_checkpoint(args.checkpoint)
    obs = Path(args.observations)
    y = read_tensor(obs / "y.pflw")
    mask = read_tensor(obs / "mask.pflw") > 0.5
    if y.shape != tuple(ckpt.problem.sample_shape):
        raise CliError(f"observations {y.shape} do not match checkpoint problem {ckpt.problem.sample_shape}")
    seed = args.seed if args.seed is not None else raw.get("seed", 0)
    rec = reconstruct(ckpt.ema_net, y, mask, cfg, ckpt.problem.constraint_spec(), ckpt.normalizer, seed)
    out = _out(args)
    for k, s in enumerate(rec.samples):
        write_tensor(out / "samples" / f"member_{k:03d}.pflw", s)
    write_tensor(out / "mean.pflw", rec.mean)
    write_tensor(out / "std.pflw", rec.std)
    header, rows = rec.runs[0].residual_table()
    write_csv(out / "residual_trace.csv", header, [[r[0], *(f"{v:.6e}" for v in r[1:])] for r in rows])
    write_json(out / "manifest.json", {"checkpoint": str(args.checkpoint), "observations": str(obs),
                                       "sampler": cfg.to_dict(), "seed": seed,
                                       "prior_seeds": "child_seed(seed, 'prior', member)",
                                       "problem": ckpt.problem.to_dict(),
                                       "residual_max": max(r.max for r in rec.runs[0].residuals)})
    truth = read_tensor(obs / "truth.pflw") if (obs / "truth.pflw").exists() else None
    plotting.plot_reconstruction(ckpt.problem.components, rec.mean, rec.std, out / "reconstruction.png", truth, mask)
    plotting.plot_residual_trace(header, rows, out / "residual_trace.png")
    print(f"wrote {cfg.ensemble} samples to {out}")
    return 0


# ------------------------------------------------------------ eval


def cmd_eval(args) -> int:
    if not args.reconstruction or not args.truth:
        raise CliError("eval needs --reconstruction FILE and --truth FILE")
    x_hat = read_tensor(args.reconstruction)
    x = read_tensor(args.truth)
    if x_hat.shape != x.shape:
        raise CliError(f"shape mismatch: reconstruction {x_hat.shape} vs truth {x.shape}")
    kind = args.kind
    if kind is None:
        raise CliError("eval needs --kind")
    problem = Problem(kind, tuple(x.shape[-3:]))
    report = evaluate(problem, x_hat, x)
    out = _out(args)
    write_json(out / "report.json", report.to_dict())
    append_csv_row(out / "eval.csv", EvalReport.header(), report.row())
    header, rows = read_csv(out / "eval.csv")
    plotting.plot_eval_rows(header, rows, out / "eval.png")
    print(f"rel_l2={report.rel_l2:.4g} rel_l1={report.rel_l1:.4g} phys_err[{report.phys_variant}]={report.phys_err:.3e}")
    return 0


# ------------------------------------------------------------ check-invariants


def cmd_check_invariants(args) -> int:
    raw = _strict(_load_config(args.config), INVARIANT_KEYS, "invariants config")
    seed = args.seed if args.seed is not None else raw.get("seed", 0)
    steps = tuple(raw.get("steps", (1, 5, 50, 200)))
    if args.steps is not None:
        steps = (args.steps,)
    ckpt = load_checkpoint(args.checkpoint) if args.checkpoint else None
    checks = run_all(n_random=int(raw.get("n_random", 100)), seed=seed, step_counts=steps,
                     check_derivative=args.check_stencil or raw.get("check_derivative"), ckpt=ckpt)
    out = _out(args)
    write_csv(out / "invariants.csv", CHECK_HEADER, [c.row() for c in checks])
    write_json(out / "invariants.json", {"checks": [c.to_dict() for c in checks],
                                         "passed": all(c.passed for c in checks)})
    failed = [c for c in checks if not c.passed]
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name:22s} {c.spec:18s} {c.detail:14s} {c.value:.3e} < {c.threshold:.0e}")
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return 1 if failed else 0


# ------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perflow", description="Physics-embedded rectified flow for sparse PDE reconstruction")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, projection=False, prior=False, noise=False, steps=False):
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int, metavar="U64")
        sp.add_argument("--out", metavar="DIR")
        if steps:
            sp.add_argument("--steps", type=int, metavar="N")
        if projection:
            sp.add_argument("--no-projection", action="store_true", help="ablation: disable hard-constraint projection")
        if prior:
            sp.add_argument("--prior", choices=PRIORS)
        if noise:
            sp.add_argument("--noise-level", type=float, metavar="R")

    g = sub.add_parser("gen-data", help="generate a PDE dataset")
    common(g)
    g.add_argument("--kind", choices=("poisson", "darcy", "burgers", "navier_stokes"))
    g.add_argument("--n-samples", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a conditional velocity network")
    common(t, projection=True, prior=True, noise=True)
    t.add_argument("--data", metavar="DIR")
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    o = sub.add_parser("observe", help="draw a sparse observation of one dataset sample")
    common(o, noise=True)
    o.add_argument("--data", metavar="DIR")
    o.add_argument("--index", type=int, default=0)
    o.add_argument("--k", type=int, help="observed points (or sensors) per frame")
    o.set_defaults(func=cmd_observe)

    s = sub.add_parser("sample", help="ensemble reconstruction from observations")
    common(s, projection=True, prior=True, steps=True)
    s.add_argument("--checkpoint", metavar="DIR")
    s.add_argument("--observations", metavar="DIR")
    s.add_argument("--ensemble", type=int, metavar="K")
    s.add_argument("--integrator", choices=("euler", "heun"))
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="score a reconstruction against ground truth")
    common(e)
    e.add_argument("--reconstruction", metavar="FILE")
    e.add_argument("--truth", metavar="FILE")
    e.add_argument("--kind", choices=("poisson", "darcy", "burgers", "navier_stokes"))
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("check-invariants", help="projection and trajectory-invariance checks")
    common(c, steps=True)
    c.add_argument("--checkpoint", metavar="DIR")
    c.add_argument("--check-stencil", choices=("spectral", "centered"),
                   help="divergence stencil used for checking (a mismatch is a negative control)")
    c.set_defaults(func=cmd_check_invariants)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "check-invariants" and args.out is None:
        args.out = "invariants-report"
    try:
        return args.func(args)
    except (CliError, ValueError, FileNotFoundError) as exc:
        print(f"perflow {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
