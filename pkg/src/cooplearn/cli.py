"""Command-line entry point: ``cooplearn <verb> [options]``.

Verbs: train, sample, infer, inpaint, eval, fixed-point.
Exit codes: 0 success, 2 configuration error, 3 numerical divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as D
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import (ConfigError, RunConfig, build_dataset, build_models, langevin_config,
                     load_config, train_config, validate)
from .fixed_point import InvalidSystemError, fixed_point_sim, load_system
from .langevin import DivergenceError, LangevinConfig, gibbs_infer_xc, infer_latent_x, refine
from .metrics import parzen_protocol, psnr, region_crop, ssim
from .models import generate, one_hot, sample_latent
from .training import TrainState, draw_solutions, initial_solutions, train

log = logging.getLogger("cooplearn")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# helpers

def tile_grid(images):
    """(rows, cols, C, H, W) -> (C, rows*H, cols*W)."""
    images = np.asarray(images)
    r, c, ch, h, w = images.shape
    return images.transpose(2, 0, 3, 1, 4).reshape(ch, r * h, c * w)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_vectors(path):
    """The ``y*`` columns of a CSV with a header row, as a float array (n, d)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise D.DataError(f"{path}: empty file")
    cols = [i for i, name in enumerate(rows[0]) if name.startswith("y")]
    if not cols:
        raise D.DataError(f"{path}: no y0, y1, ... columns")
    try:
        return np.array([[float(r[i]) for i in cols] for r in rows[1:]]).reshape(-1, len(cols))
    except (ValueError, IndexError) as exc:
        raise D.DataError(f"{path}: {exc}") from None


def _out_dir(args, cfg: RunConfig | None = None) -> Path:
    out = args.out or (cfg.raw.get("out") if cfg is not None else None) or "out"
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _config(args) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    raw = cfg.to_dict()
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.precision is not None:
        raw["precision"] = args.precision
    return validate(raw)


def _checkpoint_config(ckpt: Checkpoint) -> RunConfig:
    return validate(ckpt.run_config) if ckpt.run_config else RunConfig({"task": "toy"})


def _lcfg(cfg: RunConfig) -> LangevinConfig:
    return langevin_config(cfg) if "langevin" in cfg.raw else LangevinConfig()


def _seed(args, cfg: RunConfig) -> int:
    return args.seed if args.seed is not None else cfg.seed


def _conditions(args, ckpt: Checkpoint):
    """Condition batch and its column labels for sample/eval."""
    arch = ckpt.initializer_arch
    if arch.categorical:
        K = arch.condition_shape[0]
        classes = list(range(K)) if args.classes is None else [int(k) for k in args.classes.split(",")]
        if any(not 0 <= k < K for k in classes):
            raise ValueError(f"classes must lie in 0..{K - 1}")
        return one_hot(classes, K), [str(k) for k in classes]
    if not args.condition:
        raise ValueError("image-conditioned models need --condition image files")
    Cs = [D.load_image(p) for p in args.condition]
    for p, c in zip(args.condition, Cs):
        if c.shape != arch.condition_shape:
            raise ValueError(f"condition {p} has shape {c.shape}, model expects {arch.condition_shape}")
    return np.stack(Cs), [Path(p).stem for p in args.condition]


# ---------------------------------------------------------------------------
# verbs

def cmd_train(args) -> int:
    cfg = _config(args)
    if cfg.task == "fixed_point":
        raise ConfigError("use the fixed-point verb for fixed_point configs")
    out = _out_dir(args, cfg)
    dataset, _, mask = build_dataset(cfg)
    tcfg = train_config(cfg, mask)
    log_path = out / "log.jsonl"
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        state = ckpt.to_state()
        kept = []
        if log_path.exists():
            kept = [line for line in log_path.read_text().splitlines()
                    if line and json.loads(line)["epoch"] < state.epoch]
        log_path.write_text("".join(line + "\n" for line in kept))
    else:
        init_rng = np.random.default_rng([cfg.seed, 1])
        solver, gen = build_models(cfg, dataset.target_shape, dataset.condition_shape, init_rng)
        state = TrainState.create(solver, gen, cfg.seed)
        log_path.write_text("")
    run_config = cfg.to_dict()

    def on_checkpoint(st):
        save_checkpoint(ckpt_dir / f"epoch_{st.epoch:04d}.ckpt", Checkpoint.from_state(st, run_config))

    with open(log_path, "a") as fh:
        state = train(dataset, tcfg, state, log_file=fh, on_checkpoint=on_checkpoint)
    save_checkpoint(out / "final.ckpt", Checkpoint.from_state(state, run_config))
    print(f"trained to epoch {state.epoch} ({state.step} steps); checkpoint {out / 'final.ckpt'}")
    return EXIT_OK


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _checkpoint_config(ckpt)
    out = _out_dir(args)
    if args.count == 0:
        return EXIT_OK
    C, names = _conditions(args, ckpt)
    solver, gen = ckpt.solver(), ckpt.initializer()
    rng = np.random.default_rng(_seed(args, cfg))
    # rows = samples, columns = conditions
    Cb = np.repeat(C[None], args.count, axis=0).reshape((-1,) + C.shape[1:])
    Y = draw_solutions(gen, solver, Cb, _lcfg(cfg), rng, args.stage)
    Y = Y.reshape((args.count, len(C)) + Y.shape[1:])
    if len(Y.shape) == 3:
        rows = [(names[j], i, *Y[i, j]) for i in range(args.count) for j in range(len(C))]
        write_rows(out / f"samples_{args.stage}.csv",
                   ["condition", "sample"] + [f"y{d}" for d in range(Y.shape[-1])], rows)
    else:
        D.save_image(out / f"samples_{args.stage}.png", tile_grid(Y))
    np.save(out / f"samples_{args.stage}.npy", Y)
    print(f"wrote {args.count} x {len(C)} samples to {out}")
    return EXIT_OK


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _checkpoint_config(ckpt)
    gen = ckpt.initializer()
    if gen.uses_dropout_latent:
        raise ValueError("latent inference is unsupported for U-Net checkpoints")
    if not gen.arch.categorical:
        raise ValueError("infer needs a category-conditioned checkpoint")
    out = _out_dir(args)
    target = Path(args.target)
    if target.suffix.lower() == ".csv":
        Y = read_vectors(target).astype(gen.dtype)
    else:
        Y = D.load_image(target)[None]
    if Y.shape[1:] != gen.arch.target_shape:
        raise ValueError(f"target shape {Y.shape[1:]} does not match model {gen.arch.target_shape}")
    K = gen.arch.condition_shape[0]
    rng = np.random.default_rng(_seed(args, cfg))
    icfg = LangevinConfig(steps=args.steps, step_size=args.step_size,
                          noise_enabled=not args.no_noise)
    if args.infer_class:
        X, C = gibbs_infer_xc(Y, gen, icfg, rng, sweeps=args.sweeps)
        write_rows(out / "class_posterior.csv", ["target"] + [f"c{k}" for k in range(K)],
                   [(i, *C[i]) for i in range(len(Y))])
    else:
        if args.known_class is None or not 0 <= args.known_class < K:
            raise ValueError(f"--known-class must lie in 0..{K - 1}")
        C = one_hot([args.known_class] * len(Y), K, gen.dtype)
        X0 = np.zeros((len(Y), gen.latent_dim), gen.dtype)
        X = infer_latent_x(Y, C, gen, icfg, X0, rng)
    write_rows(out / "latents.csv", ["target"] + [f"x{d}" for d in range(gen.latent_dim)],
               [(i, *X[i]) for i in range(len(Y))])
    # style transfer: keep X, sweep all K classes
    grid = np.stack([generate(gen, X, one_hot([k] * len(X), K, gen.dtype)) for k in range(K)], axis=1)
    np.save(out / "style_grid.npy", grid)
    if grid.ndim == 5:
        D.save_image(out / "style_grid.png", tile_grid(grid))
    else:
        write_rows(out / "style_grid.csv",
                   ["target"] + [f"k{k}_y{d}" for k in range(K) for d in range(grid.shape[-1])],
                   [(i, *grid[i].ravel()) for i in range(len(grid))])
    print(f"inferred latents for {len(Y)} target(s); grid has {K} columns")
    return EXIT_OK


def _read_mask(args, shape):
    if args.mask_box:
        top, left, h, w = (int(v) for v in args.mask_box.split(","))
        _, mask = D.occlude(np.zeros(shape, np.float32), D.MaskSpec(top, left, h, w))
        return mask
    m = D.read_image_u8(args.mask)
    if m.shape[1:] != shape[1:]:
        raise ValueError(f"mask {m.shape[1:]} does not match image {shape[1:]}")
    return np.broadcast_to((m.max(axis=0) > 0).astype(np.float32), shape).copy()


def cmd_inpaint(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _checkpoint_config(ckpt)
    out = _out_dir(args)
    C = D.load_image(args.image)
    mask = _read_mask(args, C.shape)
    solver, gen = ckpt.solver(), ckpt.initializer()
    if C.shape != gen.arch.condition_shape:
        raise ValueError(f"image shape {C.shape} does not match model {gen.arch.condition_shape}")
    rng = np.random.default_rng(_seed(args, cfg))
    lcfg = _lcfg(cfg)
    lcfg = replace(lcfg.without_noise() if args.no_noise else lcfg, update_mask=mask)
    Cb = C[None].astype(gen.dtype)
    X = sample_latent(gen, 1, rng)
    Y0 = initial_solutions(gen, X, Cb, rng, mask)
    Y1 = refine(Y0, Cb, solver, lcfg, rng)
    # outside the hole the input is passed through untouched
    init_img = np.where(mask > 0, Y0[0], C)
    solved_img = np.where(mask > 0, Y1[0], C)
    D.save_image(out / "inpaint_initializer.png", init_img)
    D.save_image(out / "inpaint_solver.png", solved_img)
    np.save(out / "inpaint_initializer.npy", init_img)
    np.save(out / "inpaint_solver.npy", solved_img)
    report = {}
    if args.ground_truth:
        gt = D.read_image_u8(args.ground_truth).astype(np.float64)
        for name, img in (("initializer", init_img), ("solver", solved_img)):
            u8 = D.denormalize_u8(img).astype(np.float64)
            a, b = region_crop(u8, mask), region_crop(gt, mask)
            report[name] = {"psnr": psnr(u8, gt, region=mask),
                            "ssim": ssim(a, b, window=min(8, *a.shape[-2:]))}
        (out / "inpaint_metrics.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report) if report else f"wrote inpainting results to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    out = _out_dir(args)
    if args.metric in ("psnr", "ssim"):
        if not (args.prediction and args.reference):
            raise ValueError(f"--metric {args.metric} needs --prediction and --reference")
        a = D.read_image_u8(args.prediction).astype(np.float64)
        b = D.read_image_u8(args.reference).astype(np.float64)
        region = _read_mask(args, a.shape) if (args.mask or args.mask_box) else None
        if args.metric == "psnr":
            value = psnr(a, b, region=region)
        else:
            if region is not None:
                a, b = region_crop(a, region), region_crop(b, region)
            value = ssim(a, b)
        report = {"metric": args.metric, "value": value}
    else:
        report = _parzen_report(args)
    (out / f"eval_{args.metric}.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report))
    return EXIT_OK


def _parzen_report(args):
    if not args.test:
        raise ValueError("--metric parzen needs --test (CSV of held-out targets)")
    test = read_vectors(args.test)
    if args.samples:
        samples = read_vectors(args.samples)
    else:
        if not args.checkpoint:
            raise ValueError("--metric parzen needs --samples or --checkpoint")
        ckpt = load_checkpoint(args.checkpoint)
        cfg = _checkpoint_config(ckpt)
        arch = ckpt.initializer_arch
        if not arch.categorical:
            raise ValueError("parzen evaluation is defined for category-conditioned tasks")
        rng = np.random.default_rng(_seed(args, cfg))
        K = arch.condition_shape[0]
        labels = np.arange(args.count) % K
        Y = draw_solutions(ckpt.initializer(), ckpt.solver(), one_hot(labels, K), _lcfg(cfg),
                           rng, args.stage)
        samples = Y.reshape(len(Y), -1)
    validation = read_vectors(args.validation) if args.validation else test
    rep, sigma = parzen_protocol(samples, test, validation)
    return {"metric": "parzen", "mean": rep.mean, "stderr": rep.stderr, "n": rep.n,
            "bandwidth": sigma}


def cmd_fixed_point(args) -> int:
    cfg = _config(args)
    if cfg.task != "fixed_point":
        raise ConfigError("fixed-point needs a config with task 'fixed_point'")
    out = _out_dir(args, cfg)
    system = dict(cfg.raw["system"])
    if "data" not in system and args.seed is not None:
        system["seed"] = args.seed
    try:
        sys_ = load_system(system)
    except TypeError as exc:
        raise ConfigError(f"system: {exc}") from None
    trace, _ = fixed_point_sim(sys_, cfg.raw.get("iterations", 500))
    trace.write_csv(out / "trace.csv")
    print(f"wrote {len(trace.kl_data_p)} rows to {out / 'trace.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, default=1, help="BLAS thread cap (default 1)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--precision", type=int, choices=(32, 64))
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cooplearn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    t = sub.add_parser("train", parents=[common], help="cooperative training")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", parents=[common], help="draw initializer or solver samples")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--stage", choices=("initializer", "solver"), default="solver")
    s.add_argument("--classes", help="comma-separated class indices (default: all)")
    s.add_argument("--condition", nargs="*", help="condition images for image tasks")
    s.set_defaults(func=cmd_sample)

    i = sub.add_parser("infer", parents=[common], help="infer latents (and class) for targets")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--target", required=True, help="CSV of target vectors or an image")
    g = i.add_mutually_exclusive_group(required=True)
    g.add_argument("--known-class", type=int)
    g.add_argument("--infer-class", action="store_true")
    i.add_argument("--steps", type=int, default=100)
    i.add_argument("--step-size", type=float, default=0.05)
    i.add_argument("--sweeps", type=int, default=10)
    i.add_argument("--no-noise", action="store_true", help="gradient ascent instead of sampling")
    i.set_defaults(func=cmd_infer)

    n = sub.add_parser("inpaint", parents=[common], help="fill an occluded region")
    n.add_argument("--checkpoint", required=True)
    n.add_argument("--image", required=True, help="occluded image")
    m = n.add_mutually_exclusive_group(required=True)
    m.add_argument("--mask", help="mask image; nonzero pixels are the hole")
    m.add_argument("--mask-box", help="top,left,height,width")
    n.add_argument("--ground-truth", help="full image for PSNR/SSIM over the hole")
    n.add_argument("--no-noise", action="store_true")
    n.set_defaults(func=cmd_inpaint)

    e = sub.add_parser("eval", parents=[common], help="Parzen, PSNR or SSIM report")
    e.add_argument("--metric", choices=("parzen", "psnr", "ssim"), required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--test")
    e.add_argument("--validation")
    e.add_argument("--samples")
    e.add_argument("--count", type=int, default=10000)
    e.add_argument("--stage", choices=("initializer", "solver"), default="solver")
    e.add_argument("--prediction")
    e.add_argument("--reference")
    em = e.add_mutually_exclusive_group()
    em.add_argument("--mask")
    em.add_argument("--mask-box")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("fixed-point", parents=[common], help="exact discrete simulation trace")
    f.set_defaults(func=cmd_fixed_point)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        from threadpoolctl import threadpool_limits
        limits = threadpool_limits(args.threads)
    except ImportError:  # pragma: no cover
        limits = nullcontext()
    try:
        with limits:
            return args.func(args)
    except DivergenceError as exc:
        print(f"error: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, CheckpointError, D.DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, InvalidSystemError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
