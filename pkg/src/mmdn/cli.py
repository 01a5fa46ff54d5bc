"""Command-line surface: gen-data, train, eval, gradcam, align-train,
align-apply, gradcheck, fusion-check.

Exit codes: 0 success, 1 check/assert failure, 2 usage error. The
MMDN_THREADS variable caps BLAS threads and must be applied before numpy
loads, hence the env setup ahead of the heavy imports.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

if os.environ.get("MMDN_THREADS"):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, os.environ["MMDN_THREADS"])

import numpy as np

from . import checkpoint, data, engine
from .config import ConfigError, load_config
from .cyclegan import (DiscriminatorConfig, GeneratorConfig, align_apply,
                       build_cyclegan, train_cyclegan)
from .fusion import verify_fusion_inequality
from .gradcam import gradcam, overlay
from .metrics import REPORT_KEYS
from .optim import AdamConfig, resolve_schedule
from .train import build_model_from_config, evaluate_report, train_run


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mmdn",
                                     description="dual-stream dense classifier toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--kind", choices=("xor", "correlated", "transform"), required=True)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--count", type=int, default=600)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a classifier from a config file")
    p.add_argument("config")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--seed", type=int, default=None, help="override train.seed")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("config")
    p.add_argument("checkpoint")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", default=None, help="write the report JSON here")

    p = sub.add_parser("gradcam", help="write CAM overlays for dataset samples")
    p.add_argument("config")
    p.add_argument("checkpoint")
    p.add_argument("--ids", required=True, help="comma-separated sample ids")
    p.add_argument("--layer", default=None)
    p.add_argument("--class", dest="target_class", type=int, default=None,
                   help="target class (default: the sample's label)")
    p.add_argument("--out", default="cams")

    p = sub.add_parser("align-train", help="train the unpaired modality aligner")
    p.add_argument("--data-w", required=True, help="domain W image directory")
    p.add_argument("--data-n", required=True, help="domain N image directory")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--base-width", type=int, default=16)
    p.add_argument("--residual-blocks", type=int, default=3)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--lambda-n", type=float, default=70.0)
    p.add_argument("--lambda-w", type=float, default=10.0)
    p.add_argument("--schedule", default=None,
                   help="optional preset, e.g. cyclegan-300")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("align-apply", help="translate images through a trained generator")
    p.add_argument("checkpoint")
    p.add_argument("--input", required=True, help="directory of .ppm images")
    p.add_argument("--out", required=True)
    p.add_argument("--reverse", action="store_true", help="use S (N->W) instead of G")
    p.add_argument("--base-width", type=int, default=16)
    p.add_argument("--residual-blocks", type=int, default=3)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-3)

    p = sub.add_parser("fusion-check", help="verify the additive-fusion inequality")
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--dims", default="8,8,16", help="dim_x,dim_y,dim_out")
    p.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, checkpoint.CheckpointError, data.ImageFormatError,
            FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    return {
        "gen-data": _cmd_gen_data,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "gradcam": _cmd_gradcam,
        "align-train": _cmd_align_train,
        "align-apply": _cmd_align_apply,
        "gradcheck": _cmd_gradcheck,
        "fusion-check": _cmd_fusion_check,
    }[args.command](args)


def _cmd_gen_data(args) -> int:
    if args.kind == "transform":
        data.gen_transform_pairs(args.count, args.size, args.seed, args.out)
        print(f"{args.out}/w {args.out}/n")
        return 0
    gen = data.gen_xor_dataset if args.kind == "xor" else data.gen_correlated_dataset
    manifest = gen(args.classes, args.count, args.size, args.noise, args.seed, args.out)
    print(Path(manifest.root) / "manifest.tsv")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    train_run(cfg, resume=args.resume, deterministic=args.deterministic)
    print(Path(cfg.output.dir) / "final.ckpt")
    return 0


def _load_model_and_split(args):
    cfg = load_config(args.config)
    manifest = data.DatasetManifest.load(cfg.data.root)
    model = build_model_from_config(cfg)
    model.registry.load_values(checkpoint.read_arrays(args.checkpoint))
    return cfg, manifest, model


def _cmd_eval(args) -> int:
    cfg, manifest, model = _load_model_and_split(args)
    splits = data.split_dataset(manifest, cfg.train.seed)
    xa, xb, y = data.load_split_arrays(manifest, splits[args.split])
    report = evaluate_report(model, xa, xb if model.multimodal else None, y)
    print(report.to_json())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    return 0


def _cmd_gradcam(args) -> int:
    cfg, manifest, model = _load_model_and_split(args)
    by_id = {e.id: e for e in manifest.entries}
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = Path(manifest.root)
    for sid in args.ids.split(","):
        entry = by_id.get(sid.strip())
        if entry is None:
            raise KeyError(f"unknown sample id {sid!r}")
        xa = data.load_image(root / entry.path_a)
        xb = data.load_image(root / entry.path_b)
        target = args.target_class if args.target_class is not None else entry.label
        cam = gradcam(model, xa, xb if model.multimodal else None,
                      target_class=target, target_layer=args.layer)
        heat = overlay(cam, xa)
        data.save_image(out_dir / f"{entry.id}_cam.ppm", heat)
        data.save_image(out_dir / f"{entry.id}_cam.pgm", cam.values[None])
        print(out_dir / f"{entry.id}_cam.ppm")
    return 0


def _load_pool(directory) -> list[np.ndarray]:
    paths = sorted(Path(directory).glob("*.ppm")) + sorted(Path(directory).glob("*.pgm"))
    if not paths:
        raise FileNotFoundError(f"no .ppm/.pgm images under {directory}")
    return [data.load_image(p) for p in paths]


def _cmd_align_train(args) -> int:
    pool_w = _load_pool(args.data_w)
    pool_n = _load_pool(args.data_n)
    channels = pool_w[0].shape[0]
    gen_cfg = GeneratorConfig(in_channels=channels, out_channels=channels,
                              base_width=args.base_width,
                              residual_blocks=args.residual_blocks,
                              image_size=args.image_size)
    disc_cfg = DiscriminatorConfig(in_channels=channels,
                                   base_width=args.base_width)
    quad = build_cyclegan(gen_cfg, disc_cfg, args.lambda_n, args.lambda_w,
                          seed=args.seed)
    schedule = resolve_schedule(args.schedule, args.epochs) if args.schedule else None
    log = train_cyclegan(quad, pool_w, pool_n, args.epochs,
                         AdamConfig(lr=args.lr, beta1=0.5, beta2=0.999),
                         schedule=schedule, seed=args.seed, log_every=1)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint.save_checkpoint(quad.registry, out_dir / "aligner.ckpt")
    with open(out_dir / "losses.csv", "w") as fh:
        keys = list(log)
        fh.write("epoch," + ",".join(keys) + "\n")
        for i in range(len(log[keys[0]])):
            fh.write(f"{i}," + ",".join(repr(log[k][i]) for k in keys) + "\n")
    print(out_dir / "aligner.ckpt")
    return 0


def _cmd_align_apply(args) -> int:
    pool = _load_pool(args.input)
    channels = pool[0].shape[0]
    gen_cfg = GeneratorConfig(in_channels=channels, out_channels=channels,
                              base_width=args.base_width,
                              residual_blocks=args.residual_blocks)
    quad = build_cyclegan(gen_cfg, DiscriminatorConfig(in_channels=channels,
                                                       base_width=args.base_width))
    quad.registry.load_values(checkpoint.read_arrays(args.checkpoint))
    gen = quad.S if args.reverse else quad.G
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(pool):
        translated = align_apply(gen, img[None])[0]
        data.save_image(out_dir / f"t{i:05d}.ppm", translated)
    print(out_dir)
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck_suite import run_suite
    results = run_suite(eps=args.eps)
    worst_name, worst = max(results.items(), key=lambda kv: kv[1])
    width = max(len(k) for k in results)
    for name, err in sorted(results.items()):
        print(f"{name:<{width}}  {err:.3e}")
    if worst > args.tolerance:
        print(f"FAIL: {worst_name} at {worst:.3e} > {args.tolerance:g}", file=sys.stderr)
        return 1
    print(f"OK: worst {worst_name} at {worst:.3e} <= {args.tolerance:g}")
    return 0


def _cmd_fusion_check(args) -> int:
    dims = tuple(int(x) for x in args.dims.split(","))
    if len(dims) != 3:
        raise ValueError(f"--dims needs dim_x,dim_y,dim_out, got {args.dims!r}")
    report = verify_fusion_inequality(*dims, trials=args.trials,
                                      rng=np.random.default_rng(args.seed))
    print(f"trials {report.trials} violations {report.violations} "
          f"max_excess {report.max_excess:.3e}")
    if not report.passed:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
