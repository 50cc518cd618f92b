"""Command-line entry points: dataset extraction, training, evaluation,
refinement-depth sweeps, and image reconstruction."""

import argparse
import csv
import os
import sys

import numpy as np

from .codec import QuantizerConfig, extract_dataset, load_pgm, save_pgm
from .harness import evaluate_images, list_pgm_files, run_training
from .metrics import ms_ssim, psnr, ssim
from .model import load_checkpoint
from .numerics import SeededRng
from .pipeline import baseline_image, decode_image, to_uint8
from .runconfig import ConfigError, build_config, load_config


def _fmt(value):
    return "inf" if value == float("inf") else f"{value:.4f}"


def cmd_extract(args):
    paths = list_pgm_files(args.input_dir)
    if not paths:
        raise SystemExit(f"error: no input images in {args.input_dir}")
    images = []
    for path in paths:
        try:
            images.append(load_pgm(path))
        except Exception as exc:
            if args.fail_fast:
                raise SystemExit(f"error: {exc}")
            print(f"warning: skipping {path}: {exc}", file=sys.stderr)
    qcfg = QuantizerConfig(quality_scale=args.quality)
    rng = SeededRng(args.seed)
    dataset = extract_dataset(images, args.d, qcfg, rng)
    dataset.save(args.output)
    manifest = args.output + ".manifest"
    with open(manifest, "w") as fh:
        fh.write(f"images={len(images)}\n")
        fh.write(f"blocks={len(dataset)}\n")
        fh.write(f"d={args.d}\n")
        fh.write(f"quality={args.quality}\n")
        fh.write(f"seed={args.seed}\n")
    print(f"wrote {len(dataset)} blocks from {len(images)} images to {args.output}")


_TRAIN_FLAGS = ("algorithm", "seed", "cell", "n", "d", "steps", "batch",
                "updates", "lr", "lr_end", "momentum", "clip", "alpha",
                "k_top", "k_attn", "trunc", "state_activation", "eval_every",
                "quality", "dataset", "eval_images")


def _run_config_from_args(args):
    file_values = load_config(args.config) if args.config else {}
    overrides = {k: getattr(args, k, None) for k in _TRAIN_FLAGS}
    return build_config(profile=args.profile, file_values=file_values,
                        overrides=overrides)


def cmd_train(args):
    run_cfg = _run_config_from_args(args)
    if not run_cfg.dataset:
        raise SystemExit("error: no dataset given (flag --dataset or config)")
    print("config: " + " ".join(
        f"{k}={v}" for k, v in vars(run_cfg).items() if v != ""))
    result = run_training(run_cfg, args.out_dir)
    print(f"status={result['status']} final_loss={result['loss']!r}")
    print(f"checkpoint: {result['checkpoint']}")
    print(f"log: {result['log']}")
    if result["status"] != "ok":
        raise SystemExit(1)


def _load_labeled_checkpoints(specs):
    out = []
    for spec in specs:
        if "=" in spec:
            label, path = spec.split("=", 1)
        else:
            label = os.path.splitext(os.path.basename(spec))[0]
            path = spec
        params, cfg = load_checkpoint(path)
        out.append((label, params, cfg))
    return out


def cmd_eval(args):
    params, cfg = load_checkpoint(args.checkpoint)
    qcfg = QuantizerConfig(quality_scale=args.quality)
    paths = list_pgm_files(args.images)
    if not paths:
        raise SystemExit(f"error: no input images in {args.images}")
    rows = []
    for path in paths:
        name = os.path.basename(path)
        try:
            image = load_pgm(path)
            ref = image.astype(np.float64) / 255.0
            base = baseline_image(image, qcfg, cfg.d)
            ref_c = ref[:base.shape[0], :base.shape[1]]
            neural = decode_image(image, params, cfg, qcfg, steps=args.steps)[-1]
            rows.append([name,
                         psnr(ref_c, base), ssim(ref_c, base), ms_ssim(ref_c, base),
                         psnr(ref_c, neural), ssim(ref_c, neural),
                         ms_ssim(ref_c, neural)])
        except Exception as exc:
            rows.append([name, "error", str(exc), "", "", "", ""])
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    writer = csv.writer(out)
    writer.writerow(["image", "base_psnr", "base_ssim", "base_ms_ssim",
                     "neural_psnr", "neural_ssim", "neural_ms_ssim"])
    numeric = [r for r in rows if r[1] != "error"]
    for row in rows:
        writer.writerow([row[0]] + [_fmt(v) if isinstance(v, float) else v
                                    for v in row[1:]])
    if numeric:
        means = [float(np.mean([r[i] for r in numeric])) for i in range(1, 7)]
        writer.writerow(["aggregate"] + [_fmt(v) for v in means])
    if args.output:
        out.close()


def cmd_sweep_k(args):
    k_list = [int(k) for k in args.k_list.split(",")]
    qcfg = QuantizerConfig(quality_scale=args.quality)
    paths = list_pgm_files(args.images)
    if not paths:
        raise SystemExit(f"error: no input images in {args.images}")
    images = [load_pgm(p) for p in paths]
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    writer = csv.writer(out)
    writer.writerow(["algorithm"] + [f"K{k}" for k in k_list])
    for label, params, cfg in _load_labeled_checkpoints(args.checkpoint):
        per_k = {k: [] for k in k_list}
        for image in images:
            ref = image.astype(np.float64) / 255.0
            recons = decode_image(image, params, cfg, qcfg, steps=max(k_list))
            ref_c = ref[:recons[0].shape[0], :recons[0].shape[1]]
            for k in k_list:
                per_k[k].append(psnr(ref_c, recons[k - 1]))
        writer.writerow([label] + [_fmt(float(np.mean(per_k[k]))) for k in k_list])
    if args.output:
        out.close()


def cmd_reconstruct(args):
    params, cfg = load_checkpoint(args.checkpoint)
    qcfg = QuantizerConfig(quality_scale=args.quality)
    image = load_pgm(args.image)
    ref = image.astype(np.float64) / 255.0
    if args.baseline:
        recon = baseline_image(image, qcfg, cfg.d)
        ref_c = ref[:recon.shape[0], :recon.shape[1]]
        print(f"baseline psnr={_fmt(psnr(ref_c, recon))}")
        save_pgm(args.output, to_uint8(recon))
        return
    recons = decode_image(image, params, cfg, qcfg, steps=args.steps)
    ref_c = ref[:recons[0].shape[0], :recons[0].shape[1]]
    for k, recon in enumerate(recons, 1):
        print(f"K={k} psnr={_fmt(psnr(ref_c, recon))}")
    save_pgm(args.output, to_uint8(recons[-1]))


def cmd_compare(args):
    algorithms = args.algorithms.split(",")
    seeds = [int(s) for s in args.seeds.split(",")]
    out_rows = []
    for algorithm in algorithms:
        for seed in seeds:
            run_args = argparse.Namespace(**vars(args))
            run_args.algorithm = algorithm
            run_args.seed = seed
            run_cfg = _run_config_from_args(run_args)
            run_dir = os.path.join(args.out_dir, f"{algorithm}-seed{seed}")
            result = run_training(run_cfg, run_dir)
            row = [algorithm, seed, result["status"], repr(result["loss"])]
            if run_cfg.eval_images:
                images = [load_pgm(p) for p in list_pgm_files(run_cfg.eval_images)]
                qcfg = QuantizerConfig(quality_scale=run_cfg.quality)
                metrics = evaluate_images(images, result["params"],
                                          result["config"], qcfg)
                row += [_fmt(m) for m in metrics]
            else:
                row += ["", "", ""]
            out_rows.append(row)
    path = os.path.join(args.out_dir, "compare.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algorithm", "seed", "status", "loss",
                         "val_psnr", "val_ssim", "val_ms_ssim"])
        writer.writerows(out_rows)
    print(f"wrote {path}")


def _add_train_flags(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--profile", default="desk", choices=("paper", "desk"))
    p.add_argument("--out-dir", required=True)
    p.add_argument("--algorithm", choices=("bptt", "rtrl", "uoro", "sab"))
    p.add_argument("--seed", type=int)
    p.add_argument("--cell", choices=("elman", "lstm", "gru", "delta", "mlp"))
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--steps", "--K", dest="steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--updates", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-end", dest="lr_end", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--k-top", dest="k_top", type=int)
    p.add_argument("--k-attn", dest="k_attn", type=int)
    p.add_argument("--trunc", type=int)
    p.add_argument("--state-activation", dest="state_activation",
                   choices=("tanh", "sigmoid", "relu"))
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--quality", type=float)
    p.add_argument("--dataset")
    p.add_argument("--eval-images", dest="eval_images")


def main(argv=None):
    parser = argparse.ArgumentParser(prog="iterdec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="build a patch-block dataset from PGM images")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--quality", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--fail-fast", action="store_true")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a decoder on an extracted dataset")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="baseline vs neural metrics per image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--quality", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-k", help="PSNR as a function of refinement depth")
    p.add_argument("--checkpoint", action="append", required=True,
                   metavar="LABEL=PATH")
    p.add_argument("--images", required=True)
    p.add_argument("--quality", type=float, default=1.0)
    p.add_argument("--k-list", dest="k_list", default="1,3,5,7,9,11")
    p.add_argument("--output")
    p.set_defaults(func=cmd_sweep_k)

    p = sub.add_parser("reconstruct", help="decode one image and report per-step PSNR")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--quality", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--baseline", action="store_true")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("compare", help="train several algorithms and merge results")
    _add_train_flags(p)
    p.add_argument("--algorithms", default="bptt,rtrl,uoro,sab")
    p.add_argument("--seeds", default="1")
    p.set_defaults(func=cmd_compare)

    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        raise SystemExit(f"error: {exc}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
