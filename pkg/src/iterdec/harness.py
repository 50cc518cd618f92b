"""Training-run orchestration: dataset in, checkpoint + CSV log + manifest
out, reproducible byte-for-byte from the recorded seed and config.

Log files contain no timestamps (those live in the manifest only), so a
repeated run with the same manifest produces identical logs and
checkpoints.
"""

import csv
import os
import time

import numpy as np

from .codec import DatasetFile, QuantizerConfig, load_pgm
from .learn import (LossConfig, OptimizerState, SabConfig, iterate_batches,
                    train_episode)
from .metrics import ms_ssim, psnr, ssim
from .model import DecoderConfig, init_params, save_checkpoint
from .numerics import NonFiniteError, SeededRng
from .pipeline import decode_image
from .runconfig import write_manifest

LOG_HEADER = ("update", "epoch", "lr", "loss",
              "val_psnr", "val_ssim", "val_ms_ssim")


def decoder_config(run_cfg):
    return DecoderConfig(cell=run_cfg.cell, n=run_cfg.n, d=run_cfg.d,
                         steps=run_cfg.steps,
                         state_activation=run_cfg.state_activation)


def list_pgm_files(directory):
    names = sorted(f for f in os.listdir(directory) if f.endswith(".pgm"))
    return [os.path.join(directory, f) for f in names]


def evaluate_images(images, params, cfg, qcfg, steps=None):
    """Mean (psnr, ssim, ms_ssim) of the final-step reconstruction."""
    scores = []
    for image in images:
        recon = decode_image(image, params, cfg, qcfg, steps=steps)[-1]
        ref = image.astype(np.float64) / 255.0
        ref = ref[:recon.shape[0], :recon.shape[1]]
        scores.append((psnr(ref, recon), ssim(ref, recon), ms_ssim(ref, recon)))
    return tuple(float(np.mean([s[i] for s in scores])) for i in range(3))


def run_training(run_cfg, out_dir, dataset=None, eval_images=None):
    """Train per the run config; returns a summary dict.

    `dataset` and `eval_images` may be passed directly (tests) or are loaded
    from the paths in the config.
    """
    os.makedirs(out_dir, exist_ok=True)
    if dataset is None:
        dataset = DatasetFile.load(run_cfg.dataset)
    if eval_images is None and run_cfg.eval_images:
        eval_images = [load_pgm(p) for p in list_pgm_files(run_cfg.eval_images)]

    cfg = decoder_config(run_cfg)
    if cfg.d != dataset.d:
        raise ValueError(f"config d={cfg.d} but dataset holds d={dataset.d}")
    loss_cfg = LossConfig(alpha=run_cfg.alpha,
                          mae_batch_normalized=run_cfg.mae_batch_normalized)
    sab_cfg = SabConfig(k_top=run_cfg.k_top, k_attn=run_cfg.k_attn,
                        trunc=run_cfg.trunc)
    opt = OptimizerState(lr0=run_cfg.lr, lr_end=run_cfg.resolved_lr_end(),
                         total_steps=run_cfg.updates,
                         momentum=run_cfg.momentum, max_norm=run_cfg.clip)
    qcfg = QuantizerConfig(quality_scale=run_cfg.quality)

    root = SeededRng(run_cfg.seed)
    params = init_params(cfg, root.child(0))
    uoro_rng = root.child(1)

    start_time = time.strftime("%Y-%m-%dT%H:%M:%S")
    log_path = os.path.join(out_dir, "log.csv")
    ckpt_path = os.path.join(out_dir, "checkpoint.idck")
    manifest_path = os.path.join(out_dir, "manifest.txt")

    count = len(dataset)
    eval_rows = []
    status = "ok"
    last_loss = float("nan")

    def log_row(writer, update, loss, metrics):
        epoch = update * run_cfg.batch / count
        row = [update, repr(epoch), repr(opt.learning_rate()), repr(loss)]
        row += [repr(m) for m in metrics] if metrics else ["", "", ""]
        writer.writerow(row)

    with open(log_path, "w", newline="") as log_file:
        writer = csv.writer(log_file)
        writer.writerow(LOG_HEADER)
        batches = iterate_batches(count, run_cfg.batch, run_cfg.updates)
        for update, idx in enumerate(batches, start=1):
            inputs = dataset.inputs[idx].astype(np.float64)
            targets = dataset.targets[idx].astype(np.float64)
            try:
                last_loss, params = train_episode(
                    inputs, targets, params, run_cfg.algorithm, cfg, loss_cfg,
                    opt, sab_cfg=sab_cfg, rng=uoro_rng)
            except NonFiniteError:
                status = "diverged"
                break
            if update % run_cfg.eval_every == 0 or update == run_cfg.updates:
                metrics = None
                if eval_images:
                    metrics = evaluate_images(eval_images, params, cfg, qcfg)
                    eval_rows.append(
                        f"eval.{update}=" + ",".join(repr(m) for m in metrics))
                log_row(writer, update, last_loss, metrics)

    save_checkpoint(ckpt_path, params, cfg)
    extra = [f"status={status}", f"log={os.path.basename(log_path)}",
             f"checkpoint={os.path.basename(ckpt_path)}"] + eval_rows
    write_manifest(manifest_path, run_cfg, start_time, extra)
    return {"status": status, "loss": last_loss, "params": params,
            "config": cfg, "checkpoint": ckpt_path, "log": log_path,
            "manifest": manifest_path}
