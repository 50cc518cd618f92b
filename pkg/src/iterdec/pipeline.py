"""Whole-image decode paths shared by evaluation commands and tests."""

import numpy as np

from .codec import blocks_from_image, center_crop, dequantize_baseline, \
    dct_quantize, partition, stitch
from .model import run_episode


def baseline_image(image, qcfg, d=8):
    """Quantize and de-quantize every patch: the non-neural reconstruction,
    as a float image in [0, 1]."""
    image = center_crop(np.asarray(image), d)
    patches = partition(image, d)
    rows, cols = patches.shape[:2]
    out = np.empty_like(patches, dtype=np.float64)
    for i in range(rows):
        for j in range(cols):
            symbols = dct_quantize(patches[i, j], qcfg)
            out[i, j] = dequantize_baseline(symbols, qcfg).reshape(d, d)
    return stitch(out)


def decode_image(image, params, cfg, qcfg, steps=None):
    """Neural reconstructions of a full image, one per refinement step.

    Returns a list of `steps` float images in [0, 1] (clamped for viewing
    and metrics), stitched from the per-step patch reconstructions.
    """
    steps = steps or cfg.steps
    image = center_crop(np.asarray(image), cfg.d)
    rows, cols = image.shape[0] // cfg.d, image.shape[1] // cfg.d
    inputs, _ = blocks_from_image(image, cfg.d, qcfg)

    run_cfg = cfg
    if steps != cfg.steps:
        from dataclasses import replace
        run_cfg = replace(cfg, steps=steps)
    trace = run_episode(inputs, params, run_cfg)

    images = []
    for recon in trace.recons:
        patches = np.clip(recon, 0.0, 1.0).reshape(rows, cols, cfg.d, cfg.d)
        images.append(stitch(patches))
    return images


def to_uint8(image):
    """[0, 1] float image -> 8-bit samples (round half away from zero)."""
    return np.clip(np.floor(np.asarray(image) * 255.0 + 0.5), 0, 255).astype(np.uint8)
