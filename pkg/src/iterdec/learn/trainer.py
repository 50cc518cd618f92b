"""One mini-batch = one parameter update, for all four learning algorithms.

Unrolled algorithms (bptt, sab) run a full forward trace and one reverse
pass; online algorithms (rtrl, uoro) accumulate per-step gradients during
the forward refinement and update once at episode end.  Either way the
gradient of the same episode loss is clipped to the configured global norm
and applied by SGD.
"""

import numpy as np

from ..model import run_episode
from .bptt import bptt_grads
from .loss import LossConfig, loss_episode
from .optimizer import clip_gradient_set, sgd_update
from .rtrl import rtrl_episode_grads
from .sab import SabConfig, sab_backward, sab_forward
from .uoro import uoro_episode_grads

ALGORITHMS = ("bptt", "rtrl", "uoro", "sab")


def episode_grads(inputs, targets, params, algorithm, cfg, loss_cfg,
                  sab_cfg=None, rng=None):
    """(loss, gradient set) for one batch under the chosen algorithm."""
    if algorithm == "bptt":
        trace = run_episode(inputs, params, cfg)
        loss, _, _ = loss_episode(targets, trace.recons, loss_cfg)
        return loss, bptt_grads(trace, inputs, targets, params, cfg, loss_cfg)
    if algorithm == "sab":
        sab_cfg = sab_cfg or SabConfig()
        trace, memory = sab_forward(inputs, params, cfg, sab_cfg)
        loss, _, _ = loss_episode(targets, trace.recons, loss_cfg)
        grads = sab_backward(trace, memory, inputs, targets, params, cfg,
                             sab_cfg, loss_cfg)
        return loss, grads
    if algorithm == "rtrl":
        return rtrl_episode_grads(inputs, targets, params, cfg, loss_cfg)
    if algorithm == "uoro":
        if rng is None:
            raise ValueError("uoro needs an explicit rng")
        return uoro_episode_grads(inputs, targets, params, cfg, rng, loss_cfg)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def train_episode(inputs, targets, params, algorithm, cfg, loss_cfg, opt,
                  sab_cfg=None, rng=None):
    """One clipped SGD update from one batch.  Returns (loss, new params)."""
    loss_cfg = loss_cfg or LossConfig()
    loss, grads = episode_grads(inputs, targets, params, algorithm, cfg,
                                loss_cfg, sab_cfg=sab_cfg, rng=rng)
    grads = clip_gradient_set(grads, cfg.cell, opt.max_norm)
    params = sgd_update(params, grads, opt, cfg.cell)
    return loss, params


def iterate_batches(dataset_len, batch_size, updates):
    """Deterministic cyclic batch index windows over a shuffled dataset."""
    start = 0
    for _ in range(updates):
        idx = np.arange(start, start + batch_size) % dataset_len
        yield idx
        start = (start + batch_size) % dataset_len
