"""Shared helpers for building small decoders and oracle closures."""

import numpy as np

from iterdec.model import DecoderConfig, DecoderParams, STATE_PARAM_ORDER, \
    init_params, run_episode
from iterdec.learn import LossConfig, loss_episode
from iterdec.numerics import SeededRng


def small_config(cell, n=8, d=4, steps=4):
    return DecoderConfig(cell=cell, n=n, d=d, steps=steps)


def scaled_params(cfg, rng, scale=8.0):
    """Random parameters with weights large enough that gradients are not
    vanishingly small (init-bound weights barely move tanh units)."""
    params = init_params(cfg, rng, mid_gray_bias=False)
    params.transform = [w * scale for w in params.transform]
    for key, value in params.state.items():
        if key.startswith("V"):
            params.state[key] = value * scale
    params.out_w = params.out_w * scale
    return params


def random_block(cfg, rng, batch=2):
    inputs = rng.uniform(-1.0, 1.0, (batch, cfg.n_inputs, cfg.d2))
    targets = rng.uniform(0.0, 1.0, (batch, cfg.d2))
    return inputs, targets


def params_from_tensors(tensors, cfg):
    names = STATE_PARAM_ORDER[cfg.cell]
    n_t = cfg.n_inputs
    return DecoderParams(
        transform=list(tensors[:n_t]),
        state=dict(zip(names, tensors[n_t:n_t + len(names)])),
        out_w=tensors[-2], out_b=tensors[-1])


def episode_loss_fn(inputs, targets, cfg, loss_cfg=None):
    """Closure mapping a parameter tensor list to the episode loss, for the
    central-difference oracle."""
    loss_cfg = loss_cfg or LossConfig()

    def f(tensors):
        params = params_from_tensors(tensors, cfg)
        trace = run_episode(inputs, params, cfg)
        return loss_episode(targets, trace.recons, loss_cfg)[0]

    return f


def flat_grads(grads, cfg):
    return np.concatenate([t.reshape(-1) for t in grads.tensors(cfg.cell)])
