"""Plain SGD with a polynomial (power-2) learning-rate decay, optional
classical momentum, and global-norm clipping applied before every update."""

from dataclasses import dataclass

import numpy as np

from ..model import DecoderParams, STATE_PARAM_ORDER
from ..numerics import NonFiniteError, clip_global_norm


@dataclass
class OptimizerState:
    lr0: float = 2e-4
    lr_end: float = None          # defaults to lr0 / 100
    total_steps: int = 10000      # decay horizon T
    power: float = 2.0
    momentum: float = 0.0
    max_norm: float = 13.0
    step: int = 0
    velocity: list = None

    def __post_init__(self):
        if self.lr_end is None:
            self.lr_end = self.lr0 / 100.0

    def learning_rate(self):
        frac = min(self.step, self.total_steps) / self.total_steps
        return (self.lr0 - self.lr_end) * (1.0 - frac) ** self.power + self.lr_end


def sgd_update(params, grads, opt, cell):
    """One descent step; returns new parameters and advances `opt`.

    Gradients are expected pre-clipped (train_episode clips); this function
    only applies lr(t) and optional momentum.
    """
    lr = opt.learning_rate()
    tensors = params.tensors(cell)
    grad_tensors = grads.tensors(cell)
    if opt.momentum:
        if opt.velocity is None:
            opt.velocity = [np.zeros_like(t) for t in tensors]
        opt.velocity = [opt.momentum * v + g
                        for v, g in zip(opt.velocity, grad_tensors)]
        steps = opt.velocity
    else:
        steps = grad_tensors
    updated = [t - lr * g for t, g in zip(tensors, steps)]
    for t in updated:
        if not np.all(np.isfinite(t)):
            raise NonFiniteError("non-finite parameters after update")
    opt.step += 1

    n_t = len(params.transform)
    names = STATE_PARAM_ORDER[cell]
    return DecoderParams(
        transform=updated[:n_t],
        state=dict(zip(names, updated[n_t:n_t + len(names)])),
        out_w=updated[-2], out_b=updated[-1])


def clip_gradient_set(grads, cell, max_norm=13.0):
    """Global-norm clip across every tensor of a gradient set."""
    clipped = clip_global_norm(grads.tensors(cell), max_norm)
    n_t = len(grads.transform)
    names = STATE_PARAM_ORDER[cell]
    return DecoderParams(
        transform=clipped[:n_t],
        state=dict(zip(names, clipped[n_t:n_t + len(names)])),
        out_w=clipped[-2], out_b=clipped[-1])
