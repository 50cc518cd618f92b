"""Exact reverse-mode gradients through the unrolled K-step episode."""

import numpy as np

from ..model import GradientSet, STATE_PARAM_ORDER
from ..numerics import NonFiniteError
from .cellgrad import backward_cell
from .loss import loss_recon_grads


def bptt_grads(trace, inputs, targets, params, cfg, loss_cfg):
    """Gradient of the episode loss w.r.t. every parameter tensor.

    The embedding is consumed at every refinement step, so its gradient (and
    through it the transform matrices') sums contributions from all K steps.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 2:
        inputs = inputs[None]
    dldp = loss_recon_grads(targets, trace.recons, loss_cfg)

    grads = params.zeros_like(cfg.cell)
    batch = inputs.shape[0]
    g_s = np.zeros((batch, cfg.n))
    g_c = np.zeros((batch, cfg.n)) if cfg.cell == "lstm" else None
    g_e = np.zeros((batch, cfg.n))

    for k in range(cfg.steps, 0, -1):
        g_p = dldp[k - 1]
        grads.out_w += g_p.T @ trace.states[k]
        grads.out_b += g_p.sum(axis=0)
        g_s = g_s + g_p @ params.out_w
        g_e_k, g_s, g_c, state_grads = backward_cell(
            cfg, params, trace.caches[k - 1], g_s, g_c)
        g_e += g_e_k
        for name in STATE_PARAM_ORDER[cfg.cell]:
            grads.state[name] += state_grads[name]

    for i in range(cfg.n_inputs):
        grads.transform[i] = g_e.T @ inputs[:, i, :]

    for t in grads.tensors(cfg.cell):
        if not np.all(np.isfinite(t)):
            raise NonFiniteError("non-finite gradient: training diverged")
    return grads
