"""Forward-mode online learning: the exact state-parameter sensitivity
matrix is propagated through every refinement step, so gradients come out
step by step without unrolling.

The sensitivity J_t = dz_t/dθ covers the transform and state parameters
(flattened per cellgrad.recurrent_layout); the reconstruction head only
feeds the output map, so its gradient is computed exactly outside J.  For
the LSTM the propagated state z is the concatenation (s, c).

Per step:  J_{t+1} = (dF/dθ)|_direct + (dF/dz_prev) . J_t,  and the step's
recurrent gradient is (dL/dz_{t+1}) . J_{t+1}.  Summed over an episode this
equals the reverse-mode gradient exactly (no truncation anywhere), at a
per-step cost that grows like n^4 for n hidden units.
"""

import numpy as np

from ..model import GradientSet, STATE_PARAM_ORDER, cell_step, embed, reconstruct
from ..numerics import NonFiniteError
from .cellgrad import (add_immediate_jacobian, recurrent_size, state_jacobian,
                       unflatten_recurrent, zdim)
from .loss import LossConfig, loss_episode, loss_step_grad


def rtrl_jacobian_zero(cfg, batch=1):
    """J_0 = 0: the episode's initial state does not depend on θ."""
    return np.zeros((batch, zdim(cfg), recurrent_size(cfg)))


def loss_state_feedback(dldp_k, params, cfg):
    """dL/dz for one step: the reconstruction reads the hidden state only,
    so the cell-state rows (LSTM) are zero."""
    q_s = dldp_k @ params.out_w
    if cfg.cell == "lstm":
        return np.concatenate([q_s, np.zeros_like(q_s)], axis=1)
    return q_s


def grads_from_flat(rec_flat, out_w, out_b, cfg):
    transform, state = unflatten_recurrent(rec_flat, cfg)
    return GradientSet(transform=transform, state=state, out_w=out_w, out_b=out_b)


def rtrl_step(jac, e, s_prev, c_prev, params, cfg, inputs, target=None,
              loss_cfg=None):
    """Advance state and sensitivity one refinement step.

    With a `target`, also returns this step's exact gradient contribution
    (the step's share of the episode loss differentiated through J and the
    reconstruction head); otherwise step_grads is None.
    """
    s_next, c_next, cache = cell_step(cfg, params, e, s_prev, c_prev)
    jac_next = np.matmul(state_jacobian(cfg, params, cache), jac)
    add_immediate_jacobian(jac_next, cfg, params, cache, inputs)
    if not np.all(np.isfinite(jac_next)):
        raise NonFiniteError("non-finite sensitivity: training diverged")

    step_grads = None
    if target is not None:
        recon = reconstruct(s_next, params)
        dldp_k = loss_step_grad(target, recon, cfg.steps, loss_cfg or LossConfig())
        q_z = loss_state_feedback(dldp_k, params, cfg)
        # sum_b q_z[b] . J[b] as one flat matrix-vector product
        rec_flat = q_z.reshape(-1) @ jac_next.reshape(-1, jac_next.shape[2])
        step_grads = grads_from_flat(rec_flat, dldp_k.T @ s_next,
                                     dldp_k.sum(axis=0), cfg)
    return s_next, c_next, jac_next, step_grads


def rtrl_episode_grads(inputs, targets, params, cfg, loss_cfg=None):
    """(loss, gradient set) for one batch of episodes, accumulated online.

    The per-step loss terms sum to the episode loss, so the summed per-step
    gradients equal the unrolled reverse-mode gradient.
    """
    loss_cfg = loss_cfg or LossConfig()
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 2:
        inputs = inputs[None]
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[None]
    batch = inputs.shape[0]

    e = embed(inputs, params.transform)
    s = np.zeros((batch, cfg.n))
    c = np.zeros((batch, cfg.n)) if cfg.cell == "lstm" else None
    jac = rtrl_jacobian_zero(cfg, batch)

    total = None
    recons = []
    for _ in range(cfg.steps):
        s, c, jac, step_grads = rtrl_step(jac, e, s, c, params, cfg, inputs,
                                          target=targets, loss_cfg=loss_cfg)
        recons.append(reconstruct(s, params))
        if total is None:
            total = step_grads
        else:
            for i in range(cfg.n_inputs):
                total.transform[i] += step_grads.transform[i]
            for name in STATE_PARAM_ORDER[cfg.cell]:
                total.state[name] += step_grads.state[name]
            total.out_w += step_grads.out_w
            total.out_b += step_grads.out_b

    loss, _, _ = loss_episode(targets, recons, loss_cfg)
    return loss, total
