"""Rank-one stochastic approximation of forward-mode sensitivity.

Instead of the full dz/dθ matrix, two vectors are carried whose outer
product z~ ⊗ θ~ is an unbiased estimate of it.  Each step draws a vector ν
of independent random signs and updates

    z~' = ρ0 (dF/dz) z~ + ρ1 ν
    θ~' = θ~/ρ0 + (ν^T dF/dθ)/ρ1

with variance-control scalars

    ρ0 = sqrt(||θ~|| / (||(dF/dz) z~|| + ε))
    ρ1 = sqrt(||ν^T dF/dθ|| / (||ν|| + ε))

and either ρ defaulting to 1 when its numerator is zero (both factors start
at zero, which keeps every estimate unbiased).  The tangent (dF/dz) z~ is a
Jacobian-vector product, never a materialized Jacobian.  The reconstruction
head stays exact, as in the full forward-mode algorithm.
"""

from dataclasses import dataclass

import numpy as np

from ..model import STATE_PARAM_ORDER, cell_step, embed, reconstruct
from ..numerics import NonFiniteError
from .cellgrad import param_vjp, recurrent_size, state_jvp, zdim
from .loss import LossConfig, loss_episode, loss_step_grad
from .rtrl import grads_from_flat, loss_state_feedback


@dataclass
class UoroFactors:
    z_tilde: np.ndarray      # (B, zdim)
    theta_tilde: np.ndarray  # (B, θ_size)


def uoro_factors_zero(cfg, batch=1):
    return UoroFactors(
        z_tilde=np.zeros((batch, zdim(cfg))),
        theta_tilde=np.zeros((batch, recurrent_size(cfg))))


def _split_z(v, cfg):
    if cfg.cell == "lstm":
        n = cfg.n
        return v[:, :n], v[:, n:]
    return v, None


def uoro_step(factors, rng, e, s_prev, c_prev, params, cfg, inputs,
              target=None, loss_cfg=None, epsilon=1e-7):
    """Advance state and rank-one factors one refinement step.

    With a `target`, also returns this step's stochastic gradient estimate
    (recurrent part via z~ ⊗ θ~, reconstruction head exact).
    """
    s_next, c_next, cache = cell_step(cfg, params, e, s_prev, c_prev)

    v_s, v_c = _split_z(factors.z_tilde, cfg)
    jv_s, jv_c = state_jvp(cfg, params, cache, v_s, v_c)
    forwarded = jv_s if jv_c is None else np.concatenate([jv_s, jv_c], axis=1)

    nu = rng.signs(factors.z_tilde.shape)
    nu_s, nu_c = _split_z(nu, cfg)
    projected = param_vjp(cfg, params, cache, inputs, nu_s, nu_c)

    theta_norm = np.linalg.norm(factors.theta_tilde, axis=1)
    fwd_norm = np.linalg.norm(forwarded, axis=1)
    proj_norm = np.linalg.norm(projected, axis=1)
    nu_norm = np.linalg.norm(nu, axis=1)

    rho0 = np.where(theta_norm == 0.0, 1.0,
                    np.sqrt(theta_norm / (fwd_norm + epsilon)))
    rho1 = np.where(proj_norm == 0.0, 1.0,
                    np.sqrt(proj_norm / (nu_norm + epsilon)))

    z_tilde = rho0[:, None] * forwarded + rho1[:, None] * nu
    theta_tilde = factors.theta_tilde / rho0[:, None] + projected / rho1[:, None]
    if not (np.all(np.isfinite(z_tilde)) and np.all(np.isfinite(theta_tilde))):
        raise NonFiniteError("non-finite rank-one factors: training diverged")
    factors_next = UoroFactors(z_tilde=z_tilde, theta_tilde=theta_tilde)

    step_grads = None
    if target is not None:
        recon = reconstruct(s_next, params)
        dldp_k = loss_step_grad(target, recon, cfg.steps, loss_cfg or LossConfig())
        q_z = loss_state_feedback(dldp_k, params, cfg)
        signal = np.einsum("bz,bz->b", q_z, z_tilde)
        step_grads = grads_from_flat(signal @ theta_tilde, dldp_k.T @ s_next,
                                     dldp_k.sum(axis=0), cfg)
    return s_next, c_next, factors_next, step_grads


def uoro_episode_grads(inputs, targets, params, cfg, rng, loss_cfg=None,
                       epsilon=1e-7):
    """(loss, stochastic gradient estimate) for one batch of episodes."""
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
    factors = uoro_factors_zero(cfg, batch)

    total = None
    recons = []
    for _ in range(cfg.steps):
        s, c, factors, step_grads = uoro_step(
            factors, rng, e, s, c, params, cfg, inputs,
            target=targets, loss_cfg=loss_cfg, epsilon=epsilon)
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
