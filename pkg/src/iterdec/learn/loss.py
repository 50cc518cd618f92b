"""Episode loss: a convex combination of mean absolute and mean squared
error over the K reconstruction passes of a mini-batch.

As printed in the defining equations, the MAE term is normalized by 1/(2K)
(no batch division) while the MSE term uses 1/(2BK); set
`mae_batch_normalized` to divide the MAE term by B as well.
"""

from dataclasses import dataclass

import numpy as np

from ..numerics import NonFiniteError


@dataclass
class LossConfig:
    alpha: float = 0.235          # MSE weight; MAE gets (1 - alpha)
    mae_batch_normalized: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


def _stack_recons(recons):
    recons = np.asarray(recons, dtype=np.float64)
    if recons.ndim == 2:       # (K, d2) single block
        recons = recons[:, None, :]
    return recons


def loss_episode(targets, recons, cfg):
    """Distortion D plus its two components.

    targets: (B, d2); recons: K-long sequence of (B, d2), or array (K, B, d2).
    Returns (D, D_mae, D_mse).
    """
    recons = _stack_recons(recons)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[None]
    steps, batch = recons.shape[0], recons.shape[1]
    diff = recons - targets[None]
    mae_norm = 2.0 * steps * (batch if cfg.mae_batch_normalized else 1)
    d_mae = float(np.sum(np.abs(diff))) / mae_norm
    d_mse = float(np.sum(diff * diff)) / (2.0 * batch * steps)
    d = (1.0 - cfg.alpha) * d_mae + cfg.alpha * d_mse
    if not np.isfinite(d):
        raise NonFiniteError("loss is non-finite")
    return d, d_mae, d_mse


def loss_recon_grads(targets, recons, cfg):
    """dD/dp~ for every step and block, shape (K, B, d2).

    The k-th slice is the gradient of the k-th per-step loss term, so the
    per-step terms sum exactly to the episode loss (which is what makes
    forward-mode accumulation agree with reverse mode).
    """
    recons = _stack_recons(recons)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[None]
    steps, batch = recons.shape[0], recons.shape[1]
    diff = recons - targets[None]
    mae_norm = 2.0 * steps * (batch if cfg.mae_batch_normalized else 1)
    return ((1.0 - cfg.alpha) / mae_norm) * np.sign(diff) \
        + (cfg.alpha / (batch * steps)) * diff


def loss_step_grad(targets, recon, total_steps, cfg):
    """Gradient of the k-th per-step loss term for online algorithms.

    `recon` is one step's reconstruction (B, d2); normalization uses the
    episode's full K so the per-step terms sum to the episode loss.
    """
    targets = np.asarray(targets, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[None]
        recon = recon[None]
    batch = targets.shape[0]
    diff = recon - targets
    mae_norm = 2.0 * total_steps * (batch if cfg.mae_batch_normalized else 1)
    return ((1.0 - cfg.alpha) / mae_norm) * np.sign(diff) \
        + (cfg.alpha / (batch * total_steps)) * diff
