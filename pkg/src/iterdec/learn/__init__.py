from .bptt import bptt_grads
from .loss import LossConfig, loss_episode, loss_recon_grads, loss_step_grad
from .optimizer import OptimizerState, clip_gradient_set, sgd_update
from .rtrl import rtrl_episode_grads, rtrl_jacobian_zero, rtrl_step
from .sab import SabConfig, SabMemory, sab_backward, sab_forward
from .trainer import ALGORITHMS, episode_grads, iterate_batches, train_episode
from .uoro import UoroFactors, uoro_episode_grads, uoro_factors_zero, uoro_step

__all__ = [
    "ALGORITHMS", "LossConfig", "OptimizerState", "SabConfig", "SabMemory",
    "UoroFactors", "bptt_grads", "clip_gradient_set", "episode_grads",
    "iterate_batches", "loss_episode", "loss_recon_grads", "loss_step_grad",
    "rtrl_episode_grads", "rtrl_jacobian_zero", "rtrl_step", "sab_backward",
    "sab_forward", "sgd_update", "train_episode", "uoro_episode_grads",
    "uoro_factors_zero", "uoro_step",
]
