import numpy as np
import pytest

from iterdec.learn import LossConfig, loss_episode, loss_recon_grads, loss_step_grad
from iterdec.numerics import SeededRng, finite_diff_grad, max_relative_error


def test_zero_distortion():
    targets = np.array([[0.25, 0.5]])
    recons = np.stack([targets, targets])
    d, d_mae, d_mse = loss_episode(targets, recons, LossConfig())
    assert d == d_mae == d_mse == 0.0


def test_worked_scalar_case():
    # K=1, B=1, single dim, recon 3, target 1, alpha 0.235:
    # D_MAE = 1, D_MSE = 2, D = 0.765 + 0.47 = 1.235
    d, d_mae, d_mse = loss_episode(np.array([[1.0]]), np.array([[[3.0]]]),
                                   LossConfig(alpha=0.235))
    assert abs(d_mae - 1.0) < 1e-12
    assert abs(d_mse - 2.0) < 1e-12
    assert abs(d - 1.235) < 1e-12


def test_alpha_endpoints():
    rng = SeededRng(1)
    targets = rng.uniform(0, 1, (3, 5))
    recons = rng.uniform(0, 1, (2, 3, 5))
    d1, _, d_mse = loss_episode(targets, recons, LossConfig(alpha=1.0))
    assert d1 == d_mse
    d0, d_mae, _ = loss_episode(targets, recons, LossConfig(alpha=0.0))
    assert d0 == d_mae


def test_mae_batch_normalization_flag():
    rng = SeededRng(2)
    targets = rng.uniform(0, 1, (4, 3))
    recons = rng.uniform(0, 1, (2, 4, 3))
    _, plain, _ = loss_episode(targets, recons, LossConfig())
    _, normed, _ = loss_episode(targets, recons,
                                LossConfig(mae_batch_normalized=True))
    np.testing.assert_allclose(plain / 4.0, normed, atol=1e-14)


def test_alpha_validated():
    with pytest.raises(ValueError):
        LossConfig(alpha=1.5)


def test_grads_match_finite_differences():
    rng = SeededRng(3)
    targets = rng.uniform(0, 1, (2, 4))
    recons = rng.uniform(0, 1, (3, 2, 4))
    cfg = LossConfig()
    analytic = loss_recon_grads(targets, recons, cfg)

    def f(tensors):
        return loss_episode(targets, tensors[0], cfg)[0]

    numeric = finite_diff_grad(f, [recons], 1e-6)[0]
    assert max_relative_error([analytic], [numeric]) < 1e-6


def test_step_grads_sum_to_episode():
    rng = SeededRng(4)
    targets = rng.uniform(0, 1, (3, 4))
    recons = rng.uniform(0, 1, (2, 3, 4))
    cfg = LossConfig()
    full = loss_recon_grads(targets, recons, cfg)
    for k in range(2):
        per_step = loss_step_grad(targets, recons[k], 2, cfg)
        np.testing.assert_allclose(per_step, full[k], atol=1e-15)


def test_mlp_loss_constant_in_k():
    # identical reconstructions at every step: both loss terms are
    # independent of K by their averaging conventions
    rng = SeededRng(5)
    targets = rng.uniform(0, 1, (2, 6))
    one = rng.uniform(0, 1, (1, 2, 6))
    for steps in (1, 3, 7):
        recons = np.repeat(one, steps, axis=0)
        d, _, _ = loss_episode(targets, recons, LossConfig())
        d1, _, _ = loss_episode(targets, one, LossConfig())
        np.testing.assert_allclose(d, d1, atol=1e-12)
