# t_losses.py

import math

import numpy as np
import pytest

from catpose import losses, so3
from catpose.errors import IndexOutOfRange, InvalidConfig


def test_pose_loss_of_single_axis_rotation():
    """ Test if the pose loss of a rotation about one axis is its angle """
    loss, grad = losses.pose_loss([0.0, 0.0, math.pi / 2], np.eye(3))
    assert loss == pytest.approx(math.pi / 2, abs=1e-12)
    assert np.allclose(grad, [0.0, 0.0, 1.0], atol=1e-9)


def test_pose_loss_is_zero_at_the_ground_truth(rng):
    """ Test if the pose loss and its gradient vanish at the ground truth """
    y = so3.random_axis_angle(rng, 2.0)
    loss, grad = losses.pose_loss(y, so3.exp_map(y))
    assert loss == pytest.approx(0.0, abs=1e-7)
    assert np.array_equal(grad, np.zeros(3))


def test_pose_loss_gradient_matches_finite_differences(rng):
    """ Test if the pose loss gradient matches finite differences """
    h = 1e-6
    for _ in range(50):
        y = so3.random_axis_angle(rng, 2.5)
        R_star = so3.random_rotation(rng, 2.5)
        loss, grad = losses.pose_loss(y, R_star)
        if not 1e-2 < loss < math.pi - 5e-2:
            continue
        numeric = np.array([
            (losses.pose_loss(y + h * e, R_star)[0] - losses.pose_loss(y - h * e, R_star)[0]) / (2 * h)
            for e in np.eye(3)
        ])
        assert np.allclose(grad, numeric, rtol=1e-4, atol=1e-7)


def test_pose_loss_batch_matches_single(rng):
    """ Test if the batched pose loss equals the per-sample one """
    Y = np.stack([so3.random_axis_angle(rng, 3.0) for _ in range(20)])
    R_star = np.stack([so3.random_rotation(rng, 3.0) for _ in range(20)])
    batch_losses, batch_grads = losses.pose_loss_batch(Y, R_star)
    for n in range(20):
        loss, grad = losses.pose_loss(Y[n], R_star[n])
        assert batch_losses[n] == pytest.approx(loss, abs=1e-14)
        assert np.allclose(batch_grads[n], grad, rtol=1e-12, atol=1e-14)
    assert np.allclose(batch_losses, so3.geodesic_distance_batch(so3.exp_map_batch(Y), R_star))


def test_cross_entropy_values_and_gradient():
    """ Test if cross-entropy and its logit gradient have the expected values """
    loss, grad = losses.cross_entropy(np.full(4, 0.25), 1)
    assert loss == pytest.approx(math.log(4))
    assert np.allclose(grad, [0.25, -0.75, 0.25, 0.25])
    near_one_hot = np.array([1e-12, 1.0 - 1e-12])
    assert losses.cross_entropy(near_one_hot, 1)[0] == pytest.approx(0.0, abs=1e-11)


def test_cross_entropy_survives_zero_probability():
    """ Test if a zero probability gives a large finite loss """
    loss, _ = losses.cross_entropy(np.array([1.0, 0.0]), 1)
    assert math.isfinite(loss)


def test_cross_entropy_rejects_bad_label():
    """ Test if labels outside the category range raise IndexOutOfRange """
    with pytest.raises(IndexOutOfRange):
        losses.cross_entropy(np.full(3, 1.0 / 3.0), 3)
    with pytest.raises(IndexOutOfRange):
        losses.cross_entropy_batch(np.full((2, 3), 1.0 / 3.0), [0, -1])


def test_cross_entropy_batch_is_the_row_mean():
    """ Test if the batched cross-entropy is the mean over rows """
    P = np.array([[0.5, 0.5], [0.9, 0.1]])
    loss, grad = losses.cross_entropy_batch(P, [0, 1])
    assert loss == pytest.approx(0.5 * (math.log(2) - math.log(0.1)))
    assert np.allclose(grad, [[-0.25, 0.25], [0.45, -0.45]])


def test_joint_loss():
    """ Test if the joint loss adds lambda times the category term """
    assert losses.joint_loss(losses.JointLossConfig(lam=1.0), 0.5, 0.3) == pytest.approx(0.8)
    assert losses.joint_loss(losses.JointLossConfig(lam=0.0), 0.5, 0.3) == 0.5
    with pytest.raises(InvalidConfig):
        losses.JointLossConfig(lam=-0.1)
    with pytest.raises(InvalidConfig):
        losses.JointLossConfig(lam=float('nan'))


def test_combine_gradients_scales_category_part():
    """ Test if combined gradients scale only the category part by lambda """
    combined = losses.combine_gradients(losses.JointLossConfig(lam=0.1),
                                        {'fn.w': np.array([1.0]), 'pn.0.w': np.array([2.0])},
                                        {'fn.w': np.array([10.0]), 'cn.w': np.array([5.0])})
    assert np.allclose(combined['fn.w'], [2.0])
    assert np.allclose(combined['pn.0.w'], [2.0])
    assert np.allclose(combined['cn.w'], [0.5])
