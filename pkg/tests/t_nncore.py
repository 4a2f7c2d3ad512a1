# t_nncore.py

import math

import numpy as np
import pytest

from catpose import nncore
from catpose.errors import BatchTooSmall, InvalidConfig, InvalidRange, ShapeMismatch


def test_dense_forward_and_backward_scalar():
    """ Test if a dense layer computes the expected values and gradients """
    layer = nncore.DenseLayer(np.array([[2.0]]), np.array([3.0]))
    x = np.array([[5.0]])
    assert nncore.dense_forward(layer, x)[0, 0] == 13.0
    dx, dw, db = nncore.dense_backward(layer, x, np.array([[1.0]]))
    assert (dx[0, 0], dw[0, 0], db[0]) == (2.0, 5.0, 1.0)


def test_dense_forward_rejects_wrong_width():
    """ Test if a dense layer rejects input of the wrong width """
    layer = nncore.DenseLayer(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ShapeMismatch):
        nncore.dense_forward(layer, np.zeros((4, 2)))


def make_batchnorm(width, training=True, scale=1.0):
    return nncore.BatchNormLayer(np.full(width, scale), np.zeros(width), np.zeros(width),
                                 np.ones(width), training=training)


def test_batchnorm_train_mode_normalizes(rng):
    """ Test if batch norm in train mode normalizes each column """
    x = rng.normal(3.0, 2.0, size=(64, 4))
    layer = make_batchnorm(4)
    y, _ = nncore.batchnorm_forward(layer, x)
    assert np.allclose(y.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(y.var(axis=0), 1.0, atol=1e-3)


def test_batchnorm_with_zero_scale_outputs_shift(rng):
    """ Test if batch norm with zero scale outputs the shift """
    layer = make_batchnorm(3, scale=0.0)
    layer.shift[...] = [0.5, -1.0, 2.0]
    y, _ = nncore.batchnorm_forward(layer, rng.standard_normal((5, 3)))
    assert np.array_equal(y, np.tile(layer.shift, (5, 1)))


def test_batchnorm_running_statistics_update(rng):
    """ Test if batch norm updates its running statistics with momentum """
    layer = make_batchnorm(2)
    x = rng.standard_normal((10, 2))
    nncore.batchnorm_forward(layer, x)
    assert np.allclose(layer.running_mean, 0.1 * x.mean(axis=0))
    assert np.allclose(layer.running_var, 0.9 + 0.1 * x.var(axis=0))
    before = layer.running_mean.copy()
    nncore.batchnorm_forward(layer, x, update_stats=False)
    assert np.array_equal(layer.running_mean, before)


def test_batchnorm_eval_mode_uses_running_statistics(rng):
    """ Test if batch norm in eval mode uses the running statistics """
    layer = make_batchnorm(2, training=False)
    layer.running_mean[...] = [1.0, -1.0]
    layer.running_var[...] = [4.0, 9.0]
    y, _ = nncore.batchnorm_forward(layer, np.array([[3.0, 2.0]]))
    assert np.allclose(y, [[2.0 / math.sqrt(4.0 + 1e-5), 3.0 / math.sqrt(9.0 + 1e-5)]])


def test_batchnorm_single_row_in_train_mode_raises():
    """ Test if batch norm refuses a single row in train mode """
    with pytest.raises(BatchTooSmall):
        nncore.batchnorm_forward(make_batchnorm(2), np.zeros((1, 2)))


def test_pi_tanh_is_strictly_inside_pi():
    """ Test if the pi-tanh activation stays strictly inside (-pi, pi) """
    out = nncore.activation('pi_tanh', np.array([1e3, -1e3, 0.0]))
    assert out[0] < math.pi and out[1] > -math.pi
    assert out[2] == 0.0


def test_relu_and_unknown_activation():
    """ Test if relu works and unknown activations are rejected """
    assert np.array_equal(nncore.activation('relu', np.array([-1.0, 2.0])), [0.0, 2.0])
    with pytest.raises(InvalidConfig):
        nncore.activation('gelu', np.zeros(2))


def test_softmax_rows_sum_to_one_and_are_shift_invariant(rng):
    """ Test if softmax rows sum to one and ignore a constant shift """
    logits = rng.standard_normal((6, 4))
    p = nncore.softmax(logits)
    assert np.allclose(p.sum(axis=1), 1.0)
    assert np.allclose(nncore.softmax(logits + 100.0), p)
    assert np.all(np.isfinite(nncore.softmax(np.array([[1e4, 0.0, -1e4]]))))


def test_single_adam_step():
    """ Test if one Adam step moves the parameter by the expected amount """
    store = nncore.ParameterStore()
    store.add('w', np.array([0.0]))
    nncore.adam_step(store, {'w': np.array([1.0])}, lr=0.1)
    assert store['w'][0] == pytest.approx(-0.1, abs=1e-6)
    assert store.entry('w').step == 1


def test_adam_step_rejects_misshapen_gradient():
    """ Test if Adam rejects a gradient of the wrong shape """
    store = nncore.ParameterStore()
    store.add('w', np.zeros(3))
    with pytest.raises(ShapeMismatch):
        nncore.adam_step(store, {'w': np.zeros(2)}, lr=0.1)


def test_parameter_store_names_and_copy():
    """ Test if the parameter store filters names and copies independently """
    store = nncore.ParameterStore()
    store.add('fn.fc1.weight', np.ones((2, 2)))
    store.add('fn.bn1.running_mean', np.zeros(2), trainable=False)
    store.add('cn.fc1.weight', np.ones((1, 2)))
    assert store.names(prefixes=['fn.']) == ['fn.fc1.weight', 'fn.bn1.running_mean']
    assert store.names(trainable_only=True) == ['fn.fc1.weight', 'cn.fc1.weight']
    assert store.parameter_count() == 6
    clone = store.copy()
    clone['fn.fc1.weight'][0, 0] = 5.0
    assert store['fn.fc1.weight'][0, 0] == 1.0
    with pytest.raises(InvalidConfig):
        store.add('cn.fc1.weight', np.zeros(1))


def test_sequential_layout_and_shapes(rng):
    """ Test if a sequential stack creates its tensors with the right shapes """
    store = nncore.ParameterStore()
    net = nncore.Sequential(store, 'net', [5, 7, 3], batchnorm=True, output_activation='pi_tanh')
    net.init_params(rng)
    assert store['net.fc1.weight'].shape == (7, 5)
    assert store['net.fc2.weight'].shape == (3, 7)
    assert 'net.bn1.running_var' in store
    out, _ = net.forward(rng.standard_normal((4, 5)), training=True, update_stats=True)
    assert out.shape == (4, 3)
    assert np.all(np.abs(out) < math.pi)


def test_gradcheck_on_squared_norm():
    """ Test if the gradient check passes on a known function """
    store = nncore.ParameterStore()
    store.add('p', np.array([1.0, -2.0, 0.5]))

    def half_squared_norm(s):
        return 0.5 * float(np.sum(s['p'] ** 2)), {'p': s['p'].copy()}

    report = nncore.gradcheck(half_squared_norm, store)
    assert report.passed
    assert report.max_rel_error < 1e-8


def test_gradcheck_reports_wrong_gradient():
    """ Test if the gradient check reports a wrong gradient """
    store = nncore.ParameterStore()
    store.add('p', np.array([1.0, 2.0]))

    def wrong(s):
        return 0.5 * float(np.sum(s['p'] ** 2)), {'p': 2.0 * s['p']}

    report = nncore.gradcheck(wrong, store)
    assert not report.passed
    assert report.failing == ['p']
    assert report.max_rel_error == pytest.approx(0.5, rel=1e-6)


def test_gradcheck_rejects_non_positive_step():
    """ Test if the gradient check rejects a non-positive step """
    store = nncore.ParameterStore()
    store.add('p', np.zeros(1))
    with pytest.raises(InvalidRange):
        nncore.gradcheck(lambda s: (0.0, {'p': np.zeros(1)}), store, h=0.0)


@pytest.mark.parametrize("batchnorm", [False, True])
def test_sequential_backward_matches_finite_differences(rng, batchnorm):
    """ Test if the sequential backward pass matches finite differences """
    store = nncore.ParameterStore()
    net = nncore.Sequential(store, 'net', [4, 6, 2], batchnorm=batchnorm)
    net.init_params(rng)
    x = rng.standard_normal((5, 4))
    target = rng.standard_normal((5, 2))

    def objective(s):
        out, tape = net.forward(x, training=True, update_stats=False)
        diff = out - target
        grads = {}
        net.backward(tape, diff, grads)
        return 0.5 * float(np.sum(diff * diff)), grads

    report = nncore.gradcheck(objective, store, tolerance=1e-5, atol=1e-8)
    assert report.passed, report.failing
