# t_model.py

import math

import numpy as np
import pytest

from catpose.errors import IndexOutOfRange, InvalidConfig, ShapeMismatch
from catpose.model import (CATEGORY_INDEPENDENT, FUSION_TOP1, FUSION_WEIGHTED, IntegratedModel, ModelConfig,
                           fuse, fuse_top1, fuse_weighted, independent_counterpart, load_into,
                           oracle_distributions)


def test_weighted_fusion_arithmetic():
    """ Test if weighted fusion is the probability-weighted sum of the heads """
    heads = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    assert np.allclose(fuse_weighted(heads, np.array([0.25, 0.75])), [0.25, 0.75, 0.0])


def test_fusions_select_the_one_hot_head_bitwise(rng):
    """ Test if both fusions return the head picked by a one-hot distribution """
    heads = rng.uniform(-3.0, 3.0, size=(4, 3))
    for c in range(4):
        p = np.zeros(4)
        p[c] = 1.0
        assert np.array_equal(fuse_weighted(heads, p), heads[c])
        assert np.array_equal(fuse_top1(heads, p), heads[c])


def test_weighted_fusion_of_equal_heads_is_that_head(rng):
    """ Test if fusing identical heads returns that head """
    y = np.array([0.3, -1.2, 2.0])
    heads = np.tile(y, (5, 1))
    p = rng.dirichlet(np.ones(5))
    assert np.allclose(fuse_weighted(heads, p), y, atol=1e-15)


def test_top1_tie_break_and_selection():
    """ Test if top-1 fusion breaks ties toward the lower category """
    heads = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0]])
    assert np.array_equal(fuse_top1(heads, np.full(3, 1.0 / 3.0)), heads[0])
    assert np.array_equal(fuse_top1(heads, np.array([0.2, 0.5, 0.3])), heads[1])


def test_weighted_fusion_stays_inside_pi(rng):
    """ Test if weighted fusion of head outputs stays inside the pi ball """
    n, K = 100_000, 4
    heads = rng.uniform(-1.0, 1.0, size=(n, K, 3)) * np.nextafter(math.pi, 0.0)
    p = rng.dirichlet(np.ones(K), size=n)
    fused = fuse_weighted(heads, p)
    assert np.max(np.abs(fused)) < math.pi


def test_top1_is_invariant_under_argmax_preserving_rescaling(rng):
    """ Test if top-1 fusion depends only on the argmax """
    heads = rng.standard_normal((200, 4, 3))
    p = rng.dirichlet(np.ones(4), size=200)
    rescaled = p ** 3
    rescaled /= rescaled.sum(axis=1, keepdims=True)
    assert np.array_equal(fuse_top1(heads, p), fuse_top1(heads, rescaled))


def test_fusion_shape_and_kind_checks():
    """ Test if fusion rejects mismatched shapes and unknown kinds """
    with pytest.raises(ShapeMismatch):
        fuse_weighted(np.zeros((3, 3)), np.ones(2) / 2)
    with pytest.raises(InvalidConfig):
        fuse(np.zeros((2, 3)), np.ones(2) / 2, 'mean')


def test_model_config_validation():
    """ Test if invalid model settings raise InvalidConfig """
    with pytest.raises(InvalidConfig):
        ModelConfig(num_categories=1)
    with pytest.raises(InvalidConfig):
        ModelConfig(variant='shared')
    with pytest.raises(InvalidConfig):
        ModelConfig(head_hidden=())


def test_model_config_dict_round_trip_and_digest(tiny_config):
    """ Test if a model config survives to_dict and keeps its digest """
    again = ModelConfig.from_dict(tiny_config.to_dict())
    assert again == tiny_config
    assert again.digest() == tiny_config.digest()
    assert ModelConfig.from_dict({**tiny_config.to_dict(), 'feature_dim': 9}).digest() != tiny_config.digest()


def test_forward_shapes_and_distribution(tiny_model, rng):
    """ Test if the forward pass has the expected shapes and a valid distribution """
    x = rng.standard_normal((7, 8))
    features = tiny_model.feature_forward(x)
    assert features.shape == (7, 8)
    p = tiny_model.category_forward(features)
    assert p.shape == (7, 3)
    assert np.allclose(p.sum(axis=1), 1.0)
    assert np.all(p >= 0)
    heads = tiny_model.pose_heads_forward(features)
    assert heads.shape == (7, 3, 3)
    assert np.all(np.abs(heads) < math.pi)


def test_forward_is_deterministic(tiny_config, rng):
    """ Test if two models from the same seed predict the same """
    x = rng.standard_normal((5, 8))
    first = IntegratedModel(tiny_config).init_params(np.random.default_rng(1)).predict(x)
    second = IntegratedModel(tiny_config).init_params(np.random.default_rng(1)).predict(x)
    for a, b in zip(first, second):
        assert np.array_equal(a, b)


def test_identity_feature_layer_passes_input_through(rng):
    """ Test if an identity feature layer returns its input """
    config = ModelConfig(num_categories=2, input_dim=4, feature_hidden=(), feature_dim=4,
                         category_hidden=(4,), head_hidden=(4,))
    net = IntegratedModel(config).init_params(rng)
    net.store.set_values('fn.fc1.weight', np.eye(4))
    net.store.set_values('fn.fc1.bias', np.zeros(4))
    x = rng.standard_normal((3, 4))
    assert np.array_equal(net.feature_forward(x), x)


def test_predict_with_oracle_override_uses_that_head(tiny_model, rng):
    """ Test if predict with an oracle override returns that category's head """
    x = rng.standard_normal((4, 8))
    c_star = np.array([0, 2, 1, 2])
    p_oracle = np.eye(3)[c_star]
    p, fused, R = tiny_model.predict(x, FUSION_WEIGHTED, p_override=p_oracle)
    heads = tiny_model.pose_heads_forward(tiny_model.feature_forward(x))
    assert np.array_equal(p, p_oracle)
    assert np.array_equal(fused, heads[np.arange(4), c_star])
    _, fused_top1, _ = tiny_model.predict(x, FUSION_TOP1, p_override=p_oracle)
    assert np.array_equal(fused_top1, fused)
    assert R.shape == (4, 3, 3)


def test_zero_fused_vector_gives_identity(tiny_config):
    """ Test if a zero fused vector predicts the identity rotation """
    net = IntegratedModel(tiny_config).init_params(np.random.default_rng(0))
    for name in net.store.names(prefixes=['pn.']):
        if name.endswith('fc3.weight') or name.endswith('fc3.bias'):
            net.store.set_values(name, np.zeros_like(net.store[name]))
    _, fused, R = net.predict(np.ones((2, 8)))
    assert np.array_equal(fused, np.zeros((2, 3)))
    assert np.array_equal(R, np.tile(np.eye(3), (2, 1, 1)))


def test_independent_variant_fills_every_slot_with_one_head(tiny_config, rng):
    """ Test if the category-independent variant repeats its one head """
    config = independent_counterpart(tiny_config)
    assert config.variant == CATEGORY_INDEPENDENT
    assert config.shared_head_hidden == (48, 8)
    net = IntegratedModel(config).init_params(rng)
    heads = net.pose_heads_forward(net.feature_forward(rng.standard_normal((5, 8))))
    assert np.array_equal(heads[:, 0], heads[:, 1])
    assert np.array_equal(heads[:, 0], heads[:, 2])
    assert net.store.names(prefixes=['pn.']) == net.store.names(prefixes=['pn.shared.'])


def test_independent_variant_has_comparable_size(tiny_config):
    """ Test if the independent variant has about as many parameters """
    dependent = tiny_config.parameter_count()
    independent = independent_counterpart(tiny_config).parameter_count()
    assert 0.5 < independent / dependent < 1.5


def test_load_into_checks_layout(tiny_model, tiny_config):
    """ Test if load_into rejects stores with the wrong names or shapes """
    rebound = load_into(tiny_config, tiny_model.store)
    assert rebound.store is tiny_model.store
    other = ModelConfig.from_dict({**tiny_config.to_dict(), 'feature_dim': 6})
    with pytest.raises(ShapeMismatch):
        load_into(other, tiny_model.store)


def test_oracle_distributions_stack_one_delta_per_row():
    """ Test if oracle_distributions builds a one-hot row per label and rejects unknown labels """
    assert np.array_equal(oracle_distributions(np.array([1, 0, 1]), 2), [[0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    assert oracle_distributions(np.array([], dtype=int), 3).shape == (0, 3)
    with pytest.raises(IndexOutOfRange):
        oracle_distributions(np.array([0, 3]), 3)


def test_infer_keeps_the_network_distribution_next_to_the_override(tiny_model, rng):
    """ Test if infer reports the category net's p even when the heads are fused with an override """
    x = rng.standard_normal((5, 8))
    plain = tiny_model.infer(x)
    overridden = tiny_model.infer(x, FUSION_WEIGHTED, p_override=np.eye(3)[[0, 1, 2, 0, 1]])
    assert np.array_equal(plain.p_net, overridden.p_net)
    assert np.array_equal(plain.p, plain.p_net)
    assert np.array_equal(plain.heads, overridden.heads)
    p, fused, R = tiny_model.predict(x)
    assert np.array_equal(p, plain.p) and np.array_equal(fused, plain.fused) and np.array_equal(R, plain.R)
