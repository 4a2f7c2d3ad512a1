# Copyright 2024 catpose contributors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

# model.py

"""
Integrated joint category / pose network: a shared feature network (FN),
a category network (CN) producing the distribution p, and a bank of K
category-dependent pose heads (PN) whose axis-angle outputs are fused with p.
The category-independent baseline replaces the bank by one wider shared head.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import nncore, so3
from .errors import IndexOutOfRange, InvalidConfig, ShapeMismatch

CATEGORY_DEPENDENT = 'category_dependent'
CATEGORY_INDEPENDENT = 'category_independent'
FUSION_WEIGHTED = 'weighted'
FUSION_TOP1 = 'top1'
VARIANTS = (CATEGORY_DEPENDENT, CATEGORY_INDEPENDENT)
FUSIONS = (FUSION_WEIGHTED, FUSION_TOP1)


@dataclass(frozen=True)
class ModelConfig:
    num_categories: int = 4
    input_dim: int = 64
    feature_hidden: tuple = (128,)
    feature_dim: int = 64
    category_hidden: tuple = (64,)
    head_hidden: tuple = (128, 64)
    variant: str = CATEGORY_DEPENDENT
    independent_hidden: tuple = None
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        for name in ('feature_hidden', 'category_hidden', 'head_hidden', 'independent_hidden'):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(int(w) for w in value))
        if self.num_categories < 2:
            raise InvalidConfig(f"num_categories must be >= 2, got {self.num_categories}")
        if self.variant not in VARIANTS:
            raise InvalidConfig(f"Unknown model variant: {self.variant}")
        if not self.head_hidden:
            raise InvalidConfig("Pose heads need at least one hidden layer")
        widths = [self.input_dim, self.feature_dim, *self.feature_hidden, *self.category_hidden,
                  *self.head_hidden, *self.shared_head_hidden]
        if min(widths) < 1:
            raise InvalidConfig(f"All layer widths must be >= 1: {widths}")
        if self.bn_eps <= 0:
            raise InvalidConfig("bn_eps must be positive")

    @property
    def shared_head_hidden(self):
        """Hidden widths of the single head of the category-independent variant."""
        if self.independent_hidden is not None:
            return self.independent_hidden
        return (self.num_categories * self.head_hidden[0],) + tuple(self.head_hidden[1:])

    def to_dict(self):
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode('utf-8')
        return hashlib.sha256(blob).digest()

    def parameter_count(self):
        return IntegratedModel(self).init_params(np.random.default_rng(0)).store.parameter_count()


def independent_counterpart(config):
    """Category-independent variant with roughly the same parameter count."""
    return replace(config, variant=CATEGORY_INDEPENDENT, independent_hidden=None)


def oracle_distribution(c_star, K):
    """p = delta(c*)."""
    if not 0 <= c_star < K:
        raise IndexOutOfRange(f"category {c_star} outside [0, {K})")
    p = np.zeros(K)
    p[c_star] = 1.0
    return p


def oracle_distributions(c_star, K):
    """One oracle distribution per row, shape (n, K)."""
    rows = [oracle_distribution(int(c), K) for c in c_star]
    return np.stack(rows) if rows else np.zeros((0, K))


@dataclass
class Prediction:
    p_net: np.ndarray
    p: np.ndarray
    heads: np.ndarray
    fused: np.ndarray
    R: np.ndarray


def fuse_weighted(heads, p):
    """y_wgt = sum_i p_i y_i; heads (..., K, 3), p (..., K)."""
    heads = np.asarray(heads, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if heads.shape[:-1] != p.shape:
        raise ShapeMismatch(f"heads {heads.shape} do not match p {p.shape}")
    return np.einsum('...k,...kj->...j', p, heads)


def fuse_top1(heads, p):
    """Output of the most probable category's head; ties go to the lowest index."""
    heads = np.asarray(heads, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if heads.shape[:-1] != p.shape:
        raise ShapeMismatch(f"heads {heads.shape} do not match p {p.shape}")
    best = np.argmax(p, axis=-1)
    return np.take_along_axis(heads, best[..., None, None], axis=-2)[..., 0, :]


class IntegratedModel:
    def __init__(self, config, store=None):
        self.config = config
        self.store = store if store is not None else nncore.ParameterStore()
        c = config
        self.feature_net = nncore.Sequential(
            self.store, 'fn', [c.input_dim, *c.feature_hidden, c.feature_dim])
        self.category_net = nncore.Sequential(
            self.store, 'cn', [c.feature_dim, *c.category_hidden, c.num_categories])
        if self.independent:
            shared = nncore.Sequential(self.store, 'pn.shared', [c.feature_dim, *c.shared_head_hidden, 3],
                                       output_activation='pi_tanh', batchnorm=True,
                                       bn_momentum=c.bn_momentum, bn_eps=c.bn_eps)
            self.heads = [shared]
        else:
            self.heads = [
                nncore.Sequential(self.store, f'pn.{i}', [c.feature_dim, *c.head_hidden, 3],
                                  output_activation='pi_tanh', batchnorm=True,
                                  bn_momentum=c.bn_momentum, bn_eps=c.bn_eps)
                for i in range(c.num_categories)
            ]

    @property
    def independent(self):
        return self.config.variant == CATEGORY_INDEPENDENT

    @property
    def num_categories(self):
        return self.config.num_categories

    def init_params(self, rng):
        for net in (self.feature_net, self.category_net, *self.heads):
            net.init_params(rng)
        return self

    def head(self, category):
        return self.heads[0] if self.independent else self.heads[category]

    def feature_forward(self, x):
        return self.feature_net.forward(x)[0]

    def category_forward(self, features):
        logits, _ = self.category_net.forward(features)
        return nncore.softmax(logits)

    def pose_heads_forward(self, features, training=False, update_stats=False):
        """Per-row outputs of every head, shape (n, K, 3)."""
        features = np.asarray(features, dtype=np.float64)
        K = self.num_categories
        if self.independent:
            y, _ = self.heads[0].forward(features, training, update_stats)
            return np.repeat(y[:, None, :], K, axis=1)
        out = np.empty((features.shape[0], K, 3))
        for i, head in enumerate(self.heads):
            out[:, i, :] = head.forward(features, training, update_stats)[0]
        return out

    def infer(self, x, fusion=FUSION_WEIGHTED, p_override=None):
        """
        Eval-mode forward pass. p_net is always the category network's
        output; the heads are fused with p_override when given, p_net otherwise.
        """
        features = self.feature_forward(x)
        p_net = self.category_forward(features)
        p = p_net if p_override is None else np.asarray(p_override, dtype=np.float64)
        heads = self.pose_heads_forward(features)
        fused = fuse(heads, p, fusion)
        return Prediction(p_net, p, heads, fused, so3.exp_map_batch(fused))

    def predict(self, x, fusion=FUSION_WEIGHTED, p_override=None):
        """Eval-mode prediction: (p, fused axis-angle, rotation) per row."""
        prediction = self.infer(x, fusion, p_override)
        return prediction.p, prediction.fused, prediction.R


def fuse(heads, p, fusion):
    if fusion == FUSION_WEIGHTED:
        return fuse_weighted(heads, p)
    if fusion == FUSION_TOP1:
        return fuse_top1(heads, p)
    raise InvalidConfig(f"Unknown fusion: {fusion}")


def load_into(config, store):
    """Binds a populated ParameterStore to a model, checking names and shapes."""
    template = IntegratedModel(config).init_params(np.random.default_rng(0)).store
    expected = {name: template[name].shape for name in template}
    actual = {name: store[name].shape for name in store}
    if expected != actual:
        missing = sorted(set(expected) - set(actual))
        extra = sorted(set(actual) - set(expected))
        wrong = sorted(n for n in set(expected) & set(actual) if expected[n] != actual[n])
        raise ShapeMismatch(f"Parameter layout does not match model config "
                            f"(missing={missing}, unexpected={extra}, reshaped={wrong})")
    return IntegratedModel(config, store)
