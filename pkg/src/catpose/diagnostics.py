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

# diagnostics.py

"""
Gradient checks of every layer, both losses and the full joint objective on a
tiny model (K=3, width 8). Each check wraps a forward/backward pair as
f(store) -> (value, grads) and hands it to nncore.gradcheck.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import losses, nncore, so3, train
from .model import FUSION_TOP1, FUSION_WEIGHTED, IntegratedModel, ModelConfig

logger = logging.getLogger(__name__)

TINY_K = 3
TINY_WIDTH = 8
TINY_BATCH = 9


@dataclass(frozen=True)
class GradcheckSettings:
    h: float = 1e-5
    layer_tolerance: float = 1e-6
    loss_tolerance: float = 1e-4
    atol: float = 1e-7
    seed: int = 0


@dataclass
class DiagnosticsReport:
    checks: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(r.passed for r in self.checks.values())

    @property
    def failing(self):
        return [f"{check}:{name}" for check, r in self.checks.items() for name in r.failing]

    def worst(self):
        check, report = max(self.checks.items(), key=lambda item: item[1].max_rel_error)
        return check, report.worst_param, report.worst_index, report.max_rel_error


def tiny_config():
    w = TINY_WIDTH
    return ModelConfig(num_categories=TINY_K, input_dim=w, feature_hidden=(w,), feature_dim=w,
                       category_hidden=(w,), head_hidden=(w, w))


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.uniform(margin, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _dense_check(rng):
    store = nncore.ParameterStore()
    store.add('input', rng.standard_normal((4, 5)))
    store.add('dense.weight', nncore.glorot_uniform(rng, 5, 3))
    store.add('dense.bias', rng.standard_normal(3))
    upstream = rng.standard_normal((4, 3))

    def f(s):
        layer = nncore.DenseLayer(s['dense.weight'], s['dense.bias'])
        out = nncore.dense_forward(layer, s['input'])
        dx, dw, db = nncore.dense_backward(layer, s['input'], upstream)
        return float(np.sum(upstream * out)), {'input': dx, 'dense.weight': dw, 'dense.bias': db}
    return f, store


def _batchnorm_check(rng):
    store = nncore.ParameterStore()
    store.add('input', rng.standard_normal((5, 4)) * 2.0 + 0.5)
    store.add('bn.scale', rng.uniform(0.5, 1.5, 4))
    store.add('bn.shift', rng.standard_normal(4))
    store.add('bn.running_mean', np.zeros(4), trainable=False)
    store.add('bn.running_var', np.ones(4), trainable=False)
    upstream = rng.standard_normal((5, 4))

    def f(s):
        layer = nncore.BatchNormLayer(s['bn.scale'], s['bn.shift'], s['bn.running_mean'],
                                      s['bn.running_var'], training=True)
        out, cache = nncore.batchnorm_forward(layer, s['input'], update_stats=False)
        dx, dscale, dshift = nncore.batchnorm_backward(layer, cache, upstream)
        return float(np.sum(upstream * out)), {'input': dx, 'bn.scale': dscale, 'bn.shift': dshift}
    return f, store


def _activation_check(kind):
    def build(rng):
        store = nncore.ParameterStore()
        store.add('input', _away_from_zero(rng, (4, 3)))
        upstream = rng.standard_normal((4, 3))

        def f(s):
            out = nncore.activation(kind, s['input'])
            return float(np.sum(upstream * out)), {
                'input': nncore.activation_backward(kind, s['input'], upstream)}
        return f, store
    return build


def _cross_entropy_check(rng):
    store = nncore.ParameterStore()
    store.add('logits', rng.standard_normal((5, TINY_K)))
    labels = rng.integers(0, TINY_K, size=5)

    def f(s):
        value, grad = losses.cross_entropy_batch(nncore.softmax(s['logits']), labels)
        return value, {'logits': grad}
    return f, store


def _pose_loss_check(rng):
    n = 5
    Y = np.stack([so3.random_axis_angle(rng, math.pi - 0.3) for _ in range(n)])
    # targets rotated away from the predictions by angles well inside the unclamped range
    R_star = []
    for y in Y:
        offset = so3.random_axis_angle(rng, 2.0)
        while np.linalg.norm(offset) < 0.2:
            offset = so3.random_axis_angle(rng, 2.0)
        R_star.append(so3.exp_map(offset) @ so3.exp_map(y))
    R_star = np.stack(R_star)
    store = nncore.ParameterStore()
    store.add('y', Y)

    def f(s):
        theta, grads = losses.pose_loss_batch(s['y'], R_star)
        return float(theta.mean()), {'y': grads / n}
    return f, store


def _objective_check(phase, fusion):
    def build(rng):
        config = tiny_config()
        model = IntegratedModel(config).init_params(rng)
        x = rng.standard_normal((TINY_BATCH, config.input_dim))
        c_star = np.arange(TINY_BATCH) % TINY_K
        R_star = np.stack([so3.random_rotation(rng, math.pi - 0.3) for _ in range(TINY_BATCH)])
        lam = 0.5

        def f(s):
            bound = IntegratedModel(config, s)
            loss_pose, loss_cat, grads = train.batch_objective(
                bound, x, c_star, R_star, phase, fusion, lam, training=True, update_stats=False)
            value = losses.joint_loss(train.loss_weights(phase, lam), loss_pose or 0.0, loss_cat or 0.0)
            return value, grads
        return f, model.store
    return build


def _phase(name, trainable, loss, source):
    return train.PhaseSpec(name, 1, 1e-3, frozenset(trainable), loss, source)


def checks():
    """(name, builder, tolerance kind) for every check, in execution order."""
    joint = _phase(train.PHASE_JOINT, {'FN', 'CN', 'PN'}, train.LOSS_JOINT, train.SOURCE_NETWORK)
    oracle = _phase(train.PHASE_POSE_FIRST, {'FN', 'PN'}, train.LOSS_POSE, train.SOURCE_ORACLE)
    return [
        ('dense', _dense_check, 'layer'),
        ('batchnorm', _batchnorm_check, 'layer'),
        ('relu', _activation_check('relu'), 'layer'),
        ('pi_tanh', _activation_check('pi_tanh'), 'layer'),
        ('softmax_cross_entropy', _cross_entropy_check, 'layer'),
        ('pose_loss', _pose_loss_check, 'loss'),
        ('oracle_pose_objective', _objective_check(oracle, FUSION_WEIGHTED), 'loss'),
        ('joint_objective_weighted', _objective_check(joint, FUSION_WEIGHTED), 'loss'),
        ('joint_objective_top1', _objective_check(joint, FUSION_TOP1), 'loss'),
    ]


def run_gradcheck(settings=None):
    settings = settings or GradcheckSettings()
    report = DiagnosticsReport()
    for name, build, kind in checks():
        rng = np.random.default_rng([settings.seed, len(report.checks)])
        f, store = build(rng)
        tolerance = settings.layer_tolerance if kind == 'layer' else settings.loss_tolerance
        result = nncore.gradcheck(f, store, h=settings.h, tolerance=tolerance, atol=settings.atol)
        report.checks[name] = result
        status = 'ok' if result.passed else 'FAILED'
        logger.info(f"gradcheck {name}: max rel error {result.max_rel_error:.3e} "
                    f"(tolerance {tolerance:g}) {status}")
    return report
