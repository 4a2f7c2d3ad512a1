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

# nncore.py

"""
Small trainable-layer toolkit with explicit forward and backward passes:
dense layers, batch normalization, relu / pi*tanh activations, softmax,
bias-corrected Adam and a central-difference gradient checker.

Tensors are 2-D float64 numpy arrays laid out (rows = batch, cols = features).
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import BatchTooSmall, InvalidConfig, InvalidRange, ShapeMismatch

logger = logging.getLogger(__name__)

# largest float strictly below pi, keeps pi*tanh outputs inside the open interval
PI_INNER = float(np.nextafter(np.pi, 0.0))


@dataclass
class ParameterEntry:
    values: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    trainable: bool = True


class ParameterStore:
    """Ordered name -> tensor map holding weights, Adam moments and buffers."""

    def __init__(self):
        self._entries = {}

    def add(self, name, values, trainable=True):
        if name in self._entries:
            raise InvalidConfig(f"Duplicate parameter name: {name}")
        values = np.array(values, dtype=np.float64)
        self._entries[name] = ParameterEntry(values, np.zeros_like(values), np.zeros_like(values),
                                             0, trainable)
        return values

    def __getitem__(self, name):
        return self._entries[name].values

    def __contains__(self, name):
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def entry(self, name):
        return self._entries[name]

    def names(self, prefixes=None, trainable_only=False):
        selected = []
        for name, entry in self._entries.items():
            if trainable_only and not entry.trainable:
                continue
            if prefixes is not None and not any(name.startswith(p) for p in prefixes):
                continue
            selected.append(name)
        return selected

    def set_values(self, name, values):
        target = self._entries[name].values
        values = np.asarray(values, dtype=np.float64)
        if values.shape != target.shape:
            raise ShapeMismatch(f"{name}: expected {target.shape}, got {values.shape}")
        target[...] = values

    def snapshot(self):
        return {name: entry.values.copy() for name, entry in self._entries.items()}

    def copy(self):
        clone = ParameterStore()
        for name, entry in self._entries.items():
            clone._entries[name] = ParameterEntry(entry.values.copy(), entry.m.copy(),
                                                  entry.v.copy(), entry.step, entry.trainable)
        return clone

    def parameter_count(self, trainable_only=True):
        return sum(e.values.size for e in self._entries.values() if e.trainable or not trainable_only)


@dataclass
class DenseLayer:
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class BatchNormLayer:
    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5
    training: bool = True


@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    training: bool


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def _check_input(x, width, what):
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeMismatch(f"{what}: expected (n, {width}) input, got {x.shape}")


def dense_forward(layer, x):
    x = np.asarray(x, dtype=np.float64)
    _check_input(x, layer.weight.shape[1], "dense layer")
    return x @ layer.weight.T + layer.bias


def dense_backward(layer, x, upstream):
    """Returns (input grad, weight grad, bias grad)."""
    if upstream.shape != (x.shape[0], layer.weight.shape[0]):
        raise ShapeMismatch(f"dense backward: upstream {upstream.shape} vs output "
                            f"{(x.shape[0], layer.weight.shape[0])}")
    return upstream @ layer.weight, upstream.T @ x, upstream.sum(axis=0)


def batchnorm_forward(layer, x, update_stats=True):
    """Returns (output, cache). Train mode uses batch statistics, eval mode running ones."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(x, layer.scale.shape[0], "batch norm")
    if layer.training:
        if x.shape[0] < 2:
            raise BatchTooSmall("batch norm in train mode needs at least 2 rows")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        if update_stats:
            layer.running_mean[...] = layer.momentum * layer.running_mean + (1.0 - layer.momentum) * mean
            layer.running_var[...] = layer.momentum * layer.running_var + (1.0 - layer.momentum) * var
    else:
        mean = layer.running_mean
        var = layer.running_var
    inv_std = 1.0 / np.sqrt(var + layer.eps)
    xhat = (x - mean) * inv_std
    return layer.scale * xhat + layer.shift, BatchNormCache(xhat, inv_std, layer.training)


def batchnorm_backward(layer, cache, upstream):
    """Returns (input grad, scale grad, shift grad)."""
    dscale = (upstream * cache.xhat).sum(axis=0)
    dshift = upstream.sum(axis=0)
    dxhat = upstream * layer.scale
    if not cache.training:
        return dxhat * cache.inv_std, dscale, dshift
    n = upstream.shape[0]
    dx = (cache.inv_std / n) * (n * dxhat - dxhat.sum(axis=0)
                                - cache.xhat * (dxhat * cache.xhat).sum(axis=0))
    return dx, dscale, dshift


def activation(kind, x):
    if kind == 'relu':
        return np.maximum(x, 0.0)
    if kind == 'pi_tanh':
        return np.clip(np.pi * np.tanh(x), -PI_INNER, PI_INNER)
    raise InvalidConfig(f"Unknown activation: {kind}")


def activation_backward(kind, x, upstream):
    if kind == 'relu':
        return upstream * (x > 0.0)
    if kind == 'pi_tanh':
        t = np.tanh(x)
        return upstream * (np.pi * (1.0 - t * t))
    raise InvalidConfig(f"Unknown activation: {kind}")


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def adam_step(store, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place bias-corrected Adam update of every parameter named in grads."""
    for name, grad in grads.items():
        entry = store.entry(name)
        if grad.shape != entry.values.shape:
            raise ShapeMismatch(f"{name}: gradient {grad.shape} vs parameter {entry.values.shape}")
        entry.step += 1
        entry.m[...] = beta1 * entry.m + (1.0 - beta1) * grad
        entry.v[...] = beta2 * entry.v + (1.0 - beta2) * grad * grad
        m_hat = entry.m / (1.0 - beta1 ** entry.step)
        v_hat = entry.v / (1.0 - beta2 ** entry.step)
        entry.values[...] = entry.values - lr * m_hat / (np.sqrt(v_hat) + eps)
    return store


def _accumulate(grads, name, g):
    if name in grads:
        grads[name] = grads[name] + g
    else:
        grads[name] = g


class Sequential:
    """
    Dense / batch-norm / activation stack whose tensors live in a ParameterStore
    under `prefix`. Widths list every layer width including input and output.
    Every hidden dense layer is followed by (batch norm and) the hidden
    activation; the last dense layer by the optional output activation.
    """

    def __init__(self, store, prefix, widths, hidden_activation='relu', output_activation=None,
                 batchnorm=False, bn_momentum=0.9, bn_eps=1e-5):
        if len(widths) < 2 or min(widths) < 1:
            raise InvalidConfig(f"{prefix}: invalid widths {widths}")
        self.store = store
        self.prefix = prefix
        self.widths = list(widths)
        self.bn_momentum = bn_momentum
        self.bn_eps = bn_eps
        self.layers = []
        for i in range(len(widths) - 1):
            self.layers.append(('dense', f"{prefix}.fc{i + 1}", (widths[i], widths[i + 1])))
            if i < len(widths) - 2:
                if batchnorm:
                    self.layers.append(('bn', f"{prefix}.bn{i + 1}", widths[i + 1]))
                self.layers.append(('act', hidden_activation, None))
            elif output_activation is not None:
                self.layers.append(('act', output_activation, None))

    def init_params(self, rng):
        for kind, name, shape in self.layers:
            if kind == 'dense':
                fan_in, fan_out = shape
                self.store.add(f"{name}.weight", glorot_uniform(rng, fan_in, fan_out))
                self.store.add(f"{name}.bias", np.zeros(fan_out))
            elif kind == 'bn':
                self.store.add(f"{name}.scale", np.ones(shape))
                self.store.add(f"{name}.shift", np.zeros(shape))
                self.store.add(f"{name}.running_mean", np.zeros(shape), trainable=False)
                self.store.add(f"{name}.running_var", np.ones(shape), trainable=False)

    def dense(self, name):
        return DenseLayer(self.store[f"{name}.weight"], self.store[f"{name}.bias"])

    def batchnorm(self, name, training):
        return BatchNormLayer(self.store[f"{name}.scale"], self.store[f"{name}.shift"],
                              self.store[f"{name}.running_mean"], self.store[f"{name}.running_var"],
                              self.bn_momentum, self.bn_eps, training)

    def forward(self, x, training=False, update_stats=False):
        """Returns (output, tape); the tape feeds backward."""
        tape = []
        out = np.asarray(x, dtype=np.float64)
        _check_input(out, self.widths[0], self.prefix)
        for kind, name, _ in self.layers:
            if kind == 'dense':
                tape.append((kind, name, out, None))
                out = dense_forward(self.dense(name), out)
            elif kind == 'bn':
                layer = self.batchnorm(name, training)
                y, cache = batchnorm_forward(layer, out, update_stats=update_stats)
                tape.append((kind, name, out, cache))
                out = y
            else:
                tape.append((kind, name, out, None))
                out = activation(name, out)
        return out, tape

    def backward(self, tape, upstream, grads):
        """Accumulates parameter gradients into `grads`; returns the input gradient."""
        g = upstream
        for kind, name, x, cache in reversed(tape):
            if kind == 'dense':
                g, dw, db = dense_backward(self.dense(name), x, g)
                _accumulate(grads, f"{name}.weight", dw)
                _accumulate(grads, f"{name}.bias", db)
            elif kind == 'bn':
                g, dscale, dshift = batchnorm_backward(self.batchnorm(name, cache.training), cache, g)
                _accumulate(grads, f"{name}.scale", dscale)
                _accumulate(grads, f"{name}.shift", dshift)
            else:
                g = activation_backward(name, x, g)
        return g


@dataclass
class GradcheckReport:
    max_rel_error: float
    worst_param: str = None
    worst_index: tuple = None
    passed: bool = True
    failing: list = field(default_factory=list)
    per_param: dict = field(default_factory=dict)


def gradcheck(f, store, h=1e-5, tolerance=1e-6, names=None, atol=0.0, floor=1e-8):
    """
    Compares the analytic gradients returned by f(store) -> (value, grads)
    with central differences of its value, one coordinate at a time.
    A coordinate passes when its relative error
    |a - n| / max(|a|, |n|, floor) is within tolerance or its absolute error
    is within atol.
    """
    if h <= 0:
        raise InvalidRange(f"step h must be positive, got {h}")
    _, analytic = f(store)
    names = list(analytic) if names is None else list(names)
    report = GradcheckReport(max_rel_error=0.0)
    for name in names:
        values = store[name]
        grad = analytic.get(name, np.zeros_like(values))
        worst_here = 0.0
        for idx in np.ndindex(values.shape):
            original = values[idx]
            values[idx] = original + h
            f_plus = f(store)[0]
            values[idx] = original - h
            f_minus = f(store)[0]
            values[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(grad[idx])
            abs_err = abs(a - numeric)
            rel_err = abs_err / max(abs(a), abs(numeric), floor)
            worst_here = max(worst_here, rel_err)
            if rel_err > report.max_rel_error:
                report.max_rel_error = rel_err
                report.worst_param, report.worst_index = name, idx
            if rel_err > tolerance and abs_err > atol and name not in report.failing:
                report.failing.append(name)
        report.per_param[name] = worst_here
    report.passed = not report.failing
    logger.debug(f"gradcheck: max relative error {report.max_rel_error:.3e} at "
                 f"{report.worst_param}{report.worst_index}, failing={report.failing}")
    return report
