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

# losses.py

import math
from dataclasses import dataclass

import numpy as np

from . import so3
from .errors import IndexOutOfRange, InvalidConfig

# the 1/sin(theta_rel) factor of the acos derivative is bounded by this
SIN_CLAMP = math.sin(1e-3)
_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class JointLossConfig:
    lam: float = 0.1

    def __post_init__(self):
        if not math.isfinite(self.lam) or self.lam < 0:
            raise InvalidConfig(f"lambda must be a finite non-negative number, got {self.lam}")


def pose_loss_batch(Y, R_star):
    """
    Geodesic loss between exp_map(Y[n]) and R_star[n] for every row.
    Returns (losses (n,), gradients wrt Y (n, 3)).
    """
    Y = np.asarray(Y, dtype=np.float64)
    R_star = np.asarray(R_star, dtype=np.float64)
    R, dR = so3.exp_map_jacobian(Y)
    theta, _ = so3.rotation_angle_batch(R @ np.swapaxes(R_star, 1, 2))
    # d cos(theta) / dy_k = 0.5 * trace(dR_k R*^T)
    dcos = 0.5 * np.einsum('nkij,nij->nk', dR, R_star)
    grads = -dcos / np.maximum(np.sin(theta), SIN_CLAMP)[:, None]
    grads[theta < so3.SMALL_ANGLE] = 0.0
    return theta, grads


def pose_loss(y_pred, R_star):
    losses, grads = pose_loss_batch(np.asarray(y_pred, dtype=np.float64).reshape(1, 3),
                                    np.asarray(R_star, dtype=np.float64).reshape(1, 3, 3))
    return float(losses[0]), grads[0]


def _check_labels(c_star, K):
    c_star = np.asarray(c_star)
    if np.any(c_star < 0) or np.any(c_star >= K):
        raise IndexOutOfRange(f"category label outside [0, {K})")
    return c_star.astype(np.int64)


def cross_entropy(p, c_star):
    """-log p[c*] and its gradient wrt the logits p was computed from (p - onehot)."""
    p = np.asarray(p, dtype=np.float64)
    c = int(_check_labels(c_star, p.shape[0]))
    grad = p.copy()
    grad[c] -= 1.0
    return float(-np.log(max(p[c], _LOG_FLOOR))), grad


def cross_entropy_batch(P, c_star):
    """Mean cross-entropy over rows; gradient wrt logits is (P - onehot) / n."""
    P = np.asarray(P, dtype=np.float64)
    c = _check_labels(c_star, P.shape[1])
    n = P.shape[0]
    rows = np.arange(n)
    loss = -np.log(np.maximum(P[rows, c], _LOG_FLOOR)).mean()
    grad = P.copy()
    grad[rows, c] -= 1.0
    return float(loss), grad / n


def joint_loss(cfg, pose_term, category_term):
    return pose_term + cfg.lam * category_term


def combine_gradients(cfg, pose_grads, category_grads):
    """Gradient of joint_loss: pose gradients plus lambda-scaled category gradients."""
    combined = {name: g.copy() for name, g in pose_grads.items()}
    for name, g in category_grads.items():
        if name in combined:
            combined[name] = combined[name] + cfg.lam * g
        else:
            combined[name] = cfg.lam * g
    return combined
