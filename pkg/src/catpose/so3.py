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

# so3.py

"""
Rotation algebra on SO(3): skew operator, exponential and logarithm maps,
geodesic distance, the azimuth/elevation/tilt convention shared by the
synthetic data generator and the evaluation code, and random rotations.

Axis-angle vectors are plain float64 arrays of shape (3,), rotations plain
float64 arrays of shape (3, 3). Batched helpers take a leading row axis.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import GimbalLock, InvalidRange, NearPiRotation

SMALL_ANGLE = 1e-8
NEAR_PI = 1e-6
ROTATION_TOL = 1e-9
# below this angle the derivative coefficients switch to their Taylor series
JACOBIAN_SERIES_ANGLE = 1e-2
TWO_PI = 2.0 * math.pi

_BASIS_SKEW = np.array([
    [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
    [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
    [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
])


@dataclass(frozen=True)
class EulerPose:
    """Camera viewpoint as azimuth, elevation and in-plane tilt (radians)."""
    azimuth: float
    elevation: float
    tilt: float

    def __post_init__(self):
        if not 0.0 <= self.azimuth < TWO_PI:
            raise InvalidRange(f"azimuth {self.azimuth} outside [0, 2pi)")
        if not -math.pi / 2 < self.elevation < math.pi / 2:
            raise InvalidRange(f"elevation {self.elevation} outside (-pi/2, pi/2)")
        if not -math.pi <= self.tilt < math.pi:
            raise InvalidRange(f"tilt {self.tilt} outside [-pi, pi)")


def skew(v):
    v = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def skew_batch(vs):
    vs = np.asarray(vs, dtype=np.float64)
    out = np.zeros(vs.shape[:-1] + (3, 3))
    out[..., 0, 1] = -vs[..., 2]
    out[..., 0, 2] = vs[..., 1]
    out[..., 1, 0] = vs[..., 2]
    out[..., 1, 2] = -vs[..., 0]
    out[..., 2, 0] = -vs[..., 1]
    out[..., 2, 1] = vs[..., 0]
    return out


def is_rotation(m, tol=ROTATION_TOL):
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    if np.linalg.norm(m.T @ m - np.eye(3)) > tol:
        return False
    return abs(np.linalg.det(m) - 1.0) <= tol


def check_rotation(m):
    if not is_rotation(m):
        raise InvalidRange("matrix is not a proper rotation")
    return np.asarray(m, dtype=np.float64)


def exp_map(y):
    """Rodrigues formula R = I + sin(t)[v]x + (1 - cos(t))[v]x^2 for y = t*v."""
    y = np.asarray(y, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(y))
    if theta < SMALL_ANGLE:
        k = skew(y)
        return np.eye(3) + k + 0.5 * (k @ k)
    k = skew(y / theta)
    return np.eye(3) + math.sin(theta) * k + (1.0 - math.cos(theta)) * (k @ k)


def _rotation_angle(m):
    # atan2 of the antisymmetric and symmetric parts: same angle as the clamped
    # acos((trace - 1) / 2) but well conditioned near 0 and pi
    w = 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    s = float(np.linalg.norm(w))
    c = min(1.0, max(-1.0, 0.5 * (float(np.trace(m)) - 1.0)))
    return math.atan2(s, c), w, s


def log_map(R):
    R = np.asarray(R, dtype=np.float64)
    theta, w, s = _rotation_angle(R)
    if theta > math.pi - NEAR_PI:
        raise NearPiRotation(f"rotation angle {theta} too close to pi; axis ill-defined")
    if theta < SMALL_ANGLE:
        return w
    return (theta / s) * w


def geodesic_distance(R1, R2):
    m = np.asarray(R1, dtype=np.float64) @ np.asarray(R2, dtype=np.float64).T
    return _rotation_angle(m)[0]


def viewpoint_error_deg(R, R_star):
    return math.degrees(geodesic_distance(R, R_star))


def rot_x(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(e):
    """Azimuth about z first, then elevation about x, then tilt about the camera y axis."""
    return rot_y(e.tilt) @ rot_x(e.elevation) @ rot_z(e.azimuth)


def _cos_elevation(R):
    cos_el = math.hypot(R[1, 0], R[1, 1])
    if cos_el < math.sin(NEAR_PI):
        raise GimbalLock("elevation within 1e-6 of +-pi/2; azimuth undefined")
    return cos_el


def _wrap_two_pi(angle):
    angle = angle % TWO_PI
    return 0.0 if angle >= TWO_PI else angle


def rotation_to_azimuth(R):
    R = np.asarray(R, dtype=np.float64)
    _cos_elevation(R)
    return _wrap_two_pi(math.atan2(R[1, 0], R[1, 1]))


def rotation_to_euler(R):
    R = np.asarray(R, dtype=np.float64)
    cos_el = _cos_elevation(R)
    tilt = math.atan2(R[0, 2], R[2, 2])
    if tilt >= math.pi:
        tilt = -math.pi
    return EulerPose(
        azimuth=_wrap_two_pi(math.atan2(R[1, 0], R[1, 1])),
        elevation=math.atan2(-R[1, 2], cos_el),
        tilt=tilt,
    )


def random_axis_angle(rng, max_angle):
    if not 0.0 < max_angle <= math.pi:
        raise InvalidRange(f"max_angle {max_angle} outside (0, pi]")
    axis = rng.standard_normal(3)
    norm = np.linalg.norm(axis)
    while norm < 1e-12:
        axis = rng.standard_normal(3)
        norm = np.linalg.norm(axis)
    return (axis / norm) * rng.uniform(0.0, max_angle)


def random_rotation(rng, max_angle):
    return exp_map(random_axis_angle(rng, max_angle))


def _rodrigues_coefficients(theta):
    # a = sin(t)/t, b = (1 - cos(t))/t^2, c = a'(t)/t, d = b'(t)/t
    small = theta < JACOBIAN_SERIES_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    half_sin = np.sin(0.5 * t)
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, 2.0 * half_sin * half_sin / (t * t))
    c = np.where(small, -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0,
                 (t * np.cos(t) - np.sin(t)) / (t ** 3))
    d = np.where(small, -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0,
                 (t * np.sin(t) - 2.0 * (1.0 - np.cos(t))) / (t ** 4))
    return a, b, c, d


def exp_map_batch(Y):
    Y = np.asarray(Y, dtype=np.float64)
    theta = np.linalg.norm(Y, axis=1)
    a, b, _, _ = _rodrigues_coefficients(theta)
    K = skew_batch(Y)
    return np.eye(3)[None] + a[:, None, None] * K + b[:, None, None] * (K @ K)


def exp_map_jacobian(Y):
    """Rotations for each row of Y and dR[n, k] = dR_n / dy_k, shape (n, 3, 3, 3)."""
    Y = np.asarray(Y, dtype=np.float64)
    theta = np.linalg.norm(Y, axis=1)
    a, b, c, d = _rodrigues_coefficients(theta)
    K = skew_batch(Y)
    K2 = K @ K
    R = np.eye(3)[None] + a[:, None, None] * K + b[:, None, None] * K2
    EK = np.einsum('kij,njl->nkil', _BASIS_SKEW, K)
    KE = np.einsum('nij,kjl->nkil', K, _BASIS_SKEW)
    dR = (a[:, None, None, None] * _BASIS_SKEW[None]
          + b[:, None, None, None] * (EK + KE)
          + (c[:, None] * Y)[:, :, None, None] * K[:, None]
          + (d[:, None] * Y)[:, :, None, None] * K2[:, None])
    return R, dR


def rotation_angle_batch(M):
    """Rotation angle of each matrix in M (n, 3, 3) together with its sine."""
    w0 = M[:, 2, 1] - M[:, 1, 2]
    w1 = M[:, 0, 2] - M[:, 2, 0]
    w2 = M[:, 1, 0] - M[:, 0, 1]
    s = 0.5 * np.sqrt(w0 * w0 + w1 * w1 + w2 * w2)
    c = np.clip(0.5 * (np.trace(M, axis1=1, axis2=2) - 1.0), -1.0, 1.0)
    return np.arctan2(s, c), s


def geodesic_distance_batch(R1, R2):
    return rotation_angle_batch(R1 @ np.swapaxes(R2, 1, 2))[0]
