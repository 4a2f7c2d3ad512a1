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

# data.py

"""
Synthetic labeled-pose datasets. Each category i owns a fixed smooth map g_i
from the ground-truth axis-angle vector to a feature vector x: a random linear
map of sin/cos features of y plus a category offset. Gaussian noise is added
per sample. Maps come from `generator_seed`, samples from the split seed, so
a train and a test split generated with different seeds share the same g_i.
"""

import hashlib
import logging
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import so3
from .errors import (InvalidConfig, InvalidRange, IoError, NearPiRotation, ParseError,
                     SchemaError)

logger = logging.getLogger(__name__)

DEFAULT_MAX_ANGLE = math.pi - 0.1
JITTER_MAX_DEG = 10.0
JITTER_REJECT_ANGLE = math.pi - 1e-3
TEST_SEED_OFFSET = 1000
POSE_FEATURES = 12
LABEL_COLUMNS = ['cat', 'y0', 'y1', 'y2']


@dataclass(frozen=True)
class SynthConfig:
    num_categories: int = 4
    samples_per_category: int = 500
    input_dim: int = 64
    noise_sigma: float = 0.05
    max_angle: float = DEFAULT_MAX_ANGLE
    offset_scale: float = 1.0
    generator_seed: int = 0

    def validate(self):
        if self.num_categories < 1:
            raise InvalidConfig("num_categories must be >= 1")
        if self.samples_per_category < 1:
            raise InvalidConfig("samples_per_category must be >= 1")
        if self.input_dim < 1:
            raise InvalidConfig("input_dim must be >= 1")
        if not self.noise_sigma >= 0:
            raise InvalidConfig(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0 < self.max_angle < math.pi:
            raise InvalidConfig(f"max_angle must lie in (0, pi), got {self.max_angle}")
        if not self.offset_scale >= 0:
            raise InvalidConfig("offset_scale must be >= 0")
        if self.generator_seed < 0:
            raise InvalidConfig(f"generator_seed must be >= 0, got {self.generator_seed}")
        return self


@dataclass
class LabeledSample:
    x: np.ndarray
    c_star: int
    R_star: np.ndarray
    y_star: np.ndarray


@dataclass
class PoseDataset:
    x: np.ndarray
    c_star: np.ndarray
    R_star: np.ndarray
    y_star: np.ndarray
    num_categories: int
    generator: object = None

    def __len__(self):
        return self.x.shape[0]

    @property
    def input_dim(self):
        return self.x.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx)
        return PoseDataset(self.x[idx], self.c_star[idx], self.R_star[idx], self.y_star[idx],
                           self.num_categories, self.generator)

    def category_counts(self):
        return np.bincount(self.c_star, minlength=self.num_categories)

    def sample(self, i):
        return LabeledSample(self.x[i].copy(), int(self.c_star[i]), self.R_star[i].copy(),
                             self.y_star[i].copy())


def pose_features(Y):
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    return np.concatenate([np.sin(Y), np.cos(Y), np.sin(2.0 * Y), np.cos(2.0 * Y)], axis=1)


class SynthGenerator:
    """The per-category feature maps g_i of one synthetic task."""

    def __init__(self, cfg):
        self.cfg = cfg.validate()
        self.maps = []
        self.offsets = []
        for i in range(cfg.num_categories):
            rng = np.random.default_rng([cfg.generator_seed, i])
            self.maps.append(rng.standard_normal((cfg.input_dim, POSE_FEATURES)) / math.sqrt(POSE_FEATURES))
            self.offsets.append(cfg.offset_scale * rng.standard_normal(cfg.input_dim))

    def features(self, category, Y, rng=None):
        x = pose_features(Y) @ self.maps[category].T + self.offsets[category]
        if rng is not None and self.cfg.noise_sigma > 0:
            x = x + rng.normal(0.0, self.cfg.noise_sigma, size=x.shape)
        return x


def generate(cfg, seed):
    """One dataset with cfg.samples_per_category samples per category."""
    generator = SynthGenerator(cfg)
    xs, cs, Rs, ys = [], [], [], []
    for i in range(cfg.num_categories):
        rng = np.random.default_rng([seed, i])
        drawn = [so3.random_rotation(rng, cfg.max_angle) for _ in range(cfg.samples_per_category)]
        Y = np.stack([so3.log_map(r) for r in drawn])
        # R_star = exp_map(y_star) exactly, as load_csv rebuilds it
        R = np.stack([so3.exp_map(y) for y in Y])
        xs.append(generator.features(i, Y, rng))
        cs.append(np.full(cfg.samples_per_category, i, dtype=np.int64))
        Rs.append(R)
        ys.append(Y)
    logger.debug(f"Generated {cfg.num_categories}x{cfg.samples_per_category} samples (seed {seed})")
    return PoseDataset(np.concatenate(xs), np.concatenate(cs), np.concatenate(Rs), np.concatenate(ys),
                       cfg.num_categories, generator)


def generate_splits(cfg, seed, test_per_category):
    """Train and test datasets sharing the same category maps."""
    train = generate(cfg, seed)
    test = generate(replace(cfg, samples_per_category=test_per_category), seed + TEST_SEED_OFFSET)
    return train, test


def jitter(sample, rng, max_deg, generator):
    """Composes a random rotation of at most max_deg degrees onto the sample's pose."""
    if not 0.0 <= max_deg <= JITTER_MAX_DEG:
        raise InvalidRange(f"jitter max_deg must lie in [0, {JITTER_MAX_DEG}], got {max_deg}")
    if max_deg == 0:
        return sample
    while True:
        delta = so3.random_rotation(rng, math.radians(max_deg))
        try:
            y = so3.log_map(delta @ sample.R_star)
        except NearPiRotation:
            continue
        if np.linalg.norm(y) < JITTER_REJECT_ANGLE:
            break
    x = generator.features(sample.c_star, y, rng)[0]
    return LabeledSample(x, sample.c_star, so3.exp_map(y), y)


def jitter_rows(dataset, idx, rng, max_deg):
    """Jittered copies of (x, R_star) for the given rows."""
    x = dataset.x[idx].copy()
    R = dataset.R_star[idx].copy()
    for row, i in enumerate(idx):
        jittered = jitter(dataset.sample(i), rng, max_deg, dataset.generator)
        x[row] = jittered.x
        R[row] = jittered.R_star
    return x, R


def dataset_digest(dataset):
    h = hashlib.sha256()
    for arr in (dataset.x, dataset.c_star, dataset.y_star):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def csv_columns(input_dim):
    return [f"x{j}" for j in range(input_dim)] + LABEL_COLUMNS


def save_csv(dataset, path):
    frame = pd.DataFrame(dataset.x, columns=csv_columns(dataset.input_dim)[:dataset.input_dim])
    frame['cat'] = dataset.c_star
    for j in range(3):
        frame[f"y{j}"] = dataset.y_star[:, j]
    try:
        frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n', encoding='utf-8')
    except OSError as e:
        raise IoError(f"Cannot write dataset to {path}: {e}") from e


def _line_from_message(message):
    match = re.search(r"line (\d+)", message)
    return int(match.group(1)) if match else None


def load_csv(path, num_categories=None):
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except (FileNotFoundError, IsADirectoryError, PermissionError) as e:
        raise IoError(f"Cannot read dataset {path}: {e}") from e
    except pd.errors.EmptyDataError as e:
        raise SchemaError(f"{path}: file is empty") from e
    except pd.errors.ParserError as e:
        line = _line_from_message(str(e))
        raise ParseError(f"{path}: malformed row at line {line}: {e}", line=line) from e
    except UnicodeDecodeError as e:
        raise ParseError(f"{path}: not UTF-8 text: {e}") from e

    columns = list(frame.columns)
    input_dim = len(columns) - len(LABEL_COLUMNS)
    if input_dim < 1 or columns != csv_columns(input_dim):
        raise SchemaError(f"{path}: unexpected header {columns[:3]}...{columns[-4:]}; "
                          f"expected x0..x{{D-1}},cat,y0,y1,y2")

    numeric = {}
    for col in columns:
        values = pd.to_numeric(frame[col], errors='coerce')
        bad = np.flatnonzero(values.isna().to_numpy() | ~np.isfinite(values.to_numpy(dtype=float)))
        if bad.size:
            row = int(bad[0])
            # header is line 1
            raise ParseError(f"{path}: line {row + 2}, column '{col}': cannot parse "
                             f"{frame[col].iloc[row]!r} as a number", line=row + 2, column=col)
        # astype parses each cell with float(), which rounds correctly
        numeric[col] = frame[col].astype(np.float64).to_numpy()

    cats = numeric['cat']
    K = num_categories if num_categories is not None else int(cats.max()) + 1 if len(cats) else 1
    bad = np.flatnonzero((cats != np.round(cats)) | (cats < 0) | (cats >= K))
    if bad.size:
        row = int(bad[0])
        raise ParseError(f"{path}: line {row + 2}, column 'cat': invalid category {cats[row]!r}",
                         line=row + 2, column='cat')

    x = np.column_stack([numeric[f"x{j}"] for j in range(input_dim)])
    Y = np.column_stack([numeric[f"y{j}"] for j in range(3)])
    norms = np.linalg.norm(Y, axis=1)
    bad = np.flatnonzero(norms >= math.pi)
    if bad.size:
        row = int(bad[0])
        raise ParseError(f"{path}: line {row + 2}: axis-angle norm {norms[row]} outside [0, pi)",
                         line=row + 2, column='y0')
    R = np.stack([so3.exp_map(y) for y in Y]) if len(Y) else np.zeros((0, 3, 3))
    return PoseDataset(x, cats.astype(np.int64), R, Y, K)
