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

# evaluation.py

"""
Viewpoint and categorization metrics.

pose-err is the per-category median viewpoint error in degrees and its
unweighted mean over categories. Threshold accuracies and AAAI scores are
aggregated over samples.
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from . import so3
from .errors import EmptyCategory, EmptyDataset, GimbalLock, InvalidK, InvalidRange
from .model import FUSION_WEIGHTED, oracle_distributions

logger = logging.getLogger(__name__)

THRESHOLDS_DEG = (22.5, 45.0)
MAX_TOPK = 3


def median_pose_err(errors, c_star, categories=None):
    """
    Per-category median of `errors` and the unweighted mean of those medians.
    `categories` defaults to the categories present in c_star; naming one
    without samples raises EmptyCategory.
    """
    errors = np.asarray(errors, dtype=np.float64)
    c_star = np.asarray(c_star)
    if categories is None:
        categories = np.unique(c_star)
        if categories.size == 0:
            raise EmptyCategory("no samples to take a median over")
    medians = {}
    for c in categories:
        selected = errors[c_star == c]
        if selected.size == 0:
            raise EmptyCategory(f"category {c} has no samples")
        medians[int(c)] = float(np.median(selected))
    return medians, float(np.mean(list(medians.values())))


def threshold_acc(errors, delta):
    """Fraction of errors strictly below delta."""
    if not delta > 0:
        raise InvalidRange(f"threshold must be positive, got {delta}")
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise EmptyDataset("no errors to threshold")
    return float(np.mean(errors < delta))


def aaai_score(err):
    """1 - min(|err|, 2pi - |err|) / pi, elementwise for arrays."""
    e = np.abs(np.asarray(err, dtype=np.float64))
    score = 1.0 - np.minimum(e, so3.TWO_PI - e) / math.pi
    return float(score) if score.ndim == 0 else score


def azimuth_err(R, R_star):
    """Circular azimuth difference in radians."""
    d = abs(so3.rotation_to_azimuth(R) - so3.rotation_to_azimuth(R_star))
    return min(d, so3.TWO_PI - d)


def topk_order(p):
    """Categories by descending probability; ties keep the lower index first."""
    return np.argsort(-np.asarray(p, dtype=np.float64), axis=-1, kind='stable')


def head_errors_deg(heads, R_star):
    """Viewpoint error of every head output against the ground truth, shape (n, K)."""
    n, K, _ = heads.shape
    R = so3.exp_map_batch(heads.reshape(n * K, 3))
    target = np.repeat(R_star, K, axis=0)
    return np.degrees(so3.geodesic_distance_batch(R, target)).reshape(n, K)


def topk_pose_err(heads, p, R_star, k):
    """
    Minimum viewpoint error (degrees) over the heads of the k most probable
    categories. Accepts one sample (heads (K, 3)) or a batch (heads (n, K, 3)).
    """
    heads = np.asarray(heads, dtype=np.float64)
    single = heads.ndim == 2
    if single:
        heads, p, R_star = heads[None], np.asarray(p)[None], np.asarray(R_star)[None]
    K = heads.shape[1]
    if not 1 <= k <= K:
        raise InvalidK(f"k must lie in [1, {K}], got {k}")
    errors = head_errors_deg(heads, np.asarray(R_star, dtype=np.float64))
    ranked = np.take_along_axis(errors, topk_order(p), axis=1)
    best = ranked[:, :k].min(axis=1)
    return float(best[0]) if single else best


def topk_cat_acc(p, c_star, k):
    """Fraction of samples whose true category is among the k most probable."""
    p = np.asarray(p, dtype=np.float64)
    if not 1 <= k <= p.shape[1]:
        raise InvalidK(f"k must lie in [1, {p.shape[1]}], got {k}")
    top = topk_order(p)[:, :k]
    return float(np.mean(np.any(top == np.asarray(c_star)[:, None], axis=1)))


@dataclass
class EvalReport:
    fusion: str
    oracle_category: bool
    num_samples: int
    samples_per_category: dict
    median_pose_err_deg: dict
    mean_pose_err_deg: float
    cat_acc_per_category: dict
    cat_acc_mean: float
    cat_acc_overall: float
    p_lt_22_5: float
    p_lt_45: float
    aaai_rotation: float
    azimuth_p_lt_22_5: float = None
    azimuth_p_lt_45: float = None
    aaai_azimuth: float = None
    azimuth_skipped: int = 0
    topk_pose_err_deg: dict = field(default_factory=dict)
    topk_cat_acc: dict = field(default_factory=dict)

    def to_dict(self):
        data = asdict(self)
        for key in ('samples_per_category', 'median_pose_err_deg', 'cat_acc_per_category',
                    'topk_pose_err_deg', 'topk_cat_acc'):
            data[key] = {str(k): v for k, v in data[key].items()}
        return data

    def to_table(self):
        categories = sorted(self.samples_per_category)
        per_category = pd.DataFrame({
            'samples': [self.samples_per_category[c] for c in categories],
            'pose_err_deg': [self.median_pose_err_deg[c] for c in categories],
            'cat_acc': [self.cat_acc_per_category[c] for c in categories],
        }, index=[f"category {c}" for c in categories])
        per_category.loc['mean'] = [self.num_samples, self.mean_pose_err_deg, self.cat_acc_mean]
        per_category['samples'] = per_category['samples'].astype(int)

        summary = {
            'fusion': self.fusion,
            'oracle category': self.oracle_category,
            'cat-acc (overall)': self.cat_acc_overall,
            'P%(<22.5)': self.p_lt_22_5,
            'P%(<45)': self.p_lt_45,
            'AAAI (rotation)': self.aaai_rotation,
            'azimuth P%(<22.5)': self.azimuth_p_lt_22_5,
            'azimuth P%(<45)': self.azimuth_p_lt_45,
            'AAAI (azimuth)': self.aaai_azimuth,
            'azimuth skipped': self.azimuth_skipped,
        }
        for k, value in self.topk_pose_err_deg.items():
            summary[f"top-{k} pose-err"] = value
        for k, value in self.topk_cat_acc.items():
            summary[f"top-{k} cat-acc"] = value
        metrics = pd.DataFrame({'value': list(summary.values())}, index=list(summary))
        with pd.option_context('display.float_format', '{:.4f}'.format):
            return per_category.to_string() + "\n\n" + metrics.to_string()


def predict(model, dataset, fusion=FUSION_WEIGHTED, oracle_category=False):
    """Eval-mode forward pass over the whole dataset."""
    if len(dataset) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    p_override = oracle_distributions(dataset.c_star, model.num_categories) if oracle_category else None
    return model.infer(dataset.x, fusion, p_override)


def _azimuth_errors(R, R_star):
    errors = []
    skipped = 0
    for r, r_star in zip(R, R_star):
        try:
            errors.append(azimuth_err(r, r_star))
        except GimbalLock:
            skipped += 1
    if skipped:
        logger.warning(f"{skipped} samples near gimbal lock excluded from azimuth metrics")
    return np.asarray(errors), skipped


def build_report(predictions, dataset, fusion, oracle_category=False, max_k=MAX_TOPK):
    c_star = dataset.c_star
    errors_rad = so3.geodesic_distance_batch(predictions.R, dataset.R_star)
    errors_deg = np.degrees(errors_rad)
    medians, mean_err = median_pose_err(errors_deg, c_star)

    predicted = np.argmax(predictions.p, axis=1)
    correct = predicted == c_star
    cat_acc = {c: float(np.mean(correct[c_star == c])) for c in medians}
    counts = {c: int(np.sum(c_star == c)) for c in medians}

    az_errors, skipped = _azimuth_errors(predictions.R, dataset.R_star)
    report = EvalReport(
        fusion=fusion,
        oracle_category=oracle_category,
        num_samples=len(dataset),
        samples_per_category=counts,
        median_pose_err_deg=medians,
        mean_pose_err_deg=mean_err,
        cat_acc_per_category=cat_acc,
        cat_acc_mean=float(np.mean(list(cat_acc.values()))),
        cat_acc_overall=float(np.mean(correct)),
        p_lt_22_5=threshold_acc(errors_deg, THRESHOLDS_DEG[0]),
        p_lt_45=threshold_acc(errors_deg, THRESHOLDS_DEG[1]),
        aaai_rotation=float(np.mean(aaai_score(errors_rad))),
        azimuth_skipped=skipped,
    )
    if az_errors.size:
        az_deg = np.degrees(az_errors)
        report.azimuth_p_lt_22_5 = threshold_acc(az_deg, THRESHOLDS_DEG[0])
        report.azimuth_p_lt_45 = threshold_acc(az_deg, THRESHOLDS_DEG[1])
        report.aaai_azimuth = float(np.mean(aaai_score(az_errors)))

    K = predictions.p.shape[1]
    if max_k:
        head_errs = head_errors_deg(predictions.heads, dataset.R_star)
        ranked = np.take_along_axis(head_errs, topk_order(predictions.p), axis=1)
        for k in range(1, min(max_k, K) + 1):
            per_sample = ranked[:, :k].min(axis=1)
            report.topk_pose_err_deg[k] = median_pose_err(per_sample, c_star)[1]
            report.topk_cat_acc[k] = topk_cat_acc(predictions.p, c_star, k)
    return report


def evaluate(model, dataset, fusion=FUSION_WEIGHTED, oracle_category=False, max_k=MAX_TOPK):
    """Full metric suite in eval mode. With oracle_category, p = delta(c*)."""
    predictions = predict(model, dataset, fusion, oracle_category)
    return build_report(predictions, dataset, fusion, oracle_category, max_k)


def quick_metrics(model, dataset, fusion=FUSION_WEIGHTED, oracle_category=False):
    """
    (mean of per-category median pose-err in degrees, overall cat-acc) for
    per-epoch validation. Pose uses the oracle distribution when asked;
    cat-acc always scores the category network.
    """
    prediction = predict(model, dataset, fusion, oracle_category)
    errors = np.degrees(so3.geodesic_distance_batch(prediction.R, dataset.R_star))
    _, mean_err = median_pose_err(errors, dataset.c_star)
    return mean_err, float(np.mean(np.argmax(prediction.p_net, axis=1) == dataset.c_star))

