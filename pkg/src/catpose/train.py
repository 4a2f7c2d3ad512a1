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

# train.py

"""
Multi-phase training of the integrated model.

balanced:    pretrain FN+CN -> heads per category -> learn CN -> joint finetune
pose_first:  pretrain FN+CN -> heads per category -> FN+PN with oracle CN
             -> learn CN with FN fixed -> joint finetune

The first phase stands in for fixing FN to pretrained classification weights:
FN and CN are trained on categorization only, which leaves FN biased toward
categorization just like an ImageNet-pretrained backbone.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import data, evaluation, losses, nncore
from .errors import BatchSmallerThanK, EmptyDataset, InvalidConfig, NaNLoss
from .model import FUSION_WEIGHTED, FUSIONS, oracle_distribution  # noqa: F401

logger = logging.getLogger(__name__)

BALANCED = 'balanced'
POSE_FIRST = 'pose_first'
PROTOCOLS = (BALANCED, POSE_FIRST)

PHASE_PRETRAIN = 'pretrain_feature'
PHASE_HEADS = 'heads_independent'
PHASE_POSE_FIRST = 'pose_first_oracle'
PHASE_CATEGORY = 'category'
PHASE_JOINT = 'joint_finetune'

LOSS_POSE = 'pose'
LOSS_CATEGORY = 'category'
LOSS_JOINT = 'joint'
SOURCE_ORACLE = 'oracle'
SOURCE_NETWORK = 'network'

SUBNET_PREFIXES = {'FN': 'fn.', 'CN': 'cn.', 'PN': 'pn.'}

DEFAULT_EPOCHS = {'pretrain': 20, 'heads': 60, 'pose_first': 90, 'category': 10, 'joint': 40}
DEFAULT_LR = 1e-3
DEFAULT_FINETUNE_LR = 1e-4


@dataclass(frozen=True)
class PhaseSpec:
    name: str
    epochs: int
    lr: float
    trainable: frozenset
    loss: str
    category_source: str


@dataclass(frozen=True)
class Protocol:
    kind: str
    phases: tuple

    @classmethod
    def build(cls, kind, epochs=None, lr=DEFAULT_LR, finetune_lr=DEFAULT_FINETUNE_LR):
        kind = normalize_protocol(kind)
        epochs = {**DEFAULT_EPOCHS, **(epochs or {})}
        pretrain = PhaseSpec(PHASE_PRETRAIN, epochs['pretrain'], lr, frozenset({'FN', 'CN'}),
                             LOSS_CATEGORY, SOURCE_NETWORK)
        heads = PhaseSpec(PHASE_HEADS, epochs['heads'], lr, frozenset({'PN'}),
                          LOSS_POSE, SOURCE_ORACLE)
        category = PhaseSpec(PHASE_CATEGORY, epochs['category'], lr, frozenset({'CN'}),
                             LOSS_CATEGORY, SOURCE_NETWORK)
        joint = PhaseSpec(PHASE_JOINT, epochs['joint'], finetune_lr, frozenset({'FN', 'CN', 'PN'}),
                          LOSS_JOINT, SOURCE_NETWORK)
        if kind == BALANCED:
            return cls(kind, (pretrain, heads, category, joint))
        oracle = PhaseSpec(PHASE_POSE_FIRST, epochs['pose_first'], lr, frozenset({'FN', 'PN'}),
                           LOSS_POSE, SOURCE_ORACLE)
        return cls(kind, (pretrain, heads, oracle, category, joint))


def seeded_streams(seed):
    """Independent (initialization, training) generators derived from the run seed."""
    return np.random.default_rng([seed, 1]), np.random.default_rng([seed, 2])


def normalize_protocol(kind):
    kind = str(kind).replace('-', '_')
    if kind not in PROTOCOLS:
        raise InvalidConfig(f"Unknown protocol: {kind}")
    return kind


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    fusion: str = FUSION_WEIGHTED
    lam: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    jitter_deg: float = 0.0
    log_wall_time: bool = False

    def __post_init__(self):
        if self.fusion not in FUSIONS:
            raise InvalidConfig(f"Unknown fusion: {self.fusion}")
        losses.JointLossConfig(self.lam)
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    loss_pose: float
    loss_cat: float
    val_pose_err_deg: float
    val_cat_acc: float
    wall_ms: float = None

    def to_json(self):
        return json.dumps({
            'epoch': self.epoch,
            'phase': self.phase,
            'loss_pose': self.loss_pose,
            'loss_cat': self.loss_cat,
            'val_pose_err_deg': self.val_pose_err_deg,
            'val_cat_acc': self.val_cat_acc,
            'wall_ms': self.wall_ms,
        })


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    wall_time: float = 0.0

    def last(self):
        return self.records[-1] if self.records else None


def balanced_batches(dataset, batch_size, rng):
    """
    One epoch of batches holding floor(B/k) or ceil(B/k) rows of each of the
    k categories present. Each category is drawn without replacement from a
    fresh permutation; once exhausted it is topped up with replacement.
    """
    labels = np.asarray(getattr(dataset, 'c_star', dataset))
    if labels.size == 0:
        raise EmptyDataset("cannot batch an empty dataset")
    categories = np.unique(labels)
    k = len(categories)
    if batch_size < k:
        raise BatchSmallerThanK(f"batch size {batch_size} smaller than {k} categories")
    pools = [np.flatnonzero(labels == c) for c in categories]
    orders = [rng.permutation(pool) for pool in pools]
    cursors = [0] * k
    base, extra = divmod(batch_size, k)
    n_batches = -(-labels.size // batch_size)
    for b in range(n_batches):
        parts = []
        for j in range(k):
            # the `extra` surplus slots rotate over categories from batch to batch
            quota = base + (1 if (j - b * extra) % k < extra else 0)
            take = orders[j][cursors[j]:cursors[j] + quota]
            cursors[j] += take.size
            if take.size < quota:
                take = np.concatenate([take, rng.choice(pools[j], size=quota - take.size, replace=True)])
            parts.append(take)
        yield rng.permutation(np.concatenate(parts))


def _restrict(grads, store, trainable):
    allowed = set(store.names([SUBNET_PREFIXES[s] for s in trainable], trainable_only=True))
    return {name: g for name, g in grads.items() if name in allowed}


def _oracle_pose_pass(model, features, c_star, R_star, training, update_stats, grads):
    """Each row goes through the head of its ground-truth category only."""
    n = features.shape[0]
    dfeat = np.zeros_like(features)
    total = 0.0
    if model.independent:
        groups = [(0, np.arange(n))]
    else:
        groups = [(int(i), np.flatnonzero(c_star == i)) for i in np.unique(c_star)]
    for category, rows in groups:
        head = model.head(category)
        y, tape = head.forward(features[rows], training=training and rows.size >= 2,
                               update_stats=update_stats)
        row_losses, g = losses.pose_loss_batch(y, R_star[rows])
        total += row_losses.sum()
        dfeat[rows] = head.backward(tape, g / n, grads)
    return total / n, dfeat


def _network_pose_pass(model, features, p, R_star, fusion, training, update_stats, grads):
    """Every head sees every row; outputs fused with the network distribution p."""
    n, K = p.shape
    heads = np.empty((n, K, 3))
    tapes = []
    if model.independent:
        y, tape = model.heads[0].forward(features, training, update_stats)
        heads[:] = y[:, None, :]
        tapes.append(tape)
    else:
        for i, head in enumerate(model.heads):
            heads[:, i, :], tape = head.forward(features, training, update_stats)
            tapes.append(tape)
    if fusion == FUSION_WEIGHTED:
        fused = np.einsum('nk,nkj->nj', p, heads)
    else:
        best = np.argmax(p, axis=1)
        fused = heads[np.arange(n), best]
    row_losses, g = losses.pose_loss_batch(fused, R_star)
    g = g / n
    if fusion == FUSION_WEIGHTED:
        dheads = p[:, :, None] * g[:, None, :]
        dp = np.einsum('nkj,nj->nk', heads, g)
    else:
        # the argmax selection is a constant within the step
        dheads = np.zeros_like(heads)
        dheads[np.arange(n), best] = g
        dp = None
    if model.independent:
        dfeat = model.heads[0].backward(tapes[0], dheads.sum(axis=1), grads)
    else:
        dfeat = np.zeros_like(features)
        for i, head in enumerate(model.heads):
            dfeat += head.backward(tapes[i], dheads[:, i, :], grads)
    return row_losses.mean(), dfeat, dp


def loss_weights(phase, lam):
    """Weighting of the phase's objective as pose + lam * category; lam is 1 outside the joint loss."""
    return losses.JointLossConfig(lam if phase.loss == LOSS_JOINT else 1.0)


def batch_objective(model, x, c_star, R_star, phase, fusion=FUSION_WEIGHTED, lam=0.1,
                    training=True, update_stats=True):
    """
    Forward and backward pass of one batch under the phase's loss.
    Returns (pose loss or None, category loss or None, gradients restricted to
    the phase's trainable subnets). The optimized value is
    losses.joint_loss(loss_weights(phase, lam), pose, category).
    """
    grads = {}
    features, fn_tape = model.feature_net.forward(x)
    loss_pose = loss_cat = None
    needs_pose = phase.loss in (LOSS_POSE, LOSS_JOINT)
    needs_category = phase.loss in (LOSS_CATEGORY, LOSS_JOINT)
    use_network = needs_category or (needs_pose and phase.category_source == SOURCE_NETWORK)

    # upstream gradients at the shared nodes, one dict per loss term
    pose_signals, category_signals = {}, {}
    if use_network:
        logits, cn_tape = model.category_net.forward(features)
        p = nncore.softmax(logits)
        if needs_category:
            loss_cat, category_signals['logits'] = losses.cross_entropy_batch(p, c_star)

    if needs_pose:
        if phase.category_source == SOURCE_ORACLE:
            loss_pose, pose_signals['features'] = _oracle_pose_pass(model, features, c_star, R_star,
                                                                    training, update_stats, grads)
        else:
            loss_pose, pose_signals['features'], dp = _network_pose_pass(
                model, features, p, R_star, fusion, training, update_stats, grads)
            if dp is not None:
                # softmax backward of the fusion weights
                pose_signals['logits'] = p * (dp - (p * dp).sum(axis=1, keepdims=True))

    signals = losses.combine_gradients(loss_weights(phase, lam), pose_signals, category_signals)
    dfeat = signals.get('features', np.zeros_like(features))
    train_fn = 'FN' in phase.trainable
    if 'logits' in signals and ('CN' in phase.trainable or train_fn):
        dfeat = dfeat + model.category_net.backward(cn_tape, signals['logits'], grads)
    if train_fn:
        model.feature_net.backward(fn_tape, dfeat, grads)
    return loss_pose, loss_cat, _restrict(grads, model.store, phase.trainable)


def _validation_metrics(model, dataset, phase, fusion):
    oracle = phase.category_source == SOURCE_ORACLE
    return evaluation.quick_metrics(model, dataset, fusion, oracle_category=oracle)


def _warn_missing_categories(dataset, phase, K):
    counts = np.bincount(dataset.c_star, minlength=K)
    for i in np.flatnonzero(counts == 0):
        logger.warning(f"{phase.name}: category {i} has no samples; head {i} is skipped")


def run_phase(model, dataset, phase, config, rng, epoch_offset=0, val_set=None, on_epoch_end=None):
    """Runs one phase for phase.epochs epochs; returns its EpochRecords."""
    if len(dataset) == 0:
        raise EmptyDataset(f"{phase.name}: training dataset is empty")
    if phase.category_source == SOURCE_ORACLE and phase.loss == LOSS_POSE:
        _warn_missing_categories(dataset, phase, model.num_categories)
    weights = loss_weights(phase, config.lam)
    jitter = config.jitter_deg > 0
    if jitter and dataset.generator is None:
        raise InvalidConfig(f"{phase.name}: jitter_deg={config.jitter_deg} needs the synthetic feature maps; "
                            f"datasets loaded from CSV carry none, set training.jitter_deg=0")
    val_set = dataset if val_set is None else val_set
    records = []
    for e in range(phase.epochs):
        epoch = epoch_offset + e + 1
        started = time.perf_counter()
        pose_sum = cat_sum = 0.0
        batches = 0
        for idx in balanced_batches(dataset, config.batch_size, rng):
            if jitter:
                x, R = data.jitter_rows(dataset, idx, rng, config.jitter_deg)
            else:
                x, R = dataset.x[idx], dataset.R_star[idx]
            loss_pose, loss_cat, grads = batch_objective(
                model, x, dataset.c_star[idx], R, phase, config.fusion, config.lam)
            objective = losses.joint_loss(weights, loss_pose or 0.0, loss_cat or 0.0)
            if not math.isfinite(objective):
                raise NaNLoss(phase.name, epoch)
            nncore.adam_step(model.store, grads, phase.lr, config.beta1, config.beta2, config.adam_eps)
            pose_sum += loss_pose or 0.0
            cat_sum += loss_cat or 0.0
            batches += 1
        val_pose_err, val_cat_acc = _validation_metrics(model, val_set, phase, config.fusion)
        wall_ms = (time.perf_counter() - started) * 1000.0 if config.log_wall_time else None
        record = EpochRecord(
            epoch=epoch,
            phase=phase.name,
            loss_pose=pose_sum / batches if phase.loss != LOSS_CATEGORY else None,
            loss_cat=cat_sum / batches if phase.loss != LOSS_POSE else None,
            val_pose_err_deg=val_pose_err,
            val_cat_acc=val_cat_acc,
            wall_ms=wall_ms,
        )
        logger.debug(f"{phase.name} epoch {epoch}: pose={record.loss_pose} cat={record.loss_cat} "
                     f"val_pose_err={val_pose_err:.3f} val_cat_acc={val_cat_acc:.4f}")
        records.append(record)
        if on_epoch_end is not None:
            on_epoch_end(record)
    return records


def _single_phase(name, epochs, lr, trainable, loss, source):
    return PhaseSpec(name, epochs, lr, frozenset(trainable), loss, source)


def pretrain_feature(model, dataset, epochs, config, rng, lr=DEFAULT_LR):
    phase = _single_phase(PHASE_PRETRAIN, epochs, lr, {'FN', 'CN'}, LOSS_CATEGORY, SOURCE_NETWORK)
    run_phase(model, dataset, phase, config, rng)
    return model


def train_heads_independent(model, dataset, epochs, config, rng, lr=DEFAULT_LR):
    phase = _single_phase(PHASE_HEADS, epochs, lr, {'PN'}, LOSS_POSE, SOURCE_ORACLE)
    run_phase(model, dataset, phase, config, rng)
    return model


def train_pose_first_phase(model, dataset, epochs, config, rng, lr=DEFAULT_LR):
    phase = _single_phase(PHASE_POSE_FIRST, epochs, lr, {'FN', 'PN'}, LOSS_POSE, SOURCE_ORACLE)
    run_phase(model, dataset, phase, config, rng)
    return model


def train_category_phase(model, dataset, epochs, config, rng, lr=DEFAULT_LR):
    phase = _single_phase(PHASE_CATEGORY, epochs, lr, {'CN'}, LOSS_CATEGORY, SOURCE_NETWORK)
    run_phase(model, dataset, phase, config, rng)
    return model


def finetune_joint(model, dataset, epochs, config, rng, fusion=None, lam=None, lr=DEFAULT_FINETUNE_LR):
    overrides = {}
    if fusion is not None:
        overrides['fusion'] = fusion
    if lam is not None:
        overrides['lam'] = lam
    if overrides:
        config = replace(config, **overrides)
    phase = _single_phase(PHASE_JOINT, epochs, lr, {'FN', 'CN', 'PN'}, LOSS_JOINT, SOURCE_NETWORK)
    run_phase(model, dataset, phase, config, rng)
    return model


def run_protocol(protocol, model, dataset, config, rng, val_set=None, start_phase=0, epoch_offset=0,
                 on_phase_start=None, on_epoch_end=None, on_phase_end=None):
    """
    Executes protocol.phases[start_phase:] in order. on_phase_end receives
    (index, phase, model, rng, epoch cursor) after each phase, which is where
    checkpoints are written.
    """
    report = TrainReport()
    started = time.perf_counter()
    epoch = epoch_offset
    total = len(protocol.phases)
    for index in range(start_phase, total):
        phase = protocol.phases[index]
        logger.info(f"Phase {index + 1}/{total}: {phase.name} ({phase.epochs} epochs, lr {phase.lr})")
        if on_phase_start is not None:
            on_phase_start(index, phase)
        records = run_phase(model, dataset, phase, config, rng, epoch, val_set, on_epoch_end)
        report.records.extend(records)
        epoch += phase.epochs
        if on_phase_end is not None:
            on_phase_end(index, phase, model, rng, epoch)
    report.wall_time = time.perf_counter() - started
    return model, report
