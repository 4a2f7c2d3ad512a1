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

# ablation.py

"""
Paired experiments on the synthetic benchmark. Every suite trains its
variants under the same seeds and reports a majority verdict over seeds for
the ordering it checks.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from . import data, evaluation, train
from .errors import InvalidConfig
from .model import FUSION_TOP1, FUSION_WEIGHTED, IntegratedModel, ModelConfig, independent_counterpart

logger = logging.getLogger(__name__)

SUITES = ('heads', 'protocol', 'lambda', 'finetune')
LAMBDA_SWEEP = (0.1, 1.0)


@dataclass(frozen=True)
class ExperimentSpec:
    label: str
    seed: int
    synth: data.SynthConfig = data.SynthConfig()
    model: ModelConfig = ModelConfig()
    protocol: str = train.POSE_FIRST
    training: train.TrainConfig = train.TrainConfig()
    epochs: dict = field(default_factory=dict, hash=False)
    lr: float = train.DEFAULT_LR
    finetune_lr: float = train.DEFAULT_FINETUNE_LR
    test_per_category: int = 100
    measure_before_finetune: bool = False


@dataclass
class ExperimentResult:
    label: str
    seed: int
    mean_pose_err_deg: float
    cat_acc_overall: float
    parameter_count: int
    pre_finetune_pose_err_deg: float = None
    pre_finetune_cat_acc: float = None


@dataclass
class SuiteResult:
    suite: str
    results: list
    verdict: str
    votes: list
    passed: bool

    def frame(self):
        return pd.DataFrame([r.__dict__ for r in self.results])

    def to_table(self):
        outcome = 'HOLDS' if self.passed else 'DOES NOT HOLD'
        votes = ', '.join('yes' if v else 'no' for v in self.votes)
        with pd.option_context('display.float_format', '{:.4f}'.format, 'display.width', 200):
            table = self.frame().to_string(index=False)
        return f"{table}\n\nverdict: {self.verdict} -> {outcome} (per seed: {votes})"


def run_experiment(spec):
    """Generates the seeded splits, trains one model and scores it on the test split."""
    model_config = replace(spec.model, num_categories=spec.synth.num_categories,
                           input_dim=spec.synth.input_dim)
    train_set, test_set = data.generate_splits(spec.synth, spec.seed, spec.test_per_category)
    protocol = train.Protocol.build(spec.protocol, spec.epochs, spec.lr, spec.finetune_lr)
    init_rng, rng = train.seeded_streams(spec.seed)
    model = IntegratedModel(model_config).init_params(init_rng)
    before = {}

    def on_phase_end(index, phase, model, rng, epoch):
        if spec.measure_before_finetune and index == len(protocol.phases) - 2:
            report = evaluation.evaluate(model, test_set, spec.training.fusion, max_k=0)
            before['pose'], before['cat'] = report.mean_pose_err_deg, report.cat_acc_overall

    train.run_protocol(protocol, model, train_set, spec.training, rng, on_phase_end=on_phase_end)
    report = evaluation.evaluate(model, test_set, spec.training.fusion, max_k=0)
    logger.info(f"{spec.label} (seed {spec.seed}): pose-err {report.mean_pose_err_deg:.3f} deg, "
                f"cat-acc {report.cat_acc_overall:.4f}")
    return ExperimentResult(spec.label, spec.seed, report.mean_pose_err_deg, report.cat_acc_overall,
                            model.store.parameter_count(), before.get('pose'), before.get('cat'))


def _with_fusion(base, fusion, lam=None):
    changes = {'fusion': fusion}
    if lam is not None:
        changes['lam'] = lam
    return replace(base.training, **changes)


def suite_specs(suite, base, seeds):
    """Experiment list of a suite, grouped by seed in a fixed order."""
    if suite not in SUITES:
        raise InvalidConfig(f"Unknown ablation suite: {suite} (choose from {', '.join(SUITES)})")
    specs = []
    for seed in seeds:
        common = replace(base, seed=seed)
        if suite == 'heads':
            specs += [replace(common, label='category_dependent'),
                      replace(common, label='category_independent', model=independent_counterpart(base.model))]
        elif suite == 'protocol':
            specs += [replace(common, label='balanced', protocol=train.BALANCED),
                      replace(common, label='pose_first', protocol=train.POSE_FIRST)]
        elif suite == 'lambda':
            for lam in LAMBDA_SWEEP:
                for fusion in (FUSION_WEIGHTED, FUSION_TOP1):
                    specs.append(replace(common, label=f"lambda={lam} {fusion}", protocol=train.POSE_FIRST,
                                         training=_with_fusion(base, fusion, lam)))
        else:
            specs.append(replace(common, label='balanced', protocol=train.BALANCED,
                                 measure_before_finetune=True))
    return specs


def _by_label(results, seed):
    return {r.label: r for r in results if r.seed == seed}


def judge(suite, results, seeds):
    """Per-seed votes on the suite's ordering and their description."""
    votes = []
    for seed in seeds:
        r = _by_label(results, seed)
        if suite == 'heads':
            votes.append(r['category_dependent'].mean_pose_err_deg < r['category_independent'].mean_pose_err_deg)
        elif suite == 'protocol':
            votes.append(r['pose_first'].mean_pose_err_deg <= r['balanced'].mean_pose_err_deg)
        elif suite == 'lambda':
            low, high = (f"lambda={lam} {FUSION_WEIGHTED}" for lam in LAMBDA_SWEEP)
            votes.append(r[low].mean_pose_err_deg <= r[high].mean_pose_err_deg)
        else:
            run = r['balanced']
            votes.append(run.mean_pose_err_deg < run.pre_finetune_pose_err_deg)
    verdict = {
        'heads': "category-dependent pose-err < category-independent pose-err",
        'protocol': "pose-first pose-err <= balanced pose-err",
        'lambda': f"lambda={LAMBDA_SWEEP[0]} pose-err <= lambda={LAMBDA_SWEEP[1]} pose-err (weighted fusion)",
        'finetune': "balanced pose-err after joint fine-tuning < before it",
    }[suite]
    return verdict, votes


def run_suite(suite, base, seeds, max_workers=1):
    """
    Runs every experiment of `suite` for each seed. Jobs go to a process pool
    when max_workers > 1; results are always collected in submission order.
    """
    specs = suite_specs(suite, base, seeds)
    logger.info(f"Ablation suite '{suite}': {len(specs)} experiments over seeds {list(seeds)}")
    if max_workers > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as executor:
            futures = [executor.submit(run_experiment, spec) for spec in specs]
            results = [future.result() for future in futures]
    else:
        results = [run_experiment(spec) for spec in specs]
    verdict, votes = judge(suite, results, seeds)
    passed = int(np.sum(votes)) * 2 > len(votes)
    return SuiteResult(suite, results, verdict, votes, passed)
