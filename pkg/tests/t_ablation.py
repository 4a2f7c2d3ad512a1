# t_ablation.py

import pytest

from catpose import ablation, data, train
from catpose.errors import InvalidConfig
from catpose.model import ModelConfig

TINY_EPOCHS = {'pretrain': 1, 'heads': 2, 'pose_first': 1, 'category': 1, 'joint': 1}


@pytest.fixture
def tiny_spec(tiny_synth, tiny_config):
    return ablation.ExperimentSpec(label='base', seed=0, synth=tiny_synth, model=tiny_config,
                                   training=train.TrainConfig(batch_size=12), epochs=TINY_EPOCHS,
                                   test_per_category=6)


def result(label, seed, pose_err, pre=None):
    return ablation.ExperimentResult(label, seed, pose_err, 0.9, 100, pre)


def test_suite_specs_layout(tiny_spec):
    """ Test if the suites expand into their experiments grouped by seed """
    heads = ablation.suite_specs('heads', tiny_spec, [1, 2])
    assert [(s.label, s.seed) for s in heads] == [('category_dependent', 1), ('category_independent', 1),
                                                  ('category_dependent', 2), ('category_independent', 2)]
    assert heads[1].model.variant == 'category_independent'
    lam = ablation.suite_specs('lambda', tiny_spec, [3])
    assert [(s.training.lam, s.training.fusion) for s in lam] == [
        (0.1, 'weighted'), (0.1, 'top1'), (1.0, 'weighted'), (1.0, 'top1')]
    finetune = ablation.suite_specs('finetune', tiny_spec, [3])
    assert finetune[0].protocol == train.BALANCED and finetune[0].measure_before_finetune


def test_unknown_suite_is_rejected(tiny_spec):
    """ Test if an unknown suite name is a config error """
    with pytest.raises(InvalidConfig):
        ablation.suite_specs('colors', tiny_spec, [])


def test_judge_votes_per_seed():
    """ Test if the verdict is a majority over the per-seed votes """
    results = [result('balanced', 1, 12.0), result('pose_first', 1, 10.0),
               result('balanced', 2, 9.0), result('pose_first', 2, 11.0)]
    verdict, votes = ablation.judge('protocol', results, [1, 2])
    assert votes == [True, False]
    assert 'pose-first' in verdict
    _, votes = ablation.judge('finetune', [result('balanced', 1, 8.0, pre=9.5)], [1])
    assert votes == [True]


def test_run_experiment_measures_before_finetuning(tiny_spec):
    """ Test if the finetune suite records metrics before the joint phase """
    spec = ablation.suite_specs('finetune', tiny_spec, [4])[0]
    outcome = ablation.run_experiment(spec)
    assert outcome.pre_finetune_pose_err_deg is not None
    assert outcome.parameter_count == spec.model.parameter_count()
    assert 0.0 <= outcome.cat_acc_overall <= 1.0


def test_run_suite_is_deterministic(tiny_spec):
    """ Test if two runs of a suite give identical results """
    first = ablation.run_suite('protocol', tiny_spec, [0])
    second = ablation.run_suite('protocol', tiny_spec, [0])
    assert first.frame().equals(second.frame())
    assert len(first.votes) == 1
    assert 'verdict' in first.to_table()


@pytest.mark.slow
@pytest.mark.parametrize("suite", ["heads", "protocol", "finetune"])
def test_orderings_hold_on_the_benchmark(suite):
    """ Test if each ablation ordering holds on the standard benchmark """
    base = ablation.ExperimentSpec(label='base', seed=42, synth=data.SynthConfig(), model=ModelConfig())
    outcome = ablation.run_suite(suite, base, [42, 43, 44], max_workers=3)
    assert outcome.passed, outcome.to_table()
