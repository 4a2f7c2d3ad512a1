# t_cli.py

import json
import shutil

import numpy as np
import pytest

import main
from catpose import losses, nncore
from utils.checkpoint import load_checkpoint


def with_settings(args, settings):
    for assignment in settings:
        args += ['--set', assignment]
    return args


def run(args, settings):
    return main.main(with_settings(list(args), settings))


@pytest.fixture
def trained_run(tmp_path, fast_settings):
    out = tmp_path / 'a'
    assert run(['train', '--protocol', 'pose-first', '--out', str(out)], fast_settings) == 0
    return out


def test_gen_data_is_reproducible(tmp_path, fast_settings, capsys):
    """ Test if gen-data writes the same bytes for the same seed """
    first, second = tmp_path / 'one' / 'train.csv', tmp_path / 'two' / 'train.csv'
    assert run(['gen-data', '--seed', '5', '--out', str(first)], fast_settings) == 0
    assert run(['gen-data', '--seed', '5', '--out', str(second), '--test-out', str(tmp_path / 'two' / 'test.csv')],
               fast_settings) == 0
    assert first.read_bytes() == second.read_bytes()
    assert len(first.read_text().splitlines()) == 61
    assert len((tmp_path / 'two' / 'test.csv').read_text().splitlines()) == 19
    assert 'wrote 60 samples' in capsys.readouterr().out


def test_gen_data_to_an_unusable_path_is_an_io_error(tmp_path, fast_settings):
    """ Test if gen-data exits with code 3 when the output cannot be written """
    blocker = tmp_path / 'blocker'
    blocker.write_text('not a directory')
    assert run(['gen-data', '--out', str(blocker / 'train.csv')], fast_settings) == 3


def test_train_pose_first_runs_five_phases(trained_run):
    """ Test if pose-first training runs its five phases and writes every artifact """
    log = (trained_run / 'catpose.log').read_text(encoding='utf-8')
    assert log.count('           PHASE ') == 5
    checkpoints = sorted(p.name for p in (trained_run / 'checkpoints').iterdir())
    assert checkpoints == ['phase1_pretrain_feature.ckpt', 'phase2_heads_independent.ckpt',
                           'phase3_pose_first_oracle.ckpt', 'phase4_category.ckpt',
                           'phase5_joint_finetune.ckpt']
    records = [json.loads(line) for line in (trained_run / 'metrics.jsonl').read_text().splitlines()]
    assert [r['epoch'] for r in records] == list(range(1, 10))
    assert set(records[0]) == {'epoch', 'phase', 'loss_pose', 'loss_cat', 'val_pose_err_deg', 'val_cat_acc',
                               'wall_ms'}
    assert all(r['wall_ms'] is None for r in records)
    report = json.loads((trained_run / 'report.json').read_text())
    assert report['fusion'] == 'weighted'
    assert load_checkpoint(trained_run / 'final.ckpt').phase_cursor == 5


def test_train_reruns_are_byte_identical(trained_run, tmp_path, fast_settings):
    """ Test if two training runs with the same settings produce identical files """
    rerun = tmp_path / 'b'
    assert run(['train', '--protocol', 'pose-first', '--out', str(rerun)], fast_settings) == 0
    assert (rerun / 'metrics.jsonl').read_bytes() == (trained_run / 'metrics.jsonl').read_bytes()
    assert (rerun / 'final.ckpt').read_bytes() == (trained_run / 'final.ckpt').read_bytes()


def test_resume_matches_the_uninterrupted_run(trained_run, tmp_path, fast_settings):
    """ Test if resuming from a phase checkpoint reproduces the full run """
    resumed = tmp_path / 'c'
    shutil.copytree(trained_run, resumed)
    (resumed / 'final.ckpt').unlink()
    checkpoint = resumed / 'checkpoints' / 'phase2_heads_independent.ckpt'
    assert run(['train', '--protocol', 'pose-first', '--out', str(resumed), '--resume', str(checkpoint)],
               fast_settings) == 0
    assert (resumed / 'final.ckpt').read_bytes() == (trained_run / 'final.ckpt').read_bytes()
    assert (resumed / 'metrics.jsonl').read_bytes() == (trained_run / 'metrics.jsonl').read_bytes()
    assert 'Run tracker lists 5 completed phases' in (resumed / 'catpose.log').read_text(encoding='utf-8')


def test_resume_with_another_protocol_is_rejected(trained_run, tmp_path, fast_settings):
    """ Test if resuming under a different protocol exits with code 2 """
    checkpoint = trained_run / 'checkpoints' / 'phase2_heads_independent.ckpt'
    assert run(['train', '--protocol', 'balanced', '--out', str(tmp_path / 'd'), '--resume', str(checkpoint)],
               fast_settings) == 2


def test_balanced_training_with_top1_fusion(tmp_path, fast_settings):
    """ Test if balanced training with top-1 fusion logs four phases """
    out = tmp_path / 'balanced'
    assert run(['train', '--protocol', 'balanced', '--fusion', 'top1', '--lambda', '1.0', '--out', str(out)],
               fast_settings) == 0
    assert (out / 'catpose.log').read_text(encoding='utf-8').count('           PHASE ') == 4
    assert json.loads((out / 'report.json').read_text())['fusion'] == 'top1'


def test_train_on_csv_data(tmp_path, fast_settings):
    """ Test if training runs on CSV train and test files """
    train_csv, test_csv = tmp_path / 'data' / 'train.csv', tmp_path / 'data' / 'test.csv'
    assert run(['gen-data', '--out', str(train_csv), '--test-out', str(test_csv)], fast_settings) == 0
    out = tmp_path / 'from_csv'
    assert run(['train', '--protocol', 'balanced', '--data', str(train_csv), '--test-data', str(test_csv),
                '--out', str(out)], fast_settings) == 0
    assert (out / 'final.ckpt').exists()


def test_eval_with_oracle_category_and_topk(trained_run, fast_settings, capsys):
    """ Test if oracle evaluation scores perfect categorization and monotone top-k rows """
    assert run(['eval', '--checkpoint', str(trained_run / 'final.ckpt'), '--oracle-category', '--topk', '3'],
               fast_settings) == 0
    report = json.loads((trained_run / 'final.eval.json').read_text())
    assert report['oracle_category'] is True
    assert report['cat_acc_overall'] == 1.0
    assert sorted(report['topk_pose_err_deg']) == ['1', '2', '3']
    topk = report['topk_pose_err_deg']
    assert topk['3'] <= topk['2'] <= topk['1']
    assert 'top-3 pose-err' in capsys.readouterr().out


def test_eval_is_deterministic(trained_run, tmp_path, fast_settings):
    """ Test if evaluating the same checkpoint twice writes identical reports """
    outputs = [tmp_path / 'e1.json', tmp_path / 'e2.json']
    for out in outputs:
        assert run(['eval', '--checkpoint', str(trained_run / 'final.ckpt'), '--out', str(out)], fast_settings) == 0
    assert outputs[0].read_bytes() == outputs[1].read_bytes()
    assert json.loads(outputs[0].read_text())['topk_pose_err_deg'] == {}


def test_eval_rejects_bad_topk_and_mismatched_data(trained_run, tmp_path, fast_settings):
    """ Test if an out-of-range top-k or mismatched data exits with code 2 """
    checkpoint = str(trained_run / 'final.ckpt')
    assert run(['eval', '--checkpoint', checkpoint, '--topk', '4'], fast_settings) == 2
    other = tmp_path / 'wide' / 'train.csv'
    assert run(['gen-data', '--out', str(other)], fast_settings + ['data.synth.input_dim=6']) == 0
    assert run(['eval', '--checkpoint', checkpoint, '--data', str(other)], fast_settings) == 2


def test_eval_of_a_corrupt_checkpoint_is_an_io_error(trained_run, fast_settings):
    """ Test if evaluating a truncated checkpoint exits with code 3 """
    checkpoint = trained_run / 'final.ckpt'
    checkpoint.write_bytes(checkpoint.read_bytes()[:100])
    assert run(['eval', '--checkpoint', str(checkpoint)], fast_settings) == 3


def test_unknown_suite_and_bad_arguments_are_config_errors(tmp_path, fast_settings):
    """ Test if bad arguments and unknown names exit with code 2 """
    assert run(['ablate', '--suite', 'colors', '--out', str(tmp_path / 'x')], fast_settings) == 2
    assert main.main(['train', '--no-such-flag']) == 2
    assert run(['train', '--fusion', 'mean', '--out', str(tmp_path / 'y')], fast_settings) == 2


def test_nan_loss_exits_with_code_four(tmp_path, fast_settings, monkeypatch):
    """ Test if a non-finite loss exits with code 4 """
    monkeypatch.setattr(losses, 'cross_entropy_batch', lambda P, c_star: (float('nan'), np.zeros_like(P)))
    assert run(['train', '--out', str(tmp_path / 'nan')], fast_settings) == 4


def test_gradcheck_passes(tmp_path, fast_settings, capsys):
    """ Test if gradcheck succeeds on the shipped backward passes """
    assert run(['gradcheck'], fast_settings) == 0
    assert 'worst coordinate' in capsys.readouterr().out


def test_gradcheck_detects_a_broken_backward(tmp_path, fast_settings, monkeypatch, capsys):
    """ Test if gradcheck exits with code 5 when a backward pass is wrong """
    original = nncore.dense_backward

    def broken(layer, x, upstream):
        dx, dw, db = original(layer, x, upstream)
        return dx, 1.5 * dw, db

    monkeypatch.setattr(nncore, 'dense_backward', broken)
    assert run(['gradcheck'], fast_settings) == 5
    assert 'FAILED' in capsys.readouterr().out


def test_jitter_on_csv_data_is_a_config_error(tmp_path, fast_settings):
    """ Test if training on CSV data with jitter enabled exits with code 2 """
    train_csv = tmp_path / 'data' / 'train.csv'
    assert run(['gen-data', '--out', str(train_csv)], fast_settings) == 0
    assert run(['train', '--data', str(train_csv), '--out', str(tmp_path / 'jit')],
               fast_settings + ['training.jitter_deg=5']) == 2
    assert not (tmp_path / 'jit' / 'final.ckpt').exists()


def test_negative_seed_is_a_config_error(tmp_path, fast_settings):
    """ Test if a negative --seed or ablation seed exits with code 2 instead of crashing """
    assert run(['train', '--seed', '-1', '--out', str(tmp_path / 'neg')], fast_settings) == 2
    assert run(['gen-data', '--out', str(tmp_path / 'neg.csv')], fast_settings + ['ablation.seeds=[1, -2]']) == 2
