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

# main.py

import argparse
import datetime
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from dotenv import load_dotenv

#Modules
from catpose import ablation, data, diagnostics, evaluation, train
from catpose.errors import (BatchSmallerThanK, BatchTooSmall, CorruptCheckpoint, EmptyCategory,
                            EmptyDataset, IndexOutOfRange, InvalidConfig, InvalidK, InvalidRange,
                            IoError, NaNLoss, ParseError, SchemaError, ShapeMismatch, VersionMismatch)
from catpose.model import FUSIONS, IntegratedModel
from utils.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from utils.config_manager import build_run_config, resolve_settings
from utils.initialize import initialize_system
from utils.logger import log_flag, setup_logger
from utils.run_tracker import (STAGE_CHECKPOINT_WRITTEN, STAGE_PHASE_COMPLETED, STAGE_PHASE_STARTED,
                               STAGE_RUN_COMPLETED, STAGE_RUN_FAILED, fetch_steps, log_training_step)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NAN = 4
EXIT_GRADCHECK = 5

CONFIG_ERRORS = (InvalidConfig, SchemaError, ParseError, ShapeMismatch, InvalidRange, InvalidK,
                 IndexOutOfRange, EmptyDataset, EmptyCategory, BatchSmallerThanK, BatchTooSmall)
IO_ERRORS = (IoError, CorruptCheckpoint, VersionMismatch)

METRICS_FILE = 'metrics.jsonl'
CHECKPOINT_DIR = 'checkpoints'
FINAL_CHECKPOINT = 'final.ckpt'
REPORT_FILE = 'report.json'

LOGGER_NAME = 'catpose'


def build_parser():
    parser = argparse.ArgumentParser(prog='catpose',
                                     description="Joint object category and 3D pose estimation.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="YAML settings file (default: $CATPOSE_SETTINGS)")
    common.add_argument('--set', dest='assignments', action='append', default=[], metavar='KEY=VALUE',
                        help="override one setting, e.g. --set epochs.joint=5 (repeatable)")
    common.add_argument('--seed', type=int)
    subparsers = parser.add_subparsers(dest='command', required=True)

    gen = subparsers.add_parser('gen-data', parents=[common], help="write a synthetic dataset as CSV")
    gen.add_argument('--out', required=True, help="CSV path of the training split")
    gen.add_argument('--test-out', help="optional CSV path of the test split")

    fit = subparsers.add_parser('train', parents=[common], help="run a training protocol")
    fit.add_argument('--protocol', help="balanced or pose-first")
    fit.add_argument('--fusion', help="weighted or top1")
    fit.add_argument('--lambda', dest='lam', type=float, help="weight of the category loss")
    fit.add_argument('--data', help="training CSV (default: synthetic data)")
    fit.add_argument('--test-data', help="test CSV used for validation and the final report")
    fit.add_argument('--out', help="output directory")
    fit.add_argument('--resume', help="checkpoint to continue the protocol from")

    score = subparsers.add_parser('eval', parents=[common], help="evaluate a checkpoint")
    score.add_argument('--checkpoint', required=True)
    score.add_argument('--data', help="CSV to evaluate on (default: synthetic test split)")
    score.add_argument('--fusion', help="weighted or top1")
    score.add_argument('--oracle-category', action='store_true', help="use p = delta(c*)")
    score.add_argument('--topk', type=int, help="add top-k rows for k = 1..K")
    score.add_argument('--out', help="report JSON path (default: next to the checkpoint)")

    ablate = subparsers.add_parser('ablate', parents=[common], help="run a paired ablation suite")
    ablate.add_argument('--suite', required=True, help=f"one of {', '.join(ablation.SUITES)}")
    ablate.add_argument('--out', help="output directory")

    subparsers.add_parser('gradcheck', parents=[common], help="check every backward pass numerically")
    return parser


def _flags(args):
    """Named CLI flags as a settings fragment; they take precedence over --set."""
    flags = {}
    if args.seed is not None:
        flags['seed'] = args.seed
    training = {}
    if getattr(args, 'protocol', None):
        training['protocol'] = args.protocol
    if getattr(args, 'fusion', None):
        if args.fusion not in FUSIONS:
            raise InvalidConfig(f"Unknown fusion: {args.fusion} (choose from {', '.join(FUSIONS)})")
        training['fusion'] = args.fusion
    if getattr(args, 'lam', None) is not None:
        training['lambda'] = args.lam
    if training:
        flags['training'] = training
    if args.command in ('train', 'ablate') and args.out:
        flags['output_dir'] = args.out
    elif args.command == 'gen-data':
        flags['output_dir'] = str(Path(args.out).parent)
    elif args.command == 'eval':
        flags['output_dir'] = str(Path(args.checkpoint).parent)
    if args.command == 'train' and (args.data or args.test_data):
        flags['data'] = {}
        if args.data:
            flags['data']['train_path'] = args.data
        if args.test_data:
            flags['data']['test_path'] = args.test_data
    if os.getenv('CATPOSE_LOG_FILE'):
        flags['log_file_path'] = os.getenv('CATPOSE_LOG_FILE')
    return flags


def write_json(path, payload):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp_path = path.with_name(path.name + '.tmp')
        with open(tmp_path, 'w', encoding='utf-8', newline='\n') as file:
            json.dump(payload, file, indent=2, sort_keys=True)
            file.write('\n')
        os.replace(tmp_path, path)
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}") from e


def load_splits(run_config, logger):
    """(train, test) datasets: CSV files when configured, the synthetic benchmark otherwise."""
    if run_config.train_path is not None:
        train_set = data.load_csv(run_config.train_path)
        test_set = None
        if run_config.test_path is not None:
            test_set = data.load_csv(run_config.test_path, num_categories=train_set.num_categories)
        logger.info(f"Loaded {len(train_set)} training samples from {run_config.train_path}")
        return train_set, test_set
    train_set, test_set = data.generate_splits(run_config.synth, run_config.seed,
                                               run_config.test_per_category)
    logger.info(f"Generated synthetic benchmark: {len(train_set)} train / {len(test_set)} test samples")
    return train_set, test_set


def cmd_gen_data(args, run_config, logger):
    train_set, test_set = data.generate_splits(run_config.synth, run_config.seed,
                                               run_config.test_per_category)
    data.save_csv(train_set, args.out)
    counts = ', '.join(f"category {i}: {n}" for i, n in enumerate(train_set.category_counts()))
    print(f"wrote {len(train_set)} samples to {args.out} ({counts})")
    if args.test_out:
        data.save_csv(test_set, args.test_out)
        print(f"wrote {len(test_set)} samples to {args.test_out}")
    logger.info(f"Dataset digest {data.dataset_digest(train_set)}")
    return EXIT_OK


def _truncate_metrics(path, epoch_cursor):
    """Keeps the records of epochs up to epoch_cursor so a resumed run appends cleanly."""
    if not path.exists():
        return
    with open(path, 'r', encoding='utf-8') as file:
        kept = [line for line in file if line.strip() and json.loads(line)['epoch'] <= epoch_cursor]
    with open(path, 'w', encoding='utf-8', newline='\n') as file:
        file.writelines(kept)


def cmd_train(args, run_config, logger, db_path):
    train_set, test_set = load_splits(run_config, logger)
    model_config = replace(run_config.model, num_categories=train_set.num_categories,
                           input_dim=train_set.input_dim)
    protocol = run_config.build_protocol()
    run_id = f"{model_config.digest().hex()[:12]}-s{run_config.seed}"
    output_dir = run_config.output_dir
    metrics_path = output_dir / METRICS_FILE
    extra = {'protocol': protocol.kind, 'run_id': run_id, 'seed': run_config.seed,
             'dataset_digest': data.dataset_digest(train_set)}

    if args.resume:
        checkpoint = load_checkpoint(args.resume)
        if checkpoint.model_config != model_config:
            raise ShapeMismatch("checkpoint model config does not match the configured model and data")
        if checkpoint.extra.get('protocol') != protocol.kind:
            raise InvalidConfig(f"checkpoint was written by the {checkpoint.extra.get('protocol')} protocol, "
                                f"not {protocol.kind}")
        if checkpoint.extra.get('dataset_digest') != extra['dataset_digest']:
            logger.warning("Resuming on a dataset that differs from the checkpoint's")
        model = checkpoint.model()
        rng = checkpoint.rng()
        start_phase, epoch_offset = checkpoint.phase_cursor, checkpoint.epoch_cursor
        _truncate_metrics(metrics_path, epoch_offset)
        completed = [phase for phase, stage in fetch_steps(db_path, run_id) if stage == STAGE_PHASE_COMPLETED]
        logger.info(f"Run tracker lists {len(completed)} completed phases for {run_id}: "
                    f"{', '.join(completed) or 'none'}")
        logger.info(f"Resuming {run_id} at phase {start_phase + 1} (epoch {epoch_offset}) from {args.resume}")
    else:
        init_rng, rng = train.seeded_streams(run_config.seed)
        model = IntegratedModel(model_config).init_params(init_rng)
        start_phase, epoch_offset = 0, 0
        metrics_path.write_text('', encoding='utf-8')
    logger.info(f"Run {run_id}: {protocol.kind} protocol, {len(protocol.phases)} phases, "
                f"fusion {run_config.training.fusion}, lambda {run_config.training.lam}, "
                f"{model.store.parameter_count()} parameters")

    def on_phase_start(index, phase):
        log_flag(logger, 'phase', f"{index + 1}/{len(protocol.phases)}: {phase.name}")
        log_training_step(db_path, run_id, protocol.kind, phase.name, STAGE_PHASE_STARTED)

    def on_epoch_end(record):
        with open(metrics_path, 'a', encoding='utf-8', newline='\n') as file:
            file.write(record.to_json() + '\n')
        logger.info(f"[{record.phase}] epoch {record.epoch}: pose-err {record.val_pose_err_deg:.3f} deg, "
                    f"cat-acc {record.val_cat_acc:.4f}")

    def on_phase_end(index, phase, model, rng, epoch):
        log_training_step(db_path, run_id, protocol.kind, phase.name, STAGE_PHASE_COMPLETED)
        checkpoint = Checkpoint(model.config, model.store, rng.bit_generator.state, index + 1, epoch, extra)
        path = save_checkpoint(output_dir / CHECKPOINT_DIR / f"phase{index + 1}_{phase.name}.ckpt", checkpoint)
        logger.info(f"Checkpoint written: {path}")
        log_training_step(db_path, run_id, protocol.kind, phase.name, STAGE_CHECKPOINT_WRITTEN)

    try:
        model, report = train.run_protocol(protocol, model, train_set, run_config.training, rng,
                                           val_set=test_set, start_phase=start_phase,
                                           epoch_offset=epoch_offset, on_phase_start=on_phase_start,
                                           on_epoch_end=on_epoch_end, on_phase_end=on_phase_end)
    except Exception:
        log_training_step(db_path, run_id, protocol.kind, None, STAGE_RUN_FAILED)
        raise

    final = Checkpoint(model.config, model.store, rng.bit_generator.state, len(protocol.phases),
                       epoch_offset + sum(p.epochs for p in protocol.phases[start_phase:]), extra)
    save_checkpoint(output_dir / FINAL_CHECKPOINT, final)
    log_training_step(db_path, run_id, protocol.kind, None, STAGE_RUN_COMPLETED)
    logger.info(f"Training finished in {report.wall_time:.1f} s; final checkpoint {output_dir / FINAL_CHECKPOINT}")

    if test_set is not None:
        eval_report = evaluation.evaluate(model, test_set, run_config.training.fusion)
        write_json(output_dir / REPORT_FILE, eval_report.to_dict())
        print(eval_report.to_table())
    return EXIT_OK


def cmd_eval(args, run_config, logger):
    checkpoint = load_checkpoint(args.checkpoint)
    model = checkpoint.model()
    K = model.num_categories
    if args.data:
        dataset = data.load_csv(args.data, num_categories=K)
    else:
        _, dataset = data.generate_splits(run_config.synth, run_config.seed, run_config.test_per_category)
    if dataset.input_dim != model.config.input_dim:
        raise ShapeMismatch(f"data has {dataset.input_dim} features, checkpoint expects {model.config.input_dim}")
    if dataset.num_categories > K:
        raise ShapeMismatch(f"data has {dataset.num_categories} categories, checkpoint has {K}")
    max_k = 0
    if args.topk is not None:
        if not 1 <= args.topk <= K:
            raise InvalidK(f"--topk must lie in [1, {K}], got {args.topk}")
        max_k = args.topk
    report = evaluation.evaluate(model, dataset, run_config.training.fusion,
                                 oracle_category=args.oracle_category, max_k=max_k)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_suffix('.eval.json')
    write_json(out, report.to_dict())
    print(report.to_table())
    logger.info(f"Evaluation report written to {out}")
    return EXIT_OK


def cmd_ablate(args, run_config, logger):
    base = ablation.ExperimentSpec(
        label='base',
        seed=run_config.seed,
        synth=run_config.synth,
        model=run_config.model,
        protocol=run_config.protocol,
        training=run_config.training,
        epochs=run_config.epochs,
        lr=run_config.lr,
        finetune_lr=run_config.finetune_lr,
        test_per_category=run_config.test_per_category,
    )
    result = ablation.run_suite(args.suite, base, run_config.ablation_seeds, run_config.max_workers)
    frame = result.frame()
    csv_path = run_config.output_dir / f"ablation_{args.suite}.csv"
    try:
        frame.to_csv(csv_path, index=False, lineterminator='\n')
    except OSError as e:
        raise IoError(f"Cannot write {csv_path}: {e}") from e
    write_json(run_config.output_dir / f"ablation_{args.suite}.json", {
        'suite': result.suite,
        'verdict': result.verdict,
        'votes': [bool(v) for v in result.votes],
        'passed': bool(result.passed),
        'results': frame.to_dict(orient='records'),
    })
    print(result.to_table())
    return EXIT_OK


def cmd_gradcheck(args, run_config, logger):
    report = diagnostics.run_gradcheck(run_config.gradcheck)
    for name, result in report.checks.items():
        status = 'ok' if result.passed else 'FAILED'
        print(f"{name:<28} max rel error {result.max_rel_error:.3e}  {status}")
    check, param, index, error = report.worst()
    print(f"worst coordinate: {check}:{param}{list(index) if index is not None else ''} ({error:.3e})")
    if not report.passed:
        logger.error(f"Gradient check failed for: {', '.join(report.failing)}")
        return EXIT_GRADCHECK
    return EXIT_OK


def main(argv=None):
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_CONFIG

    logger = setup_logger(LOGGER_NAME)
    try:
        if args.command == 'ablate' and args.suite not in ablation.SUITES:
            raise InvalidConfig(f"Unknown ablation suite: {args.suite} "
                                f"(choose from {', '.join(ablation.SUITES)})")
        settings = resolve_settings(args.config or os.getenv('CATPOSE_SETTINGS'), args.assignments,
                                    _flags(args))
        run_config = build_run_config(settings)
        try:
            logger = setup_logger(LOGGER_NAME, run_config.log_file,
                                  getattr(logging, run_config.log_level, logging.INFO))
        except OSError as e:
            raise IoError(f"Cannot open log file {run_config.log_file}: {e}") from e
        db_path = initialize_system(run_config, logger)
        log_flag(logger, 'start', args.command)
        start_time = datetime.datetime.now()
        if args.command == 'gen-data':
            code = cmd_gen_data(args, run_config, logger)
        elif args.command == 'train':
            code = cmd_train(args, run_config, logger, db_path)
        elif args.command == 'eval':
            code = cmd_eval(args, run_config, logger)
        elif args.command == 'ablate':
            code = cmd_ablate(args, run_config, logger)
        else:
            code = cmd_gradcheck(args, run_config, logger)
        log_flag(logger, 'end', args.command)
        logger.info(f"Command {args.command} completed. Total runtime: {datetime.datetime.now() - start_time}")
        return code
    except NaNLoss as e:
        logger.error(f"Aborting: {e}")
        return EXIT_NAN
    except CONFIG_ERRORS as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_CONFIG
    except IO_ERRORS as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
