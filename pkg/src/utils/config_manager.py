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

# config_manager.py

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from catpose import train
from catpose.data import SynthConfig
from catpose.diagnostics import GradcheckSettings
from catpose.errors import CatPoseError, InvalidConfig, IoError
from catpose.model import ModelConfig

DEFAULT_SETTINGS = {
    'seed': 42,
    'output_dir': 'runs/default',
    'log_file_path': None,
    'log_level': 'INFO',
    'max_workers': 1,
    'data': {
        'train_path': None,
        'test_path': None,
        'test_per_category': 100,
        'synth': {
            'num_categories': 4,
            'samples_per_category': 500,
            'input_dim': 64,
            'noise_sigma': 0.05,
            'max_angle': math.pi - 0.1,
            'offset_scale': 1.0,
            'generator_seed': 0,
        },
    },
    'model': {
        'variant': 'category_dependent',
        'feature_hidden': [128],
        'feature_dim': 64,
        'category_hidden': [64],
        'head_hidden': [128, 64],
        'independent_hidden': None,
    },
    'batchnorm': {
        'momentum': 0.9,
        'eps': 1e-5,
    },
    'training': {
        'protocol': 'pose_first',
        'fusion': 'weighted',
        'lambda': 0.1,
        'batch_size': 32,
        'jitter_deg': 0.0,
        'log_wall_time': False,
    },
    'epochs': dict(train.DEFAULT_EPOCHS),
    'learning_rates': {
        'base': train.DEFAULT_LR,
        'finetune': train.DEFAULT_FINETUNE_LR,
    },
    'adam': {
        'beta1': 0.9,
        'beta2': 0.999,
        'eps': 1e-8,
    },
    'gradcheck': {
        'h': 1e-5,
        'layer_tolerance': 1e-6,
        'loss_tolerance': 1e-4,
        'atol': 1e-7,
        'seed': 0,
    },
    'ablation': {
        'seeds': [42, 43, 44],
    },
}


def load_settings(settings_path='config/settings.yml'):
    """Reads a YAML settings file (or JSON, by suffix) into a dict."""
    path = Path(settings_path)
    if path.suffix == '.json':
        return load_json(path)
    try:
        with open(path, 'r', encoding='utf-8') as file:
            settings = yaml.safe_load(file)
    except OSError as e:
        raise IoError(f"Cannot read settings file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise InvalidConfig(f"Settings file {path} is not valid YAML: {e}") from e
    if settings is None:
        return {}
    if not isinstance(settings, dict):
        raise InvalidConfig(f"Settings file {path} must hold a mapping at the top level")
    return settings


def load_json(json_path):
    try:
        with open(json_path, 'r', encoding='utf-8') as file:
            return json.load(file)
    except OSError as e:
        raise IoError(f"Cannot read {json_path}: {e}") from e
    except json.JSONDecodeError as e:
        raise InvalidConfig(f"{json_path} is not valid JSON: {e}") from e


def merge_settings(base, override, prefix=''):
    """Deep merge of override into a copy of base. Keys unknown to base are rejected."""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        dotted = f"{prefix}{key}"
        if key not in merged:
            raise InvalidConfig(f"Unknown setting: {dotted}")
        if isinstance(merged[key], dict):
            if not isinstance(value, dict):
                raise InvalidConfig(f"Setting {dotted} must be a mapping")
            merged[key] = merge_settings(merged[key], value, prefix=f"{dotted}.")
        else:
            merged[key] = value
    return merged


def parse_override(assignment):
    """'section.key=value' -> nested dict, the value parsed as YAML."""
    if '=' not in assignment:
        raise InvalidConfig(f"Override must look like section.key=value, got '{assignment}'")
    dotted, raw = assignment.split('=', 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise InvalidConfig(f"Cannot parse value of {dotted}: {e}") from e
    nested = value
    for key in reversed(dotted.strip().split('.')):
        nested = {key: nested}
    return nested


def apply_overrides(settings, assignments):
    for assignment in assignments or []:
        settings = merge_settings(settings, parse_override(assignment))
    return settings


def resolve_settings(settings_path=None, assignments=None, flags=None):
    """Defaults, then the settings file, then --set assignments, then named flags."""
    settings = copy.deepcopy(DEFAULT_SETTINGS)
    if settings_path:
        settings = merge_settings(settings, load_settings(settings_path))
    settings = apply_overrides(settings, assignments)
    return merge_settings(settings, flags or {})


@dataclass
class RunConfig:
    seed: int
    output_dir: Path
    log_file: Path
    log_level: str
    synth: SynthConfig
    model: ModelConfig
    protocol: str
    training: train.TrainConfig
    epochs: dict
    lr: float
    finetune_lr: float
    gradcheck: GradcheckSettings
    ablation_seeds: list
    max_workers: int = 1
    train_path: Path = None
    test_path: Path = None
    test_per_category: int = 100
    settings: dict = field(default_factory=dict)

    def build_protocol(self):
        return train.Protocol.build(self.protocol, self.epochs, self.lr, self.finetune_lr)


def _optional_path(value):
    return Path(value) if value else None


def build_run_config(settings):
    """Validated RunConfig from merged settings; any violation raises InvalidConfig."""
    try:
        s = settings
        d = s['data']['synth']
        synth = SynthConfig(
            num_categories=int(d['num_categories']),
            samples_per_category=int(d['samples_per_category']),
            input_dim=int(d['input_dim']),
            noise_sigma=float(d['noise_sigma']),
            max_angle=float(d['max_angle']),
            offset_scale=float(d['offset_scale']),
            generator_seed=int(d['generator_seed']),
        ).validate()
        model = ModelConfig(
            num_categories=synth.num_categories,
            input_dim=synth.input_dim,
            feature_hidden=tuple(s['model']['feature_hidden']),
            feature_dim=int(s['model']['feature_dim']),
            category_hidden=tuple(s['model']['category_hidden']),
            head_hidden=tuple(s['model']['head_hidden']),
            variant=s['model']['variant'],
            independent_hidden=s['model']['independent_hidden'],
            bn_momentum=float(s['batchnorm']['momentum']),
            bn_eps=float(s['batchnorm']['eps']),
        )
        t = s['training']
        training = train.TrainConfig(
            batch_size=int(t['batch_size']),
            fusion=t['fusion'],
            lam=float(t['lambda']),
            beta1=float(s['adam']['beta1']),
            beta2=float(s['adam']['beta2']),
            adam_eps=float(s['adam']['eps']),
            jitter_deg=float(t['jitter_deg']),
            log_wall_time=bool(t['log_wall_time']),
        )
        protocol = train.normalize_protocol(t['protocol'])
        epochs = {name: int(value) for name, value in s['epochs'].items()}
        if any(value < 0 for value in epochs.values()):
            raise InvalidConfig(f"Epoch budgets must be >= 0: {epochs}")
        lr = float(s['learning_rates']['base'])
        finetune_lr = float(s['learning_rates']['finetune'])
        if not (lr > 0 and finetune_lr > 0):
            raise InvalidConfig("Learning rates must be positive")
        if not 0.0 <= training.jitter_deg <= 10.0:
            raise InvalidConfig("training.jitter_deg must lie in [0, 10]")
        seed = int(s['seed'])
        ablation_seeds = [int(value) for value in s['ablation']['seeds']]
        if min([seed, int(s['gradcheck']['seed']), *ablation_seeds]) < 0:
            raise InvalidConfig(f"Seeds must be >= 0: seed={seed}, gradcheck.seed={s['gradcheck']['seed']}, "
                                f"ablation.seeds={ablation_seeds}")
        output_dir = Path(s['output_dir'])
        log_file = Path(s['log_file_path']) if s['log_file_path'] else output_dir / 'catpose.log'
        return RunConfig(
            seed=seed,
            output_dir=output_dir,
            log_file=log_file,
            log_level=str(s['log_level']).upper(),
            synth=synth,
            model=model,
            protocol=protocol,
            training=training,
            epochs=epochs,
            lr=lr,
            finetune_lr=finetune_lr,
            gradcheck=GradcheckSettings(**{key: (int(value) if key == 'seed' else float(value))
                                           for key, value in s['gradcheck'].items()}),
            ablation_seeds=ablation_seeds,
            max_workers=int(s['max_workers']),
            train_path=_optional_path(s['data']['train_path']),
            test_path=_optional_path(s['data']['test_path']),
            test_per_category=int(s['data']['test_per_category']),
            settings=s,
        )
    except CatPoseError:
        raise
    except (TypeError, ValueError, KeyError) as e:
        raise InvalidConfig(f"Invalid settings: {e}") from e
