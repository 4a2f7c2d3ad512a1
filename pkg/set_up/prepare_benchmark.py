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

#prepare_benchmark.py

# Writes the standard synthetic benchmark (train.csv, test.csv, benchmark.json)
# into BENCHMARK_DIR. Run from the repository root: python set_up/prepare_benchmark.py

import json
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / 'src'))

from catpose import data  # noqa: E402
from utils.config_manager import build_run_config, resolve_settings  # noqa: E402

# Load environment variables
load_dotenv()


def prepare_benchmark(out_dir, settings_path=None):
    run_config = build_run_config(resolve_settings(settings_path))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_set, test_set = data.generate_splits(run_config.synth, run_config.seed,
                                               run_config.test_per_category)
    data.save_csv(train_set, out_dir / 'train.csv')
    data.save_csv(test_set, out_dir / 'test.csv')
    summary = {
        'seed': run_config.seed,
        'synth': run_config.synth.__dict__,
        'train_samples': len(train_set),
        'test_samples': len(test_set),
        'train_digest': data.dataset_digest(train_set),
        'test_digest': data.dataset_digest(test_set),
    }
    with open(out_dir / 'benchmark.json', 'w', encoding='utf-8') as file:
        json.dump(summary, file, indent=2, sort_keys=True)
    print(f"Benchmark written to {out_dir} ({len(train_set)} train / {len(test_set)} test samples)")
    return summary


if __name__ == "__main__":
    prepare_benchmark(os.getenv('BENCHMARK_DIR', 'data/benchmark'), os.getenv('CATPOSE_SETTINGS'))
