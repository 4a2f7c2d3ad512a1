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

# initialize.py

import os
import shutil

from catpose.errors import IoError

from .run_tracker import DATABASE_NAME, initialize_database


def check_directory_access(path, log, test_file_name='access_test_file.tmp'):
    """
    Checks if the application has read, write, and delete access to the specified path.
    It tries to create, read, and delete a temporary file in the directory.
    """
    try:
        test_file_path = os.path.join(path, test_file_name)
        with open(test_file_path, 'w') as test_file:
            test_file.write('Access test.')

        with open(test_file_path, 'r') as test_file:
            if test_file.read() != 'Access test.':
                raise OSError("Failed to read the test file correctly.")

        os.remove(test_file_path)

        # checkpoints/ lives below the output directory
        test_dir_path = os.path.join(path, 'access_test_dir')
        os.makedirs(test_dir_path, exist_ok=True)
        shutil.rmtree(test_dir_path)

        log.debug(f"Access check successful for {path}")
        return True
    except OSError as e:
        log.error(f"Access check failed for {path}: {e}")
        return False


def initialize_system(run_config, logger):
    """
    Creates the output directory, checks access to it and initializes the
    tracking database. Returns the database path.
    """
    output_dir = run_config.output_dir
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"Cannot create output directory {output_dir}: {e}") from e

    if not check_directory_access(output_dir, logger):
        raise IoError(f"Insufficient access to output directory {output_dir}")

    db_path = output_dir / DATABASE_NAME
    if initialize_database(db_path):
        logger.debug(f"Tracking database ready at {db_path}")
    else:
        logger.warning(f"Run tracking disabled: cannot initialize {db_path}")
    logger.info(f"System initialization complete (output directory {output_dir}).")
    return db_path
