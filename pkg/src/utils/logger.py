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

# logger.py

import logging
import sys
from pathlib import Path

LINE_PATTERN = "    /\\/\\/\\/\\/\\/\\/\\/\\/\\/\\/\\/\\/\\/\\/\\/\\/\\/\\/\\/\\/\\/\\/"


def setup_logger(name, log_file=None, level=logging.DEBUG):
    """
    Logger writing to stdout and, when given, to log_file. Calling it again
    for the same name replaces the previous handlers.
    """
    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    logger = logging.getLogger(name)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    if log_file is not None:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, mode='a', encoding='utf-8')
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    stream_handler = logging.StreamHandler(sys.stdout)
    stream_handler.setFormatter(formatter)
    logger.addHandler(stream_handler)

    logger.setLevel(level)
    logger.propagate = False
    return logger


def log_flag(logger, flag_type, title=''):
    if flag_type == 'start':
        logger.info("\n" + LINE_PATTERN + f"\n           CATPOSE {title.upper()} STARTED\n" + LINE_PATTERN)
    elif flag_type == 'end':
        logger.info("\n" + LINE_PATTERN + f"\n           CATPOSE {title.upper()} FINISHED\n" + LINE_PATTERN)
    elif flag_type == 'phase':
        logger.info("\n" + LINE_PATTERN + f"\n           PHASE {title}\n" + LINE_PATTERN)
