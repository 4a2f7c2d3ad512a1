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

# run_tracker.py

"""Audit trail of training runs in a small SQLite database."""

import logging
import sqlite3
from contextlib import closing
from sqlite3 import Error

logger = logging.getLogger('catpose.tracker')

DATABASE_NAME = 'tracking.db'

STAGE_PHASE_STARTED = "Phase Started"
STAGE_PHASE_COMPLETED = "Phase Completed"
STAGE_CHECKPOINT_WRITTEN = "Checkpoint Written"
STAGE_RUN_COMPLETED = "Run Completed"
STAGE_RUN_FAILED = "Run Failed"


def create_connection(db_file):
    """Create a database connection to a SQLite database."""
    try:
        return sqlite3.connect(str(db_file))
    except Error as e:
        logger.error(f"Cannot open tracking database {db_file}: {e}")
    return None


def create_table(conn, create_table_sql):
    try:
        conn.execute(create_table_sql)
    except Error as e:
        logger.error(f"Cannot create tracking table: {e}")


def initialize_database(db_path):
    sql_create_steps_table = """ CREATE TABLE IF NOT EXISTS training_steps (
                                    id integer PRIMARY KEY,
                                    run_id text NOT NULL,
                                    protocol text NOT NULL,
                                    phase text,
                                    stage text NOT NULL,
                                    timestamp DATETIME DEFAULT CURRENT_TIMESTAMP
                                ); """
    conn = create_connection(db_path)
    if conn is None:
        return False
    with closing(conn), conn:
        create_table(conn, sql_create_steps_table)
    return True


def log_training_step(db_path, run_id, protocol, phase, stage):
    conn = create_connection(db_path)
    if conn is None:
        return None
    try:
        with closing(conn), conn:
            cur = conn.execute(
                "INSERT INTO training_steps(run_id, protocol, phase, stage) VALUES(?,?,?,?)",
                (run_id, protocol, phase, stage))
            return cur.lastrowid
    except Error as e:
        logger.error(f"Cannot record step '{stage}' of run {run_id}: {e}")
        return None


def fetch_steps(db_path, run_id):
    """(phase, stage) rows of one run in insertion order."""
    conn = create_connection(db_path)
    if conn is None:
        return []
    with closing(conn):
        rows = conn.execute("SELECT phase, stage FROM training_steps WHERE run_id = ? ORDER BY id",
                            (run_id,)).fetchall()
    return rows
