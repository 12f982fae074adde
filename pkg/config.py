# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

import logging
import os

from sqlalchemy import create_engine

# Report database (SQLAlchemy) configuration.
DB_URL = os.environ.get("GUIDIR_DB_URL", "sqlite:///guidir_reports.db")
DB_DEBUG = False
DB_ENGINE = create_engine(DB_URL, echo=DB_DEBUG)

# Logging configuration.
LOGGING_LEVEL = logging.INFO
LOGGING_FORMAT = "%(asctime)s %(levelname)-8s %(name)-30.30s %(message)s"
# Empty means log to stderr.
LOGGING_FILE = ""

# Corpus cache used by `synth` when no output directory is given.
CACHE_DIR = os.environ.get("GUIDIR_CACHE",
                           os.path.join(os.path.expanduser("~"), ".cache",
                                        "guidir"))

# Written to every command's output directory.
EFFECTIVE_CONFIG_FILE = "effective-config.json"
