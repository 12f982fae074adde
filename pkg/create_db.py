# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

from guidir.reports import create_schema

import config


if __name__ == "__main__":
    create_schema(config.DB_ENGINE)
