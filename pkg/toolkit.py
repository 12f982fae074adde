# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

import sys

from guidir.cli import main


if __name__ == "__main__":
    sys.exit(main())
