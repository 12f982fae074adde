# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

import logging
logging.getLogger(__name__).addHandler(logging.NullHandler())
