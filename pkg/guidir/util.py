# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

import csv
import hashlib
import json
import os


class GuidirError(Exception):
    """
    Generic exception for the toolkit. Every module derives its own errors
    from this one.

    """
    pass


class GuidirInputError(GuidirError):
    """
    Error indicating invalid input (bad parameters, malformed files). The CLI
    maps it to exit code 2.

    """
    pass


def derive_seed(seed, index):
    """
    Per-item seed for work that is spread over many images.

    """
    return (int(seed) ^ int(index)) & 0xFFFFFFFFFFFFFFFF


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_csv(path, header, rows):
    """
    Write rows to a CSV file with the given header. Floats are written with
    repr precision so that tables can be compared after a round trip.

    """
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def write_json(path, data):
    with open(path, 'w') as f:
        json.dump(data, f, indent=4, sort_keys=True, default=str)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
