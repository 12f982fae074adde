# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

"""
Flat binary container for named float32 tensors.

Layout::

    b"GUIDIR1"                      7 bytes, format version
    index length                    uint64, little endian
    index                           UTF-8 JSON: {"meta": {...},
                                      "tensors": {name: {"shape", "offset"}}}
    data                            float32 little endian, tensors back to
                                    back, offsets relative to the data start

"""

import json
import logging
import struct

import numpy as np
import torch

from guidir.util import GuidirError, GuidirInputError

logger = logging.getLogger(__name__)

MAGIC = b"GUIDIR1"
_LENGTH = struct.Struct("<Q")


class CheckpointError(GuidirError):
    """
    General error for checkpoint files.

    """
    pass


class CheckpointVersionError(CheckpointError, GuidirInputError):
    """
    Error indicating a file that is not a GUIDIR1 container.

    """
    pass


def save_checkpoint(path, tensors, meta=None):
    """
    Write ``tensors`` (name -> tensor) and the JSON-serializable ``meta``.

    """
    index = {}
    blobs = []
    offset = 0
    for name, tensor in tensors.items():
        array = np.ascontiguousarray(
            tensor.detach().to("cpu", torch.float32).numpy(), dtype='<f4')
        index[name] = {'shape': list(array.shape), 'offset': offset}
        blobs.append(array.tobytes())
        offset += array.nbytes
    header = json.dumps({'meta': meta or {}, 'tensors': index},
                        sort_keys=True).encode("utf-8")
    try:
        with open(path, 'wb') as f:
            f.write(MAGIC)
            f.write(_LENGTH.pack(len(header)))
            f.write(header)
            for blob in blobs:
                f.write(blob)
    except OSError as e:
        raise CheckpointError("Cannot write '{}': {}".format(path, e))
    logger.info("Wrote checkpoint '{}' ({} tensors, {} bytes of data)"
                "".format(path, len(index), offset))


def load_checkpoint(path):
    """
    Return (tensors, meta) from a GUIDIR1 file.

    """
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointError("Cannot read '{}': {}".format(path, e))
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointVersionError(
            "'{}' is not a {} checkpoint (header {!r})".format(
                path, MAGIC.decode(), raw[:len(MAGIC)]))
    start = len(MAGIC) + _LENGTH.size
    if len(raw) < start:
        raise CheckpointError("'{}' is truncated".format(path))
    (length,) = _LENGTH.unpack_from(raw, len(MAGIC))
    try:
        index = json.loads(raw[start:start + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError("Corrupt index in '{}': {}".format(path, e))
    data = memoryview(raw)[start + length:]

    tensors = {}
    for name, entry in index['tensors'].items():
        count = int(np.prod(entry['shape'], dtype=np.int64))
        end = entry['offset'] + 4 * count
        if end > len(data):
            raise CheckpointError("Tensor '{}' runs past the end of '{}'"
                                  "".format(name, path))
        array = np.frombuffer(data[entry['offset']:end], dtype='<f4')
        tensors[name] = torch.from_numpy(
            array.reshape(entry['shape']).astype(np.float32))
    logger.debug("Loaded checkpoint '{}' ({} tensors)".format(
        path, len(tensors)))
    return tensors, index['meta']
