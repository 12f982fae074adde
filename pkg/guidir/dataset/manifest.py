# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

"""
JSONL corpus manifests.

Each line holds exactly the fields ``path, caption_tokens, quality_label,
degradation_spec, sha256``. Paths are relative to the manifest's directory.

"""

from dataclasses import dataclass
import json
import logging
import os

from guidir.dataset.vocabulary import DatasetError, Vocabulary
from guidir.util import GuidirInputError, sha256_file

logger = logging.getLogger(__name__)

MANIFEST_FILENAME = "manifest.jsonl"
MANIFEST_FIELDS = ("path", "caption_tokens", "quality_label",
                   "degradation_spec", "sha256")
QUALITY_LABELS = ("positive", "negative")


class ManifestError(DatasetError, GuidirInputError):
    """
    Error indicating a malformed manifest or a missing file.

    """
    pass


class HashMismatchError(ManifestError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    caption_tokens: tuple
    quality_label: str
    degradation_spec: object
    sha256: str

    @classmethod
    def for_file(cls, root, path, caption_tokens, quality_label="positive",
                 degradation_spec=None):
        """
        Entry for an existing file, hashing its current bytes.

        """
        return cls(path, tuple(caption_tokens), quality_label,
                   degradation_spec, sha256_file(os.path.join(root, path)))

    @property
    def stem(self):
        return os.path.splitext(os.path.basename(self.path))[0]

    def to_dict(self):
        return {
            'path': self.path,
            'caption_tokens': list(self.caption_tokens),
            'quality_label': self.quality_label,
            'degradation_spec': self.degradation_spec,
            'sha256': self.sha256,
        }

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict) or set(data) != set(MANIFEST_FIELDS):
            raise ManifestError("Manifest records need exactly the fields {}"
                                "".format(", ".join(MANIFEST_FIELDS)))
        if data['quality_label'] not in QUALITY_LABELS:
            raise ManifestError("Unknown quality label '{}'".format(
                data['quality_label']))
        return cls(data['path'], tuple(data['caption_tokens']),
                   data['quality_label'], data['degradation_spec'],
                   data['sha256'])


def _check_entry(root, entry, vocabulary):
    vocabulary.encode(entry.caption_tokens)
    full_path = os.path.join(root, entry.path)
    if not os.path.isfile(full_path):
        raise ManifestError("Missing file '{}'".format(full_path))
    actual = sha256_file(full_path)
    if actual != entry.sha256:
        raise HashMismatchError("'{}' has sha256 {}, manifest says {}"
                                "".format(full_path, actual, entry.sha256))


def build_manifest(root, entries, filename=MANIFEST_FILENAME,
                   vocabulary=None):
    """
    Verify ``entries`` against the files under ``root`` and write them as
    JSONL. Returns the manifest path.

    """
    vocabulary = vocabulary or Vocabulary.load()
    for entry in entries:
        _check_entry(root, entry, vocabulary)
    path = os.path.join(root, filename)
    with open(path, 'w') as f:
        for entry in entries:
            f.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")
    logger.info("Wrote manifest '{}' ({} entries)".format(path, len(entries)))
    return path


def read_manifest(path):
    entries = []
    try:
        with open(path, 'r') as f:
            for number, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    entries.append(ManifestEntry.from_dict(json.loads(line)))
                except json.JSONDecodeError as e:
                    raise ManifestError("{}:{}: {}".format(path, number, e))
    except OSError as e:
        raise ManifestError("Cannot read manifest '{}': {}".format(path, e))
    return entries


def verify_manifest(path, vocabulary=None):
    """
    Read a manifest and check every file hash and token. Returns the
    entries.

    """
    vocabulary = vocabulary or Vocabulary.load()
    root = os.path.dirname(os.path.abspath(path))
    entries = read_manifest(path)
    for entry in entries:
        _check_entry(root, entry, vocabulary)
    logger.debug("Verified {} manifest entries in '{}'".format(
        len(entries), path))
    return entries


def entries_by_stem(entries):
    return {entry.stem: entry for entry in entries}
