# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

import logging
import os

from guidir.util import GuidirError, GuidirInputError

logger = logging.getLogger(__name__)

VOCAB_FILENAME = "vocab.txt"
DEFAULT_VOCAB_PATH = os.path.join(os.path.dirname(__file__), VOCAB_FILENAME)


class DatasetError(GuidirError):
    """
    General error for the corpus, manifests and captions.

    """
    pass


class VocabularyError(DatasetError, GuidirInputError):
    """
    Error indicating a token outside the closed vocabulary.

    """
    pass


class Vocabulary(object):
    """
    Closed caption vocabulary, one token per line. Token ids are line
    numbers.

    """
    def __init__(self, tokens):
        self.tokens = tuple(tokens)
        self._ids = {token: i for i, token in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise VocabularyError("Duplicate tokens in vocabulary")

    @classmethod
    def load(cls, path=DEFAULT_VOCAB_PATH):
        with open(path, 'r') as f:
            return cls(line.strip() for line in f if line.strip())

    def save(self, path):
        with open(path, 'w') as f:
            for token in self.tokens:
                print(token, file=f)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._ids

    def encode(self, tokens):
        unknown = [t for t in tokens if t not in self._ids]
        if unknown:
            raise VocabularyError("Unknown tokens: {}".format(
                ", ".join(unknown)))
        return [self._ids[t] for t in tokens]

    def decode(self, ids):
        return [self.tokens[i] for i in ids]


def parse_prompt(text):
    """
    Split a prompt given on the command line ("stripes, freq:4 sharp") into
    tokens.

    """
    return [t for t in text.replace(",", " ").split() if t]
