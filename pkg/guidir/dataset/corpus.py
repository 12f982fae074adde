# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

"""
Corpus generation and loading.

A corpus directory holds ``hq/`` (positive textures), ``negative/``
(negative-quality samples), ``manifest.jsonl`` and a copy of the
vocabulary. Item i is rendered from seed ``derive_seed(seed, i)``, so the
output does not depend on the number of workers.

"""

from concurrent.futures import ThreadPoolExecutor
import logging
import os

import numpy as np

from guidir import settings
from guidir.dataset.manifest import ManifestEntry, build_manifest, \
    verify_manifest, MANIFEST_FILENAME
from guidir.dataset.negatives import make_negative_sample
from guidir.dataset.textures import random_texture_params, synth_texture
from guidir.dataset.vocabulary import DatasetError, Vocabulary, \
    VOCAB_FILENAME
from guidir.degradation import DegradationSpec, apply_pipeline, \
    sample_training_spec
from guidir.imaging import load_png, save_png
from guidir.training import QualityLabel, TrainSample
from guidir.util import GuidirInputError, derive_seed, ensure_dir

logger = logging.getLogger(__name__)

HQ_DIR = "hq"
NEGATIVE_DIR = "negative"


class CorpusConfigError(DatasetError, GuidirInputError):
    pass


def negative_indices(n, ratio, seed):
    """
    Indices of the round(n * ratio) items rendered as negatives.

    """
    count = int(round(n * ratio))
    order = np.random.default_rng(seed).permutation(n)
    return set(int(i) for i in order[:count])


def _render_item(root, index, seed, negative, size, palette):
    item_seed = derive_seed(seed, index)
    rng = np.random.default_rng(item_seed)
    params = random_texture_params(rng, palette=palette, seed=item_seed)
    image, tokens = synth_texture(params, size)
    name = "{:05d}.png".format(index)
    if negative:
        low, high = settings.NEGATIVE_SEVERITY_RANGE
        sample = make_negative_sample(image, float(rng.uniform(low, high)),
                                      item_seed, content_tokens=tokens)
        path = os.path.join(NEGATIVE_DIR, name)
        save_png(sample.hq, os.path.join(root, path))
        return ManifestEntry.for_file(root, path, sample.caption_tokens,
                                      "negative",
                                      sample.degradation_spec.to_dict())
    path = os.path.join(HQ_DIR, name)
    save_png(image, os.path.join(root, path))
    return ManifestEntry.for_file(root, path, tokens, "positive")


def generate_corpus(out_dir, n, seed=0, negative_ratio=settings.NEGATIVE_RATIO,
                    size=settings.TEXTURE_SIZE, palette="gray", jobs=1,
                    vocabulary=None):
    """
    Render ``n`` items into ``out_dir`` and write the manifest. Returns the
    manifest entries in item order.

    """
    if n < 0:
        raise CorpusConfigError("n must be >= 0, got {}".format(n))
    if not 0 <= negative_ratio <= settings.NEGATIVE_RATIO_MAX:
        raise CorpusConfigError(
            "negative_ratio must be in [0, {}], got {}".format(
                settings.NEGATIVE_RATIO_MAX, negative_ratio))
    if jobs < 1:
        raise CorpusConfigError("jobs must be >= 1, got {}".format(jobs))
    vocabulary = vocabulary or Vocabulary.load()
    ensure_dir(os.path.join(out_dir, HQ_DIR))
    ensure_dir(os.path.join(out_dir, NEGATIVE_DIR))

    negatives = negative_indices(n, negative_ratio, seed)
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        entries = list(executor.map(
            lambda i: _render_item(out_dir, i, seed, i in negatives, size,
                                   palette),
            range(n)))
    vocabulary.save(os.path.join(out_dir, VOCAB_FILENAME))
    build_manifest(out_dir, entries, vocabulary=vocabulary)
    logger.info("Generated corpus in '{}': {} positive, {} negative".format(
        out_dir, n - len(negatives), len(negatives)))
    return entries


def cached_corpus(out_dir):
    """
    Verified entries of an existing corpus, or None when there is no usable
    one.

    """
    path = os.path.join(out_dir, MANIFEST_FILENAME)
    if not os.path.isfile(path):
        return None
    try:
        return verify_manifest(path)
    except DatasetError as e:
        logger.warning("Ignoring cached corpus '{}': {}".format(out_dir, e))
        return None


def load_training_samples(manifest_path, seed=0, preset=None):
    """
    TrainSamples for a corpus: positives get an LQ from a random training
    degradation (or ``preset``) seeded per item; negatives come back as
    stored. Returns (positives, negatives).

    """
    root = os.path.dirname(os.path.abspath(manifest_path))
    entries = verify_manifest(manifest_path)
    positives, negatives = [], []
    for index, entry in enumerate(entries):
        image = load_png(os.path.join(root, entry.path))
        if entry.quality_label == "negative":
            negatives.append(TrainSample(
                image, image, entry.caption_tokens, QualityLabel.negative,
                DegradationSpec.from_dict(entry.degradation_spec)))
            continue
        item_seed = derive_seed(seed, index)
        if preset is None:
            spec = sample_training_spec(np.random.default_rng(item_seed),
                                        seed=item_seed)
        else:
            spec = DegradationSpec.from_preset(preset, seed=item_seed)
        positives.append(TrainSample(image, apply_pipeline(image, spec),
                                     entry.caption_tokens,
                                     QualityLabel.positive, spec))
    logger.info("Loaded {} positive and {} negative samples from '{}'"
                "".format(len(positives), len(negatives), manifest_path))
    return positives, negatives
