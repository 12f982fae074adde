# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

import logging

from guidir import settings
from guidir.dataset.vocabulary import DatasetError
from guidir.degradation import Blur, DegradationSpec, GaussianNoise, Jpeg, \
    apply_pipeline
from guidir.training import QualityLabel, TrainSample
from guidir.util import GuidirInputError

logger = logging.getLogger(__name__)


class SeverityError(DatasetError, GuidirInputError):
    pass


def negative_degradation_params(severity):
    """
    (blur sigma, noise sigma_255, jpeg quality) for a severity in [0, 1].

    """
    if not 0 <= severity <= 1:
        raise SeverityError("Severity must be in [0, 1], got {}".format(
            severity))
    return 3.0 * severity, 50.0 * severity, int(round(100 - 70 * severity))


def negative_spec(severity, seed):
    if not 0 < severity <= 1:
        raise SeverityError("Severity must be in (0, 1], got {}".format(
            severity))
    blur, noise, quality = negative_degradation_params(severity)
    return DegradationSpec([Blur(blur), GaussianNoise(noise), Jpeg(quality)],
                           seed=seed, resize_back=True)


def make_negative_sample(hq, severity, seed, content_tokens=()):
    """
    Degrade ``hq`` by ``severity`` and label the result as a negative
    quality sample. ``content_tokens`` (the source caption without its
    quality tokens) are kept in front of the negative tokens.

    """
    spec = negative_spec(severity, seed)
    degraded = apply_pipeline(hq, spec)
    tokens = [t for t in content_tokens
              if t not in settings.POSITIVE_QUALITY_TOKENS]
    tokens += [t for t in settings.NEGATIVE_SAMPLE_TOKENS if t not in tokens]
    logger.debug("Negative sample at severity {:.3f} (seed {})".format(
        severity, seed))
    return TrainSample(hq=degraded, lq=degraded, caption_tokens=tokens,
                       quality_label=QualityLabel.negative,
                       degradation_spec=spec)
