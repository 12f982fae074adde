# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

"""
Procedural HQ textures and their caption tokens.

Coordinates run over [0, 1) on both axes; ``frequency`` is the number of
periods across the image. For stripes the phase is
u = x sin(theta) + y cos(theta), so orientation 0 gives horizontal stripes
(constant rows) and 90 gives vertical stripes.

"""

from dataclasses import dataclass
import logging
import math

import numpy as np

from guidir import settings
from guidir.dataset.vocabulary import DatasetError
from guidir.degradation import resize_to
from guidir.imaging import Image
from guidir.util import GuidirInputError

logger = logging.getLogger(__name__)

PALETTES = ("gray", "rgb")


class TextureParamsError(DatasetError, GuidirInputError):
    pass


@dataclass(frozen=True)
class TextureParams:
    family: str
    frequency: float
    orientation: float = 0.0
    contrast: float = 1.0
    palette: str = "gray"
    seed: int = 0

    def __post_init__(self):
        if self.family not in settings.TEXTURE_FAMILIES:
            raise TextureParamsError("Unknown family '{}'. Valid families: {}"
                                     "".format(self.family, ", ".join(
                                         settings.TEXTURE_FAMILIES)))
        if not self.frequency > 0:
            raise TextureParamsError("Frequency must be > 0, got {}".format(
                self.frequency))
        if not 0 <= self.contrast <= 1:
            raise TextureParamsError("Contrast must be in [0, 1], got {}"
                                     "".format(self.contrast))
        if self.palette not in PALETTES:
            raise TextureParamsError("Unknown palette '{}'".format(
                self.palette))


def quantize_frequency(frequency):
    return min(settings.TEXTURE_FREQUENCIES,
               key=lambda f: (abs(f - frequency), f))


def orientation_token(orientation):
    angle = orientation % 180.0
    if min(angle, 180.0 - angle) < 22.5:
        return "horizontal"
    if abs(angle - 90.0) < 22.5:
        return "vertical"
    return "diagonal"


def caption_tokens(params):
    """
    Tokens describing ``params``, followed by the positive quality tokens.

    """
    freq = quantize_frequency(params.frequency)
    tokens = [params.family, "freq:{}".format(freq)]
    if params.family == "stripes":
        tokens.append(orientation_token(params.orientation))
    if freq >= settings.HIGH_FREQUENCY_THRESHOLD:
        tokens.append("high-frequency")
    else:
        tokens.append("low-frequency")
    if params.contrast >= settings.HIGH_CONTRAST_THRESHOLD:
        tokens.append("high-contrast")
    else:
        tokens.append("low-contrast")
    tokens.append("gray" if params.palette == "gray" else "color")
    return tokens + list(settings.POSITIVE_QUALITY_TOKENS)


def _pattern(params, size, rng):
    """
    Pattern values in [-1, 1] on a size x size grid.

    """
    y, x = np.meshgrid(np.arange(size) / size, np.arange(size) / size,
                       indexing='ij')
    theta = math.radians(params.orientation)
    f = params.frequency
    if params.family == "stripes":
        u = x * math.sin(theta) + y * math.cos(theta)
        return np.sin(2 * math.pi * f * u)
    if params.family == "checker":
        u = x * math.cos(theta) - y * math.sin(theta)
        v = x * math.sin(theta) + y * math.cos(theta)
        return np.sign(np.sin(2 * math.pi * f * u + 0.5)) * \
            np.sign(np.sin(2 * math.pi * f * v + 0.5))
    if params.family == "radial":
        r = np.hypot(x - 0.5, y - 0.5)
        return np.cos(2 * math.pi * f * r)
    if params.family == "noise-field":
        cells = max(2, int(round(f)))
        coarse = Image(rng.uniform(size=(cells, cells)))
        field = resize_to(coarse, size, size).data[:, :, 0]
        return 2.0 * field - 1.0
    # blobs
    count = max(1, int(round(f)))
    radius = 0.5 / (f + 1.0)
    field = np.zeros((size, size))
    for cx, cy in rng.uniform(size=(count, 2)):
        field += np.exp(-((x - cx) ** 2 + (y - cy) ** 2) /
                        (2.0 * radius ** 2))
    return 2.0 * field / max(field.max(), 1e-12) - 1.0


def synth_texture(params, size=settings.TEXTURE_SIZE):
    """
    Render ``params`` as a size x size image. Returns (Image, tokens).

    """
    rng = np.random.default_rng(params.seed)
    mix = 0.5 + 0.5 * params.contrast * _pattern(params, size, rng)
    if params.palette == "gray":
        low, high = np.zeros(1), np.ones(1)
    else:
        low = rng.uniform(0.0, 0.3, size=3)
        high = rng.uniform(0.7, 1.0, size=3)
    data = low + (high - low) * mix[:, :, None]
    return Image.clamped(data), caption_tokens(params)


def random_texture_params(rng, palette="gray", seed=None):
    """
    Draw TextureParams from a numpy Generator.

    """
    family = settings.TEXTURE_FAMILIES[
        rng.integers(len(settings.TEXTURE_FAMILIES))]
    frequency = float(settings.TEXTURE_FREQUENCIES[
        rng.integers(len(settings.TEXTURE_FREQUENCIES))])
    orientation = float(rng.uniform(0.0, 180.0))
    contrast = float(rng.uniform(0.2, 1.0))
    if seed is None:
        seed = int(rng.integers(2 ** 63))
    return TextureParams(family, frequency, orientation, contrast, palette,
                         seed)
