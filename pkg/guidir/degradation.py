# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

"""
Synthetic degradations used to build LQ inputs.

Operators are pure functions of (image, parameters, random stream). A
DegradationSpec chains them in order and owns the seed, so applying the same
spec to the same image always gives the same bytes.

"""

import json
import logging
import math

import cv2
import numpy as np
from scipy.ndimage import correlate1d

from guidir import settings
from guidir.imaging import Image
from guidir.util import GuidirError, GuidirInputError

logger = logging.getLogger(__name__)


class DegradationError(GuidirError):
    """
    General error for degradations.

    """
    pass


class DegradationSpecError(DegradationError, GuidirInputError):
    """
    Error indicating invalid operator parameters or a malformed spec.

    """
    pass


class DegenerateOutputSizeError(DegradationError, GuidirInputError):
    """
    Error indicating a resize that would produce an empty image.

    """
    pass


def gaussian_kernel(sigma):
    """
    Normalized 1-D Gaussian taps over [-ceil(3 sigma), ceil(3 sigma)].

    """
    radius = int(math.ceil(settings.BLUR_TRUNCATION * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-offsets ** 2 / (2.0 * sigma ** 2))
    return kernel / kernel.sum()


def gaussian_blur(img, sigma):
    if sigma < 0:
        raise DegradationSpecError("Blur sigma must be >= 0, got {}"
                                   "".format(sigma))
    if sigma == 0:
        return img
    kernel = gaussian_kernel(sigma)
    data = correlate1d(img.data, kernel, axis=0, mode='reflect')
    data = correlate1d(data, kernel, axis=1, mode='reflect')
    return Image.clamped(data)


def cubic_weight(x, a=settings.BICUBIC_A):
    x = np.abs(x)
    return np.where(
        x <= 1.0,
        (a + 2.0) * x ** 3 - (a + 3.0) * x ** 2 + 1.0,
        np.where(x < 2.0,
                 a * x ** 3 - 5.0 * a * x ** 2 + 8.0 * a * x - 4.0 * a,
                 0.0))


def _resize_matrix(n_in, n_out):
    """
    n_out x n_in interpolation matrix for one axis. Source taps beyond the
    border are clamped to the edge pixel.

    """
    matrix = np.zeros((n_out, n_in), dtype=np.float64)
    positions = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(positions).astype(int)
    for tap in range(-1, 3):
        index = base + tap
        weights = cubic_weight(positions - index)
        np.add.at(matrix, (np.arange(n_out), np.clip(index, 0, n_in - 1)),
                  weights)
    return matrix


def resize_to(img, height, width):
    if height < 1 or width < 1:
        raise DegenerateOutputSizeError(
            "Resize of {}x{} gives {}x{}".format(img.height, img.width,
                                                 height, width))
    rows = _resize_matrix(img.height, height)
    cols = _resize_matrix(img.width, width)
    data = np.einsum('oh,hwc->owc', rows, img.data)
    data = np.einsum('pw,owc->opc', cols, data)
    return Image.clamped(data)


def resize(img, scale, method="bicubic"):
    """
    Catmull-Rom bicubic resize to round(dim * scale) on each axis.

    """
    if method != "bicubic":
        raise DegradationSpecError("Unsupported resize method '{}'"
                                   "".format(method))
    if scale <= 0:
        raise DegradationSpecError("Resize scale must be > 0, got {}"
                                   "".format(scale))
    return resize_to(img, int(round(img.height * scale)),
                     int(round(img.width * scale)))


def add_gaussian_noise(img, sigma_255, rng):
    """
    Add i.i.d. N(0, (sigma_255 / 255)^2) noise to every sample. Draws come
    only from ``rng`` (a numpy Generator).

    """
    if sigma_255 < 0:
        raise DegradationSpecError("Noise sigma must be >= 0, got {}"
                                   "".format(sigma_255))
    if sigma_255 == 0:
        return img
    noise = rng.standard_normal(img.shape) * (sigma_255 / 255.0)
    return Image.clamped(img.data + noise)


def jpeg_compress(img, quality):
    """
    Baseline JPEG encode + decode through libjpeg (4:2:0 for RGB).

    """
    if not 1 <= int(quality) <= 100:
        raise DegradationSpecError("JPEG quality must be in 1..100, got {}"
                                   "".format(quality))
    quantized = np.rint(img.data * 255.0).astype(np.uint8)
    if img.channels == 3:
        plane = np.ascontiguousarray(quantized[:, :, ::-1])
    else:
        plane = np.ascontiguousarray(quantized[:, :, 0])
    ok, encoded = cv2.imencode(".jpg", plane,
                               [cv2.IMWRITE_JPEG_QUALITY, int(quality)])
    if not ok:
        raise DegradationError("JPEG encoding failed")
    decoded = cv2.imdecode(encoded, cv2.IMREAD_UNCHANGED)
    if decoded.ndim == 2:
        decoded = decoded[:, :, None]
    else:
        decoded = decoded[:, :, ::-1]
    return Image(decoded.astype(np.float64) / 255.0)


class DegradationOp(object):
    """
    One step of a degradation pipeline. Subclasses hold validated
    parameters and know their JSON tag.

    """
    tag = None

    def apply(self, img, rng):
        raise NotImplementedError

    def params(self):
        raise NotImplementedError

    def to_dict(self):
        return {self.tag: self.params()}

    def __eq__(self, other):
        return type(self) is type(other) and self.params() == other.params()

    def __repr__(self):
        return "{}({})".format(self.__class__.__name__, self.params())


class Blur(DegradationOp):
    tag = "blur"

    def __init__(self, sigma):
        if not sigma > 0:
            raise DegradationSpecError("Blur sigma must be > 0, got {}"
                                       "".format(sigma))
        self.sigma = float(sigma)

    def apply(self, img, rng):
        return gaussian_blur(img, self.sigma)

    def params(self):
        return {'sigma': self.sigma}


class Resize(DegradationOp):
    tag = "resize"

    def __init__(self, scale, method="bicubic"):
        if not scale > 0:
            raise DegradationSpecError("Resize scale must be > 0, got {}"
                                       "".format(scale))
        if method != "bicubic":
            raise DegradationSpecError("Unsupported resize method '{}'"
                                       "".format(method))
        self.scale = float(scale)
        self.method = method

    def apply(self, img, rng):
        return resize(img, self.scale, self.method)

    def params(self):
        return {'scale': self.scale}


class GaussianNoise(DegradationOp):
    tag = "noise"

    def __init__(self, sigma_255):
        if not sigma_255 >= 0:
            raise DegradationSpecError("Noise sigma must be >= 0, got {}"
                                       "".format(sigma_255))
        self.sigma_255 = float(sigma_255)

    def apply(self, img, rng):
        return add_gaussian_noise(img, self.sigma_255, rng)

    def params(self):
        return {'sigma_255': self.sigma_255}


class Jpeg(DegradationOp):
    tag = "jpeg"

    def __init__(self, quality):
        if int(quality) != quality or not 1 <= quality <= 100:
            raise DegradationSpecError("JPEG quality must be an integer in "
                                       "1..100, got {}".format(quality))
        self.quality = int(quality)

    def apply(self, img, rng):
        return jpeg_compress(img, self.quality)

    def params(self):
        return {'quality': self.quality}


OPERATORS = {op.tag: op for op in (Blur, Resize, GaussianNoise, Jpeg)}


def op_from_dict(data):
    if not isinstance(data, dict) or len(data) != 1:
        raise DegradationSpecError("Operator must be a single-key object, "
                                   "got {!r}".format(data))
    (tag, params), = data.items()
    if tag not in OPERATORS:
        raise DegradationSpecError("Unknown operator '{}'. Valid operators: "
                                   "{}".format(tag, ", ".join(OPERATORS)))
    try:
        return OPERATORS[tag](**params)
    except TypeError as e:
        raise DegradationSpecError("Bad parameters for '{}': {}".format(
            tag, e))


class DegradationSpec(object):
    """
    Ordered operators plus the seed of their random stream.

    """
    def __init__(self, ops=(), seed=0, resize_back=True):
        self.ops = tuple(ops)
        self.seed = int(seed)
        self.resize_back = bool(resize_back)

    @classmethod
    def from_dict(cls, data):
        try:
            ops = [op_from_dict(op) for op in data.get('ops', [])]
            return cls(ops, seed=data.get('seed', 0),
                       resize_back=data.get('resize_back', True))
        except (AttributeError, ValueError) as e:
            raise DegradationSpecError("Malformed degradation spec: {}"
                                       "".format(e))

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise DegradationSpecError("Invalid JSON: {}".format(e))

    @classmethod
    def from_preset(cls, name, seed=0):
        if name not in settings.DEGRADATION_PRESETS:
            raise DegradationSpecError(
                "Unknown preset '{}'. Valid presets: {}".format(
                    name, ", ".join(settings.DEGRADATION_PRESETS)))
        return cls.from_dict({'ops': settings.DEGRADATION_PRESETS[name],
                              'seed': seed, 'resize_back': True})

    def with_seed(self, seed):
        return DegradationSpec(self.ops, seed=seed,
                               resize_back=self.resize_back)

    def to_dict(self):
        return {
            'ops': [op.to_dict() for op in self.ops],
            'seed': self.seed,
            'resize_back': self.resize_back,
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    def __eq__(self, other):
        return isinstance(other, DegradationSpec) and \
            self.to_dict() == other.to_dict()

    def __repr__(self):
        return "DegradationSpec({})".format(self.to_json())


def apply_pipeline(img, spec):
    """
    Apply the spec's operators in order. With ``resize_back`` the result is
    resized to the input's resolution.

    """
    rng = np.random.default_rng(spec.seed)
    out = img
    for op in spec.ops:
        out = op.apply(out, rng)
    if spec.resize_back and (out.height, out.width) != (img.height,
                                                        img.width):
        out = resize_to(out, img.height, img.width)
    return out


def sample_training_spec(rng, seed=None):
    """
    Draw a random training degradation: blur, downscale, noise and JPEG in
    that order, with parameters from the ranges in settings.

    """
    blur = rng.uniform(*settings.TRAIN_BLUR_SIGMA_RANGE)
    scale = settings.TRAIN_SCALES[rng.integers(len(settings.TRAIN_SCALES))]
    noise = rng.uniform(*settings.TRAIN_NOISE_SIGMA_255_RANGE)
    low, high = settings.TRAIN_JPEG_QUALITY_RANGE
    quality = int(rng.integers(low, high + 1))
    if seed is None:
        seed = int(rng.integers(2 ** 63))
    ops = [Blur(blur), Resize(1.0 / scale), GaussianNoise(noise),
           Jpeg(quality)]
    return DegradationSpec(ops, seed=seed, resize_back=True)
