# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

import logging

import cv2
import numpy as np
import torch

from guidir.util import GuidirError, GuidirInputError

logger = logging.getLogger(__name__)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
# Offset of the colour type byte in the IHDR chunk.
PNG_COLOR_TYPE_OFFSET = 25
PNG_GRAY_ALPHA = 4


class ImagingError(GuidirError):
    """
    General error for image handling.

    """
    pass


class ImagingIOError(ImagingError):
    """
    Error indicating a file could not be read, decoded or written.

    """
    pass


class UnsupportedFormatError(ImagingError, GuidirInputError):
    """
    Error indicating a file that is not a PNG we can represent.

    """
    pass


class ShapeMismatchError(ImagingError, GuidirInputError):
    """
    Error indicating two images (or tensors) that should share a shape don't.

    """
    pass


class ImageValueError(ImagingError, GuidirInputError):
    """
    Error indicating intensities outside [0, 1] or a bad layout.

    """
    pass


class Image(object):
    """
    Immutable H x W x C image with intensities in [0, 1].

    The pixel array is stored as float64 and flagged read-only, so an Image
    can be shared between threads freely. Use ``Image.clamped`` to build one
    from values that may fall outside the unit range.

    """
    __slots__ = ('_data',)

    def __init__(self, data):
        array = np.array(data, dtype=np.float64)
        if array.ndim == 2:
            array = array[:, :, None]
        if array.ndim != 3 or array.shape[2] not in (1, 3):
            raise ImageValueError("Expected H x W x {{1,3}} data, got shape {}"
                                  "".format(array.shape))
        if array.shape[0] < 1 or array.shape[1] < 1:
            raise ImageValueError("Empty image: {}".format(array.shape))
        if not np.all(np.isfinite(array)):
            raise ImageValueError("Image contains non-finite values")
        if array.min() < 0.0 or array.max() > 1.0:
            raise ImageValueError("Intensities outside [0, 1]: min {}, max {}"
                                  "".format(array.min(), array.max()))
        array.setflags(write=False)
        self._data = array

    @classmethod
    def clamped(cls, data):
        array = np.nan_to_num(np.asarray(data, dtype=np.float64))
        return cls(np.clip(array, 0.0, 1.0))

    @classmethod
    def from_tensor(cls, tensor):
        """
        Build an image from a C x H x W (or 1 x C x H x W) tensor, clamping to
        the unit range.

        """
        array = tensor.detach().to("cpu", torch.float64)
        if array.ndim == 4:
            if array.shape[0] != 1:
                raise ImageValueError("Expected a single image, got batch of "
                                      "{}".format(array.shape[0]))
            array = array[0]
        return cls.clamped(array.permute(1, 2, 0).numpy())

    @property
    def data(self):
        return self._data

    @property
    def height(self):
        return self._data.shape[0]

    @property
    def width(self):
        return self._data.shape[1]

    @property
    def channels(self):
        return self._data.shape[2]

    @property
    def shape(self):
        return self._data.shape

    def to_tensor(self, dtype=torch.float32):
        """
        C x H x W tensor copy of the pixels.

        """
        return torch.from_numpy(
            np.ascontiguousarray(self._data.transpose(2, 0, 1))).to(dtype)

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self._data, other._data))

    def __hash__(self):
        return hash((self.shape, self._data.tobytes()))

    def __repr__(self):
        return "Image({}x{}x{})".format(self.height, self.width, self.channels)


def _to_color_order(array):
    # OpenCV stores colour planes as BGR.
    if array.shape[2] == 3:
        return np.ascontiguousarray(array[:, :, ::-1])
    return np.ascontiguousarray(array[:, :, 0])


def load_png(path):
    """
    Load an 8- or 16-bit grayscale or RGB PNG. Alpha is dropped, so gray+alpha
    stays single-channel. Palette images are expanded to RGB.

    """
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except OSError as e:
        raise ImagingIOError("Cannot read '{}': {}".format(path, e))
    if not raw.startswith(PNG_SIGNATURE):
        raise UnsupportedFormatError("'{}' is not a PNG file".format(path))

    decoded = cv2.imdecode(np.frombuffer(raw, dtype=np.uint8),
                           cv2.IMREAD_UNCHANGED)
    if decoded is None:
        raise ImagingIOError("Cannot decode '{}' (truncated or corrupt)"
                             "".format(path))
    if decoded.dtype == np.uint8:
        scale = 255.0
    elif decoded.dtype == np.uint16:
        scale = 65535.0
    else:
        raise UnsupportedFormatError("Unsupported sample type {} in '{}'"
                                     "".format(decoded.dtype, path))

    if decoded.ndim == 2:
        array = decoded[:, :, None]
    elif decoded.shape[2] == 3:
        array = decoded[:, :, ::-1]
    elif decoded.shape[2] == 4 and \
            raw[PNG_COLOR_TYPE_OFFSET] == PNG_GRAY_ALPHA:
        # Decoded as BGRA with three equal planes.
        array = decoded[:, :, :1]
    elif decoded.shape[2] == 4:
        array = decoded[:, :, 2::-1]
    else:
        raise UnsupportedFormatError("Unsupported channel layout {} in '{}'"
                                     "".format(decoded.shape, path))
    logger.debug("Loaded '{}' ({} bit, shape {})".format(
        path, 8 if scale == 255.0 else 16, array.shape))
    return Image(array.astype(np.float64) / scale)


def save_png(img, path, bit_depth=8):
    """
    Write the image as a PNG with the given bit depth (8 or 16).

    """
    if bit_depth == 8:
        dtype, scale = np.uint8, 255.0
    elif bit_depth == 16:
        dtype, scale = np.uint16, 65535.0
    else:
        raise ImageValueError("Bit depth must be 8 or 16, got {}"
                              "".format(bit_depth))
    quantized = np.rint(img.data * scale).astype(dtype)
    ok, encoded = cv2.imencode(".png", _to_color_order(quantized))
    if not ok:
        raise ImagingIOError("PNG encoding failed for '{}'".format(path))
    try:
        with open(path, 'wb') as f:
            f.write(encoded.tobytes())
    except OSError as e:
        raise ImagingIOError("Cannot write '{}': {}".format(path, e))
    logger.debug("Saved '{}' ({} bit)".format(path, bit_depth))
