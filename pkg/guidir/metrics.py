# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

import logging
import math
import statistics

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from guidir.imaging import ImagingError, ShapeMismatchError
from guidir.settings import (LUMA_WEIGHTS, PSNR_CAP_DB, PSNR_MIN_MSE,
                             PSNR_PEAK, SSIM_C1, SSIM_C2, SSIM_WINDOW)
from guidir.util import GuidirInputError, write_csv

logger = logging.getLogger(__name__)

# For details on what the metrics in this file represent see the relevant
# documentation file in doc/Metrics.rst

METRICS_CSV_HEADER = ("path", "psnr_db", "ssim")


class ImageTooSmallError(ImagingError, GuidirInputError):
    """
    Error indicating an image smaller than the SSIM window.

    """
    pass


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise ShapeMismatchError("Shapes differ: {} vs {}".format(
            a.shape, b.shape))


def _luma(data):
    """
    Reduce H x W x C data to a single plane. RGB uses BT.601 weights.

    """
    if data.shape[2] == 1:
        return data[:, :, 0]
    return data @ np.asarray(LUMA_WEIGHTS)


def mse(a, b):
    _check_shapes(a, b)
    return float(np.mean((a.data - b.data) ** 2))


def psnr(a, b):
    """
    PSNR in dB for peak 1.0, averaged over every channel. Capped at
    PSNR_CAP_DB for (near) identical inputs.

    """
    error = mse(a, b)
    if error < PSNR_MIN_MSE:
        return PSNR_CAP_DB
    return 10.0 * math.log10(PSNR_PEAK ** 2 / error)


def ssim(a, b):
    """
    Mean SSIM over all SSIM_WINDOW x SSIM_WINDOW windows at stride 1.

    RGB images are compared on their luma plane. Window statistics are
    population moments.

    """
    _check_shapes(a, b)
    if min(a.height, a.width) < SSIM_WINDOW:
        raise ImageTooSmallError(
            "SSIM needs at least {0}x{0} pixels, got {1}x{2}".format(
                SSIM_WINDOW, a.height, a.width))
    x = sliding_window_view(_luma(a.data), (SSIM_WINDOW, SSIM_WINDOW))
    y = sliding_window_view(_luma(b.data), (SSIM_WINDOW, SSIM_WINDOW))
    axes = (-2, -1)
    mu_x = x.mean(axis=axes)
    mu_y = y.mean(axis=axes)
    var_x = x.var(axis=axes)
    var_y = y.var(axis=axes)
    cov = (x * y).mean(axis=axes) - mu_x * mu_y
    numerator = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    denominator = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(numerator / denominator))


class MetricReport(object):
    """
    Per-image PSNR / SSIM rows plus their arithmetic means.

    """
    def __init__(self):
        self.rows = []

    def add(self, path, restored, reference):
        row = (str(path), psnr(restored, reference), ssim(restored, reference))
        logger.debug("{}: psnr {:.3f} dB, ssim {:.4f}".format(*row))
        self.rows.append(row)
        return row

    def __len__(self):
        return len(self.rows)

    @property
    def psnr_mean(self):
        return statistics.fmean(row[1] for row in self.rows)

    @property
    def ssim_mean(self):
        return statistics.fmean(row[2] for row in self.rows)

    def summary(self):
        return {
            'count': len(self.rows),
            'psnr_db_mean': self.psnr_mean if self.rows else None,
            'ssim_mean': self.ssim_mean if self.rows else None,
        }

    def write_csv(self, path):
        write_csv(path, METRICS_CSV_HEADER, self.rows)
