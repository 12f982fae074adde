# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

import math

import numpy as np
import pytest

from guidir.imaging import Image, ShapeMismatchError
from guidir.metrics import ImageTooSmallError, MetricReport, mse, psnr, ssim
from guidir.settings import PSNR_CAP_DB, SSIM_C1


def test_identical_images_hit_the_caps(rgb_image):
    assert psnr(rgb_image, rgb_image) == PSNR_CAP_DB
    assert ssim(rgb_image, rgb_image) == pytest.approx(1.0, abs=1e-12)


def test_psnr_matches_closed_form():
    a = Image(np.full((16, 16), 0.5))
    b = Image(np.full((16, 16), 0.6))
    assert mse(a, b) == pytest.approx(0.01)
    assert psnr(a, b) == pytest.approx(20.0)


def test_ssim_drops_with_noise(texture, rng):
    noisy = Image.clamped(texture.data + 0.2 * rng.standard_normal(
        texture.shape))
    assert ssim(texture, noisy) < 0.9


def test_ssim_needs_a_full_window():
    small = Image(np.zeros((7, 32)))
    with pytest.raises(ImageTooSmallError):
        ssim(small, small)


def test_shape_mismatch(texture, rgb_image):
    with pytest.raises(ShapeMismatchError):
        psnr(texture, rgb_image)


def test_report_summary_is_mean_of_rows(texture, rng):
    report = MetricReport()
    for i in range(4):
        noisy = Image.clamped(texture.data + 0.05 * (i + 1) *
                              rng.standard_normal(texture.shape))
        report.add("img{}".format(i), noisy, texture)
    summary = report.summary()
    assert summary['count'] == 4
    assert summary['psnr_db_mean'] == pytest.approx(
        math.fsum(r[1] for r in report.rows) / 4)
    assert summary['ssim_mean'] == pytest.approx(
        math.fsum(r[2] for r in report.rows) / 4)


def test_psnr_falls_as_noise_grows(texture):
    rng = np.random.default_rng(5)
    noise = rng.standard_normal(texture.shape)
    scores = [psnr(texture, Image.clamped(texture.data + sigma / 255 * noise))
              for sigma in (5, 10, 20, 40)]
    assert all(a > b for a, b in zip(scores, scores[1:]))


def test_ssim_of_constant_images():
    a = Image(np.full((16, 16), 0.5))
    b = Image(np.full((16, 16), 0.8))
    expected = (2 * 0.5 * 0.8 + SSIM_C1) / (0.5 ** 2 + 0.8 ** 2 + SSIM_C1)
    assert ssim(a, b) == pytest.approx(expected, rel=1e-9)


def test_metrics_are_symmetric(texture, rng):
    noisy = Image.clamped(texture.data + 0.1 * rng.standard_normal(
        texture.shape))
    assert psnr(texture, noisy) == psnr(noisy, texture)
    assert ssim(texture, noisy) == pytest.approx(ssim(noisy, texture),
                                                 abs=1e-12)
