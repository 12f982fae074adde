# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

import numpy as np
import pytest

from guidir import settings
from guidir.degradation import Blur, DegenerateOutputSizeError, \
    DegradationSpec, DegradationSpecError, GaussianNoise, Jpeg, Resize, \
    add_gaussian_noise, apply_pipeline, gaussian_blur, gaussian_kernel, \
    jpeg_compress, resize, sample_training_spec
from guidir.imaging import Image
from guidir.metrics import psnr


def test_presets_match_the_evaluation_table():
    presets = {name: DegradationSpec.from_preset(name)
               for name in settings.DEGRADATION_PRESETS}
    assert set(presets) == {"sr4", "sr8", "blur2-sr4", "sr4-noise40",
                            "mix-full"}
    assert presets["sr4"].ops == (Resize(0.25),)
    assert presets["sr8"].ops == (Resize(0.125),)
    assert presets["blur2-sr4"].ops == (Blur(2.0), Resize(0.25))
    assert presets["sr4-noise40"].ops == (Resize(0.25), GaussianNoise(40.0))
    assert presets["mix-full"].ops == (Blur(2.0), Resize(0.25),
                                       GaussianNoise(20.0), Jpeg(50))
    assert all(spec.resize_back for spec in presets.values())


def test_unknown_preset_lists_valid_ones():
    with pytest.raises(DegradationSpecError, match="sr4"):
        DegradationSpec.from_preset("sr3")


def test_pipeline_is_bit_exact_across_reruns(texture):
    spec = DegradationSpec.from_preset("mix-full", seed=11)
    first = apply_pipeline(texture, spec)
    second = apply_pipeline(texture, spec)
    assert first == second
    assert first.shape == texture.shape


def test_seed_changes_noise(texture):
    spec = DegradationSpec.from_preset("sr4-noise40")
    assert apply_pipeline(texture, spec.with_seed(1)) != \
        apply_pipeline(texture, spec.with_seed(2))


def test_gaussian_kernel_is_normalized():
    kernel = gaussian_kernel(2.0)
    assert len(kernel) == 2 * 6 + 1
    assert kernel.sum() == pytest.approx(1.0)
    assert np.allclose(kernel, kernel[::-1])


def test_blur_keeps_constant_images():
    flat = Image(np.full((16, 16), 0.3))
    assert np.allclose(gaussian_blur(flat, 1.5).data, 0.3)


def test_resize_output_size(texture):
    assert resize(texture, 0.25).shape == (8, 8, 1)
    assert resize(texture, 2.0).shape == (64, 64, 1)


def test_resize_to_nothing_fails():
    with pytest.raises(DegenerateOutputSizeError):
        resize(Image(np.zeros((4, 4))), 0.1)


def test_resize_back_is_close_for_smooth_images():
    y, x = np.mgrid[0:32, 0:32] / 32.0
    smooth = Image(0.5 + 0.25 * np.sin(2 * np.pi * x) * np.cos(np.pi * y))
    spec = DegradationSpec([Resize(0.5)], resize_back=True)
    assert psnr(apply_pipeline(smooth, spec), smooth) > 30.0


def test_jpeg_quality_range():
    with pytest.raises(DegradationSpecError):
        Jpeg(0)
    with pytest.raises(DegradationSpecError):
        Jpeg(101)


def test_lower_jpeg_quality_loses_more(texture):
    high = apply_pipeline(texture, DegradationSpec([Jpeg(95)]))
    low = apply_pipeline(texture, DegradationSpec([Jpeg(10)]))
    assert psnr(low, texture) < psnr(high, texture)


def test_spec_json_roundtrip():
    spec = DegradationSpec.from_preset("mix-full", seed=5)
    assert DegradationSpec.from_json(spec.to_json()) == spec


def test_unknown_operator():
    with pytest.raises(DegradationSpecError):
        DegradationSpec.from_dict({'ops': [{'sharpen': {'amount': 1}}]})
    with pytest.raises(DegradationSpecError):
        DegradationSpec.from_dict({'ops': [{'blur': {'radius': 1}}]})


def test_training_spec_order(rng):
    spec = sample_training_spec(rng, seed=3)
    assert [op.tag for op in spec.ops] == ["blur", "resize", "noise", "jpeg"]
    assert spec.seed == 3
    low, high = settings.TRAIN_JPEG_QUALITY_RANGE
    assert low <= spec.ops[3].quality <= high


def test_blur_of_an_impulse_is_the_2d_kernel():
    sigma = 1.5
    data = np.zeros((21, 21))
    data[10, 10] = 1.0
    blurred = gaussian_blur(Image(data), sigma).data[:, :, 0]
    offsets = np.arange(-5, 6)
    dense = np.exp(-(offsets[:, None] ** 2 + offsets[None, :] ** 2) /
                   (2 * sigma ** 2))
    expected = np.zeros((21, 21))
    expected[5:16, 5:16] = dense / dense.sum()
    assert np.allclose(blurred, expected, atol=1e-12)


def test_zero_blur_and_noise_are_identities(texture, rng):
    assert gaussian_blur(texture, 0.0) == texture
    assert add_gaussian_noise(texture, 0.0, rng) == texture


def keys_weight(x, a=-0.5):
    x = abs(x)
    if x <= 1:
        return (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1
    if x < 2:
        return a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a
    return 0.0


def scalar_resize_axis(values, n_out):
    n_in = len(values)
    out = []
    for o in range(n_out):
        position = (o + 0.5) * n_in / n_out - 0.5
        base = int(np.floor(position))
        total = 0.0
        for tap in range(base - 1, base + 3):
            index = min(max(tap, 0), n_in - 1)
            total += keys_weight(position - tap) * values[index]
        out.append(total)
    return out


def test_bicubic_half_matches_scalar_kernel():
    ramp = np.arange(64, dtype=np.float64).reshape(8, 8) / 63.0
    rows = np.array([scalar_resize_axis(ramp[:, x], 4)
                     for x in range(8)]).T
    expected = np.clip(np.array([scalar_resize_axis(rows[y], 4)
                                 for y in range(4)]), 0.0, 1.0)
    result = resize(Image(ramp), 0.5).data[:, :, 0]
    assert np.abs(result - expected).max() <= 1e-6


def test_resize_keeps_constants_and_unit_scale(texture):
    flat = Image(np.full((12, 12), 0.7))
    assert np.allclose(resize(flat, 0.5).data, 0.7)
    assert np.allclose(resize(flat, 1.5).data, 0.7)
    assert resize(texture, 1.0) == texture


def test_noise_has_the_requested_spread():
    flat = Image(np.full((64, 64), 0.5))
    noisy = add_gaussian_noise(flat, 40.0, np.random.default_rng(0))
    std = (noisy.data - 0.5).std()
    assert abs(std - 40.0 / 255) <= 0.1 * 40.0 / 255


def test_jpeg_best_quality_keeps_flat_images():
    flat = Image(np.full((16, 16), 102 / 255.0))
    assert psnr(jpeg_compress(flat, 100), flat) >= 50.0


def test_jpeg_is_deterministic(rgb_image):
    assert jpeg_compress(rgb_image, 40) == jpeg_compress(rgb_image, 40)


def test_operator_order_matters(texture):
    noise_first = DegradationSpec([GaussianNoise(20.0), Blur(1.5)], seed=4)
    blur_first = DegradationSpec([Blur(1.5), GaussianNoise(20.0)], seed=4)
    assert apply_pipeline(texture, noise_first) != \
        apply_pipeline(texture, blur_first)
