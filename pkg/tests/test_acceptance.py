# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

"""
Training-based end-to-end checks. Each takes minutes on a CPU; deselect with
``-m "not slow"``.

"""

import os

import numpy as np
import pytest
import torch

from guidir.cli import restore_image
from guidir.dataset.corpus import generate_corpus, load_training_samples
from guidir.dataset.manifest import MANIFEST_FILENAME
from guidir.dataset.textures import random_texture_params, synth_texture
from guidir.degradation import Blur, DegradationSpec, GaussianNoise, Resize, \
    apply_pipeline
from guidir.denoiser import build_denoiser
from guidir.metrics import psnr
from guidir.robust_encoder import degradation_robust_finetune, encode_lq, \
    heldout_robust_loss, pretrain_autoencoder
from guidir.sampler import SamplerConfig
from guidir.training import QualityLabel, TrainConfig, TrainSample, \
    mix_negative_samples, train_denoiser
from guidir.util import derive_seed

pytestmark = pytest.mark.slow

# x2 downscale with sigma_255 = 10 noise, resized back.
SMOKE_SPEC = DegradationSpec([Resize(0.5), GaussianNoise(10.0)])
MILD_SPEC = DegradationSpec([Blur(1.0), GaussianNoise(10.0)])


def texture_pairs(count, seed, spec):
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(count):
        image, tokens = synth_texture(random_texture_params(rng))
        item_spec = spec.with_seed(derive_seed(seed, i))
        samples.append(TrainSample(image, apply_pipeline(image, item_spec),
                                   tokens, QualityLabel.positive, item_spec))
    return samples


@pytest.fixture(scope="module")
def smoke_model():
    net = build_denoiser(seed=0)
    stream = mix_negative_samples(texture_pairs(256, 0, SMOKE_SPEC), [], 0.0,
                                  seed=0)
    cfg = TrainConfig(base_steps=1000, steps=1000, lr=1e-3, negative_ratio=0,
                      seed=0)
    return train_denoiser(net, stream, cfg)[0]


def restore_all(net, samples, **options):
    options.setdefault('T', 30)
    options.setdefault('lambda_cfg', 0.0)
    options.setdefault('s_churn', 0.0)
    restored = []
    for i, sample in enumerate(samples):
        config = SamplerConfig(seed=derive_seed(7, i), **options)
        restored.append(restore_image(net, sample.lq, config,
                                      sample.caption_tokens))
    return restored


def test_restoration_beats_bicubic(smoke_model):
    held_out = texture_pairs(32, 99, SMOKE_SPEC)
    restored = restore_all(smoke_model, held_out, tau_r=4.0)
    ours = np.mean([psnr(r, s.hq) for r, s in zip(restored, held_out)])
    bicubic = np.mean([psnr(s.lq, s.hq) for s in held_out])
    assert ours > bicubic


def test_fidelity_falls_with_tau(smoke_model):
    batch = texture_pairs(16, 42, DegradationSpec.from_preset("blur2-sr4"))
    scores = []
    for tau_r in (0.0, 1.0, 2.0, 4.0, 6.0):
        restored = restore_all(smoke_model, batch, tau_r=tau_r)
        scores.append(np.mean([psnr(r, s.lq)
                               for r, s in zip(restored, batch)]))
    assert all(a >= b for a, b in zip(scores, scores[1:]))


def test_robust_encoder_cleans_degradations():
    train = texture_pairs(256, 1, MILD_SPEC)
    held_out = texture_pairs(32, 2, MILD_SPEC)
    ae, _ = pretrain_autoencoder([s.hq for s in train], seed=0)
    tuned, _ = degradation_robust_finetune(
        ae, [(s.lq, s.hq) for s in train], seed=0)
    pairs = [(s.lq, s.hq) for s in held_out]
    assert heldout_robust_loss(tuned, pairs) < heldout_robust_loss(ae, pairs)
    wins = sum(psnr(encode_lq(tuned, s.lq)[1], s.hq) > psnr(s.lq, s.hq)
               for s in held_out)
    assert wins >= 0.75 * len(held_out)


def test_negative_samples_change_training(tmp_path):
    generate_corpus(str(tmp_path), 100, seed=4, negative_ratio=0.05)
    positives, negatives = load_training_samples(
        os.path.join(str(tmp_path), MANIFEST_FILENAME), seed=4)
    assert len(negatives) == 5
    weights = []
    for ratio in (0.0, 0.05):
        net = build_denoiser(width=16, seed=0)
        stream = mix_negative_samples(positives, negatives, ratio, seed=4)
        train_denoiser(net, stream, TrainConfig(
            batch_size=8, steps=50, base_steps=50, lr=1e-3,
            negative_ratio=ratio, seed=4, log_every=0))
        weights.append(torch.cat([p.detach().flatten()
                                  for p in net.parameters()]))
    assert not torch.equal(weights[0], weights[1])
