# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

import numpy as np
import pytest
import torch

from guidir.dataset.textures import TextureParams, synth_texture
from guidir.denoiser import build_denoiser
from guidir.imaging import Image


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def texture():
    image, _ = synth_texture(TextureParams("stripes", 4.0, 30.0, 0.9,
                                           "gray", seed=3))
    return image


@pytest.fixture
def rgb_image(rng):
    return Image(rng.uniform(size=(32, 32, 3)))


@pytest.fixture
def tiny_net():
    return build_denoiser(channels=1, seed=0, width=8, blocks_per_stage=2)


def perturb_parameters(module, scale=0.05, seed=0):
    """
    Add seeded noise to every parameter, so zero-initialized layers become
    active.

    """
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.add_(scale * torch.randn(p.shape, generator=generator,
                                       dtype=p.dtype))


def directional_gradient_errors(loss_fn, params, directions=5, eps=1e-6,
                                seed=0):
    """
    Relative errors between autograd and central finite differences of
    ``loss_fn()`` along random parameter directions.

    """
    generator = torch.Generator().manual_seed(seed)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    errors = []
    for _ in range(directions):
        direction = [torch.randn(p.shape, generator=generator,
                                 dtype=p.dtype) for p in params]
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, direction))
        with torch.no_grad():
            for p, d in zip(params, direction):
                p.add_(eps * d)
            plus = float(loss_fn())
            for p, d in zip(params, direction):
                p.sub_(2 * eps * d)
            minus = float(loss_fn())
            for p, d in zip(params, direction):
                p.add_(eps * d)
        numeric = (plus - minus) / (2 * eps)
        errors.append(abs(numeric - analytic) /
                      max(abs(numeric), abs(analytic), 1e-8))
    return errors


@pytest.fixture
def gradient_errors():
    return directional_gradient_errors


@pytest.fixture
def perturb():
    return perturb_parameters
