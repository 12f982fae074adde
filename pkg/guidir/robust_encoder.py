# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

"""
Small convolutional autoencoder and degradation-robust encoder fine-tuning.

The fine-tune minimizes ||D(E(x_lq)) - D(E(x_gt))||^2 with the decoder D
frozen, so that an LQ image and its clean source decode alike and the
encoder stops reading degradations as content.

"""

import copy
import logging

import torch
from torch import nn

from guidir import settings
from guidir.checkpoint import CheckpointError, load_checkpoint, \
    save_checkpoint
from guidir.imaging import Image, ShapeMismatchError
from guidir.training import TrainingDivergenceError
from guidir.util import GuidirError, GuidirInputError

logger = logging.getLogger(__name__)


class AutoEncoderError(GuidirError):
    """
    General error for the autoencoder.

    """
    pass


class DatasetTooSmallError(AutoEncoderError, GuidirInputError):
    pass


class AutoEncoder(nn.Module):
    """
    Encoder E: B x C x H x W -> B x 4 x H/4 x W/4, decoder D back.

    """
    def __init__(self, channels=1, width=settings.AE_WIDTH,
                 latent_channels=settings.AE_LATENT_CHANNELS):
        super().__init__()
        self.config = {'channels': channels, 'width': width,
                       'latent_channels': latent_channels}
        self.channels = channels
        self.encoder = nn.Sequential(
            nn.Conv2d(channels, width, 3, padding=1), nn.SiLU(),
            nn.Conv2d(width, width, 4, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(width, width, 3, padding=1), nn.SiLU(),
            nn.Conv2d(width, width, 4, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(width, latent_channels, 3, padding=1))
        self.decoder = nn.Sequential(
            nn.Conv2d(latent_channels, width, 3, padding=1), nn.SiLU(),
            nn.ConvTranspose2d(width, width, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(width, width, 3, padding=1), nn.SiLU(),
            nn.ConvTranspose2d(width, width, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(width, channels, 3, padding=1))

    def _check(self, x):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeMismatchError("Expected B x {} x H x W, got {}".format(
                self.channels, tuple(x.shape)))
        if x.shape[2] % settings.AE_DOWNSAMPLE or \
                x.shape[3] % settings.AE_DOWNSAMPLE:
            raise ShapeMismatchError("Spatial size {} is not a multiple of {}"
                                     "".format(tuple(x.shape[2:]),
                                               settings.AE_DOWNSAMPLE))

    def encode(self, x):
        self._check(x)
        return self.encoder(x)

    def decode(self, z):
        return self.decoder(z)

    def forward(self, x):
        return self.decode(self.encode(x))


def _batch(images, dtype=torch.float32):
    return torch.stack([img.to_tensor(dtype) for img in images])


def _batches(tensors, batch_size, generator):
    order = torch.randperm(tensors[0].shape[0], generator=generator)
    for start in range(0, len(order), batch_size):
        index = order[start:start + batch_size]
        yield [t[index] for t in tensors]


def reconstruction_loss(ae, x):
    return ((ae(x) - x) ** 2).flatten(1).sum(dim=1).mean()


def pretrain_autoencoder(dataset, epochs=settings.AE_PRETRAIN_EPOCHS,
                         lr=settings.AE_PRETRAIN_LR, seed=0,
                         batch_size=settings.AE_BATCH_SIZE):
    """
    Train E and D jointly on L2 reconstruction of clean images.

    Returns (autoencoder, per-epoch mean losses).

    """
    if len(dataset) < settings.AE_MIN_DATASET:
        raise DatasetTooSmallError(
            "Pretraining needs at least {} images, got {}".format(
                settings.AE_MIN_DATASET, len(dataset)))
    x = _batch(dataset)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        ae = AutoEncoder(channels=x.shape[1])
    generator = torch.Generator().manual_seed(seed)
    optimizer = torch.optim.AdamW(ae.parameters(), lr=lr, weight_decay=0.0)
    history = []
    ae.train()
    for epoch in range(epochs):
        losses = []
        for (xb,) in _batches([x], batch_size, generator):
            loss = reconstruction_loss(ae, xb)
            if not torch.isfinite(loss):
                raise TrainingDivergenceError(epoch, "non-finite loss")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss))
        history.append(sum(losses) / len(losses))
        logger.debug("Autoencoder epoch {}: loss {:.5g}".format(
            epoch, history[-1]))
    ae.eval()
    logger.info("Pretrained autoencoder on {} images, final loss {:.5g}"
                "".format(len(dataset), history[-1] if history else 0.0))
    return ae, history


def robust_encoder_loss(ae, x_lq, x_gt,
                        stop_gradient_target=settings.ENCODER_STOP_GRADIENT_TARGET):
    """
    Batch mean of ||D(E(x_lq)) - D(E(x_gt))||^2. With
    ``stop_gradient_target`` the GT branch only provides the target.

    """
    decoded_lq = ae(x_lq)
    decoded_gt = ae(x_gt)
    if stop_gradient_target:
        decoded_gt = decoded_gt.detach()
    return ((decoded_lq - decoded_gt) ** 2).flatten(1).sum(dim=1).mean()


def degradation_robust_finetune(ae, pairs, epochs=settings.AE_FINETUNE_EPOCHS,
                                lr=settings.AE_FINETUNE_LR, seed=0,
                                batch_size=settings.AE_BATCH_SIZE,
                                weight_decay=settings.AE_FINETUNE_WEIGHT_DECAY,
                                stop_gradient_target=settings.ENCODER_STOP_GRADIENT_TARGET):
    """
    Fine-tune a copy of ``ae``'s encoder on (x_lq, x_gt) Image pairs with
    the decoder frozen. ``ae`` itself is not modified.

    Returns (fine-tuned autoencoder, per-epoch mean losses).

    """
    if not pairs:
        raise AutoEncoderError("No training pairs")
    tuned = copy.deepcopy(ae)
    for p in tuned.decoder.parameters():
        p.requires_grad_(False)
    x_lq = _batch([lq for lq, _ in pairs])
    x_gt = _batch([gt for _, gt in pairs])
    if x_lq.shape != x_gt.shape:
        raise ShapeMismatchError("LQ batch {} differs from GT batch {}".format(
            tuple(x_lq.shape), tuple(x_gt.shape)))
    generator = torch.Generator().manual_seed(seed)
    optimizer = torch.optim.AdamW(tuned.encoder.parameters(), lr=lr,
                                  weight_decay=weight_decay)
    history = []
    tuned.train()
    for epoch in range(epochs):
        losses = []
        for lq, gt in _batches([x_lq, x_gt], batch_size, generator):
            loss = robust_encoder_loss(tuned, lq, gt, stop_gradient_target)
            if not torch.isfinite(loss):
                raise TrainingDivergenceError(epoch, "non-finite loss")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss))
        history.append(sum(losses) / len(losses))
        logger.debug("Encoder fine-tune epoch {}: L_E {:.5g}".format(
            epoch, history[-1]))
    tuned.eval()
    return tuned, history


@torch.no_grad()
def heldout_robust_loss(ae, pairs):
    x_lq = _batch([lq for lq, _ in pairs])
    x_gt = _batch([gt for _, gt in pairs])
    return float(robust_encoder_loss(ae, x_lq, x_gt))


@torch.no_grad()
def encode_lq(ae, x_lq):
    """
    Encode an LQ Image. Returns (latent of shape 1 x 4 x H/4 x W/4, cleaned
    preview Image D(E(x_lq))).

    """
    if x_lq.channels != ae.channels:
        raise ShapeMismatchError("Image has {} channels, encoder expects {}"
                                 "".format(x_lq.channels, ae.channels))
    z = ae.encode(x_lq.to_tensor()[None])
    return z, Image.from_tensor(ae.decode(z))


def save_autoencoder(ae, path):
    save_checkpoint(path, ae.state_dict(),
                    {'kind': 'autoencoder', 'config': ae.config})


def load_autoencoder(path):
    tensors, meta = load_checkpoint(path)
    if meta.get('kind') != 'autoencoder':
        raise CheckpointError("'{}' holds a '{}', not an autoencoder".format(
            path, meta.get('kind')))
    ae = AutoEncoder(**meta['config'])
    try:
        ae.load_state_dict(tensors)
    except RuntimeError as e:
        raise CheckpointError("'{}' does not match the autoencoder layout: {}"
                              "".format(path, e))
    ae.eval()
    return ae
