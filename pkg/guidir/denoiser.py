# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

"""
Denoisers implementing H(z, z_lq, sigma, cond) -> denoised estimate.

- ``AnalyticGaussianDenoiser`` is the exact posterior mean for Gaussian
  data and serves as a verification oracle for the samplers.
- ``ControlledUNet`` is a small caption-conditioned UNet (the generative
  prior) steered by a trimmed trainable copy of its encoder. The copy sees
  the LQ image and feeds the decoder through zero-initialized connectors, so
  a fresh adaptor leaves the base network's output untouched.

"""

import copy
from dataclasses import dataclass, field, replace
import logging
import math

import torch
from torch import nn
import torch.nn.functional as F

from guidir import settings
from guidir.checkpoint import CheckpointError, load_checkpoint, \
    save_checkpoint
from guidir.dataset.vocabulary import Vocabulary
from guidir.util import GuidirError, GuidirInputError

logger = logging.getLogger(__name__)

CONNECTOR_TYPES = ("zerosft", "zeroconv")


class DenoiserError(GuidirError):
    """
    General error for denoisers.

    """
    pass


class DenoiserInputError(DenoiserError, GuidirInputError):
    """
    Error indicating invalid construction parameters or input shapes.

    """
    pass


class ChannelMismatchError(DenoiserInputError):
    """
    Error indicating a convolution input with the wrong channel count.

    """
    pass


class NonFiniteActivationError(DenoiserError):
    """
    Error indicating a NaN/Inf produced by a forward pass.

    """
    pass


@dataclass(frozen=True)
class ConditioningVector:
    """
    Caption conditioning. The network maps ``token_ids`` to the mean of
    their embedding rows; no tokens means the zero vector (unconditional).

    ``embedding`` holds that mean (length EMBEDDING_DIM) as it was when
    ``ControlledUNet.condition`` built the vector. Forward passes always
    recompute it from ``token_ids``.

    """
    token_ids: tuple = ()
    tokens: tuple = ()
    embedding: object = field(default=None, compare=False, repr=False)

    @classmethod
    def from_tokens(cls, tokens, vocabulary):
        tokens = tuple(tokens)
        return cls(tuple(vocabulary.encode(tokens)), tokens)


class AnalyticGaussianDenoiser(object):
    """
    Exact denoiser for data x ~ N(mu, cov):
    E[x | z] = mu + cov (cov + sigma^2 I)^-1 (z - mu).

    Inputs are (..., d) tensors; z_lq and the conditioning are ignored.

    """
    def __init__(self, mu, cov):
        self.mu = torch.as_tensor(mu, dtype=torch.float64)
        self.cov = torch.as_tensor(cov, dtype=torch.float64)
        d = self.mu.shape[0]
        if self.cov.shape != (d, d):
            raise DenoiserInputError("Covariance of shape {} for a mean of "
                                     "length {}".format(tuple(self.cov.shape),
                                                        d))
        if not torch.allclose(self.cov, self.cov.T):
            raise DenoiserInputError("Covariance is not symmetric")
        if torch.linalg.eigvalsh(self.cov).min() < -1e-12:
            raise DenoiserInputError("Covariance is not positive "
                                     "semidefinite")

    def denoise(self, z, sigma):
        eye = torch.eye(self.mu.shape[0], dtype=torch.float64)
        try:
            # (cov + s^2 I)^-1 cov; it commutes with cov, so it is also the
            # transpose of the posterior gain.
            gain = torch.linalg.solve(self.cov + float(sigma) ** 2 * eye,
                                      self.cov)
        except RuntimeError as e:
            raise DenoiserError("Singular system at sigma {}: {}".format(
                sigma, e))
        mu = self.mu.to(z.dtype)
        return mu + (z - mu) @ gain.to(z.dtype)

    def __call__(self, z, z_lq, sigma, cond):
        return self.denoise(z, sigma)


def zero_conv_forward(x, weight):
    """
    Bias-free 1x1 convolution.

    """
    if x.shape[1] != weight.shape[1]:
        raise ChannelMismatchError("Input has {} channels, weights expect {}"
                                   "".format(x.shape[1], weight.shape[1]))
    return F.conv2d(x, weight)


class ZeroConv(nn.Module):
    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(out_channels, in_channels,
                                               1, 1))

    def forward(self, x):
        return zero_conv_forward(x, self.weight)


@dataclass
class ZeroSFTParams:
    add_weight: torch.Tensor   # (C_s, C_c, 1, 1)
    mod_weight: torch.Tensor   # (2 C_s, C_c, 3, 3)
    groups: int = settings.GROUPNORM_GROUPS


def sft_modulate(x, gamma, beta):
    return x * (1 + gamma) + beta


def zerosft_forward(x_f, x_s, x_c, params):
    """
    ZeroSFT connector.

    The adaptor features ``x_c`` act on the encoder shortcut ``x_s`` twice:
    additively through a zero convolution, then through a spatial feature
    transform whose (gamma, beta) come from a zero-initialized convolution
    of group-normalized ``x_c``. The result is concatenated with the decoder
    features ``x_f``, the UNet's own skip merge.

    """
    if not x_f.shape[2:] == x_s.shape[2:] == x_c.shape[2:]:
        raise DenoiserInputError(
            "ZeroSFT inputs are not spatially aligned: {}, {}, {}".format(
                tuple(x_f.shape), tuple(x_s.shape), tuple(x_c.shape)))
    if x_s.shape[1] != params.add_weight.shape[0]:
        raise ChannelMismatchError("Shortcut has {} channels, connector "
                                   "expects {}".format(
                                       x_s.shape[1],
                                       params.add_weight.shape[0]))
    x_s = x_s + zero_conv_forward(x_c, params.add_weight)
    modulation = F.conv2d(F.group_norm(x_c, params.groups),
                          params.mod_weight, padding=1)
    gamma, beta = modulation.chunk(2, dim=1)
    return torch.cat([x_f, sft_modulate(x_s, gamma, beta)], dim=1)


class ZeroSFT(nn.Module):
    def __init__(self, shortcut_channels, control_channels,
                 groups=settings.GROUPNORM_GROUPS):
        super().__init__()
        self.groups = groups
        self.add_weight = nn.Parameter(
            torch.zeros(shortcut_channels, control_channels, 1, 1))
        self.mod_weight = nn.Parameter(
            torch.zeros(2 * shortcut_channels, control_channels, 3, 3))

    @property
    def params(self):
        return ZeroSFTParams(self.add_weight, self.mod_weight, self.groups)

    def forward(self, x_f, x_s, x_c):
        return zerosft_forward(x_f, x_s, x_c, self.params)


class ZeroConvConnector(nn.Module):
    """
    Plain ControlNet-style connector: the shortcut only receives a zero
    convolution of the adaptor features.

    """
    def __init__(self, shortcut_channels, control_channels,
                 groups=settings.GROUPNORM_GROUPS):
        super().__init__()
        self.zero_conv = ZeroConv(control_channels, shortcut_channels)

    def forward(self, x_f, x_s, x_c):
        return torch.cat([x_f, x_s + self.zero_conv(x_c)], dim=1)


class FourierFeatures(nn.Module):
    """
    Random Fourier embedding of the scalar noise conditioning.

    """
    def __init__(self, dim, scale=settings.FOURIER_SCALE, seed=0):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        self.register_buffer(
            "freqs", torch.randn(dim // 2, generator=generator) * scale)

    def forward(self, c_noise):
        angles = 2 * math.pi * c_noise[:, None] * self.freqs[None, :]
        return torch.cat([angles.cos(), angles.sin()], dim=1)


class ResidualBlock(nn.Module):
    """
    GroupNorm / SiLU / conv block; the conditioning embedding sets a
    per-channel scale and shift after the first convolution.

    """
    def __init__(self, in_channels, out_channels,
                 emb_dim=settings.EMBEDDING_DIM,
                 groups=settings.GROUPNORM_GROUPS):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, 2 * out_channels)
        self.norm2 = nn.GroupNorm(groups, out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        if in_channels != out_channels:
            self.skip = nn.Conv2d(in_channels, out_channels, 1)
        else:
            self.skip = nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        scale, shift = self.emb_proj(F.silu(emb))[:, :, None, None].chunk(
            2, dim=1)
        h = self.norm2(h) * (1 + scale) + shift
        h = self.conv2(F.silu(h))
        return self.skip(x) + h


class UNetEncoder(nn.Module):
    """
    Stem plus two resolution stages of residual blocks. Returns the output
    of every stage (the decoder shortcuts).

    """
    def __init__(self, in_channels, width, blocks_per_stage,
                 emb_dim=settings.EMBEDDING_DIM,
                 groups=settings.GROUPNORM_GROUPS):
        super().__init__()
        self.stem = nn.Conv2d(in_channels, width, 3, padding=1)
        self.down = nn.Conv2d(width, 2 * width, 3, stride=2, padding=1)
        self.stages = nn.ModuleList([
            nn.ModuleList([ResidualBlock(w, w, emb_dim, groups)
                           for _ in range(blocks_per_stage)])
            for w in (width, 2 * width)])

    def forward(self, x, emb, stem_extra=None):
        h = self.stem(x)
        if stem_extra is not None:
            h = h + stem_extra
        features = []
        for index, stage in enumerate(self.stages):
            if index > 0:
                h = self.down(h)
            for block in stage:
                h = block(h, emb)
            features.append(h)
        return features


class Adaptor(UNetEncoder):
    """
    Trainable copy of a UNetEncoder keeping the first ceil(n / 2) residual
    blocks of every stage. A learned stem on the LQ image is added to the
    copied stem's output.

    """
    def __init__(self, encoder, lq_channels):
        nn.Module.__init__(self)
        self.stem = copy.deepcopy(encoder.stem)
        self.down = copy.deepcopy(encoder.down)
        self.stages = nn.ModuleList([
            nn.ModuleList([copy.deepcopy(block)
                           for block in stage[:math.ceil(len(stage) / 2)]])
            for stage in encoder.stages])
        self.lq_stem = nn.Conv2d(lq_channels, encoder.stem.out_channels, 3,
                                 padding=1)

    def forward(self, x, z_lq, emb):
        return super().forward(x, emb, stem_extra=self.lq_stem(z_lq))


def build_adaptor(encoder, lq_channels):
    adaptor = Adaptor(encoder, lq_channels)
    logger.debug("Adaptor keeps {} of {} encoder blocks".format(
        sum(len(s) for s in adaptor.stages),
        sum(len(s) for s in encoder.stages)))
    return adaptor


def parameter_count(module):
    return sum(p.numel() for p in module.parameters())


class ControlledUNet(nn.Module):
    """
    Caption-conditioned UNet denoiser with EDM preconditioning, plus a
    trimmed adaptor joined to each decoder stage by a connector.

    ``forward(z, z_lq, sigma, cond)`` implements H. With ``z_lq=None`` the
    adaptor and connectors are skipped entirely (the base network).

    """
    def __init__(self, channels=1, vocabulary=None,
                 width=settings.UNET_WIDTH,
                 blocks_per_stage=settings.UNET_BLOCKS_PER_STAGE,
                 emb_dim=settings.EMBEDDING_DIM,
                 groups=settings.GROUPNORM_GROUPS,
                 sigma_data=settings.SIGMA_DATA,
                 connector="zerosft"):
        super().__init__()
        if connector not in CONNECTOR_TYPES:
            raise DenoiserInputError("Unknown connector '{}'. Valid: {}"
                                     "".format(connector,
                                               ", ".join(CONNECTOR_TYPES)))
        if width % groups:
            raise DenoiserInputError("Width {} is not divisible by {} groups"
                                     "".format(width, groups))
        self.vocabulary = vocabulary or Vocabulary.load()
        self.config = {
            'channels': channels, 'width': width,
            'blocks_per_stage': blocks_per_stage, 'emb_dim': emb_dim,
            'groups': groups, 'sigma_data': sigma_data,
            'connector': connector,
        }
        self.channels = channels
        self.sigma_data = sigma_data

        self.text_embedding = nn.EmbeddingBag(len(self.vocabulary), emb_dim,
                                              mode="mean")
        self.fourier = FourierFeatures(emb_dim)
        self.emb_mlp = nn.Sequential(nn.Linear(emb_dim, emb_dim), nn.SiLU(),
                                     nn.Linear(emb_dim, emb_dim))
        self.encoder = UNetEncoder(channels, width, blocks_per_stage,
                                   emb_dim, groups)
        self.mid = ResidualBlock(2 * width, 2 * width, emb_dim, groups)
        self.up = nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"),
                                nn.Conv2d(2 * width, width, 3, padding=1))
        # Decoder order: low resolution first.
        self.dec_blocks = nn.ModuleList([
            ResidualBlock(4 * width, 2 * width, emb_dim, groups),
            ResidualBlock(2 * width, width, emb_dim, groups)])
        self.out_norm = nn.GroupNorm(groups, width)
        self.out_conv = nn.Conv2d(width, channels, 3, padding=1)

        self.adaptor = build_adaptor(self.encoder, channels)
        connector_cls = ZeroSFT if connector == "zerosft" \
            else ZeroConvConnector
        self.connectors = nn.ModuleList([
            connector_cls(2 * width, 2 * width, groups),
            connector_cls(width, width, groups)])

    def condition(self, tokens):
        cond = ConditioningVector.from_tokens(tokens, self.vocabulary)
        with torch.no_grad():
            embedding = self.prompt_embedding(cond, 1)[0].clone()
        return replace(cond, embedding=embedding)

    def control_parameters(self):
        return list(self.adaptor.parameters()) + \
            list(self.connectors.parameters())

    def base_parameters(self):
        control = {id(p) for p in self.control_parameters()}
        return [p for p in self.parameters() if id(p) not in control]

    def prompt_embedding(self, cond, batch):
        """
        Mean token embedding per batch item. ``cond`` is a
        ConditioningVector shared by the batch, a list of one per item, or
        None.

        """
        if cond is None or isinstance(cond, ConditioningVector):
            conds = [cond or ConditioningVector()] * batch
        else:
            conds = list(cond)
            if len(conds) != batch:
                raise DenoiserInputError("{} conditionings for a batch of {}"
                                         "".format(len(conds), batch))
        device = self.text_embedding.weight.device
        ids = torch.tensor([i for c in conds for i in c.token_ids],
                           dtype=torch.long, device=device)
        lengths = torch.tensor([len(c.token_ids) for c in conds],
                               dtype=torch.long, device=device)
        offsets = torch.cumsum(lengths, 0) - lengths
        return self.text_embedding(ids, offsets)

    def _sigma_tensor(self, sigma, z):
        sigma = torch.as_tensor(sigma, dtype=z.dtype, device=z.device)
        if sigma.ndim == 0:
            sigma = sigma.expand(z.shape[0])
        return sigma.reshape(z.shape[0])

    def _check_input(self, z, z_lq):
        if z.ndim != 4 or z.shape[1] != self.channels:
            raise DenoiserInputError("Expected B x {} x H x W input, got {}"
                                     "".format(self.channels,
                                               tuple(z.shape)))
        if z.shape[2] % 2 or z.shape[3] % 2:
            raise DenoiserInputError("Spatial size must be even, got {}"
                                     "".format(tuple(z.shape[2:])))
        if z_lq is not None and z_lq.shape != z.shape:
            raise DenoiserInputError("z_lq shape {} differs from z shape {}"
                                     "".format(tuple(z_lq.shape),
                                               tuple(z.shape)))

    def _network(self, x, emb, z_lq):
        skips = self.encoder(x, emb)
        controls = self.adaptor(x, z_lq, emb) if z_lq is not None else None
        h = self.mid(skips[-1], emb)
        for level, (block, connector) in enumerate(
                zip(self.dec_blocks, self.connectors)):
            stage = len(skips) - 1 - level
            if level > 0:
                h = self.up(h)
            if controls is None:
                h = torch.cat([h, skips[stage]], dim=1)
            else:
                h = connector(h, skips[stage], controls[stage])
            h = block(h, emb)
        return self.out_conv(F.silu(self.out_norm(h)))

    def forward(self, z, z_lq, sigma, cond=None):
        self._check_input(z, z_lq)
        sigma = self._sigma_tensor(sigma, z)
        s = sigma.view(-1, 1, 1, 1)
        sd = self.sigma_data
        c_skip = sd ** 2 / (s ** 2 + sd ** 2)
        c_out = s * sd / (s ** 2 + sd ** 2).sqrt()
        c_in = 1 / (s ** 2 + sd ** 2).sqrt()
        c_noise = sigma.log() / 4

        emb = self.emb_mlp(self.fourier(c_noise)) + \
            self.prompt_embedding(cond, z.shape[0]).to(z.dtype)
        out = c_skip * z + c_out * self._network(c_in * z, emb, z_lq)
        if not torch.isfinite(out).all():
            raise NonFiniteActivationError(
                "Non-finite denoiser output at sigma in [{:.4g}, {:.4g}]"
                "".format(float(sigma.min()), float(sigma.max())))
        return out

    def base_forward(self, z, sigma, cond=None):
        return self.forward(z, None, sigma, cond)


def controlled_forward(net, z, z_lq, sigma, cond):
    return net(z, z_lq, sigma, cond)


def build_denoiser(channels=1, vocabulary=None, seed=0, **kwargs):
    """
    Construct a ControlledUNet with weights drawn from ``seed`` without
    touching the global torch random state.

    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = ControlledUNet(channels=channels, vocabulary=vocabulary,
                             **kwargs)
    logger.info("Built denoiser: {} base / {} control parameters".format(
        sum(p.numel() for p in net.base_parameters()),
        sum(p.numel() for p in net.control_parameters())))
    return net


def save_denoiser(net, path):
    meta = {'kind': 'controlled_unet', 'config': net.config,
            'vocabulary': list(net.vocabulary.tokens)}
    save_checkpoint(path, net.state_dict(), meta)


def load_denoiser(path):
    tensors, meta = load_checkpoint(path)
    if meta.get('kind') != 'controlled_unet':
        raise CheckpointError("'{}' holds a '{}', not a denoiser".format(
            path, meta.get('kind')))
    net = ControlledUNet(vocabulary=Vocabulary(meta['vocabulary']),
                         **meta['config'])
    try:
        net.load_state_dict(tensors)
    except RuntimeError as e:
        raise CheckpointError("'{}' does not match the denoiser layout: {}"
                              "".format(path, e))
    net.eval()
    return net
