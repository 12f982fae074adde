# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

"""
Diffusion training of the controlled denoiser.

Training runs in up to two phases. The base phase teaches the UNet a
caption-conditioned prior over HQ textures with the adaptor path switched
off. The control phase then trains the adaptor and connectors on (HQ, LQ)
pairs, with the base frozen unless ``freeze_base`` is cleared.

"""

from dataclasses import asdict, dataclass, fields, replace
import enum
import json
import logging

import numpy as np
import torch

from guidir import settings
from guidir.util import GuidirError, GuidirInputError, write_csv

logger = logging.getLogger(__name__)

HISTORY_CSV_HEADER = ("step", "loss", "sigma_mean")


class TrainingError(GuidirError):
    """
    General error for training.

    """
    pass


class TrainingInputError(TrainingError, GuidirInputError):
    """
    Error indicating an invalid sample, stream or training configuration.

    """
    pass


class EmptyNegativeSetError(TrainingInputError):
    pass


class TrainingDivergenceError(TrainingError):
    """
    Error indicating a non-finite loss. ``step`` is the global step index, or
    None outside the training loop.

    """
    def __init__(self, step, message):
        if step is None:
            super().__init__(message)
        else:
            super().__init__("Step {}: {}".format(step, message))
        self.step = step


class QualityLabel(enum.Enum):
    positive = "positive"
    negative = "negative"


@dataclass(frozen=True)
class TrainSample:
    """
    One training item. ``lq`` is derived from ``hq`` by ``degradation_spec``;
    negatives hold the same degraded image in both fields.

    """
    hq: object
    lq: object
    caption_tokens: tuple = ()
    quality_label: QualityLabel = QualityLabel.positive
    degradation_spec: object = None

    def __post_init__(self):
        object.__setattr__(self, 'caption_tokens', tuple(self.caption_tokens))
        object.__setattr__(self, 'quality_label',
                           QualityLabel(self.quality_label))
        if self.hq.shape != self.lq.shape:
            raise TrainingInputError("HQ shape {} differs from LQ shape {}"
                                     "".format(self.hq.shape, self.lq.shape))
        if self.quality_label is QualityLabel.negative and \
                settings.NEGATIVE_SAMPLE_TOKENS[0] not in self.caption_tokens:
            raise TrainingInputError("Negative sample without the '{}' token"
                                     "".format(
                                         settings.NEGATIVE_SAMPLE_TOKENS[0]))

    @property
    def is_negative(self):
        return self.quality_label is QualityLabel.negative


@dataclass
class TrainConfig:
    batch_size: int = settings.TRAIN_BATCH_SIZE
    steps: int = settings.TRAIN_STEPS
    lr: float = settings.TRAIN_LR
    sigma_log_mean: float = settings.TRAIN_SIGMA_LOG_MEAN
    sigma_log_std: float = settings.TRAIN_SIGMA_LOG_STD
    negative_ratio: float = settings.NEGATIVE_RATIO
    seed: int = 0
    weight_decay: float = settings.TRAIN_WEIGHT_DECAY
    grad_norm_cap: float = settings.TRAIN_GRAD_NORM_CAP
    base_steps: int = 0
    freeze_base: bool = True
    use_control: bool = True
    log_every: int = settings.TRAIN_LOG_EVERY

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.batch_size < 1:
            raise TrainingInputError("batch_size must be >= 1, got {}".format(
                self.batch_size))
        if self.steps < 0 or self.base_steps < 0:
            raise TrainingInputError("Step counts must be >= 0")
        if self.lr <= 0:
            raise TrainingInputError("lr must be > 0, got {}".format(self.lr))
        if self.sigma_log_std < 0:
            raise TrainingInputError("sigma_log_std must be >= 0")
        if not 0 <= self.negative_ratio <= settings.NEGATIVE_RATIO_MAX:
            raise TrainingInputError(
                "negative_ratio must be in [0, {}], got {}".format(
                    settings.NEGATIVE_RATIO_MAX, self.negative_ratio))

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=4)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise TrainingInputError("Unknown training fields: {}".format(
                ", ".join(sorted(unknown))))
        return cls(**data)

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise TrainingInputError("Invalid JSON: {}".format(e))


def edm_loss_weight(sigma, sigma_data=settings.SIGMA_DATA):
    """
    w(sigma) = (sigma^2 + sigma_data^2) / (sigma * sigma_data)^2.

    """
    return (sigma ** 2 + sigma_data ** 2) / (sigma * sigma_data) ** 2


def _stack(samples, attribute, dtype):
    return torch.stack([getattr(s, attribute).to_tensor(dtype)
                        for s in samples])


def denoising_loss(net, samples, sigma, noise, use_control=True,
                   sigma_data=settings.SIGMA_DATA):
    """
    Sum over the batch of w(sigma) * ||H(hq + sigma noise, lq, sigma, c) -
    hq||^2.

    ``samples`` is a TrainSample or a list of them, ``sigma`` a scalar or
    one level per item and ``noise`` matches the stacked HQ batch.

    """
    if isinstance(samples, TrainSample):
        samples = [samples]
    hq = _stack(samples, 'hq', noise.dtype)
    if noise.shape != hq.shape:
        raise TrainingInputError("Noise shape {} differs from batch shape {}"
                                 "".format(tuple(noise.shape),
                                           tuple(hq.shape)))
    sigma = torch.as_tensor(sigma, dtype=noise.dtype)
    if sigma.ndim == 0:
        sigma = sigma.expand(len(samples))
    if not bool((sigma > 0).all()):
        raise TrainingInputError("sigma must be > 0")
    lq = _stack(samples, 'lq', noise.dtype) if use_control else None
    conds = [net.condition(s.caption_tokens) for s in samples] \
        if hasattr(net, 'condition') else None

    s = sigma.view(-1, 1, 1, 1)
    denoised = net(hq + s * noise, lq, sigma, conds)
    per_item = ((denoised - hq) ** 2).flatten(1).sum(dim=1)
    loss = (edm_loss_weight(sigma, sigma_data) * per_item).sum()
    if not torch.isfinite(loss):
        raise TrainingDivergenceError(None, "non-finite loss")
    return loss


def _with_negative_tokens(sample):
    missing = [t for t in settings.NEGATIVE_SAMPLE_TOKENS
               if t not in sample.caption_tokens]
    if not missing:
        return sample
    return replace(sample, caption_tokens=sample.caption_tokens +
                   tuple(missing))


def mix_negative_samples(pos_set, neg_set, ratio, seed):
    """
    Endless stream of training samples.

    Positives are visited in a fresh seeded permutation every epoch. Before
    each positive, negatives are emitted while Bernoulli(ratio) draws
    succeed, so the expected share of negatives in the stream is ``ratio``.
    Permutations, Bernoulli draws and negative picks use independent
    streams, so ``ratio`` 0 yields exactly the positive order.

    """
    if not pos_set:
        raise TrainingInputError("No positive samples")
    if not 0 <= ratio <= settings.NEGATIVE_RATIO_MAX:
        raise TrainingInputError("ratio must be in [0, {}], got {}".format(
            settings.NEGATIVE_RATIO_MAX, ratio))
    if ratio > 0 and not neg_set:
        raise EmptyNegativeSetError("ratio {} needs negative samples".format(
            ratio))
    order_seq, choice_seq, pick_seq = np.random.SeedSequence(seed).spawn(3)
    order_rng = np.random.default_rng(order_seq)
    choice_rng = np.random.default_rng(choice_seq)
    pick_rng = np.random.default_rng(pick_seq)
    negatives = [_with_negative_tokens(s) for s in neg_set]
    while True:
        for index in order_rng.permutation(len(pos_set)):
            while ratio > 0 and choice_rng.random() < ratio:
                yield negatives[pick_rng.integers(len(negatives))]
            yield pos_set[index]


class DenoiserTrainer(object):
    """
    Runs the training phases of a TrainConfig on a ControlledUNet.

    """
    def __init__(self, net, stream, cfg, dtype=torch.float32):
        self.logger = logging.getLogger(__name__)
        self.net = net
        self.stream = stream
        self.cfg = cfg
        self.dtype = dtype
        self.generator = torch.Generator().manual_seed(cfg.seed % (1 << 63))
        self.history = []
        self.step = 0

    def _phases(self):
        base = self.net.base_parameters()
        control = self.net.control_parameters()
        if self.cfg.base_steps:
            yield "base", self.cfg.base_steps, base, False
        if self.cfg.steps:
            trainable = control if self.cfg.freeze_base else base + control
            if not self.cfg.use_control:
                trainable = base
            yield "control", self.cfg.steps, trainable, self.cfg.use_control

    def _draw(self, batch):
        channels, height, width = batch[0].hq.to_tensor().shape
        shape = (len(batch), channels, height, width)
        log_sigma = self.cfg.sigma_log_mean + self.cfg.sigma_log_std * \
            torch.randn(len(batch), generator=self.generator,
                        dtype=self.dtype)
        noise = torch.randn(shape, generator=self.generator, dtype=self.dtype)
        return log_sigma.exp(), noise

    def _run_phase(self, name, steps, params, use_control):
        trainable = {id(p) for p in params}
        for p in self.net.parameters():
            p.requires_grad_(id(p) in trainable)
        optimizer = torch.optim.AdamW(params, lr=self.cfg.lr,
                                      weight_decay=self.cfg.weight_decay)
        self.logger.info("Phase '{}': {} steps, {} trainable parameters"
                         "".format(name, steps,
                                   sum(p.numel() for p in params)))
        for _ in range(steps):
            batch = [next(self.stream) for _ in range(self.cfg.batch_size)]
            sigma, noise = self._draw(batch)
            try:
                loss = denoising_loss(self.net, batch, sigma, noise,
                                      use_control=use_control)
            except TrainingDivergenceError as e:
                raise TrainingDivergenceError(self.step, str(e))
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, self.cfg.grad_norm_cap)
            optimizer.step()
            row = (self.step, float(loss), float(sigma.mean()))
            self.history.append(row)
            if self.cfg.log_every and self.step % self.cfg.log_every == 0:
                self.logger.info("step {} loss {:.5g} sigma_mean {:.4g}"
                                 "".format(*row))
            self.step += 1

    def run(self):
        self.net.train()
        try:
            for phase in self._phases():
                self._run_phase(*phase)
        finally:
            for p in self.net.parameters():
                p.requires_grad_(True)
            self.net.eval()
        return self.net, self.history


def train_denoiser(net, stream, cfg):
    """
    Train ``net`` in place on samples drawn from ``stream``. Returns the
    network and the loss history as (step, loss, sigma_mean) rows.

    """
    return DenoiserTrainer(net, stream, cfg).run()


def write_history(path, history):
    write_csv(path, HISTORY_CSV_HEADER, history)

