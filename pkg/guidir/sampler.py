# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

"""
EDM noise schedule and stochastic samplers.

Every sampler here drives a denoiser H(z_hat, z_lq, sigma_hat, cond) that
returns the denoised (clean-signal) estimate at noise level sigma_hat. The
restoration-guided sampler pulls that estimate toward z_lq with weight
k_t = (sigma_t / sigma_T) ** tau_r before taking the Euler step, so guidance
is strongest in the early, high-noise steps.

"""

from dataclasses import asdict, dataclass, fields
import json
import logging
import math

import numpy as np
import torch

from guidir import settings
from guidir.util import GuidirError, GuidirInputError, write_csv

logger = logging.getLogger(__name__)

TRACE_CSV_HEADER = ("step", "sigma", "k_t", "mean_abs_z")
CFG_STAGES = ("denoised", "derivative")


class SamplerError(GuidirError):
    """
    General error for sampling.

    """
    pass


class SamplerConfigError(SamplerError, GuidirInputError):
    """
    Error indicating invalid schedule or sampler parameters.

    """
    pass


class SamplerShapeError(SamplerError, GuidirInputError):
    """
    Error indicating tensors that should share a shape don't.

    """
    pass


class NonFiniteStateError(SamplerError):
    """
    Error indicating a NaN/Inf in the sampling state. ``step`` is the index
    of the step that produced it (0 is the first step, at sigma_T).

    """
    def __init__(self, step, sigma, message):
        super().__init__("Step {} (sigma {:.6g}): {}".format(
            step, sigma, message))
        self.step = step
        self.sigma = sigma


class NoiseSchedule(object):
    """
    Strictly decreasing noise levels sigma_T > ... > sigma_1 > sigma_0 = 0.

    """
    def __init__(self, sigmas, rho, sigma_min, sigma_max):
        sigmas = np.asarray(sigmas, dtype=np.float64)
        if sigmas.ndim != 1 or len(sigmas) < 2:
            raise SamplerConfigError("A schedule needs at least one positive "
                                     "level followed by 0")
        if sigmas[-1] != 0.0:
            raise SamplerConfigError("A schedule must end at sigma 0")
        if not np.all(np.diff(sigmas) < 0):
            raise SamplerConfigError("Schedule is not strictly decreasing")
        sigmas.setflags(write=False)
        self.sigmas = sigmas
        self.rho = rho
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max

    @property
    def steps(self):
        return len(self.sigmas) - 1

    def __len__(self):
        return len(self.sigmas)

    def __getitem__(self, index):
        return float(self.sigmas[index])


def karras_schedule(steps, sigma_min=settings.SCHEDULE_SIGMA_MIN,
                    sigma_max=settings.SCHEDULE_SIGMA_MAX,
                    rho=settings.SCHEDULE_RHO):
    """
    Karras et al. schedule: ``steps`` positive levels interpolated in
    sigma^(1/rho) from sigma_max to sigma_min, then 0.

    """
    if steps < 1:
        raise SamplerConfigError("Need at least one step, got {}".format(
            steps))
    if not 0 < sigma_min < sigma_max:
        raise SamplerConfigError("Need 0 < sigma_min < sigma_max, got {} "
                                 "and {}".format(sigma_min, sigma_max))
    if steps == 1:
        positive = np.array([sigma_max], dtype=np.float64)
    else:
        ramp = np.arange(steps, dtype=np.float64) / (steps - 1)
        inv_rho = 1.0 / rho
        positive = (sigma_max ** inv_rho
                    + ramp * (sigma_min ** inv_rho - sigma_max ** inv_rho)
                    ) ** rho
        # Pin the endpoints against pow round-off.
        positive[0] = sigma_max
        positive[-1] = sigma_min
    return NoiseSchedule(np.append(positive, 0.0), rho, sigma_min, sigma_max)


@dataclass
class SamplerConfig:
    T: int = settings.SAMPLER_STEPS
    lambda_cfg: float = settings.SAMPLER_LAMBDA_CFG
    tau_r: float = settings.SAMPLER_TAU_R
    s_churn: float = settings.SAMPLER_S_CHURN
    s_noise: float = settings.SAMPLER_S_NOISE
    s_min: float = settings.SAMPLER_S_MIN
    s_max: float = settings.SAMPLER_S_MAX
    seed: int = 0
    guidance_enabled: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if int(self.T) != self.T or self.T < 1:
            raise SamplerConfigError("T must be a positive integer, got {}"
                                     "".format(self.T))
        if self.lambda_cfg < 0:
            raise SamplerConfigError("lambda_cfg must be >= 0, got {}"
                                     "".format(self.lambda_cfg))
        if self.tau_r < 0:
            raise SamplerConfigError("tau_r must be >= 0, got {}".format(
                self.tau_r))
        if self.s_min > self.s_max:
            raise SamplerConfigError("s_min ({}) > s_max ({})".format(
                self.s_min, self.s_max))
        if self.s_churn < 0 or self.s_noise < 0:
            raise SamplerConfigError("s_churn and s_noise must be >= 0")

    def schedule(self):
        return karras_schedule(self.T)

    def generator(self):
        return torch.Generator().manual_seed(self.seed % (1 << 63))

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=4)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SamplerConfigError("Unknown sampler fields: {}".format(
                ", ".join(sorted(unknown))))
        return cls(**data)

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise SamplerConfigError("Invalid JSON: {}".format(e))


@dataclass
class LatentState:
    z: torch.Tensor
    sigma: float
    t: int


def guidance_weight(sigma_t, sigma_T, tau_r):
    """
    k_t = (sigma_t / sigma_T) ** tau_r.

    """
    return (sigma_t / sigma_T) ** tau_r


def cfg_fuse(z_pos, z_neg, lambda_cfg):
    """
    z_pos + lambda_cfg * (z_pos - z_neg).

    """
    if z_pos.shape != z_neg.shape:
        raise SamplerShapeError("CFG branches differ in shape: {} vs {}"
                                "".format(tuple(z_pos.shape),
                                          tuple(z_neg.shape)))
    return z_pos + lambda_cfg * (z_pos - z_neg)


def churn_gamma(sigma_t, config):
    if config.s_min <= sigma_t <= config.s_max:
        return min(config.s_churn / config.T, math.sqrt(2.0) - 1.0)
    return 0.0


def _check_finite(tensor, step, sigma, what):
    if not torch.isfinite(tensor).all():
        raise NonFiniteStateError(step, sigma, "non-finite {}".format(what))


def _run_sampler(denoiser, schedule, config, rng, shape, dtype, device,
                 z_lq, cond_pos, cond_neg, guided, cfg_stage, trace,
                 callback=None):
    """
    Shared Euler/churn loop. With ``guided`` False k_t is forced to 0 and
    only the positive branch is used, which is the plain EDM sampler.

    """
    if schedule.steps != config.T:
        raise SamplerConfigError("Schedule has {} steps but config.T is {}"
                                 "".format(schedule.steps, config.T))
    if cfg_stage not in CFG_STAGES:
        raise SamplerConfigError("cfg_stage must be one of {}, got '{}'"
                                 "".format(CFG_STAGES, cfg_stage))
    if rng is None:
        rng = config.generator()
    use_cfg = guided and cond_neg is not None and config.lambda_cfg != 0
    sigma_T = schedule[0]

    z = sigma_T * torch.randn(shape, generator=rng, dtype=dtype,
                              device=device)
    for step in range(schedule.steps):
        sigma_t = schedule[step]
        sigma_next = schedule[step + 1]
        eps = config.s_noise * torch.randn(shape, generator=rng, dtype=dtype,
                                           device=device)
        gamma = churn_gamma(sigma_t, config)
        sigma_hat = sigma_t + gamma * sigma_t
        z_hat = z + math.sqrt(sigma_hat ** 2 - sigma_t ** 2) * eps

        k_t = guidance_weight(sigma_t, sigma_T, config.tau_r) \
            if guided else 0.0
        denoised = denoiser(z_hat, z_lq, sigma_hat, cond_pos)
        if denoised.shape != z_hat.shape:
            raise SamplerShapeError("Denoiser returned shape {} for input {}"
                                    "".format(tuple(denoised.shape),
                                              tuple(z_hat.shape)))
        _check_finite(denoised, step, sigma_hat, "denoiser output")
        if use_cfg:
            denoised_neg = denoiser(z_hat, z_lq, sigma_hat, cond_neg)
            _check_finite(denoised_neg, step, sigma_hat,
                          "negative-branch denoiser output")
            if cfg_stage == "denoised":
                denoised = cfg_fuse(denoised, denoised_neg, config.lambda_cfg)
        if guided:
            target = torch.lerp(denoised, z_lq, k_t)
        else:
            target = denoised
        d = (z_hat - target) / sigma_hat
        if use_cfg and cfg_stage == "derivative":
            d_neg = (z_hat - torch.lerp(denoised_neg, z_lq, k_t)) / sigma_hat
            d = cfg_fuse(d, d_neg, config.lambda_cfg)
        z = z_hat + (sigma_next - sigma_hat) * d
        _check_finite(z, step, sigma_hat, "state")

        if trace is not None:
            trace.append((step, sigma_t, k_t, float(z.abs().mean())))
        if callback is not None:
            callback(LatentState(z, sigma_next, step))
        logger.debug("step {} sigma {:.4g} sigma_hat {:.4g} k_t {:.4g}"
                     "".format(step, sigma_t, sigma_hat, k_t))
    return z


def edm_reference_sample(denoiser, schedule, cond, config, rng=None,
                         shape=None, z_lq=None, dtype=torch.float32,
                         device="cpu", trace=None, callback=None):
    """
    Plain stochastic EDM sampler (Euler steps with churn, no restoration
    guidance, single conditioning branch).

    ``shape`` defaults to the shape of ``z_lq``; ``z_lq`` is only forwarded to
    the denoiser.

    """
    if shape is None:
        if z_lq is None:
            raise SamplerShapeError("Need either shape or z_lq")
        shape = z_lq.shape
    if z_lq is not None:
        dtype, device = z_lq.dtype, z_lq.device
    return _run_sampler(denoiser, schedule, config, rng, tuple(shape), dtype,
                        device, z_lq, cond, None, False, "denoised", trace,
                        callback)


def restoration_guided_sample(denoiser, z_lq, cond_pos, cond_neg, schedule,
                              config, rng=None, cfg_stage="denoised",
                              trace=None, callback=None):
    """
    Restoration-guided EDM sampling with classifier-free guidance.

    At each step both conditioning branches are denoised and fused with
    ``cfg_fuse`` (``cfg_stage="derivative"`` fuses the per-branch derivatives
    instead; the two differ only by rounding). The fused estimate is then
    interpolated toward ``z_lq`` with weight k_t. With
    ``config.guidance_enabled`` False the result is bit-identical to
    ``edm_reference_sample`` with ``cond_pos``.

    Pass ``cond_neg=None`` (or lambda_cfg 0) to skip the negative branch.

    """
    if not config.guidance_enabled:
        return _run_sampler(denoiser, schedule, config, rng,
                            tuple(z_lq.shape), z_lq.dtype, z_lq.device, z_lq,
                            cond_pos, None, False, "denoised", trace,
                            callback)
    return _run_sampler(denoiser, schedule, config, rng, tuple(z_lq.shape),
                        z_lq.dtype, z_lq.device, z_lq, cond_pos, cond_neg,
                        True, cfg_stage, trace, callback)


def write_trace(path, trace):
    write_csv(path, TRACE_CSV_HEADER, trace)
