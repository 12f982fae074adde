# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

#-- Image quality metrics
PSNR_PEAK = 1.0
# Returned instead of infinity for (near) identical images.
PSNR_CAP_DB = 99.0
PSNR_MIN_MSE = 1e-10
SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
# ITU-R BT.601
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


#-- Degradation
BLUR_TRUNCATION = 3.0
BICUBIC_A = -0.5
# Named degradations for the five evaluation settings. Every preset resizes
# the LQ image back to the working resolution.
DEGRADATION_PRESETS = {
    'sr4': [{'resize': {'scale': 0.25}}],
    'sr8': [{'resize': {'scale': 0.125}}],
    'blur2-sr4': [{'blur': {'sigma': 2.0}}, {'resize': {'scale': 0.25}}],
    'sr4-noise40': [{'resize': {'scale': 0.25}},
                    {'noise': {'sigma_255': 40.0}}],
    'mix-full': [{'blur': {'sigma': 2.0}}, {'resize': {'scale': 0.25}},
                 {'noise': {'sigma_255': 20.0}}, {'jpeg': {'quality': 50}}],
}
# Ranges of the randomized training degradation, applied in this order:
# blur, resize, noise, jpeg.
TRAIN_BLUR_SIGMA_RANGE = (0.2, 3.0)
TRAIN_SCALES = (2, 4, 8)
TRAIN_NOISE_SIGMA_255_RANGE = (0.0, 40.0)
TRAIN_JPEG_QUALITY_RANGE = (30, 95)


#-- Noise schedule and sampling
SCHEDULE_SIGMA_MIN = 0.002
SCHEDULE_SIGMA_MAX = 80.0
SCHEDULE_RHO = 7.0
SAMPLER_STEPS = 100
SAMPLER_LAMBDA_CFG = 7.5
SAMPLER_TAU_R = 4.0
SAMPLER_S_CHURN = 5.0
SAMPLER_S_NOISE = 1.003
SAMPLER_S_MIN = 0.05
SAMPLER_S_MAX = 50.0
SWEEP_TAUS = (0.0, 1.0, 2.0, 4.0, 6.0)


#-- Denoiser network
SIGMA_DATA = 0.5
EMBEDDING_DIM = 64
UNET_WIDTH = 32
UNET_BLOCKS_PER_STAGE = 2
GROUPNORM_GROUPS = 4
FOURIER_SCALE = 16.0


#-- Autoencoder
AE_WIDTH = 32
AE_LATENT_CHANNELS = 4
AE_DOWNSAMPLE = 4
AE_MIN_DATASET = 256
AE_PRETRAIN_EPOCHS = 80
AE_PRETRAIN_LR = 1e-3
AE_FINETUNE_EPOCHS = 10
AE_FINETUNE_LR = 1e-4
# Identical (LQ, GT) pairs must leave the encoder unchanged.
AE_FINETUNE_WEIGHT_DECAY = 0.0
AE_BATCH_SIZE = 32
# The GT branch of the encoder loss only provides the target.
ENCODER_STOP_GRADIENT_TARGET = True


#-- Training
TRAIN_SIGMA_LOG_MEAN = -1.2
TRAIN_SIGMA_LOG_STD = 1.2
TRAIN_LR = 1e-4
TRAIN_WEIGHT_DECAY = 1e-2
TRAIN_BATCH_SIZE = 16
TRAIN_STEPS = 2000
# Base-prior steps when `train` starts from a fresh network.
TRAIN_BASE_STEPS = 2000
TRAIN_GRAD_NORM_CAP = 1.0
TRAIN_LOG_EVERY = 100
# 100K negative samples next to 20M positives.
NEGATIVE_RATIO = 0.005
NEGATIVE_RATIO_MAX = 0.2


#-- Captions and prompts
POSITIVE_QUALITY_TOKENS = ("quality:high", "detailed", "sharp")
NEGATIVE_SAMPLE_TOKENS = ("quality:negative", "blur", "messy", "low-quality")
NEGATIVE_PROMPT_TOKENS = ("quality:negative", "oil-painting", "cartoon", "blur",
                          "dirty", "messy", "low-quality")
TEXTURE_FAMILIES = ("stripes", "checker", "radial", "noise-field", "blobs")
TEXTURE_FREQUENCIES = (1, 2, 3, 4, 6, 8, 12, 16)
HIGH_FREQUENCY_THRESHOLD = 8
HIGH_CONTRAST_THRESHOLD = 0.5
TEXTURE_SIZE = 32
NEGATIVE_SEVERITY_RANGE = (0.5, 1.0)
