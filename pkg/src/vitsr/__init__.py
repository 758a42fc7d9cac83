"""MR image super-resolution with transformer-feature and
structure/texture consistency constraints on a GAN generator."""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, grad_check
from .disentangle import (AEConfig, AEState, LatentCode, disent_total_loss, encode,
                          generate, swap_codes)
from .errors import (ConfigurationError, DataError, DependencyError, DimensionError,
                     SamplingError, UsageError, ValidationError, VitsrError)
from .estimators import DisentanglingAutoencoder, SuperResolver, ViTFeatureEncoder
from .metrics import MetricRecord, bicubic_resize, evaluate_pair, nmse, psnr, ssim
from .srnet import Generator, GeneratorConfig, LossWeights, sr_generate, total_sr_loss
from .train import RunConfig, TrainRunRecord, make_config, run_phase
from .vit import ViTConfig, ViTState, dice_ce_loss, encode_features, patchify

__all__ = [
    "AEConfig", "AEState", "ConfigurationError", "DataError", "DependencyError",
    "DimensionError", "DisentanglingAutoencoder", "Generator", "GeneratorConfig",
    "LatentCode", "LossWeights", "MetricRecord", "RunConfig", "SamplingError",
    "SuperResolver", "Tensor", "TrainRunRecord", "UsageError", "ValidationError",
    "ViTConfig", "ViTFeatureEncoder", "ViTState", "VitsrError", "backward",
    "bicubic_resize", "dice_ce_loss", "disent_total_loss", "encode",
    "encode_features", "evaluate_pair", "generate", "grad_check", "make_config",
    "nmse", "patchify", "psnr", "run_phase", "sr_generate", "ssim", "swap_codes",
    "total_sr_loss",
]
