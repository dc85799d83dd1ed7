"""Desk-scale StyleGAN2 synthesis path with verifiable skip/squeeze blocks.

Subpackages:
  autodiff   taped reverse-mode tensors (second-order capable subset)
  synthesis  mapping network, modulated convs, generator block variants
  analysis   skip-connection equivalence checks and parameter accounting
  training   GAN losses, toy discriminator/dataset, deterministic loop
  metrics    Frechet distance and inception score functionals
  cli        command-line tool (verify / params / train / generate /
             gradcheck / metrics)
"""

from . import backend
from .autodiff import Tape, Tensor, backward, grad_norm_sq, no_grad
from .errors import ConfigError, NumericError, TrainingDiverged
from .synthesis import BlockVariant, Generator, GeneratorConfig
from .training import LossConfig, ToyDatasetSpec

__version__ = "1.0.0"

__all__ = [
    "Tape", "Tensor", "backward", "grad_norm_sq", "no_grad",
    "BlockVariant", "Generator", "GeneratorConfig",
    "LossConfig", "ToyDatasetSpec",
    "ConfigError", "NumericError", "TrainingDiverged",
    "backend", "__version__",
]
