"""Desk-scale vision-language-action policy in plain numpy.

A 2D patch encoder, a VLM-style trunk with fusion tokens and structured
masks, a diffusion action expert, a frozen streaming 4D feature branch that
can be pruned at inference, and a small tabletop arena to train and test on.
"""
from .config import ConfigError, ModelConfig, TrainingConfig, load_config
from .fusion import MaskMode
from .policy import Batch, Policy

__version__ = "0.1.0"

__all__ = ["ConfigError", "ModelConfig", "TrainingConfig", "load_config", "MaskMode", "Batch", "Policy"]
