"""Decoder training, the full-finetune baseline, loss and schedule."""

from .train import (
    FeatureCache,
    FrozenEncoderViolation,
    NonFiniteLossError,
    TrainConfig,
    TrainReport,
    decoder_config_for,
    init_decoder,
    lr_at_step,
    pixel_bce,
    train_decoder,
    train_full_finetune,
    validation_split,
)

__all__ = [name for name in dir() if not name.startswith("_")]
