"""Segmentation decoder: FiLM fusion stages, mask head and fusion variants."""

from .checkpoint import EncoderMismatchError, decoder_metadata, load_decoder, save_decoder
from .model import (
    VARIANTS,
    Decoder,
    DecoderConfig,
    FiLMLayer,
    MaskHead,
    PredictionMask,
    TextCrossAttention,
    UnknownVariantError,
    build_variant,
    film_modulate,
    parameter_counts,
)
from .predict import predict_mask, predict_masks

__all__ = [name for name in dir() if not name.startswith("_")]
