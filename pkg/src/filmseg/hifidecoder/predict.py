"""End-to-end inference: image + query text -> PredictionMask."""

from __future__ import annotations

import torch

from ..dualenc.model import EncoderWeights
from .model import Decoder, PredictionMask


def predict_logits(images, texts, encoder: EncoderWeights, decoder: Decoder) -> torch.Tensor:
    with torch.no_grad():
        vp, _ = encoder.model.encode_image(images, decoder.config.taps)
        q = encoder.model.encode_text(list(texts)).vector
        return decoder(vp.projections, q)


def predict_mask(image, query_text: str, encoder: EncoderWeights, decoder: Decoder) -> PredictionMask:
    was = decoder.training
    decoder.eval()
    try:
        logits = predict_logits(image[None], [query_text], encoder, decoder)
    finally:
        decoder.train(was)
    return PredictionMask.from_logits(logits[0])


def predict_masks(images, texts, encoder: EncoderWeights, decoder: Decoder, batch_size: int = 64):
    decoder.eval()
    out = []
    for i in range(0, len(images), batch_size):
        logits = predict_logits(images[i:i + batch_size], texts[i:i + batch_size], encoder, decoder)
        out.extend(PredictionMask.from_logits(lg) for lg in logits)
    return out
