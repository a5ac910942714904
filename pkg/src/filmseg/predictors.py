"""Predictor adapters that plug models into :func:`filmseg.evalkit.evaluate`.

Each exposes ``identity`` and ``predict(samples) -> list of bool masks``.
"""

from __future__ import annotations

import numpy as np
import torch

from .dualenc.model import EncoderWeights
from .evalkit.evaluate import ModelIdentity
from .hifidecoder.model import Decoder, PredictionMask
from .layers import parameter_fingerprint
from .scenegen.dataset import SPLITS, derive_seed
from .simdetector.detector import DetectorConfig, detect_topk, hybrid_choice


def sample_key(sample_id: str) -> tuple[int, int]:
    """``"test_unseen-00012"`` -> (split index, 12); stable per-sample seed material."""
    split, index = sample_id.rsplit("-", 1)
    return SPLITS.index(split), int(index)


class DecoderPredictor:
    def __init__(self, encoder: EncoderWeights, decoder: Decoder, tag: str, dataset_hash: str = "",
                 seed: int = 0, batch_size: int = 64):
        self.encoder, self.decoder, self.batch_size = encoder, decoder, batch_size
        self.identity = ModelIdentity(tag, parameter_fingerprint(decoder), dataset_hash, seed)

    def logits(self, images, texts) -> torch.Tensor:
        model = self.encoder.model
        model.eval()
        self.decoder.eval()
        out = []
        with torch.no_grad():
            for i in range(0, len(texts), self.batch_size):
                vp, _ = model.encode_image(np.stack(images[i:i + self.batch_size]), self.decoder.config.taps)
                q = model.encode_text(list(texts[i:i + self.batch_size])).vector
                out.append(self.decoder(vp.projections, q))
        return torch.cat(out)

    def predict_full(self, samples) -> list[PredictionMask]:
        logits = self.logits([s.image for s in samples], [s.query.text for s in samples])
        return [PredictionMask.from_logits(lg) for lg in logits]

    def predict(self, samples) -> list[np.ndarray]:
        return [m.binary_mask for m in self.predict_full(samples)]

    def segment_fn(self, image):
        """Single-image text -> mask callable (used by SA trials)."""
        def segment(text: str) -> np.ndarray:
            return PredictionMask.from_logits(self.logits([image], [text])[0]).binary_mask
        return segment


class DetectorPredictor:
    """Top-1 candidate of the simulated detector; empty mask when it returns nothing."""

    def __init__(self, config: DetectorConfig, seed: int, tag: str = "detector"):
        self.config, self.seed = config, seed
        self.identity = ModelIdentity(tag, "", "", seed)

    def candidates(self, sample):
        rng = np.random.default_rng(derive_seed(self.seed, 211, *sample_key(sample.sample_id)))
        return detect_topk(sample.scene, sample.query.text, self.config, rng)

    def predict(self, samples) -> list[np.ndarray]:
        out = []
        for s in samples:
            cands = self.candidates(s)
            out.append(cands[0].mask if cands else np.zeros_like(s.gt_mask))
        return out


class HybridPredictor:
    """Detector candidate with maximum IoU against the decoder mask."""

    def __init__(self, decoder: DecoderPredictor, detector: DetectorPredictor, tag: str = "hybrid"):
        self.decoder, self.detector = decoder, detector
        ident = decoder.identity
        self.identity = ModelIdentity(tag, ident.checkpoint_fingerprint, ident.dataset_hash, ident.seed)
        self.choices: dict[str, int] = {}

    def predict(self, samples) -> list[np.ndarray]:
        masks = self.decoder.predict(samples)
        out = []
        for s, m in zip(samples, masks):
            cands = self.detector.candidates(s)
            i = hybrid_choice(m, cands)
            self.choices[s.sample_id] = i
            out.append(m if i < 0 else cands[i].mask)
        return out
