"""Encoder checkpoint files (safetensors with a JSON metadata header)."""

from __future__ import annotations

from pathlib import Path

from ..layers import parameter_fingerprint
from ..tensorio import read_meta, read_tensors, write_tensors
from .model import DualEncoder, EncoderConfig, EncoderWeights, freeze

FORMAT = "filmseg-encoder"
VERSION = "1"


class CheckpointError(RuntimeError):
    code = "bad-checkpoint"


def save_encoder(weights: EncoderWeights, path) -> Path:
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "config": weights.config.to_dict(),
        "fingerprint": parameter_fingerprint(weights.model),
        "frozen": weights.frozen,
        "metrics": weights.metrics,
    }
    return write_tensors(path, weights.model.state_dict(), meta)


def load_encoder(path) -> EncoderWeights:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no encoder checkpoint at {path}")
    meta = read_meta(path)
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not an encoder checkpoint")
    if meta.get("version") != VERSION:
        raise CheckpointError(f"encoder checkpoint version {meta.get('version')} != {VERSION}")
    model = DualEncoder(EncoderConfig.from_dict(meta["config"]))
    model.load_state_dict(read_tensors(path))
    model.eval()
    weights = EncoderWeights(model, frozen=False, metrics=meta["metrics"])
    if weights.refresh_fingerprint() != meta["fingerprint"]:
        raise CheckpointError(f"fingerprint mismatch reading {path}")
    if meta["frozen"]:
        weights = freeze(weights)
    return weights
