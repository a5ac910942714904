"""Decoder checkpoints, bound to the fingerprint of the encoder they were trained on."""

from __future__ import annotations

from pathlib import Path

from ..layers import parameter_fingerprint
from ..tensorio import read_meta, read_tensors, write_tensors
from .model import Decoder, DecoderConfig

FORMAT = "filmseg-decoder"
VERSION = "1"


class EncoderMismatchError(RuntimeError):
    code = "fingerprint-mismatch"


def save_decoder(decoder: Decoder, encoder_fingerprint: str, path, extra: dict | None = None) -> Path:
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "config": decoder.config.to_dict(),
        "encoder_fingerprint": encoder_fingerprint,
        "fingerprint": parameter_fingerprint(decoder),
        "extra": extra or {},
    }
    return write_tensors(path, decoder.state_dict(), meta)


def decoder_metadata(path) -> dict:
    return read_meta(path)


def load_decoder(path, encoder_fingerprint: str | None) -> Decoder:
    """Load a decoder; refuses when ``encoder_fingerprint`` differs from the bound one."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no decoder checkpoint at {path}")
    meta = decoder_metadata(path)
    if meta.get("format") != FORMAT or meta.get("version") != VERSION:
        raise ValueError(f"{path} is not a v{VERSION} decoder checkpoint")
    if encoder_fingerprint is not None and meta["encoder_fingerprint"] != encoder_fingerprint:
        raise EncoderMismatchError(
            f"decoder {path.name} was trained on encoder {meta['encoder_fingerprint'][:12]}, "
            f"got {encoder_fingerprint[:12]}"
        )
    decoder = Decoder(DecoderConfig.from_dict(meta["config"]))
    decoder.load_state_dict(read_tensors(path))
    decoder.eval()
    return decoder
