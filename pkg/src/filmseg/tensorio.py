"""safetensors files with a single sorted-JSON metadata entry.

safetensors writes its metadata map in hash order, so several keys would make the
file bytes vary run to run. Everything goes under one key instead.
"""

from __future__ import annotations

import json
from pathlib import Path

from safetensors import safe_open
from safetensors.torch import load_file, save_file

META_KEY = "filmseg"


def write_tensors(path, tensors: dict, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = {k: v.detach().cpu().contiguous() for k, v in tensors.items()}
    save_file(tensors, str(path), metadata={META_KEY: json.dumps(meta, sort_keys=True)})
    return path


def read_meta(path) -> dict:
    with safe_open(str(path), framework="pt") as f:
        raw = (f.metadata() or {}).get(META_KEY)
    if raw is None:
        return {}
    return json.loads(raw)


def read_tensors(path) -> dict:
    return load_file(str(path))
