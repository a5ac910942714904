"""On-disk dataset layout.

::

    <dir>/index.json          format, version, config snapshot, catalog,
                              lexicons, split sizes, dataset hash, sha256 per file
    <dir>/queries.jsonl       one record per sample (text, attributes, target id,
                              template id, split, scene parameters)
    <dir>/images/<id>.png     lossless RGB image
    <dir>/masks/<id>.rle      run-length encoded scene label map (-1 = background,
                              otherwise the visible object id); every object mask
                              and the target mask are recovered from it exactly

The RLE file is ASCII: ``H W`` on the first line, then ``value count`` pairs in
row-major order, one per line.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .attributes import AttributeSet
from .catalog import ObjectCategory
from .dataset import SPLITS, DatasetConfig, DatasetSplit, LabeledSample
from .grammar import ReferringQuery
from .scene import scene_from_dict

FORMAT = "filmseg-dataset"
VERSION = 1


class DatasetFormatError(RuntimeError):
    code = "dataset-error"

    def __init__(self, message: str, path: str | None = None):
        super().__init__(message)
        self.path = path


class MissingIndexError(DatasetFormatError):
    code = "missing-index"


class VersionMismatchError(DatasetFormatError):
    code = "version-mismatch"


class ChecksumError(DatasetFormatError):
    code = "checksum-failure"


class MissingFileError(DatasetFormatError):
    code = "missing-file"


def rle_encode(labels: np.ndarray) -> str:
    flat = labels.ravel()
    lines = [f"{labels.shape[0]} {labels.shape[1]}"]
    if flat.size:
        change = np.flatnonzero(np.diff(flat)) + 1
        starts = np.concatenate([[0], change])
        lengths = np.diff(np.concatenate([starts, [flat.size]]))
        lines.extend(f"{int(flat[s])} {int(n)}" for s, n in zip(starts, lengths))
    return "\n".join(lines) + "\n"


def rle_decode(text: str) -> np.ndarray:
    rows = text.strip().split("\n")
    h, w = (int(v) for v in rows[0].split())
    if len(rows) > 1:
        pairs = np.array([[int(v) for v in r.split()] for r in rows[1:]], dtype=np.int64)
        flat = np.repeat(pairs[:, 0], pairs[:, 1])
    else:
        flat = np.zeros(0, dtype=np.int64)
    if flat.size != h * w:
        raise ValueError(f"RLE covers {flat.size} pixels, expected {h * w}")
    return flat.reshape(h, w).astype(np.int16)


def _png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image, mode="RGB").save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def persist_dataset(split: DatasetSplit, directory) -> Path:
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    checksums = {}
    records = []
    for sample in split.samples():
        img_rel = f"images/{sample.sample_id}.png"
        mask_rel = f"masks/{sample.sample_id}.rle"
        png = _png_bytes(sample.image)
        rle = rle_encode(sample.scene.label_map()).encode()
        (root / img_rel).write_bytes(png)
        (root / mask_rel).write_bytes(rle)
        checksums[img_rel] = _sha256(png)
        checksums[mask_rel] = _sha256(rle)
        records.append(json.dumps(sample.record(), sort_keys=True))
    queries = ("\n".join(records) + "\n").encode()
    (root / "queries.jsonl").write_bytes(queries)
    checksums["queries.jsonl"] = _sha256(queries)
    index = {
        "format": FORMAT,
        "version": VERSION,
        "config": asdict(split.config),
        "catalog": [asdict(c) for c in split.catalog],
        "lexicons": split.lexicons,
        "splits": {name: len(split.split(name)) for name in SPLITS},
        "dataset_hash": split.dataset_hash(),
        "checksums": dict(sorted(checksums.items())),
    }
    (root / "index.json").write_text(json.dumps(index, sort_keys=True, indent=1) + "\n")
    return root


def _read_checked(root: Path, rel: str, checksums: dict) -> bytes:
    path = root / rel
    if not path.exists():
        raise MissingFileError(f"missing file {rel}", rel)
    data = path.read_bytes()
    if checksums.get(rel) != _sha256(data):
        raise ChecksumError(f"checksum mismatch for {rel}", rel)
    return data


def _config_from_dict(data: dict) -> DatasetConfig:
    fields = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return DatasetConfig(**fields)


def load_dataset(directory) -> DatasetSplit:
    root = Path(directory)
    index_path = root / "index.json"
    if not index_path.exists():
        raise MissingIndexError(f"no index.json in {root}", "index.json")
    index = json.loads(index_path.read_text())
    if index.get("format") != FORMAT or index.get("version") != VERSION:
        raise VersionMismatchError(
            f"expected {FORMAT} v{VERSION}, found {index.get('format')} v{index.get('version')}", "index.json"
        )
    checksums = index["checksums"]
    catalog = tuple(ObjectCategory(**c) for c in index["catalog"])
    config = _config_from_dict(index["config"])
    queries = _read_checked(root, "queries.jsonl", checksums).decode()
    by_split: dict[str, list[LabeledSample]] = {name: [] for name in SPLITS}
    for line in queries.splitlines():
        if not line:
            continue
        rec = json.loads(line)
        sid = rec["sample_id"]
        png = _read_checked(root, f"images/{sid}.png", checksums)
        rle = _read_checked(root, f"masks/{sid}.rle", checksums)
        image = np.array(Image.open(io.BytesIO(png)).convert("RGB"), dtype=np.uint8)
        labels = rle_decode(rle.decode())
        scene = scene_from_dict(rec["scene"], catalog, label_map=labels)
        query = ReferringQuery(
            rec["text"], AttributeSet.from_dict(rec["attributes"]), rec["target_id"], rec["template_id"]
        )
        gt = labels == query.target_id
        by_split[rec["split"]].append(LabeledSample(sid, rec["split"], image, query, gt, scene))
    for name, n in index["splits"].items():
        if len(by_split[name]) != n:
            raise DatasetFormatError(f"split {name} has {len(by_split[name])} samples, index says {n}")
    split = DatasetSplit(
        by_split["train"], by_split["test_seen"], by_split["test_unseen"], catalog, index["lexicons"], config
    )
    if split.dataset_hash() != index["dataset_hash"]:
        raise ChecksumError("dataset hash mismatch after load", "index.json")
    return split
