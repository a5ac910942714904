"""Run configuration: plain-text ``section.key = value`` files plus CLI overrides.

Precedence is override > file > default. Keys outside the schema are rejected
with their names listed; values that do not parse as the declared type are
rejected with the offending key.

File syntax::

    # comment
    run.seed = 13
    decoder.D = 128
    encoder.taps = 1,3,5,7,9
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .dualenc.pretrain import PretrainConfig
from .evalkit.metrics import MetricsConfig
from .hifidecoder.model import VARIANTS
from .scenegen.dataset import DatasetConfig
from .simdetector.detector import DetectorConfig
from .trainloop.train import TrainConfig


class ConfigError(ValueError):
    code = "config"

    def __init__(self, message: str, keys: list[str] | None = None):
        super().__init__(message)
        self.keys = keys or []


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _tuple_of(kind):
    def parse(text: str):
        items = [t.strip() for t in text.split(",") if t.strip()]
        return tuple(kind(t) for t in items)

    return parse


def _int(text: str) -> int:
    return int(text.strip())


def _float(text: str) -> float:
    return float(text.strip())


def _str(text: str) -> str:
    return text.strip()


PARSERS = {
    "int": _int,
    "float": _float,
    "bool": _parse_bool,
    "str": _str,
    "ints": _tuple_of(int),
    "floats": _tuple_of(float),
    "strs": _tuple_of(str),
}


def _kind(value) -> str:
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, float):
        return "float"
    if isinstance(value, str):
        return "str"
    if isinstance(value, tuple):
        first = value[0] if value else ""
        return {int: "ints", float: "floats", str: "strs"}[type(first)]
    raise TypeError(f"unsupported default {value!r}")


def _section(defaults: dict) -> dict[str, tuple[str, object]]:
    return {k: (_kind(v), v) for k, v in defaults.items()}


def _fields(obj, drop=()) -> dict:
    return {k: v for k, v in obj.__dict__.items() if k not in drop}


SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "run": _section({"seed": 13, "seeds": (13, 14, 15), "out": "runs/default"}),
    "data": _section(_fields(DatasetConfig(), drop=("master_seed",))),
    "encoder": _section({"backend_size": "base", "taps": (1, 3, 5, 7, 9), "text_pooling": "eos"}),
    "pretrain": _section(_fields(PretrainConfig())),
    "decoder": _section(
        {"D": 64, "n_heads": 2, "attn_dim": 32, "mlp_dim": 32, "variant": "hierarchical_film",
         "tap_order": "ascending", "head_hidden": (16, 8)}
    ),
    "train": _section(_fields(TrainConfig(), drop=("seed", "variant"))),
    "detector": _section(_fields(DetectorConfig())),
    "eval": _section({"thresholds": MetricsConfig().thresholds, "correct_iou": 0.5}),
    "ablate": _section({"axis": "fusion_variant", "values": ""}),
}

CHOICES = {
    ("decoder", "variant"): VARIANTS,
    ("encoder", "backend_size"): ("base", "large"),
    ("encoder", "text_pooling"): ("eos", "mean"),
    ("pretrain", "text_provenance"): ("joint", "disjoint"),
    ("decoder", "tap_order"): ("ascending", "descending"),
}


@dataclass
class RunConfig:
    values: dict[str, dict] = field(default_factory=dict)
    source: str | None = None

    def __getitem__(self, dotted: str):
        section, key = dotted.split(".", 1)
        return self.values[section][key]

    def section(self, name: str) -> dict:
        return dict(self.values[name])

    @property
    def seed(self) -> int:
        return self["run.seed"]

    @property
    def out(self) -> Path:
        return Path(self["run.out"])

    def with_values(self, **dotted) -> "RunConfig":
        """Copy with ``section__key=value`` replacements (already typed)."""
        values = {s: dict(v) for s, v in self.values.items()}
        for k, v in dotted.items():
            section, key = k.split("__", 1)
            values[section][key] = v
        return RunConfig(values, self.source)

    def to_dict(self) -> dict:
        return {s: {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(kv.items())}
                for s, kv in sorted(self.values.items())}

    def snapshot_text(self) -> str:
        lines = []
        for section, kv in sorted(self.values.items()):
            for key, value in sorted(kv.items()):
                shown = ",".join(str(x) for x in value) if isinstance(value, tuple) else value
                if isinstance(shown, bool):
                    shown = str(shown).lower()
                lines.append(f"{section}.{key} = {shown}")
        return "\n".join(lines) + "\n"

    def config_hash(self, sections=None) -> str:
        d = self.to_dict()
        if sections is not None:
            d = {s: d[s] for s in sections}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def write_snapshot(self, directory) -> Path:
        path = Path(directory) / "resolved_config.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.snapshot_text())
        return path

    # -- typed views for the modules --
    def dataset_config(self, seed: int | None = None) -> DatasetConfig:
        return DatasetConfig(master_seed=self.seed if seed is None else seed, **self.section("data"))

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(**self.section("pretrain"))

    def train_config(self, seed: int | None = None, **over) -> TrainConfig:
        kw = {**self.section("train"), "seed": self.seed if seed is None else seed,
              "variant": self["decoder.variant"], **over}
        return TrainConfig(**kw)

    def decoder_kwargs(self, **over) -> dict:
        d = self.section("decoder")
        kw = {"width": d.pop("D"), **d}
        kw.update(over)
        return kw

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(**self.section("detector"))

    def metrics_config(self) -> MetricsConfig:
        return MetricsConfig(thresholds=self["eval.thresholds"], correct_iou=self["eval.correct_iou"])


def defaults() -> dict[str, dict]:
    return {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}


def parse_assignments(lines, origin: str) -> dict[str, str]:
    """``key = value`` lines -> raw string map; blank lines and ``#`` comments skipped."""
    out = {}
    for n, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected 'section.key = value', got {raw.strip()!r}")
        key, value = (t.strip() for t in line.split("=", 1))
        out[key] = value
    return out


def _apply(values: dict, raw: dict[str, str], origin: str) -> None:
    unknown = []
    for key in raw:
        section, _, name = key.partition(".")
        if section not in SCHEMA or name not in SCHEMA[section]:
            unknown.append(key)
    if unknown:
        raise ConfigError(f"unknown config keys from {origin}: {', '.join(sorted(unknown))}", sorted(unknown))
    for key, text in raw.items():
        section, name = key.split(".", 1)
        kind, _ = SCHEMA[section][name]
        try:
            value = PARSERS[kind](text)
        except (ValueError, TypeError):
            raise ConfigError(f"{key}: expected {kind}, got {text!r}", [key]) from None
        allowed = CHOICES.get((section, name))
        if allowed is not None and value not in allowed:
            raise ConfigError(f"{key}: {value!r} is not one of {', '.join(allowed)}", [key])
        values[section][name] = value


def resolve_config(file=None, overrides=()) -> RunConfig:
    """Defaults, then the file, then ``section.key=value`` overrides."""
    values = defaults()
    if file is not None:
        path = Path(file)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        _apply(values, parse_assignments(path.read_text().splitlines(), str(path)), str(path))
    _apply(values, parse_assignments(list(overrides), "overrides"), "overrides")
    cfg = RunConfig(values, None if file is None else str(file))
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    """Build every typed view once so invariant violations surface as config errors."""
    try:
        cfg.dataset_config()
        cfg.pretrain_config()
        cfg.train_config()
        cfg.detector_config()
        cfg.metrics_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
