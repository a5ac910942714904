"""Supervised decoder training (frozen encoder) and the full-finetune baseline."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..dualenc.checkpoint import save_encoder
from ..dualenc.model import EncoderWeights, freeze, image_tensor, unfreeze
from ..evalkit.metrics import iou
from ..hifidecoder.checkpoint import save_decoder
from ..hifidecoder.model import Decoder, DecoderConfig, build_variant, parameter_counts
from ..layers import parameter_fingerprint
from ..scenegen.dataset import derive_seed

log = logging.getLogger(__name__)

BCE_EPS = 1e-7


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, lr: float):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}, lr {lr:.3g}")
        self.epoch, self.batch, self.lr = epoch, batch, lr


class FrozenEncoderViolation(RuntimeError):
    code = "frozen-encoder-mutated"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    base_lr: float = 3e-3
    min_lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    val_fraction: float = 0.1
    seed: int = 0
    freeze_encoder: bool = True
    variant: str = "hierarchical_film"

    def __post_init__(self):
        if not self.base_lr > self.min_lr >= 0:
            raise ValueError(f"need base_lr > min_lr >= 0, got {self.base_lr} / {self.min_lr}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    variant: str
    freeze_encoder: bool
    config: dict
    epoch_loss: list[float]
    val_iou: list[float]
    encoder_fingerprint_before: str
    encoder_fingerprint_after: str
    decoder_fingerprint: str
    parameters: dict
    seed: int
    dataset_hash: str = ""
    checkpoint: str = ""
    encoder_checkpoint: str = ""
    n_train: int = 0
    n_val: int = 0
    wall_clock_s: float = field(default=0.0, compare=False)

    def to_dict(self, with_timing: bool = False) -> dict:
        d = asdict(self)
        if not with_timing:
            d.pop("wall_clock_s")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainReport":
        return cls(**d)

    def write(self, path) -> Path:
        """Report record; wall-clock goes to a sibling ``.timing.json`` so the record stays byte-stable."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        path.with_suffix(".timing.json").write_text(json.dumps({"wall_clock_s": self.wall_clock_s}) + "\n")
        return path


def pixel_bce(prob_map: torch.Tensor, gt_mask: torch.Tensor, eps: float = BCE_EPS) -> torch.Tensor:
    if prob_map.shape != gt_mask.shape:
        raise ValueError(f"shape mismatch: {tuple(prob_map.shape)} vs {tuple(gt_mask.shape)}")
    p = prob_map.clamp(eps, 1 - eps)
    g = gt_mask.to(p.dtype)
    return -(g * torch.log(p) + (1 - g) * torch.log(1 - p)).mean()


def lr_at_step(step: int, total_steps: int, config: TrainConfig) -> float:
    if total_steps < 1 or not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    cos = math.cos(math.pi * step / total_steps)
    return config.min_lr + 0.5 * (config.base_lr - config.min_lr) * (1 + cos)


def validation_split(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(train indices, validation indices), fixed by seed."""
    order = np.random.default_rng(derive_seed(seed, 101)).permutation(n)
    n_val = int(round(n * fraction))
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def batch_order(indices: np.ndarray, seed: int, epoch: int) -> np.ndarray:
    return indices[np.random.default_rng(derive_seed(seed, 103, epoch)).permutation(len(indices))]


def init_decoder(config: DecoderConfig, seed: int) -> Decoder:
    torch.manual_seed(derive_seed(seed, 107))
    return build_variant(config)


def decoder_config_for(encoder: EncoderWeights, **kw) -> DecoderConfig:
    c = encoder.config
    base = dict(taps=c.taps, encoder_width=c.model_width, joint_dim=c.joint_dim,
                image_size=c.image_size, patch_size=c.patch_size)
    return DecoderConfig(**{**base, **kw})


class FeatureCache:
    """Frozen-encoder outputs for a list of samples, computed once."""

    def __init__(self, encoder: EncoderWeights, samples, batch_size: int = 64, taps=None):
        projs, texts = [], []
        self.taps = tuple(encoder.config.taps if taps is None else taps)
        with torch.no_grad():
            for i in range(0, len(samples), batch_size):
                chunk = samples[i:i + batch_size]
                vp, _ = encoder.model.encode_image(np.stack([s.image for s in chunk]), self.taps)
                projs.append(torch.stack(vp.projections, dim=1))
                texts.append(encoder.model.encode_text([s.query.text for s in chunk]).vector)
        self.projections = torch.cat(projs)  # (N, K, T, d_model)
        self.text = torch.cat(texts)  # (N, d_e)
        self.gt = torch.from_numpy(np.stack([s.gt_mask for s in samples]).astype(np.float32))
        self.ids = [s.sample_id for s in samples]

    def __len__(self):
        return len(self.ids)

    def batch(self, idx):
        p = self.projections[idx]
        return [p[:, k] for k in range(p.shape[1])], self.text[idx], self.gt[idx]


def _foreground(logits: torch.Tensor) -> torch.Tensor:
    return logits.softmax(dim=1)[:, 1]


def _mean_iou(prob: torch.Tensor, gt: torch.Tensor) -> list[float]:
    pred = (prob > 0.5).numpy()
    g = gt.numpy() > 0.5
    return [iou(pred[i], g[i]) for i in range(len(pred))]


def _make_optimizer(params, config: TrainConfig):
    return torch.optim.Adam(params, lr=config.base_lr, betas=(config.beta1, config.beta2), eps=config.adam_eps)


def _check_finite(loss, epoch, b, lr):
    if not torch.isfinite(loss):
        raise NonFiniteLossError(epoch, b, lr)


def train_decoder(encoder: EncoderWeights, decoder: Decoder, samples, config: TrainConfig,
                  out_dir=None, dataset_hash: str = "", cache: FeatureCache | None = None):
    """Train ``decoder`` on cached features from a frozen encoder."""
    if not config.freeze_encoder:
        raise ValueError("train_decoder expects freeze_encoder=true; use train_full_finetune")
    encoder = freeze(encoder)
    t0 = time.perf_counter()
    torch.manual_seed(derive_seed(config.seed, 109))
    before = encoder.fingerprint
    cache = cache or FeatureCache(encoder, samples, taps=decoder.config.taps)
    if cache.taps != tuple(decoder.config.taps):
        raise ValueError(f"feature cache taps {cache.taps} differ from decoder taps {decoder.config.taps}")
    tr_idx, va_idx = validation_split(len(cache), config.val_fraction, config.seed)
    opt = _make_optimizer([p for p in decoder.parameters() if p.requires_grad], config)
    steps_per_epoch = math.ceil(len(tr_idx) / config.batch_size)
    total = steps_per_epoch * config.epochs
    epoch_loss, val_iou, step = [], [], 0
    for epoch in range(config.epochs):
        decoder.train()
        order = batch_order(tr_idx, config.seed, epoch)
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            lr = lr_at_step(step, total, config)
            for g in opt.param_groups:
                g["lr"] = lr
            projs, q, gt = cache.batch(idx)
            loss = pixel_bce(_foreground(decoder(projs, q)), gt)
            _check_finite(loss, epoch, b, lr)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            step += 1
        epoch_loss.append(math.fsum(losses) / len(losses))
        if parameter_fingerprint(encoder.model) != before:
            raise FrozenEncoderViolation(f"encoder parameters changed during epoch {epoch}")
        val_iou.append(_validate_cached(decoder, cache, va_idx))
        log.info("%s epoch %d loss %.4f val_iou %.4f", config.variant, epoch, epoch_loss[-1], val_iou[-1])

    decoder.eval()
    report = TrainReport(
        variant=decoder.config.variant, freeze_encoder=True, config=config.to_dict(),
        epoch_loss=epoch_loss, val_iou=val_iou,
        encoder_fingerprint_before=before, encoder_fingerprint_after=parameter_fingerprint(encoder.model),
        decoder_fingerprint=parameter_fingerprint(decoder),
        parameters=parameter_counts(decoder, encoder.model), seed=config.seed,
        dataset_hash=dataset_hash, n_train=len(tr_idx), n_val=len(va_idx),
    )
    if out_dir is not None:
        out = Path(out_dir)
        save_decoder(decoder, before, out / "decoder.safetensors",
                     {"dataset_hash": dataset_hash, "seed": config.seed})
        report.checkpoint = "decoder.safetensors"
    report.wall_clock_s = time.perf_counter() - t0
    if out_dir is not None:
        report.write(Path(out_dir) / "train_report.json")
    return decoder, report


def _validate_cached(decoder, cache: FeatureCache, idx) -> float:
    if len(idx) == 0:
        return float("nan")
    decoder.eval()
    scores = []
    with torch.no_grad():
        for i in range(0, len(idx), 64):
            projs, q, gt = cache.batch(idx[i:i + 64])
            scores += _mean_iou(_foreground(decoder(projs, q)), gt)
    return math.fsum(scores) / len(scores)


def train_full_finetune(encoder: EncoderWeights, decoder: Decoder, samples, config: TrainConfig,
                        out_dir=None, dataset_hash: str = ""):
    """Update encoder and decoder together. The encoder is modified in place."""
    if config.freeze_encoder:
        raise ValueError("train_full_finetune expects freeze_encoder=false")
    t0 = time.perf_counter()
    torch.manual_seed(derive_seed(config.seed, 109))
    encoder = unfreeze(encoder)
    model = encoder.model
    before = parameter_fingerprint(model)
    images = image_tensor(np.stack([s.image for s in samples]))
    tokens = model.tokenizer.batch([s.query.text for s in samples])
    gts = torch.from_numpy(np.stack([s.gt_mask for s in samples]).astype(np.float32))
    tr_idx, va_idx = validation_split(len(samples), config.val_fraction, config.seed)
    params = list(model.parameters()) + list(decoder.parameters())
    opt = _make_optimizer(params, config)
    steps_per_epoch = math.ceil(len(tr_idx) / config.batch_size)
    total = steps_per_epoch * config.epochs
    taps = decoder.config.taps

    def forward(idx):
        vp, _ = model.encode_image(images[idx], taps)
        return decoder(vp.projections, model.text_forward(tokens[idx]).vector)

    epoch_loss, val_iou, step = [], [], 0
    for epoch in range(config.epochs):
        model.train()
        decoder.train()
        order = batch_order(tr_idx, config.seed, epoch)
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            lr = lr_at_step(step, total, config)
            for g in opt.param_groups:
                g["lr"] = lr
            loss = pixel_bce(_foreground(forward(idx)), gts[idx])
            _check_finite(loss, epoch, b, lr)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            step += 1
        epoch_loss.append(math.fsum(losses) / len(losses))
        model.eval()
        decoder.eval()
        scores = []
        with torch.no_grad():
            for i in range(0, len(va_idx), 64):
                idx = va_idx[i:i + 64]
                scores += _mean_iou(_foreground(forward(idx)), gts[idx])
        val_iou.append(math.fsum(scores) / len(scores) if scores else float("nan"))
        log.info("full-finetune epoch %d loss %.4f val_iou %.4f", epoch, epoch_loss[-1], val_iou[-1])

    model.eval()
    decoder.eval()
    after = parameter_fingerprint(model)
    counts = parameter_counts(decoder, model)
    encoder.fingerprint = after
    report = TrainReport(
        variant=f"{decoder.config.variant}+full_finetune", freeze_encoder=False, config=config.to_dict(),
        epoch_loss=epoch_loss, val_iou=val_iou,
        encoder_fingerprint_before=before, encoder_fingerprint_after=after,
        decoder_fingerprint=parameter_fingerprint(decoder), parameters=counts, seed=config.seed,
        dataset_hash=dataset_hash, n_train=len(tr_idx), n_val=len(va_idx),
    )
    if out_dir is not None:
        out = Path(out_dir)
        save_encoder(encoder, out / "encoder.safetensors")
        save_decoder(decoder, after, out / "decoder.safetensors",
                     {"dataset_hash": dataset_hash, "seed": config.seed})
        report.encoder_checkpoint = "encoder.safetensors"
        report.checkpoint = "decoder.safetensors"
    report.wall_clock_s = time.perf_counter() - t0
    if out_dir is not None:
        report.write(out / "train_report.json")
    return (encoder, decoder), report
