"""Contrastive pretraining of the dual encoder on synthetic image/caption pairs.

Two contrastive terms are optimized together:

* image level: class-token embedding vs the image caption (the usual CLIP loss);
* region level: each object's patch tokens, pooled under its mask, vs a short
  caption of that object. Partial captions ("a red apple") can describe several
  regions in a batch, so this term counts every matching region as a positive.

The region term is what makes individual patch tokens carry category and shape;
with the image-level loss alone a model this small solves retrieval from the class
token and leaves patches nearly colour-only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..scenegen.attributes import absolute_positions
from ..scenegen.catalog import COLORS, DEFAULT_CATALOG, SHAPES, SIZES, catalog_by_name
from ..scenegen.dataset import derive_seed
from ..scenegen.grammar import LEADS, SHAPE_WORDS, SIZE_WORDS, position_phrase
from ..scenegen.scene import PlacementError, SceneConfig, assemble_scene, generate_scene, render
from .model import DualEncoder, EncoderConfig, EncoderWeights, image_tensor

log = logging.getLogger(__name__)


class ContrastiveBatchError(ValueError):
    """In-batch contrastive loss needs at least two pairs."""


@dataclass(frozen=True)
class PretrainConfig:
    n_pairs: int = 3000
    single_object_fraction: float = 0.3
    max_objects: int = 4
    attribute_dropout: float = 0.3
    twin_fraction: float = 0.5
    region_weight: float = 1.0
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    min_lr: float = 1e-5
    warmup_steps: int = 50
    weight_decay: float = 0.05
    text_provenance: str = "joint"  # or "disjoint"
    mlm_mask_prob: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 16:
            raise ContrastiveBatchError(f"batch_size must be >= 16, got {self.batch_size}")
        if self.text_provenance not in ("joint", "disjoint"):
            raise ValueError(f"text_provenance must be joint or disjoint, got {self.text_provenance!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Region:
    weights: np.ndarray  # (n_patches,) share of the object's visible pixels in each patch
    caption: str
    attributes: tuple  # (category, color, shape, size), None where the caption omits it


@dataclass
class PretrainCorpus:
    pairs: list  # (image, caption)
    families: list = field(default_factory=list)  # lists of pair indices kept in one batch
    regions: list = field(default_factory=list)  # per pair, list of Region

    def __len__(self):
        return len(self.pairs)


def _words(obj, template_id, keep):
    size, color, shape = keep
    out = []
    if size:
        out.append(SIZE_WORDS[obj.size_class][template_id % len(SIZE_WORDS[obj.size_class])])
    if color:
        out.append(obj.color)
    if shape:
        out.append(SHAPE_WORDS[obj.shape_descriptor][template_id % len(SHAPE_WORDS[obj.shape_descriptor])])
    out.append(obj.category.name)
    return out


def _keep(rng, dropout):
    if rng.random() >= dropout:
        return (True, True, True)
    return tuple(bool(rng.random() >= 0.5) for _ in range(3))


def caption_for(scene, rng: np.random.Generator, attribute_dropout: float = 0.0) -> str:
    """Single-object scenes get a query-style description, larger scenes a list of every object."""
    if len(scene.objects) == 1:
        obj = scene.objects[0]
        template_id = int(rng.integers(len(LEADS)))
        keep = _keep(rng, attribute_dropout)
        words = _words(obj, template_id, keep)
        positions = absolute_positions(obj, scene.height, scene.width)
        if all(keep) or rng.random() < 0.8:
            words.append(position_phrase(positions[int(rng.integers(len(positions)))], template_id))
        return LEADS[template_id].format(np=" ".join(words))
    parts = []
    for obj in sorted(scene.objects, key=lambda o: o.center[0]):
        parts.append("a " + " ".join(_words(obj, 0, (True, True, True))))
    return " and ".join(parts)


def regions_for(scene, rng: np.random.Generator, patch: int, attribute_dropout: float) -> list[Region]:
    out = []
    g = scene.height // patch
    for obj in scene.objects:
        cover = obj.gt_mask.reshape(g, patch, g, patch).sum(axis=(1, 3)).astype(np.float32).ravel()
        keep = _keep(rng, attribute_dropout)
        template_id = int(rng.integers(len(LEADS)))
        attrs = (
            obj.category.name,
            obj.color if keep[1] else None,
            obj.shape_descriptor if keep[2] else None,
            obj.size_class if keep[0] else None,
        )
        out.append(Region(cover / cover.sum(), "a " + " ".join(_words(obj, template_id, keep)), attrs))
    return out


def _twin(scene, rng, names, by_name):
    """Same layout and attributes, one object relabelled with another category."""
    objs = list(scene.objects)
    j = int(rng.integers(len(objs)))
    taken = {o.category.name for o in objs}
    options = [n for n in names if n not in taken]
    objs[j] = replace(objs[j], category=by_name[options[int(rng.integers(len(options)))]], gt_mask=None)
    return assemble_scene(objs, scene.height, scene.width, scene_id=scene.id + "-twin",
                          clutter_level=scene.clutter_level, lighting=scene.lighting,
                          master_seed=scene.master_seed)


def make_corpus(n: int, seed: int, catalog=DEFAULT_CATALOG, image_size: int = 128, patch_size: int = 16,
                single_object_fraction: float = 0.3, max_objects: int = 4,
                attribute_dropout: float = 0.0, twin_fraction: float = 0.0) -> PretrainCorpus:
    """Pairs over every catalog category, seen and held-out alike.

    With probability ``twin_fraction`` a scene is followed by its twin differing
    only in one object's category; twins form a family and share a batch.
    """
    names = tuple(c.name for c in catalog)
    by_name = catalog_by_name(catalog)
    corpus = PretrainCorpus([], [], [])
    i = 0
    while len(corpus) < n:
        rng = np.random.default_rng(derive_seed(seed, 7, i))
        i += 1
        k = 1 if rng.random() < single_object_fraction else int(rng.integers(2, max_objects + 1))
        cats = tuple(rng.choice(names, size=k, replace=False).tolist())
        cfg = SceneConfig(image_size=image_size, clutter_level=1, categories=cats,
                          palette=COLORS, shapes=SHAPES, sizes=SIZES)
        try:
            scene = generate_scene(cfg, int(rng.integers(2**31)), catalog, scene_id=f"pre-{i}")
        except PlacementError:
            continue
        scenes = [scene]
        if rng.random() < twin_fraction and len(corpus) + 1 < n:
            scenes.append(_twin(scene, rng, names, by_name))
        family = []
        for sc in scenes:
            family.append(len(corpus))
            corpus.pairs.append((render(sc)[0], caption_for(sc, rng, attribute_dropout)))
            corpus.regions.append(regions_for(sc, rng, patch_size, attribute_dropout))
        corpus.families.append(family)
    return corpus


def make_pairs(n: int, seed: int, **kw) -> list[tuple[np.ndarray, str]]:
    return make_corpus(n, seed, **kw).pairs


def contrastive_loss(img: torch.Tensor, txt: torch.Tensor, logit_scale: torch.Tensor) -> torch.Tensor:
    if img.shape[0] < 2:
        raise ContrastiveBatchError("contrastive loss undefined for a batch of 1")
    logits = logit_scale.exp().clamp(max=100) * img @ txt.T
    labels = torch.arange(img.shape[0])
    return 0.5 * (F.cross_entropy(logits, labels) + F.cross_entropy(logits.T, labels))


def multi_positive_loss(logits: torch.Tensor, positive: torch.Tensor) -> torch.Tensor:
    """Symmetric InfoNCE where ``positive[i, j]`` marks every acceptable match."""
    neg_inf = torch.finfo(logits.dtype).min
    pos = logits.masked_fill(~positive, neg_inf)
    rows = (logits.logsumexp(1) - pos.logsumexp(1)).mean()
    cols = (logits.logsumexp(0) - pos.logsumexp(0)).mean()
    return 0.5 * (rows + cols)


def _region_matches(attrs: list[tuple]) -> torch.Tensor:
    """positive[i, j]: caption j (with omitted fields) fits region i's full attributes."""
    n = len(attrs)
    out = torch.zeros(n, n, dtype=torch.bool)
    for j, cj in enumerate(attrs):
        for i, ci in enumerate(attrs):
            out[i, j] = all(v is None or v == ci[f] for f, v in enumerate(cj))
    return out


def retrieval_top1(model: DualEncoder, images, captions) -> float:
    """Fraction of captions whose best-scoring image is their own."""
    with torch.no_grad():
        was = model.training
        model.eval()
        _, g = model.vision_forward(image_tensor(images), taps=())
        t = model.text_forward(model.tokenizer.batch(captions)).vector
        model.train(was)
    return float((t @ g.T).argmax(dim=1).eq(torch.arange(len(captions))).float().mean())


def _schedule(step, total, cfg: PretrainConfig) -> float:
    if step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    t = (step - cfg.warmup_steps) / max(1, total - cfg.warmup_steps)
    return cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1 + math.cos(math.pi * min(t, 1.0)))


def _optimizer(params, cfg: PretrainConfig):
    params = [p for p in params if p.requires_grad]
    decay = [p for p in params if p.ndim >= 2]
    rest = [p for p in params if p.ndim < 2]
    return torch.optim.AdamW(
        [{"params": decay, "weight_decay": cfg.weight_decay}, {"params": rest, "weight_decay": 0.0}],
        lr=cfg.lr,
    )


def _epoch_order(n, seed, epoch, families=None):
    """Shuffled pair indices; members of a family stay adjacent."""
    families = families or [[i] for i in range(n)]
    perm = np.random.default_rng(derive_seed(seed, 11, epoch)).permutation(len(families))
    return np.array([i for f in perm for i in families[f]])


class _Batcher:
    """Tensors for the whole corpus, sliced per batch."""

    def __init__(self, model: DualEncoder, corpus: PretrainCorpus):
        tok = model.tokenizer
        self.images = image_tensor(np.stack([p[0] for p in corpus.pairs]))
        self.tokens = tok.batch([p[1] for p in corpus.pairs])
        self.regions = corpus.regions or [[] for _ in corpus.pairs]
        self.region_tokens = [tok.batch([r.caption for r in rs]) if rs else None for rs in self.regions]

    def region_batch(self, idx):
        weights, tokens, attrs, owner = [], [], [], []
        for k, i in enumerate(idx):
            for r in self.regions[i]:
                weights.append(torch.from_numpy(r.weights))
                attrs.append(r.attributes)
                owner.append(k)
            if self.regions[i]:
                tokens.append(self.region_tokens[i])
        if len(weights) < 2:
            return None
        return torch.stack(weights), torch.cat(tokens), attrs, torch.tensor(owner)


def _step_loss(model: DualEncoder, data: _Batcher, idx, cfg: PretrainConfig) -> torch.Tensor:
    _, g, final = model.vision_forward(data.images[idx], taps=(), final_tokens=True)
    loss = contrastive_loss(g, model.text_forward(data.tokens[idx]).vector, model.logit_scale)
    rb = data.region_batch(idx) if cfg.region_weight > 0 else None
    if rb is not None:
        weights, tokens, attrs, owner = rb
        patches = model.vis_ln_post(final[:, 1:])  # (B, P, w)
        pooled = torch.einsum("rp,rpw->rw", weights, patches[owner])
        regions = F.normalize(model.vis_proj(pooled), dim=-1)
        texts = model.text_forward(tokens).vector
        logits = model.logit_scale.exp().clamp(max=100) * regions @ texts.T
        loss = loss + cfg.region_weight * multi_positive_loss(logits, _region_matches(attrs))
    return loss


def _contrastive_epochs(model, data: _Batcher, cfg: PretrainConfig, params, tag: str,
                        families=None) -> list[float]:
    opt = _optimizer(params, cfg)
    n = len(data.images)
    steps_per_epoch = n // cfg.batch_size
    total = steps_per_epoch * cfg.epochs
    losses, step = [], 0
    model.train()
    for epoch in range(cfg.epochs):
        order = _epoch_order(n, cfg.seed, epoch, families)
        running = []
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            for group in opt.param_groups:
                group["lr"] = _schedule(step, total, cfg)
            loss = _step_loss(model, data, idx, cfg)
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite {tag} loss at epoch {epoch} batch {b}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            running.append(loss.item())
            step += 1
        losses.append(math.fsum(running) / len(running))
        log.info("%s epoch %d loss %.4f", tag, epoch, losses[-1])
    return losses


def _mlm_epochs(model: DualEncoder, tokens, cfg: PretrainConfig) -> list[float]:
    """Masked-token objective on the text tower alone."""
    tok = model.tokenizer
    head = nn.Linear(model.config.model_width, len(tok))
    params = model.text_parameters() + list(head.parameters())
    opt = _optimizer(params, cfg)
    rng = torch.Generator().manual_seed(derive_seed(cfg.seed, 13))
    n = len(tokens)
    steps_per_epoch = n // cfg.batch_size
    total = steps_per_epoch * cfg.epochs
    losses, step = [], 0
    for epoch in range(cfg.epochs):
        order = _epoch_order(n, cfg.seed + 1, epoch)
        running = []
        for b in range(steps_per_epoch):
            batch = tokens[order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            content = batch > tok.eos_id
            chosen = (torch.rand(batch.shape, generator=rng) < cfg.mlm_mask_prob) & content
            chosen[:, 0] |= ~chosen.any(dim=1)
            inp = batch.masked_fill(chosen, tok.mask_id)
            for group in opt.param_groups:
                group["lr"] = _schedule(step, total, cfg)
            logits = head(model.text_hidden(inp))
            loss = F.cross_entropy(logits[chosen], batch[chosen])
            opt.zero_grad()
            loss.backward()
            opt.step()
            running.append(loss.item())
            step += 1
        losses.append(math.fsum(running) / len(running))
        log.info("mlm epoch %d loss %.4f", epoch, losses[-1])
    return losses


def contrastive_pretrain(pairs, config: EncoderConfig, seed: int = 0,
                         pretrain: PretrainConfig | None = None, heldout=None) -> EncoderWeights:
    """Train a fresh encoder on ``pairs`` (a list of (image, caption) or a PretrainCorpus).

    ``heldout`` pairs (32 is typical) are scored for caption->image retrieval afterwards.
    """
    cfg = pretrain or PretrainConfig(seed=seed)
    corpus = pairs if isinstance(pairs, PretrainCorpus) else PretrainCorpus(list(pairs))
    if len(corpus) < cfg.batch_size:
        raise ContrastiveBatchError(f"{len(corpus)} pairs cannot fill a batch of {cfg.batch_size}")
    torch.manual_seed(derive_seed(seed, 3))
    model = DualEncoder(config)
    data = _Batcher(model, corpus)

    metrics: dict = {"pretrain": cfg.to_dict(), "n_pairs": len(corpus)}
    with torch.no_grad():
        k = cfg.batch_size
        _, g = model.vision_forward(data.images[:k], taps=())
        metrics["initial_loss"] = contrastive_loss(g, model.text_forward(data.tokens[:k]).vector,
                                                   model.logit_scale).item()

    if cfg.text_provenance == "joint":
        metrics["epoch_loss"] = _contrastive_epochs(model, data, cfg, model.parameters(), "clip",
                                                     corpus.families)
    else:
        # vision learns against a frozen, randomly initialized text tower
        text = model.text_parameters()
        for p in text:
            p.requires_grad_(False)
        metrics["epoch_loss"] = _contrastive_epochs(
            model, data, cfg, model.vision_parameters() + [model.logit_scale], "vision", corpus.families
        )
        for p in text:
            p.requires_grad_(True)
        # then the text tower is replaced by one trained only on masked tokens
        torch.manual_seed(derive_seed(seed, 5))
        fresh = DualEncoder(config)
        model.tok_embed.load_state_dict(fresh.tok_embed.state_dict())
        model.txt_pos.data.copy_(fresh.txt_pos.data)
        model.txt_blocks.load_state_dict(fresh.txt_blocks.state_dict())
        model.txt_ln.load_state_dict(fresh.txt_ln.state_dict())
        metrics["mlm_epoch_loss"] = _mlm_epochs(model, data.tokens, cfg)

    model.eval()
    if heldout:
        imgs = np.stack([p[0] for p in heldout])
        caps = [p[1] for p in heldout]
        metrics["heldout_retrieval"] = retrieval_top1(model, imgs, caps)
        shuffled = np.random.default_rng(derive_seed(seed, 17)).permutation(len(caps))
        metrics["shuffled_retrieval"] = retrieval_top1(model, imgs, [caps[i] for i in shuffled])
    weights = EncoderWeights(model=model, frozen=False, metrics=metrics)
    weights.refresh_fingerprint()
    return weights
