"""Seen/unseen referring-segmentation splits built from synthetic scenes."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import Executor
from dataclasses import asdict, dataclass, field

import numpy as np

from .attributes import IndistinguishableError, compute_mrq, unique_sets
from .catalog import DEFAULT_CATALOG, ObjectCategory
from .grammar import ReferringQuery, generate_query, lexicon
from .scene import PlacementError, Scene, SceneConfig, generate_scene, render

SPLITS: tuple[str, ...] = ("train", "test_seen", "test_unseen")


class InfeasibleMixtureError(ValueError):
    code = "infeasible-mixture"

    def __init__(self, split: str, bucket: int, index: int):
        super().__init__(f"could not realize attribute bucket A={bucket} for {split}[{index}]")
        self.split = split
        self.bucket = bucket
        self.index = index


@dataclass
class LabeledSample:
    sample_id: str
    split: str
    image: np.ndarray  # uint8 H x W x 3
    query: ReferringQuery
    gt_mask: np.ndarray  # bool H x W
    scene: Scene

    @property
    def attribute_count(self) -> int:
        return self.query.attributes.attribute_count

    def record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "split": self.split,
            **self.query.to_dict(),
            "scene": self.scene.to_dict(),
        }

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.record(), sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.image).tobytes())
        h.update(self.scene.label_map().astype("<i2").tobytes())
        return h.hexdigest()

    def equals(self, other: "LabeledSample") -> bool:
        return (
            self.record() == other.record()
            and np.array_equal(self.image, other.image)
            and np.array_equal(self.gt_mask, other.gt_mask)
            and all(
                np.array_equal(a.gt_mask, b.gt_mask)
                for a, b in zip(self.scene.objects, other.scene.objects)
            )
        )


@dataclass(frozen=True)
class DatasetConfig:
    n_train: int = 800
    n_test_seen: int = 200
    n_test_unseen: int = 200
    unseen_categories: tuple[str, ...] = ("container", "spray", "hardware")
    categories_per_scene: int = 3
    # probability of 1/2/3 instances per category when the bucket allows clutter
    clutter_weights: tuple[float, ...] = (0.2, 0.4, 0.4)
    attribute_mixture: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    image_size: int = 128
    distractor_similarity: float = 0.5
    min_visible_fraction: float = 0.5
    unseen_extra_seen_categories: int = 1
    max_attempts: int = 60
    master_seed: int = 0

    def counts(self) -> dict[str, int]:
        return {"train": self.n_train, "test_seen": self.n_test_seen, "test_unseen": self.n_test_unseen}


@dataclass
class DatasetSplit:
    train: list[LabeledSample]
    test_seen: list[LabeledSample]
    test_unseen: list[LabeledSample]
    catalog: tuple[ObjectCategory, ...] = DEFAULT_CATALOG
    lexicons: dict = field(default_factory=dict)
    config: DatasetConfig = field(default_factory=DatasetConfig)

    def split(self, name: str) -> list[LabeledSample]:
        if name not in SPLITS:
            raise KeyError(name)
        return getattr(self, name)

    def samples(self):
        for name in SPLITS:
            yield from self.split(name)

    def dataset_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(asdict(self.config), sort_keys=True).encode())
        for sample in self.samples():
            h.update(sample.digest().encode())
        return h.hexdigest()

    def equals(self, other: "DatasetSplit") -> bool:
        if self.config != other.config or tuple(self.catalog) != tuple(other.catalog):
            return False
        if self.lexicons != other.lexicons:
            return False
        for name in SPLITS:
            a, b = self.split(name), other.split(name)
            if len(a) != len(b) or not all(x.equals(y) for x, y in zip(a, b)):
                return False
        return True


def derive_seed(master_seed: int, *key: int) -> int:
    """Counter-based per-item seed; independent of generation order."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(int(k) for k in key))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> 1)


def bucket_schedule(n: int, mixture, seed: int) -> list[int]:
    """Attribute-count bucket per sample: largest-remainder counts, seeded shuffle."""
    weights = np.asarray(mixture, dtype=float)
    if weights.sum() <= 0 or (weights < 0).any():
        raise ValueError("attribute_mixture must be non-negative with positive mass")
    weights = weights / weights.sum()
    raw = weights * n
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    buckets = np.repeat(np.arange(1, len(weights) + 1), counts)
    np.random.default_rng(seed).shuffle(buckets)
    return [int(b) for b in buckets]


def _split_categories(config: DatasetConfig, catalog) -> tuple[list[str], list[str]]:
    names = {c.name for c in catalog}
    unseen = list(config.unseen_categories)
    for name in unseen:
        if name not in names:
            raise ValueError(f"unseen category {name!r} not in catalog")
    seen = [c.name for c in catalog if c.name not in unseen]
    return seen, unseen


def _make_sample(args) -> LabeledSample:
    config, catalog, split_index, split, index, bucket = args
    seen, unseen = _split_categories(config, catalog)
    targets_from = unseen if split == "test_unseen" else seen
    for attempt in range(config.max_attempts):
        seed = derive_seed(config.master_seed, split_index, index, attempt)
        rng = np.random.default_rng(seed)
        if bucket == 1:
            level = 1
        else:
            w = np.asarray(config.clutter_weights, dtype=float)
            level = int(rng.choice(np.arange(1, len(w) + 1), p=w / w.sum()))
        k = config.categories_per_scene
        if split == "test_unseen":
            picked = list(rng.permutation(unseen)[: min(k, len(unseen))])
            extra = config.unseen_extra_seen_categories
            picked += list(rng.permutation(seen)[:extra])
        else:
            picked = list(rng.permutation(seen)[:k])
        scene_cfg = SceneConfig(
            image_size=config.image_size,
            clutter_level=level,
            categories=tuple(str(c) for c in picked),
            distractor_similarity=config.distractor_similarity,
            min_visible_fraction=config.min_visible_fraction,
        )
        try:
            scene_seed = derive_seed(config.master_seed, split_index, index, attempt, 1)
            scene = generate_scene(scene_cfg, scene_seed, catalog, scene_id=f"{split}-{index:05d}")
        except PlacementError:
            continue
        exact, looser = [], []
        for obj in scene.objects:
            if obj.category.name not in targets_from:
                continue
            try:
                mrq = compute_mrq(scene, obj.id)
            except IndistinguishableError:
                continue
            if mrq.attribute_count == bucket:
                exact.append(obj.id)
            elif mrq.attribute_count < bucket and unique_sets(scene, obj.id, bucket):
                looser.append(obj.id)
        pool = exact or looser
        if not pool:
            continue
        target = pool[int(rng.integers(len(pool)))]
        query = generate_query(scene, target, bucket, rng)
        image, masks = render(scene)
        return LabeledSample(f"{split}-{index:05d}", split, image, query, masks[target], scene)
    raise InfeasibleMixtureError(split, bucket, index)


def build_dataset(
    config: DatasetConfig,
    catalog: tuple[ObjectCategory, ...] = DEFAULT_CATALOG,
    executor: Executor | None = None,
) -> DatasetSplit:
    """Generate train / test_seen / test_unseen splits.

    Every sample is a pure function of ``(config, split, index)``; pass an
    executor to generate in parallel, results are merged by index.
    """
    seen, unseen = _split_categories(config, catalog)
    if not seen or not unseen:
        raise ValueError("need at least one seen and one unseen category")
    jobs = []
    for split_index, split in enumerate(SPLITS):
        n = config.counts()[split]
        if n < 1:
            raise ValueError(f"split {split} must be nonempty")
        buckets = bucket_schedule(n, config.attribute_mixture, derive_seed(config.master_seed, 99, split_index))
        jobs.extend((config, catalog, split_index, split, i, b) for i, b in enumerate(buckets))
    mapper = executor.map if executor is not None else map
    samples = list(mapper(_make_sample, jobs))
    by_split = {name: [s for s in samples if s.split == name] for name in SPLITS}
    for name in SPLITS:
        by_split[name].sort(key=lambda s: s.sample_id)
    return DatasetSplit(
        by_split["train"],
        by_split["test_seen"],
        by_split["test_unseen"],
        tuple(catalog),
        lexicon(catalog),
        config,
    )
