"""Scene generation and rasterization.

Scenes are pure functions of ``(SceneConfig, seed)``: object attributes and
placements are drawn from a single ``numpy.random.Generator`` and every raster
is recomputed from the stored object parameters.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .catalog import (
    BACKGROUND,
    COLORS,
    DEFAULT_CATALOG,
    LIGHTING,
    PALETTE,
    SHAPES,
    SIZE_RADIUS,
    SIZES,
    ObjectCategory,
    UnknownNameError,
    catalog_by_name,
)

# half-extent of each silhouette in units of the object radius
_EXTENT = {"round": 1.0, "square": 0.86, "triangular": 1.0, "elongated": 1.3, "star": 1.05}


class PlacementError(RuntimeError):
    """Objects could not be placed within the retry budget."""


@dataclass
class SceneObject:
    id: int
    category: ObjectCategory
    color: str
    shape_descriptor: str
    size_class: str
    center: tuple[float, float]  # (x, y) in pixels
    z_order: int
    radius: float
    gt_mask: np.ndarray | None = field(default=None, repr=False, compare=False)

    def params(self) -> dict:
        return {
            "id": self.id,
            "category": self.category.name,
            "color": self.color,
            "shape": self.shape_descriptor,
            "size": self.size_class,
            "center": [float(self.center[0]), float(self.center[1])],
            "z_order": int(self.z_order),
            "radius": float(self.radius),
        }


@dataclass
class Scene:
    id: str
    height: int
    width: int
    objects: list[SceneObject]
    clutter_level: int
    lighting: str
    master_seed: int

    def object(self, obj_id: int) -> SceneObject:
        for obj in self.objects:
            if obj.id == obj_id:
                return obj
        raise KeyError(f"no object with id {obj_id} in scene {self.id}")

    def label_map(self) -> np.ndarray:
        """int16 raster: -1 background, otherwise the visible object id."""
        labels = np.full((self.height, self.width), -1, dtype=np.int16)
        for obj in self.objects:
            labels[obj.gt_mask] = obj.id
        return labels

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "height": self.height,
            "width": self.width,
            "clutter_level": self.clutter_level,
            "lighting": self.lighting,
            "master_seed": int(self.master_seed),
            "objects": [o.params() for o in self.objects],
        }

    def to_bytes(self) -> bytes:
        header = json.dumps(self.to_dict(), sort_keys=True).encode()
        return header + b"\n" + self.label_map().astype("<i2").tobytes()

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


@dataclass(frozen=True)
class SceneConfig:
    image_size: int = 128
    clutter_level: int = 1
    categories: tuple[str, ...] = ("apple", "soda", "cup", "pen", "box")
    palette: tuple[str, ...] = COLORS
    shapes: tuple[str, ...] = SHAPES
    sizes: tuple[str, ...] = SIZES
    lighting: str | None = None  # None draws one of LIGHTING per scene
    distractor_similarity: float = 0.0
    min_visible_fraction: float = 0.5
    max_retries: int = 200
    placement_candidates: int = 4


def _local_coords(radius, center, height, width, extent):
    cx, cy = center
    reach = extent * radius + 1.0
    x0, x1 = max(int(math.floor(cx - reach)), 0), min(int(math.ceil(cx + reach)) + 1, width)
    y0, y1 = max(int(math.floor(cy - reach)), 0), min(int(math.ceil(cy + reach)) + 1, height)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dx = (xs + 0.5 - cx) / radius
    dy = (ys + 0.5 - cy) / radius
    return (slice(y0, y1), slice(x0, x1)), dx, dy


def _inside(shape: str, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    if shape == "round":
        return dx * dx + dy * dy <= 1.0
    if shape == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= 0.86
    if shape == "triangular":
        return (dy <= 0.75) & (np.abs(dx) <= (dy + 0.95) / 1.7)
    if shape == "elongated":
        return (np.abs(dx) <= 1.3) & (np.abs(dy) <= 0.5)
    if shape == "star":
        rho = np.hypot(dx, dy)
        theta = np.arctan2(dy, dx)
        return rho <= 0.55 + 0.5 * (0.5 + 0.5 * np.cos(5.0 * (theta + np.pi / 2)))
    raise UnknownNameError("shape", shape)


def _glyph(glyph: str, shape: str, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Category texture over the object, in units of the object radius (about a third of its area)."""
    rho = np.hypot(dx, dy)
    if glyph == "solid":
        return np.zeros_like(dx, dtype=bool)
    if glyph == "hstripes":
        return np.mod(dy, 0.5) < 0.16
    if glyph == "vstripes":
        return np.mod(dx, 0.5) < 0.16
    if glyph == "diag":
        return np.mod(dx + dy, 0.6) < 0.2
    if glyph == "antidiag":
        return np.mod(dx - dy, 0.6) < 0.2
    if glyph == "checker":
        return (np.mod(dx, 0.6) < 0.3) & (np.mod(dy, 0.6) < 0.3)
    if glyph == "dots":
        return (np.mod(dx, 0.5) - 0.25) ** 2 + (np.mod(dy, 0.5) - 0.25) ** 2 < 0.03
    if glyph == "rings":
        return np.mod(rho, 0.44) < 0.14
    if glyph == "plaid":
        return (np.mod(dx, 0.5) < 0.08) | (np.mod(dy, 0.5) < 0.08)
    if glyph == "wavy":
        return np.mod(dy + 0.15 * np.sin(dx * 9.0), 0.6) < 0.2
    if glyph == "frame":
        return ~_inside(shape, dx / 0.78, dy / 0.78)
    if glyph == "bigdot":
        return rho < 0.5
    raise ValueError(f"unknown glyph {glyph!r}")


def footprint(shape: str, radius: float, center, height: int, width: int) -> np.ndarray:
    """Unoccluded silhouette of one object as a full-size boolean raster."""
    window, dx, dy = _local_coords(radius, center, height, width, _EXTENT[shape])
    out = np.zeros((height, width), dtype=bool)
    out[window] = _inside(shape, dx, dy)
    return out


def _mark_color(rgb):
    rgb = np.asarray(rgb)
    luminance = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
    if luminance > 0.45:
        return rgb * 0.35
    return rgb * 0.3 + 0.55


def _paint(objects: list[SceneObject], height: int, width: int, lighting: str):
    image = np.empty((height, width, 3), dtype=np.float64)
    image[:] = BACKGROUND
    labels = np.full((height, width), -1, dtype=np.int16)
    for obj in sorted(objects, key=lambda o: o.z_order):
        window, dx, dy = _local_coords(obj.radius, obj.center, height, width, _EXTENT[obj.shape_descriptor])
        inside = _inside(obj.shape_descriptor, dx, dy)
        mark = inside & _glyph(obj.category.glyph, obj.shape_descriptor, dx, dy)
        fill = np.asarray(PALETTE[obj.color])
        patch = image[window]
        patch[inside] = fill
        patch[mark] = _mark_color(fill) if obj.category.accent is None else obj.category.accent
        labels[window][inside] = obj.id
    image *= LIGHTING[lighting]
    rgb = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    return rgb, labels


def assemble_scene(
    objects: list[SceneObject],
    height: int = 128,
    width: int = 128,
    *,
    scene_id: str = "scene",
    clutter_level: int = 1,
    lighting: str = "bright",
    master_seed: int = 0,
) -> Scene:
    """Compute visible masks for explicitly specified objects.

    Higher ``z_order`` occludes lower. Raises ``ValueError`` if any object ends up
    fully hidden.
    """
    if lighting not in LIGHTING:
        raise UnknownNameError("lighting", lighting)
    _, labels = _paint(objects, height, width, lighting)
    placed = []
    for obj in objects:
        mask = labels == obj.id
        if not mask.any():
            raise ValueError(f"object {obj.id} is fully occluded or outside the image")
        placed.append(replace(obj, gt_mask=mask))
    return Scene(scene_id, height, width, placed, clutter_level, lighting, master_seed)


def render(scene: Scene) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Rasterize a scene to an RGB uint8 image plus disjoint per-object masks."""
    image, labels = _paint(scene.objects, scene.height, scene.width, scene.lighting)
    masks = {obj.id: labels == obj.id for obj in scene.objects}
    return image, masks


def _draw_attributes(rng, config: SceneConfig, first: dict | None) -> dict:
    sim = config.distractor_similarity
    drawn = {}
    for key, options in (("color", config.palette), ("shape", config.shapes), ("size", config.sizes)):
        if first is not None and rng.random() < sim:
            drawn[key] = first[key]
        else:
            drawn[key] = options[int(rng.integers(len(options)))]
    return drawn


def generate_scene(
    config: SceneConfig,
    seed: int,
    catalog: tuple[ObjectCategory, ...] = DEFAULT_CATALOG,
    scene_id: str | None = None,
) -> Scene:
    by_name = catalog_by_name(catalog)
    for name in config.categories:
        if name not in by_name:
            raise UnknownNameError("category", name)
    for color in config.palette:
        if color not in PALETTE:
            raise UnknownNameError("color", color)
    if config.clutter_level < 1:
        raise ValueError("clutter_level must be >= 1")

    rng = np.random.default_rng(seed)
    size = config.image_size
    lighting = config.lighting
    if lighting is None:
        names = sorted(LIGHTING)
        lighting = names[int(rng.integers(len(names)))]

    specs = []
    for name in config.categories:
        first = None
        for _ in range(config.clutter_level):
            attrs = _draw_attributes(rng, config, first)
            first = first or attrs
            specs.append((by_name[name], attrs))

    n = len(specs)
    z_orders = rng.permutation(n)
    labels = np.full((size, size), -1, dtype=np.int16)
    areas = np.zeros(n)
    centers: list[tuple[float, float] | None] = [None] * n
    for idx in np.argsort(z_orders, kind="stable"):
        category, attrs = specs[idx]
        radius = SIZE_RADIUS[attrs["size"]]
        margin = math.ceil(_EXTENT[attrs["shape"]] * radius) + 1
        for _ in range(config.max_retries):
            best = None
            for _ in range(max(1, config.placement_candidates)):
                center = (float(rng.uniform(margin, size - margin)), float(rng.uniform(margin, size - margin)))
                fp = footprint(attrs["shape"], radius, center, size, size)
                overlap = int((labels[fp] >= 0).sum())
                if best is None or overlap < best[0]:
                    best = (overlap, center, fp)
            _, center, fp = best
            trial = labels.copy()
            trial[fp] = idx
            visible = np.bincount(trial[trial >= 0].ravel(), minlength=n)
            placed_ok = all(
                visible[j] >= config.min_visible_fraction * areas[j]
                for j in range(n)
                if centers[j] is not None
            )
            if placed_ok:
                labels = trial
                areas[idx] = fp.sum()
                centers[idx] = center
                break
        else:
            raise PlacementError(
                f"could not place object {idx} ({category.name}) after {config.max_retries} retries"
            )

    objects = [
        SceneObject(
            id=i,
            category=specs[i][0],
            color=specs[i][1]["color"],
            shape_descriptor=specs[i][1]["shape"],
            size_class=specs[i][1]["size"],
            center=centers[i],
            z_order=int(z_orders[i]),
            radius=SIZE_RADIUS[specs[i][1]["size"]],
        )
        for i in range(n)
    ]
    return assemble_scene(
        objects,
        size,
        size,
        scene_id=scene_id if scene_id is not None else f"scene-{seed}",
        clutter_level=config.clutter_level,
        lighting=lighting,
        master_seed=seed,
    )


def scene_from_dict(data: dict, catalog=DEFAULT_CATALOG, label_map: np.ndarray | None = None) -> Scene:
    """Rebuild a scene from ``Scene.to_dict`` output.

    When a stored label map is given the masks are taken from it verbatim;
    otherwise they are re-rasterized from the object parameters.
    """
    by_name = catalog_by_name(catalog)
    objects = [
        SceneObject(
            id=o["id"],
            category=by_name[o["category"]],
            color=o["color"],
            shape_descriptor=o["shape"],
            size_class=o["size"],
            center=(o["center"][0], o["center"][1]),
            z_order=o["z_order"],
            radius=o["radius"],
        )
        for o in data["objects"]
    ]
    if label_map is None:
        return assemble_scene(
            objects,
            data["height"],
            data["width"],
            scene_id=data["id"],
            clutter_level=data["clutter_level"],
            lighting=data["lighting"],
            master_seed=data["master_seed"],
        )
    objects = [replace(o, gt_mask=label_map == o.id) for o in objects]
    return Scene(
        data["id"], data["height"], data["width"], objects,
        data["clutter_level"], data["lighting"], data["master_seed"],
    )
