"""Object categories, colors and attribute vocabularies used by the scene generator."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ObjectCategory:
    name: str
    glyph: str
    accent: tuple[float, float, float] | None = None  # texture colour; None keeps a shade of the fill
    seen: bool = True

    def __post_init__(self):
        if self.accent is not None:
            object.__setattr__(self, "accent", tuple(float(x) for x in self.accent))


# Each category is identified visually by a texture over the object (its glyph)
# drawn in a category accent colour; the outer silhouette carries the shape
# attribute and the fill carries the colour attribute, so all three vary
# independently. Accents avoid the fill palette so the two never coincide.
DEFAULT_CATALOG: tuple[ObjectCategory, ...] = (
    ObjectCategory("apple", "solid"),
    ObjectCategory("soda", "hstripes", (0.00, 0.85, 0.85)),
    ObjectCategory("cup", "vstripes", (1.00, 0.55, 0.75)),
    ObjectCategory("pen", "diag", (0.45, 0.25, 0.10)),
    ObjectCategory("box", "antidiag", (0.50, 0.00, 0.15)),
    ObjectCategory("bowl", "checker", (0.05, 0.05, 0.40)),
    ObjectCategory("multimeter", "dots", (0.95, 0.10, 0.85)),
    ObjectCategory("bottle", "rings", (0.00, 0.45, 0.45)),
    ObjectCategory("tape", "plaid", (0.80, 0.75, 0.45)),
    ObjectCategory("container", "wavy", (0.70, 0.60, 1.00), seen=False),
    ObjectCategory("spray", "frame", (0.45, 0.50, 0.10), seen=False),
    ObjectCategory("hardware", "bigdot", (1.00, 0.75, 0.55), seen=False),
)

PALETTE: dict[str, tuple[float, float, float]] = {
    "red": (0.86, 0.10, 0.10),
    "green": (0.10, 0.68, 0.20),
    "blue": (0.15, 0.30, 0.92),
    "yellow": (0.96, 0.86, 0.10),
    "orange": (1.00, 0.55, 0.05),
    "purple": (0.56, 0.20, 0.76),
    "white": (0.96, 0.96, 0.96),
    "black": (0.07, 0.07, 0.07),
}
COLORS: tuple[str, ...] = tuple(PALETTE)
SHAPES: tuple[str, ...] = ("round", "square", "triangular", "elongated", "star")
SIZES: tuple[str, ...] = ("small", "large")
ABSOLUTE_POSITIONS: tuple[str, ...] = ("left", "right", "top", "bottom", "center")
RELATIONS: tuple[str, ...] = ("left-of", "right-of", "above", "below")

BACKGROUND = (0.50, 0.47, 0.42)
LIGHTING: dict[str, float] = {"dark": 0.55, "dim": 0.78, "bright": 1.0}
SIZE_RADIUS: dict[str, float] = {"small": 10.0, "large": 14.0}


class UnknownNameError(ValueError):
    """Raised for a category/color/shape/size/position outside the lexicon."""

    def __init__(self, kind: str, value: str):
        super().__init__(f"unknown {kind} name: {value!r}")
        self.kind = kind
        self.value = value


def catalog_by_name(catalog=DEFAULT_CATALOG) -> dict[str, ObjectCategory]:
    names = [c.name for c in catalog]
    if len(set(names)) != len(names):
        raise ValueError("category names must be unique within a catalog")
    return {c.name: c for c in catalog}


def validate_catalog(catalog=DEFAULT_CATALOG, min_categories=10, min_unseen=3):
    catalog_by_name(catalog)
    if len(catalog) < min_categories:
        raise ValueError(f"catalog needs >= {min_categories} categories, got {len(catalog)}")
    unseen = sum(1 for c in catalog if not c.seen)
    if unseen < min_unseen:
        raise ValueError(f"catalog needs >= {min_unseen} held-out categories, got {unseen}")


def seen_categories(catalog=DEFAULT_CATALOG) -> list[str]:
    return [c.name for c in catalog if c.seen]


def unseen_categories(catalog=DEFAULT_CATALOG) -> list[str]:
    return [c.name for c in catalog if not c.seen]
