"""Attribute sets, object matching and minimal referring queries."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

from .catalog import (
    ABSOLUTE_POSITIONS,
    COLORS,
    DEFAULT_CATALOG,
    RELATIONS,
    SHAPES,
    SIZES,
    UnknownNameError,
)
from .scene import Scene, SceneObject

# tie-break priority for minimal referring queries
FIELD_PRIORITY: tuple[str, ...] = ("color", "size", "shape", "position")
MAX_ATTRIBUTES = 4


class IndistinguishableError(ValueError):
    code = "indistinguishable"


@dataclass(frozen=True)
class AttributeSet:
    object_category: str
    color: str | None = None
    shape: str | None = None
    size: str | None = None
    position: str | None = None

    @property
    def attribute_count(self) -> int:
        return 1 + sum(getattr(self, f) is not None for f in FIELD_PRIORITY)

    def populated(self) -> tuple[str, ...]:
        return tuple(f for f in FIELD_PRIORITY if getattr(self, f) is not None)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "AttributeSet":
        return cls(**data)

    def __post_init__(self):
        if not self.object_category:
            raise ValueError("object_category is required")
        if self.attribute_count > MAX_ATTRIBUTES:
            raise ValueError(f"at most {MAX_ATTRIBUTES} attributes, got {self.attribute_count}")


def absolute_positions(obj: SceneObject, height: int, width: int) -> list[str]:
    """Absolute descriptors true for ``obj`` (image thirds on the object center)."""
    cx, cy = obj.center
    out = []
    col = 0 if cx < width / 3 else (2 if cx >= 2 * width / 3 else 1)
    row = 0 if cy < height / 3 else (2 if cy >= 2 * height / 3 else 1)
    if col == 0:
        out.append("left")
    if col == 2:
        out.append("right")
    if row == 0:
        out.append("top")
    if row == 2:
        out.append("bottom")
    if row == 1 and col == 1:
        out.append("center")
    return out


def _relation_holds(relation: str, obj: SceneObject, anchor: SceneObject) -> bool:
    (ox, oy), (ax, ay) = obj.center, anchor.center
    if relation == "left-of":
        return ox < ax
    if relation == "right-of":
        return ox > ax
    if relation == "above":
        return oy < ay
    if relation == "below":
        return oy > ay
    raise UnknownNameError("position", relation)


def resolve_anchor(scene: Scene, anchor: str) -> SceneObject:
    """Anchor given either as an object id or as a category unique in the scene."""
    if anchor.isdigit():
        return scene.object(int(anchor))
    matches = [o for o in scene.objects if o.category.name == anchor]
    if len(matches) != 1:
        raise ValueError(f"relational anchor {anchor!r} does not name a unique object")
    return matches[0]


def position_holds(scene: Scene, obj: SceneObject, position: str) -> bool:
    if position in ABSOLUTE_POSITIONS:
        return position in absolute_positions(obj, scene.height, scene.width)
    relation, sep, anchor = position.partition(":")
    if not sep or relation not in RELATIONS:
        raise UnknownNameError("position", position)
    target = resolve_anchor(scene, anchor)
    if target.id == obj.id:
        return False
    return _relation_holds(relation, obj, target)


def position_descriptors(scene: Scene, obj: SceneObject) -> list[str]:
    """All position values true for ``obj``, sorted.

    Relational values use category anchors and are only offered for anchors
    whose category is unique in the scene, so query text stays unambiguous.
    """
    values = absolute_positions(obj, scene.height, scene.width)
    counts: dict[str, int] = {}
    for o in scene.objects:
        counts[o.category.name] = counts.get(o.category.name, 0) + 1
    for anchor in scene.objects:
        name = anchor.category.name
        if anchor.id == obj.id or counts[name] != 1 or name == obj.category.name:
            continue
        for relation in RELATIONS:
            if _relation_holds(relation, obj, anchor):
                values.append(f"{relation}:{name}")
    return sorted(values)


def _validate(attrs: AttributeSet, catalog=DEFAULT_CATALOG):
    if attrs.object_category not in {c.name for c in catalog}:
        raise UnknownNameError("category", attrs.object_category)
    if attrs.color is not None and attrs.color not in COLORS:
        raise UnknownNameError("color", attrs.color)
    if attrs.shape is not None and attrs.shape not in SHAPES:
        raise UnknownNameError("shape", attrs.shape)
    if attrs.size is not None and attrs.size not in SIZES:
        raise UnknownNameError("size", attrs.size)


def object_matches(scene: Scene, obj: SceneObject, attrs: AttributeSet) -> bool:
    return (
        obj.category.name == attrs.object_category
        and (attrs.color is None or obj.color == attrs.color)
        and (attrs.shape is None or obj.shape_descriptor == attrs.shape)
        and (attrs.size is None or obj.size_class == attrs.size)
        and (attrs.position is None or position_holds(scene, obj, attrs.position))
    )


def match_objects(scene: Scene, attrs: AttributeSet, catalog=DEFAULT_CATALOG) -> set[int]:
    _validate(attrs, catalog)
    return {obj.id for obj in scene.objects if object_matches(scene, obj, attrs)}


def _field_values(scene: Scene, obj: SceneObject, name: str) -> list[str]:
    if name == "color":
        return [obj.color]
    if name == "size":
        return [obj.size_class]
    if name == "shape":
        return [obj.shape_descriptor]
    return position_descriptors(scene, obj)


def describing_sets(scene: Scene, target_id: int, n_attributes: int):
    """Yield every AttributeSet of the given count that is true of the target.

    Order: field combinations by priority (color > size > shape > position),
    then position values lexicographically.
    """
    obj = scene.object(target_id)
    for fields in itertools.combinations(FIELD_PRIORITY, n_attributes - 1):
        choices = [_field_values(scene, obj, f) for f in fields]
        for values in itertools.product(*choices):
            yield AttributeSet(obj.category.name, **dict(zip(fields, values)))


def unique_sets(scene: Scene, target_id: int, n_attributes: int) -> list[AttributeSet]:
    return [
        attrs
        for attrs in describing_sets(scene, target_id, n_attributes)
        if match_objects(scene, attrs) == {target_id}
    ]


def compute_mrq(scene: Scene, target_id: int) -> AttributeSet:
    """Smallest attribute set that singles out ``target_id``."""
    scene.object(target_id)
    for n in range(1, MAX_ATTRIBUTES + 1):
        for attrs in describing_sets(scene, target_id, n):
            if match_objects(scene, attrs) == {target_id}:
                return attrs
    raise IndistinguishableError(
        f"object {target_id} in scene {scene.id} cannot be singled out with {MAX_ATTRIBUTES} attributes"
    )
