"""Template grammar for referring queries.

Text is a pure function of ``(template_id, AttributeSet)``. Synonyms are picked by
``template_id`` so the evalkit extractor can invert any generated query exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .attributes import AttributeSet, match_objects, unique_sets
from .catalog import ABSOLUTE_POSITIONS, COLORS, DEFAULT_CATALOG, RELATIONS, SHAPES, SIZES
from .scene import Scene

LEADS: tuple[str, ...] = (
    "grab the {np}",
    "give me the {np}",
    "where is the {np}?",
    "please grab the {np}",
    "pick up the {np}",
    "can you grab the {np}?",
    "find the {np}",
    "pass me the {np}",
    "hand me the {np}",
    "get the {np}",
    "fetch the {np}",
    "point to the {np}",
    "select the {np}",
    "locate the {np}",
    "please pass me the {np}",
    "i need the {np}",
)
N_TEMPLATES = len(LEADS)

SIZE_WORDS: dict[str, tuple[str, ...]] = {
    "small": ("small", "smaller", "little"),
    "large": ("large", "larger", "big", "bigger"),
}
SHAPE_WORDS: dict[str, tuple[str, ...]] = {
    "round": ("round", "circular"),
    "square": ("square",),
    "triangular": ("triangular",),
    "elongated": ("elongated", "long"),
    "star": ("star",),
}
POSITION_PHRASES: dict[str, tuple[str, ...]] = {
    "left": ("on the left", "on the left side", "at the left"),
    "right": ("on the right", "on the right side", "at the right"),
    "top": ("at the top", "near the top", "on the top side"),
    "bottom": ("at the bottom", "near the bottom", "on the bottom side"),
    "center": ("in the center", "near the center of the image", "in the middle"),
    "left-of": ("to the left of the {a}", "left of the {a}"),
    "right-of": ("to the right of the {a}", "right of the {a}"),
    "above": ("above the {a}", "on top of the {a}", "over the {a}"),
    "below": ("below the {a}", "under the {a}", "beneath the {a}"),
}
FILLER_WORDS: tuple[str, ...] = (
    "the", "me", "is", "you", "can", "where", "please", "grab", "give", "pick", "up", "find",
    "pass", "hand", "get", "fetch", "point", "to", "select", "locate", "i", "need", "on", "side",
    "at", "near", "of", "image", "in", "middle", "left", "right", "top", "bottom", "center",
    "above", "below", "under", "beneath", "over", "a", "and",
)


class AmbiguousTargetError(ValueError):
    code = "ambiguous-target"


@dataclass(frozen=True)
class ReferringQuery:
    text: str
    attributes: AttributeSet
    target_id: int
    template_id: int

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "attributes": self.attributes.to_dict(),
            "target_id": self.target_id,
            "template_id": self.template_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReferringQuery":
        return cls(data["text"], AttributeSet.from_dict(data["attributes"]), data["target_id"], data["template_id"])


def lexicon(catalog=DEFAULT_CATALOG) -> dict[str, list[str]]:
    """Word lists per attribute kind; used for tokenizer vocabularies."""
    return {
        "object": sorted(c.name for c in catalog),
        "color": list(COLORS),
        "shape": sorted({w for ws in SHAPE_WORDS.values() for w in ws}),
        "size": sorted({w for ws in SIZE_WORDS.values() for w in ws}),
        "position": sorted(set(ABSOLUTE_POSITIONS) | {r.split("-")[0] for r in RELATIONS}),
        "filler": sorted(set(FILLER_WORDS)),
    }


def vocabulary(catalog=DEFAULT_CATALOG) -> list[str]:
    words = set()
    for group in lexicon(catalog).values():
        words.update(group)
    for phrases in POSITION_PHRASES.values():
        for phrase in phrases:
            words.update(w for w in re.findall(r"[a-z]+", phrase) if w != "a")
    for lead in LEADS:
        words.update(re.findall(r"[a-z]+", lead.replace("{np}", "")))
    return sorted(words)


def _pick(options, template_id):
    return options[template_id % len(options)]


def position_phrase(position: str, template_id: int) -> str:
    if position in ABSOLUTE_POSITIONS:
        return _pick(POSITION_PHRASES[position], template_id)
    relation, _, anchor = position.partition(":")
    return _pick(POSITION_PHRASES[relation], template_id).format(a=anchor)


def realize(attrs: AttributeSet, template_id: int) -> str:
    """Render an AttributeSet with a given template."""
    if not 0 <= template_id < N_TEMPLATES:
        raise ValueError(f"template_id must be in [0, {N_TEMPLATES})")
    words = []
    if attrs.size is not None:
        words.append(_pick(SIZE_WORDS[attrs.size], template_id))
    if attrs.color is not None:
        words.append(attrs.color)
    if attrs.shape is not None:
        words.append(_pick(SHAPE_WORDS[attrs.shape], template_id))
    words.append(attrs.object_category)
    if attrs.position is not None:
        words.append(position_phrase(attrs.position, template_id))
    return LEADS[template_id].format(np=" ".join(words))


def generate_query(scene: Scene, target_id: int, n_attributes: int, rng: np.random.Generator) -> ReferringQuery:
    """Draw a query with exactly ``n_attributes`` attributes that singles out the target."""
    if not 1 <= n_attributes <= 4:
        raise ValueError("n_attributes must be in 1..4")
    options = unique_sets(scene, target_id, n_attributes)
    if not options:
        raise AmbiguousTargetError(
            f"no {n_attributes}-attribute description singles out object {target_id} in {scene.id}"
        )
    attrs = options[int(rng.integers(len(options)))]
    template_id = int(rng.integers(N_TEMPLATES))
    # unique_sets already checked this; cheap guard against lexicon drift
    assert match_objects(scene, attrs) == {target_id}
    return ReferringQuery(realize(attrs, template_id), attrs, target_id, template_id)
