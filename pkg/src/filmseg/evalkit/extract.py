"""Lexicon-driven attribute tagging of referring queries.

Plays the role of the NER tagger used to bucket queries by attribute count; it is
exact on text produced by :mod:`filmseg.scenegen.grammar`.
"""

from __future__ import annotations

import re

from ..scenegen.attributes import AttributeSet
from ..scenegen.catalog import COLORS, DEFAULT_CATALOG
from ..scenegen.grammar import SHAPE_WORDS, SIZE_WORDS


class NoHeadNounError(ValueError):
    code = "no-head-noun"


_RELATIONAL = (
    ("left-of", r"(?:to the |on the )?left of the ([a-z]+)"),
    ("right-of", r"(?:to the |on the )?right of the ([a-z]+)"),
    ("above", r"(?:above|on top of|over) the ([a-z]+)"),
    ("below", r"(?:below|under|beneath) the ([a-z]+)"),
)
_ABSOLUTE = {"left": "left", "right": "right", "top": "top", "bottom": "bottom", "center": "center", "middle": "center"}
_SHAPES = {w: shape for shape, words in SHAPE_WORDS.items() for w in words}
_SIZES = {w: size for size, words in SIZE_WORDS.items() for w in words}


def normalize(text: str) -> list[str]:
    return re.findall(r"[a-z]+", text.lower())


def _split_relation(words: list[str], categories: set[str]):
    text = " ".join(words)
    for relation, pattern in _RELATIONAL:
        for m in re.finditer(r"\b" + pattern + r"\b", text):
            if m.group(1) in categories:
                rest = (text[: m.start()] + " " + text[m.end():]).split()
                return f"{relation}:{m.group(1)}", rest
    return None, words


def head_noun(text: str, catalog=DEFAULT_CATALOG) -> str | None:
    """Category word naming the referred object, ignoring relational anchors."""
    categories = {c.name for c in catalog}
    _, rest = _split_relation(normalize(text), categories)
    for w in rest:
        if w in categories:
            return w
    return None


def extract_attributes(text: str, catalog=DEFAULT_CATALOG) -> AttributeSet:
    categories = {c.name for c in catalog}
    position, rest = _split_relation(normalize(text), categories)
    found: dict[str, str] = {}
    for w in rest:
        if w in categories:
            found.setdefault("object_category", w)
        elif w in COLORS:
            found.setdefault("color", w)
        elif w in _SHAPES:
            found.setdefault("shape", _SHAPES[w])
        elif w in _SIZES:
            found.setdefault("size", _SIZES[w])
        elif w in _ABSOLUTE and position is None:
            position = _ABSOLUTE[w]
    if "object_category" not in found:
        raise NoHeadNounError(f"no object word in {text!r}")
    return AttributeSet(position=position, **found)
