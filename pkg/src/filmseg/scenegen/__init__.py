"""Synthetic cluttered scenes with attribute-rich referring queries."""

from .attributes import (
    AttributeSet,
    IndistinguishableError,
    compute_mrq,
    describing_sets,
    match_objects,
    position_descriptors,
    unique_sets,
)
from .catalog import (
    COLORS,
    DEFAULT_CATALOG,
    PALETTE,
    SHAPES,
    SIZES,
    ObjectCategory,
    UnknownNameError,
    seen_categories,
    unseen_categories,
    validate_catalog,
)
from .dataset import (
    SPLITS,
    DatasetConfig,
    DatasetSplit,
    InfeasibleMixtureError,
    LabeledSample,
    build_dataset,
    derive_seed,
)
from .grammar import (
    N_TEMPLATES,
    AmbiguousTargetError,
    ReferringQuery,
    generate_query,
    lexicon,
    realize,
    vocabulary,
)
from .scene import (
    PlacementError,
    Scene,
    SceneConfig,
    SceneObject,
    assemble_scene,
    footprint,
    generate_scene,
    render,
)
from .storage import (
    ChecksumError,
    DatasetFormatError,
    MissingFileError,
    MissingIndexError,
    VersionMismatchError,
    load_dataset,
    persist_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
