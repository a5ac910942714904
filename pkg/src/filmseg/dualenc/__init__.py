"""Tiny vision/text dual encoder, its contrastive pretraining, freezing and checkpoints."""

from .checkpoint import CheckpointError, load_encoder, save_encoder
from .model import (
    PRESETS,
    DualEncoder,
    EncoderConfig,
    EncoderWeights,
    TextEmbedding,
    VisualProjectionSet,
    freeze,
    image_tensor,
    unfreeze,
)
from .pretrain import (
    ContrastiveBatchError,
    PretrainConfig,
    PretrainCorpus,
    contrastive_loss,
    contrastive_pretrain,
    make_corpus,
    make_pairs,
    retrieval_top1,
)
from .tokenizer import Tokenizer

__all__ = [name for name in dir() if not name.startswith("_")]
