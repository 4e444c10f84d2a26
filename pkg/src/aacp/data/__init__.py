"""Paintings, annotations, procedural generation, masking and splits."""

from .attributes import ATTRIBUTES, SCORE_MAX, AttributeRangeError, AttributeVector, average_expert_scores
from .corpus import Corpus, CorpusError, load_corpus, save_corpus
from .generator import (
    GENERATOR_VERSION, GeneratorSpec, SpecError, generate_corpus, generate_synthetic_painting,
    sample_spec,
)
from .masking import MaskLayout, MaskShapeError, mask_patches
from .records import PaintingRecord
from .split import SplitManifest, stratified_split

__all__ = [
    "ATTRIBUTES", "SCORE_MAX", "AttributeRangeError", "AttributeVector", "average_expert_scores",
    "Corpus", "CorpusError", "load_corpus", "save_corpus", "GENERATOR_VERSION", "GeneratorSpec",
    "SpecError", "generate_corpus", "generate_synthetic_painting", "sample_spec", "MaskLayout",
    "MaskShapeError", "mask_patches", "PaintingRecord", "SplitManifest", "stratified_split",
]
