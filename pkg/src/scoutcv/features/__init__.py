"""Image-to-feature-vector extraction behind a pluggable adapter."""

from scoutcv.features.cache import read_cache, write_cache
from scoutcv.features.extractors import (
    CentroidStubExtractor,
    ExtractorDescriptor,
    HashStubExtractor,
    OnnxBackboneExtractor,
    extract_manifest,
    make_extractor,
)
from scoutcv.features.preprocess import (
    PREPROCESS_PRESETS,
    PreprocessSpec,
    load_pixels,
    preprocess_image,
)

__all__ = [
    "CentroidStubExtractor",
    "ExtractorDescriptor",
    "HashStubExtractor",
    "OnnxBackboneExtractor",
    "PREPROCESS_PRESETS",
    "PreprocessSpec",
    "extract_manifest",
    "load_pixels",
    "make_extractor",
    "preprocess_image",
    "read_cache",
    "write_cache",
]
