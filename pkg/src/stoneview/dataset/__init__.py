from .constants import (
    CLASS_TO_INDEX,
    DEFAULT_MAX_OVERLAP,
    DEFAULT_PATCH_BUDGET,
    DEFAULT_PATCH_SIZE,
    NUM_CLASSES,
    STONE_CLASSES,
    VIEW_SECTION,
    VIEW_SURFACE,
    VIEWS,
)
from .manifest import DatasetManifest, ImageRecord, load_manifest, save_manifest
from .patches import (
    AUGMENT_KINDS,
    PatchRecord,
    augment,
    balance,
    extract_patches,
    grid_offsets,
    whiten,
)
from .split import split
from .synth import SynthConfig, class_factors, synth_generate
from .cache import load_patch_cache, write_patch_cache

__all__ = [
    "AUGMENT_KINDS",
    "CLASS_TO_INDEX",
    "DEFAULT_MAX_OVERLAP",
    "DEFAULT_PATCH_BUDGET",
    "DEFAULT_PATCH_SIZE",
    "DatasetManifest",
    "ImageRecord",
    "NUM_CLASSES",
    "PatchRecord",
    "STONE_CLASSES",
    "SynthConfig",
    "VIEWS",
    "VIEW_SECTION",
    "VIEW_SURFACE",
    "augment",
    "balance",
    "class_factors",
    "extract_patches",
    "grid_offsets",
    "load_manifest",
    "load_patch_cache",
    "save_manifest",
    "split",
    "synth_generate",
    "whiten",
    "write_patch_cache",
]
