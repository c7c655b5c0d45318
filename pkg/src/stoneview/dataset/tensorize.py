"""Convert patch records into network-ready arrays: whitened float32 CHW."""

import numpy as np

from .constants import CLASS_TO_INDEX
from .patches import whiten


def patch_to_chw(patch):
    return np.ascontiguousarray(whiten(patch).pixels.transpose(2, 0, 1))


def patches_to_arrays(patches):
    """(X, y): whitened (N, 3, H, W) float32 and int64 class indices."""
    x = np.stack([patch_to_chw(p) for p in patches])
    y = np.array([CLASS_TO_INDEX[p.stone_class] for p in patches], dtype=np.int64)
    return x, y


def pairs_to_arrays(pairs):
    """(X_surface, X_section, y) for a list of view pairs."""
    xs = np.stack([patch_to_chw(p.surface) for p in pairs])
    xc = np.stack([patch_to_chw(p.section) for p in pairs])
    y = np.array([CLASS_TO_INDEX[p.label] for p in pairs], dtype=np.int64)
    return xs, xc, y
