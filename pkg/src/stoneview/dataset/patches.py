"""Patch extraction, whitening, augmentation, and class balancing.

Patches are square crops stored as (H, W, 3) uint8 until whitening converts
them to zero-mean unit-variance float32 per channel. Every patch keeps a
reference to its source image record plus its (x, y) origin so splits can be
made leakage-safe at source-image granularity.
"""

from dataclasses import dataclass, replace

import numpy as np

from ..errors import BalanceError, PatchError

WHITEN_EPS = 1e-8

AUGMENT_KINDS = ("none", "flip_h", "flip_v", "rot90", "rot180", "rot270",
                 "brightness", "contrast")


@dataclass
class PatchRecord:
    pixels: np.ndarray
    source: object  # ImageRecord
    origin: tuple
    augmentation_tag: str = "none"

    @property
    def stone_class(self):
        return self.source.stone_class

    @property
    def view(self):
        return self.source.view


def grid_offsets(length, patch_size, max_overlap):
    """1-D tiling anchored at 0 with non-overlapping stride, plus one
    flush-to-border offset when its overlap with the previous patch stays
    within max_overlap. Border regions that cannot be covered without
    exceeding the bound are dropped."""
    offsets = list(range(0, length - patch_size + 1, patch_size))
    flush = length - patch_size
    if flush > offsets[-1] and offsets[-1] + patch_size - flush <= max_overlap:
        offsets.append(flush)
    return offsets


def extract_patches(image, patch_size, max_overlap, source=None):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise PatchError(f"expected (H, W, 3) image, got shape {image.shape}")
    h, w = image.shape[:2]
    if h < patch_size or w < patch_size:
        raise PatchError(
            f"image {w}x{h} smaller than patch size {patch_size}"
        )
    if max_overlap >= patch_size:
        raise PatchError("max_overlap must be smaller than patch_size")
    patches = []
    for y in grid_offsets(h, patch_size, max_overlap):
        for x in grid_offsets(w, patch_size, max_overlap):
            crop = np.ascontiguousarray(
                image[y:y + patch_size, x:x + patch_size]
            )
            patches.append(PatchRecord(pixels=crop, source=source, origin=(x, y)))
    return patches


def whiten(patch):
    """Standardize each channel to mean 0 / std 1 (guarded for constants)."""
    px = patch.pixels.astype(np.float64)
    mean = px.mean(axis=(0, 1))
    std = px.std(axis=(0, 1))
    out = (px - mean) / np.maximum(std, WHITEN_EPS)
    return replace(patch, pixels=out.astype(np.float32))


def _jitter_brightness(px, delta):
    return np.clip(px.astype(np.float64) + delta * 255.0, 0, 255).round().astype(np.uint8)


def _jitter_contrast(px, factor):
    mean = px.mean()
    out = mean + factor * (px.astype(np.float64) - mean)
    return np.clip(out, 0, 255).round().astype(np.uint8)


def augment(patch, seed):
    """Apply one transform drawn deterministically from ``seed``.

    The menu: identity, horizontal/vertical flip, 90-degree-multiple
    rotations, and bounded brightness/contrast jitter. Photometric jitter
    amounts are kept away from zero so a jittered copy is never a raw
    duplicate.
    """
    rng = np.random.default_rng(seed)
    kind = AUGMENT_KINDS[rng.integers(len(AUGMENT_KINDS))]
    px = patch.pixels
    if kind == "none":
        return replace(patch, pixels=px.copy(), augmentation_tag="none")
    if kind == "flip_h":
        return replace(patch, pixels=px[:, ::-1].copy(), augmentation_tag="flip_h")
    if kind == "flip_v":
        return replace(patch, pixels=px[::-1].copy(), augmentation_tag="flip_v")
    if kind.startswith("rot"):
        turns = {"rot90": 1, "rot180": 2, "rot270": 3}[kind]
        return replace(patch, pixels=np.rot90(px, turns).copy(),
                       augmentation_tag=kind)
    if kind == "brightness":
        delta = rng.uniform(0.05, 0.15) * rng.choice([-1.0, 1.0])
        return replace(patch, pixels=_jitter_brightness(px, delta),
                       augmentation_tag=f"bright{delta:+.3f}")
    factor = 1.0 + rng.uniform(0.05, 0.15) * rng.choice([-1.0, 1.0])
    return replace(patch, pixels=_jitter_contrast(px, factor),
                   augmentation_tag=f"contrast{factor:.3f}")


def _augment_non_identity(patch, seed_seq):
    for child in seed_seq.spawn(64):
        out = augment(patch, child)
        if out.augmentation_tag != "none":
            return out
    raise RuntimeError("augmentation sampler kept drawing identity")


def balance(patches, budget, seed):
    """Bring every (class, view) group to exactly ``budget`` patches.

    Surplus groups are subsampled deterministically; deficit groups are
    topped up with augmented (never raw-duplicate) copies of their patches.
    """
    if budget <= 0:
        raise BalanceError(f"budget must be positive, got {budget}")
    groups = {}
    order = []
    for p in patches:
        key = (p.stone_class, p.view)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(p)
    out = []
    for gidx, key in enumerate(order):
        group = groups[key]
        n = len(group)
        if n == 0:
            raise BalanceError(f"group {key} has no source patches")
        ss = np.random.SeedSequence([int(seed), gidx])
        rng = np.random.default_rng(ss)
        if n == budget:
            out.extend(group)
        elif n > budget:
            keep = np.sort(rng.choice(n, size=budget, replace=False))
            out.extend(group[i] for i in keep)
        else:
            out.extend(group)
            perm = rng.permutation(n)
            copy_seeds = ss.spawn(budget - n)
            for i in range(budget - n):
                src = group[perm[i % n]]
                out.append(_augment_non_identity(src, copy_seeds[i]))
    return out
