"""Synthetic paired-view image generator.

Class identity is a 3 x 2 factorial code: c = 2*a + b. Factor a (three
levels) is rendered ONLY in the surface view, factor b (two levels) ONLY in
the section view, so each view resolves just its own factor: the best
possible single-view accuracy is 1/2 (surface) or 1/3 (section) while the
two views together determine the class exactly.

Rendering choices are driven by what the training pipeline preserves:

* Patches are whitened per channel before the network sees them, which
  erases absolute color and brightness. Factors therefore live in texture
  structure: surface = square-wave stripe gratings whose period encodes a;
  section = checkerboard patterns whose period encodes b (with a hue tint
  per b level kept in the raw pixels). Stripes never appear in section
  images and checkers never in surface images, so the two views cannot be
  confused in whitened space.
* Grating orientation, phase, and speckle layout are drawn from a placement
  stream keyed by (seed, view, index) alone - shared by all classes - so no
  class can be identified from placement statistics, even in a finite image
  pool. Only the pixel noise stream is class-specific.
* Orientations come from {0, 45, 90, 135} degrees, the set closed under the
  flip/rotation augmentations.
* A fraction of each image is occluded by bright/dark speckle blobs (think
  specular highlights), and one randomly chosen color channel per image is
  replaced by a distractor grating with a random period. Neither carries
  class information, but both reward models that can gate features per
  sample: which channel lies varies image to image, so a fixed channel
  mixing cannot ignore it while input-conditioned channel gates can.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ConfigError
from .constants import NUM_CLASSES, STONE_CLASSES, VIEW_SECTION, VIEW_SURFACE
from .manifest import DatasetManifest, ImageRecord, save_manifest

SURFACE_PERIODS = (14.0, 6.5, 3.25)  # stripe period per level of factor a
SECTION_PERIODS = (9.0, 4.5)         # checker period per level of factor b
SECTION_TINTS = ((170, 95, 95), (95, 95, 170))  # reddish / bluish per b
# orientation sets are disjoint per view and closed under the flip/rot90
# augmentations, so oriented features separate the two views cleanly
SURFACE_ORIENTATIONS_DEG = (0.0, 90.0)
SECTION_ORIENTATIONS_DEG = (45.0, 135.0)
SURFACE_BASE = 128.0
SURFACE_AMP = 80.0
SECTION_AMP = 60.0
SPECKLE_VALUES = (255.0, 0.0)


@dataclass
class SynthConfig:
    classes: int = NUM_CLASSES
    surface_factor_levels: int = 3
    section_factor_levels: int = 2
    noise_std: float = 3.0
    images_per_class_per_view: int = 20
    image_size: int = 80
    speckle_fraction: float = 0.015
    distractor_strength: float = 0.30
    seed: int = 0

    def validate(self):
        if self.surface_factor_levels * self.section_factor_levels != self.classes:
            raise ConfigError(
                "surface_factor_levels x section_factor_levels must equal "
                f"the class count ({self.classes}); got "
                f"{self.surface_factor_levels} x {self.section_factor_levels}"
            )
        if self.classes != NUM_CLASSES:
            raise ConfigError(f"class count must be {NUM_CLASSES}")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if not 0.0 <= self.speckle_fraction < 0.9:
            raise ConfigError("speckle_fraction must be in [0, 0.9)")
        if not 0.0 <= self.distractor_strength <= 2.0:
            raise ConfigError("distractor_strength must be in [0, 2]")
        if self.images_per_class_per_view < 1 or self.image_size < 16:
            raise ConfigError("need at least 1 image per class/view and size >= 16")

    @staticmethod
    def from_json(path):
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        try:
            cfg = SynthConfig(**obj)
        except TypeError as exc:
            raise ConfigError(f"bad synth config: {exc}") from exc
        cfg.validate()
        return cfg


def class_factors(class_index):
    """(a, b) factor pair for class c = 2*a + b."""
    return class_index // 2, class_index % 2


def _view_orientations(view_code):
    return (SURFACE_ORIENTATIONS_DEG if view_code == 0
            else SECTION_ORIENTATIONS_DEG)


def _placement(config, view_code, index):
    """Per-image layout draws shared by every class: orientation, two
    phases, then the distractor-channel and speckle streams."""
    rng = np.random.default_rng([config.seed, view_code, 7, index])
    orients = _view_orientations(view_code)
    theta = np.deg2rad(orients[rng.integers(len(orients))])
    phase = rng.uniform(0.0, 2.0 * np.pi)
    phase2 = rng.uniform(0.0, 2.0 * np.pi)
    return theta, phase, phase2, rng


def _grating(size, period, theta, phase, phase2=None):
    """Square-wave stripes, or a checkerboard when phase2 is given."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    u = xx * np.cos(theta) + yy * np.sin(theta)
    w = np.sign(np.sin(2.0 * np.pi * u / period + phase))
    if phase2 is not None:
        v = -xx * np.sin(theta) + yy * np.cos(theta)
        w = w * np.sign(np.sin(2.0 * np.pi * v / period + phase2))
    return w


def _pollute_channel(img, rng, config, amp, checker_distractors, view_code):
    """Replace one random channel's pattern with a distractor texture;
    keeps the channel's mean level.

    Distractors stay within the view's own pattern family (stripes on
    surface images, checkers on section images), so a fixed channel mixing
    blurs the period evidence of that view while the other view's feature
    space stays untouched; models that can gate channels conditionally on
    the input can suppress the lying channel per sample.
    """
    polluted = int(rng.integers(3))
    orients = _view_orientations(view_code)
    theta = np.deg2rad(orients[rng.integers(len(orients))])
    period = rng.uniform(4.0, 16.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    phase2 = rng.uniform(0.0, 2.0 * np.pi)
    level = img[:, :, polluted].mean()
    img[:, :, polluted] = level + amp * config.distractor_strength * _grating(
        config.image_size, period, theta, phase,
        phase2 if checker_distractors else None,
    )
    return img


def _speckle(img, rng, config):
    """Occlude a fraction of the image with bright/dark blobs (all channels)."""
    if config.speckle_fraction <= 0:
        return img
    size = config.image_size
    target = config.speckle_fraction * size * size
    covered = 0.0
    yy, xx = np.mgrid[0:size, 0:size]
    k = 0
    while covered < target and k < 400:
        cy, cx = rng.uniform(0, size, 2)
        r = rng.uniform(1.5, 3.5)
        value = SPECKLE_VALUES[int(rng.integers(2))]
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        img[mask, :] = value
        covered += float(mask.sum())
        k += 1
    return img


def render_surface(class_index, index, config):
    """Gray stripe grating whose period encodes factor a; hue-free."""
    a, _ = class_factors(class_index)
    theta, phase, _, layout_rng = _placement(config, 0, index)
    noise_rng = np.random.default_rng([config.seed, 0, class_index, index])
    gray = SURFACE_BASE + SURFACE_AMP * _grating(
        config.image_size, SURFACE_PERIODS[a], theta, phase
    )
    img = np.repeat(gray[:, :, None], 3, axis=2)
    img = _pollute_channel(img, layout_rng, config, SURFACE_AMP, False, 0)
    img = _speckle(img, layout_rng, config)
    if config.noise_std > 0:
        img = img + noise_rng.normal(0.0, config.noise_std, img.shape)
    return np.clip(img, 0, 255).round().astype(np.uint8)


def render_section(class_index, index, config):
    """Tinted checkerboard whose period (and tint) encode factor b."""
    _, b = class_factors(class_index)
    theta, phase, phase2, layout_rng = _placement(config, 1, index)
    noise_rng = np.random.default_rng([config.seed, 1, class_index, index])
    gray = SECTION_AMP * _grating(
        config.image_size, SECTION_PERIODS[b], theta, phase, phase2
    )
    tint = np.asarray(SECTION_TINTS[b], dtype=np.float64)
    img = tint[None, None, :] + gray[:, :, None]
    img = _pollute_channel(img, layout_rng, config, SECTION_AMP, True, 1)
    img = _speckle(img, layout_rng, config)
    if config.noise_std > 0:
        img = img + noise_rng.normal(0.0, config.noise_std, img.shape)
    return np.clip(img, 0, 255).round().astype(np.uint8)


def synth_generate(config, out_dir):
    """Render the dataset and write images plus a manifest.

    Returns (manifest, manifest_path). Images land under
    ``out_dir/images/<class>/<view>/``; the manifest is JSON-lines in the
    standard schema.
    """
    config.validate()
    out_dir = Path(out_dir)
    records = []
    for ci, cname in enumerate(STONE_CLASSES):
        for view, renderer in ((VIEW_SURFACE, render_surface),
                               (VIEW_SECTION, render_section)):
            for idx in range(config.images_per_class_per_view):
                pixels = renderer(ci, idx, config)
                rel = Path("images") / cname / view / f"{idx:03d}.png"
                dest = out_dir / rel
                dest.parent.mkdir(parents=True, exist_ok=True)
                Image.fromarray(pixels, mode="RGB").save(dest)
                # layout-twin renders across classes share one specimen id so
                # the stone-granular split keeps them on the same side
                records.append(ImageRecord(
                    image_path=str(rel),
                    stone_class=cname,
                    view=view,
                    stone_id=f"{view[:3]}-{idx:03d}",
                ))
    manifest = DatasetManifest(records=records)
    manifest_path = out_dir / "manifest.jsonl"
    save_manifest(manifest, manifest_path)
    return manifest, manifest_path
