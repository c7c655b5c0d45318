"""Image manifests: one JSON-lines record per source image.

Schema per line:
    {"image_path": str, "class": "WW|WD|AU|STR|BRU|CYS",
     "view": "surface|section", "stone_id": str}
"""

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ManifestError
from .constants import (
    DEFAULT_MAX_OVERLAP,
    DEFAULT_PATCH_BUDGET,
    DEFAULT_PATCH_SIZE,
    STONE_CLASSES,
    VIEWS,
)

SPLIT_STATES = ("train", "test", "unassigned")


@dataclass
class ImageRecord:
    image_path: str
    stone_class: str
    view: str
    stone_id: str
    split: str = "unassigned"

    def __post_init__(self):
        if self.stone_class not in STONE_CLASSES:
            raise ManifestError(f"unknown class {self.stone_class!r}")
        if self.view not in VIEWS:
            raise ManifestError(f"unknown view {self.view!r}")
        if self.split not in SPLIT_STATES:
            raise ManifestError(f"unknown split {self.split!r}")


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)
    patch_size: int = DEFAULT_PATCH_SIZE
    max_overlap: int = DEFAULT_MAX_OVERLAP
    per_class_patch_budget: int = DEFAULT_PATCH_BUDGET

    def counts(self):
        """Image counts per (class, view)."""
        return Counter((r.stone_class, r.view) for r in self.records)

    def counts_per_view(self):
        return Counter(r.view for r in self.records)

    def __len__(self):
        return len(self.records)


def load_manifest(path):
    """Parse a JSON-lines manifest into a DatasetManifest.

    Raises ManifestError naming the offending line on unknown class/view
    tokens, malformed JSON, or duplicate image paths.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest file not found: {path}")
    records = []
    seen_paths = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON ({exc})") from exc
            try:
                rec = ImageRecord(
                    image_path=obj["image_path"],
                    stone_class=obj["class"],
                    view=obj["view"],
                    stone_id=str(obj["stone_id"]),
                )
            except KeyError as exc:
                raise ManifestError(f"line {lineno}: missing field {exc}") from exc
            except ManifestError as exc:
                raise ManifestError(f"line {lineno}: {exc}") from exc
            if rec.image_path in seen_paths:
                raise ManifestError(
                    f"line {lineno}: duplicate image_path {rec.image_path!r}"
                )
            seen_paths.add(rec.image_path)
            records.append(rec)
    return DatasetManifest(records=records)


def save_manifest(manifest, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in manifest.records:
            fh.write(json.dumps({
                "image_path": rec.image_path,
                "class": rec.stone_class,
                "view": rec.view,
                "stone_id": rec.stone_id,
            }) + "\n")
