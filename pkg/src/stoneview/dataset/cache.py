"""On-disk patch cache: PNG tree plus a JSON-lines index.

Layout: ``patches/<split>/<class>/<view>/<source-id>_<x>_<y>[_aug<k>-<tag>].png``
with one index row per patch recording lineage (source image, origin,
augmentation tag, split).
"""

import json
import re
from collections import defaultdict
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DataError
from .manifest import ImageRecord
from .patches import PatchRecord

_TAG_SAFE = re.compile(r"[^A-Za-z0-9_.+-]")


def _patch_filename(patch, aug_counter):
    stem = f"{patch.source.stone_id}_{patch.origin[0]}_{patch.origin[1]}"
    if patch.augmentation_tag != "none":
        k = aug_counter[stem]
        aug_counter[stem] += 1
        tag = _TAG_SAFE.sub("-", patch.augmentation_tag)
        stem = f"{stem}_aug{k}-{tag}"
    return stem + ".png"


def write_patch_cache(splits, out_dir):
    """Write {"train": [...], "test": [...]} patch lists under ``out_dir``.

    Returns the index path. Pixel arrays must be uint8.
    """
    out_dir = Path(out_dir)
    index_rows = []
    aug_counter = defaultdict(int)
    for split_name, patches in splits.items():
        for patch in patches:
            if patch.pixels.dtype != np.uint8:
                raise DataError("patch cache stores raw uint8 patches only")
            rel = (Path("patches") / split_name / patch.stone_class /
                   patch.view / _patch_filename(patch, aug_counter))
            dest = out_dir / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(patch.pixels, mode="RGB").save(dest)
            index_rows.append({
                "path": str(rel),
                "class": patch.stone_class,
                "view": patch.view,
                "stone_id": patch.source.stone_id,
                "source_image": patch.source.image_path,
                "x": patch.origin[0],
                "y": patch.origin[1],
                "aug": patch.augmentation_tag,
                "split": split_name,
            })
    index_path = out_dir / "patches" / "index.jsonl"
    with open(index_path, "w", encoding="utf-8") as fh:
        for row in index_rows:
            fh.write(json.dumps(row) + "\n")
    return index_path


def load_patch_cache(out_dir):
    """Read the cache back into {"train": [...], "test": [...]}.

    Source records are shared per source image so leakage checks by source
    identity keep working after a round trip.
    """
    out_dir = Path(out_dir)
    index_path = out_dir / "patches" / "index.jsonl"
    if not index_path.exists():
        raise DataError(f"patch index not found: {index_path}")
    sources = {}
    splits = defaultdict(list)
    with open(index_path, encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            key = row["source_image"]
            if key not in sources:
                sources[key] = ImageRecord(
                    image_path=row["source_image"],
                    stone_class=row["class"],
                    view=row["view"],
                    stone_id=row["stone_id"],
                    split=row["split"],
                )
            pixels = np.asarray(Image.open(out_dir / row["path"]).convert("RGB"))
            splits[row["split"]].append(PatchRecord(
                pixels=pixels,
                source=sources[key],
                origin=(row["x"], row["y"]),
                augmentation_tag=row["aug"],
            ))
    return dict(splits)
