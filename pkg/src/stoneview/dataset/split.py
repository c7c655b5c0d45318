"""Leakage-safe train/test splitting at stone granularity.

All patches whose source images share a stone_id land on one side, so
near-duplicate patches (other views or crops of the same specimen, or
augmented copies) can never straddle the split. Assignment is greedy per
(class, view) against the target patch fraction; a stone already assigned
through an earlier group keeps its side.
"""

from collections import defaultdict

import numpy as np

from ..errors import SplitError


def split(patches, train_fraction, seed):
    """Partition patches into (train, test) grouped by stone_id."""
    if not 0.0 < train_fraction < 1.0:
        raise SplitError(f"train_fraction must be in (0, 1), got {train_fraction}")
    groups = defaultdict(lambda: defaultdict(list))
    first_path = {}
    for p in patches:
        sid = p.source.stone_id
        groups[(p.stone_class, p.view)][sid].append(p)
        first_path.setdefault(sid, p.source.image_path)
    rng = np.random.default_rng([int(seed), 0x5717])
    side = {}  # stone_id -> True when train
    for key in sorted(groups):
        stones = groups[key]
        if len(stones) < 2:
            raise SplitError(
                f"group {key} has {len(stones)} stone(s); need at least 2 "
                "to populate both split sides"
            )
        stone_ids = sorted(stones, key=lambda s: (first_path[s], s))
        rng.shuffle(stone_ids)
        total = sum(len(stones[s]) for s in stone_ids)
        target = train_fraction * total
        acc = sum(len(stones[s]) for s in stone_ids if side.get(s))
        undecided = [s for s in stone_ids if s not in side]
        for s in undecided:
            n = len(stones[s])
            if abs(acc + n - target) <= abs(acc - target):
                side[s] = True
                acc += n
            else:
                side[s] = False
        group_sides = {side[s] for s in stone_ids}
        if group_sides == {True}:
            side[stone_ids[-1]] = False
        elif group_sides == {False}:
            side[stone_ids[0]] = True
    train, test = [], []
    for p in patches:
        if side[p.source.stone_id]:
            p.source.split = "train"
            train.append(p)
        else:
            p.source.split = "test"
            test.append(p)
    return train, test
