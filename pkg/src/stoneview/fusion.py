"""Two-view late fusion: frozen duplicated extractors, feature fusion, and a
fresh classifier head.

``max_pool`` fuses by elementwise maximum (width d, symmetric);
``concatenation`` stacks surface-then-section (width 2d, order-fixed).
The two extractors are parameter-identical copies of a trained mixed-view
extractor and stay immutable: only the head ever receives gradient updates.
"""

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .backbone import ClassifierHead, HeadSpec, SingleViewModel, build_extractor
from .dataset.constants import STONE_CLASSES, VIEW_SECTION, VIEW_SURFACE
from .errors import ConfigError, DataError
from .nn import Module

FUSION_MAX = "max_pool"
FUSION_CONCAT = "concatenation"
FUSION_STRATEGIES = (FUSION_MAX, FUSION_CONCAT)

_ALIASES = {"max": FUSION_MAX, "max_pool": FUSION_MAX,
            "concat": FUSION_CONCAT, "concatenation": FUSION_CONCAT}


def normalize_strategy(name):
    try:
        return _ALIASES[name]
    except KeyError:
        raise ConfigError(f"unknown fusion strategy {name!r}") from None


def fused_width(feature_dim, strategy):
    return feature_dim if strategy == FUSION_MAX else 2 * feature_dim


def fuse(f_sur, f_sec, strategy):
    """Fuse per-view feature vectors (surface first for concatenation)."""
    f_sur = np.asarray(f_sur)
    f_sec = np.asarray(f_sec)
    if f_sur.shape != f_sec.shape:
        raise ValueError(f"view width mismatch: {f_sur.shape} vs {f_sec.shape}")
    strategy = normalize_strategy(strategy)
    if strategy == FUSION_MAX:
        return np.maximum(f_sur, f_sec)
    return np.concatenate([f_sur, f_sec], axis=-1)


@dataclass
class ViewPair:
    surface: object  # PatchRecord, view == surface
    section: object  # PatchRecord, view == section
    label: str

    def __post_init__(self):
        if self.surface.view != VIEW_SURFACE or self.section.view != VIEW_SECTION:
            raise DataError("pair views must be (surface, section)")
        if self.surface.stone_class != self.label or self.section.stone_class != self.label:
            raise DataError("pair members must carry the pair label")


def pair_index_streams(n_surface, n_section, seed, epoch, class_index):
    """Index-level pairing for one class: permute both sides and cycle the
    smaller one so every index appears at least once per epoch."""
    rng = np.random.default_rng([int(seed), int(epoch), int(class_index)])
    n = max(n_surface, n_section)
    sur_idx = np.tile(rng.permutation(n_surface), -(-n // n_surface))[:n]
    sec_idx = np.tile(rng.permutation(n_section), -(-n // n_section))[:n]
    return sur_idx, sec_idx


def pair_views(patches, seed, epoch=0):
    """Within-class random matching of surface and section patches.

    Re-drawn per (seed, epoch); emits max(n_surface, n_section) pairs per
    class with the smaller side cycled, so every patch appears at least once.
    """
    by_class = defaultdict(lambda: {VIEW_SURFACE: [], VIEW_SECTION: []})
    for p in patches:
        by_class[p.stone_class][p.view].append(p)
    pairs = []
    for ci, cname in enumerate(STONE_CLASSES):
        if cname not in by_class:
            continue
        sur = by_class[cname][VIEW_SURFACE]
        sec = by_class[cname][VIEW_SECTION]
        if not sur or not sec:
            raise DataError(f"class {cname} is missing one view entirely")
        sur_idx, sec_idx = pair_index_streams(len(sur), len(sec), seed, epoch, ci)
        pairs.extend(
            ViewPair(sur[i], sec[j], cname) for i, j in zip(sur_idx, sec_idx)
        )
    return pairs


class MultiViewModel(Module):
    def __init__(self, surface_extractor, section_extractor, strategy, head,
                 backbone_spec, head_spec):
        super().__init__()
        self.surface_extractor = surface_extractor
        self.section_extractor = section_extractor
        self.strategy = strategy
        self.head = head
        self.backbone_spec = backbone_spec
        self.head_spec = head_spec
        self.trained = False

    @property
    def feature_dim(self):
        return self.surface_extractor.feature_dim

    @property
    def fused_dim(self):
        return fused_width(self.feature_dim, self.strategy)

    def forward_fused(self, x_sur, x_sec):
        return fuse(self.surface_extractor(x_sur),
                    self.section_extractor(x_sec), self.strategy)

    def forward(self, batch):
        x_sur, x_sec = batch
        return self.head(self.forward_fused(x_sur, x_sec))

    def forward_from_features(self, fused):
        return self.head(fused)

    def backward(self, dlogits):
        # extractors are frozen by contract; gradient stops at the head
        self.head.backward(dlogits)
        return None

    def trainable_parameters(self):
        return [p for _, p in self.head.named_parameters()]


def build_multiview(base, strategy, head=None, seed=0, dtype=np.float32):
    """Duplicate a trained mixed-view extractor into two frozen copies and
    attach a freshly initialized head sized to the fused width."""
    if not isinstance(base, SingleViewModel):
        raise ConfigError("multi-view base must be a single-view model")
    if not base.trained:
        raise ConfigError("multi-view base extractor must be trained first")
    strategy = normalize_strategy(strategy)
    head_spec = head or HeadSpec()
    width = fused_width(base.feature_dim, strategy)
    if head_spec.input_dim is not None and head_spec.input_dim != width:
        raise ConfigError(
            f"head input width {head_spec.input_dim} does not match fused "
            f"width {width}"
        )
    state = base.extractor.state_dict()
    copies = []
    for _ in range(2):
        ext = build_extractor(base.backbone_spec, seed=0, dtype=dtype)
        ext.load_state_dict({k: v.copy() for k, v in state.items()})
        copies.append(ext)
    rng_head = np.random.default_rng([int(seed), 0xF05E])
    head_module = ClassifierHead(width, head_spec, rng_head, dtype=dtype)
    return MultiViewModel(copies[0], copies[1], strategy, head_module,
                          base.backbone_spec, head_spec)


def forward_multiview(model, batch):
    """Inference-mode logits for a batch of paired views."""
    was_training = model.training
    model.train(False)
    try:
        return model.forward(batch)
    finally:
        model.train(was_training)
