"""Single-view classifier: residual conv feature extractor with optional
CBAM gating after every residual block, global average pooling, and a
512/256/6 fully connected head with batch norm and dropout 0.5.

Two architectures are provided: ``resnet50`` (bottleneck stages 3-4-6-3,
feature width 2048, 16 attention insertion points when enabled) and
``tiny`` (4 residual blocks, feature width 64) for minute-scale runs.
Backbone and head weights are drawn from a stream independent of the
attention blocks' stream, so attention-on and attention-off models built
from the same seed share every non-attention parameter.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import CbamBlock
from .dataset.constants import NUM_CLASSES
from .errors import ConfigError
from .nn import (
    BatchNorm,
    Conv2d,
    Dropout,
    GlobalAvgPool2d,
    Identity,
    Linear,
    MaxPool2d,
    Module,
    ModuleList,
    ReLU,
    Sequential,
)

ARCHITECTURES = ("resnet50", "tiny")
FEATURE_DIMS = {"resnet50": 2048, "tiny": 64}
RESNET50_STAGE_BLOCKS = (3, 4, 6, 3)


@dataclass
class BackboneSpec:
    architecture: str = "resnet50"
    attention_enabled: bool = True
    pretrained_init: str = "random"
    pretrained_path: str = None
    reduction: int = None   # None: 16 (resnet50) or 4 (tiny's narrow blocks)
    spatial_kernel: int = 7

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.pretrained_init not in ("random", "imagenet"):
            raise ConfigError(f"unknown pretrained_init {self.pretrained_init!r}")

    @property
    def feature_dim(self):
        return FEATURE_DIMS[self.architecture]

    @property
    def resolved_reduction(self):
        if self.reduction is not None:
            return self.reduction
        return 16 if self.architecture == "resnet50" else 2


@dataclass
class HeadSpec:
    layer_widths: tuple = (512, 256, NUM_CLASSES)
    dropout_p: float = 0.5
    batch_norm: bool = True
    input_dim: int = None  # None: inferred from the extractor

    def __post_init__(self):
        if self.layer_widths[-1] != NUM_CLASSES:
            raise ConfigError(
                f"head must end in {NUM_CLASSES} outputs, got {self.layer_widths[-1]}"
            )


class ClassifierHead(Module):
    def __init__(self, in_dim, spec, rng, dtype=np.float32):
        super().__init__()
        layers = []
        prev = in_dim
        for width in spec.layer_widths[:-1]:
            layers.append(Linear(prev, width, rng=rng, dtype=dtype))
            if spec.batch_norm:
                layers.append(BatchNorm(width, spatial=False, dtype=dtype))
            layers.append(ReLU())
            layers.append(Dropout(spec.dropout_p))
            prev = width
        layers.append(Linear(prev, spec.layer_widths[-1], rng=rng, dtype=dtype))
        self.net = Sequential(*layers)

    def forward(self, x):
        return self.net(x)

    def backward(self, dout):
        return self.net.backward(dout)


class _SumReluBlock(Module):
    """att(main(x)) + shortcut(x), then ReLU: the residual block skeleton.

    The attention gate sits on the residual branch before the skip-sum (the
    canonical CBAM/ResNet integration), so the identity path stays clean and
    saturated gates reduce the block to its attention-free form exactly.
    """

    def __init__(self):
        super().__init__()
        self.att = Identity()
        self._mask = None

    def forward(self, x):
        y = self.att(self.main(x)) + self.shortcut(x)
        if self.training:
            self._mask = y > 0
        return np.maximum(y, 0)

    def backward(self, dout):
        dy = dout * self._mask
        return self.main.backward(self.att.backward(dy)) + self.shortcut.backward(dy)


class ResidualBlock(_SumReluBlock):
    """Tiny-scale residual unit: one 3x3 conv + BN with projection shortcut."""

    def __init__(self, in_ch, out_ch, stride, rng, dtype=np.float32):
        super().__init__()
        self.main = Sequential(
            Conv2d(in_ch, out_ch, 3, stride=stride, bias=False, rng=rng,
                   dtype=dtype),
            BatchNorm(out_ch, spatial=True, dtype=dtype),
        )
        if stride != 1 or in_ch != out_ch:
            self.shortcut = Sequential(
                Conv2d(in_ch, out_ch, 1, stride=stride, pad=0, bias=False,
                       rng=rng, dtype=dtype),
                BatchNorm(out_ch, spatial=True, dtype=dtype),
            )
        else:
            self.shortcut = Identity()


class Bottleneck(_SumReluBlock):
    """1x1 reduce, 3x3 (stride), 1x1 expand x4, BN throughout."""

    def __init__(self, in_ch, mid_ch, stride, rng, dtype=np.float32):
        super().__init__()
        out_ch = mid_ch * 4
        self.main = Sequential(
            Conv2d(in_ch, mid_ch, 1, pad=0, bias=False, rng=rng, dtype=dtype),
            BatchNorm(mid_ch, spatial=True, dtype=dtype),
            ReLU(),
            Conv2d(mid_ch, mid_ch, 3, stride=stride, bias=False, rng=rng,
                   dtype=dtype),
            BatchNorm(mid_ch, spatial=True, dtype=dtype),
            ReLU(),
            Conv2d(mid_ch, out_ch, 1, pad=0, bias=False, rng=rng, dtype=dtype),
            BatchNorm(out_ch, spatial=True, dtype=dtype),
        )
        if stride != 1 or in_ch != out_ch:
            self.shortcut = Sequential(
                Conv2d(in_ch, out_ch, 1, stride=stride, pad=0, bias=False,
                       rng=rng, dtype=dtype),
                BatchNorm(out_ch, spatial=True, dtype=dtype),
            )
        else:
            self.shortcut = Identity()


class FeatureExtractor(Module):
    """stem -> residual blocks (each optionally gated) -> global avg pool.

    Attention lives inside each block under the ``att`` name, so conv-trunk
    parameter names are invariant to the attention flag (needed for loading
    trunk-only pretrained weights).
    """

    def __init__(self, stem, blocks, feature_dim):
        super().__init__()
        self.stem = stem
        self.blocks = ModuleList(blocks)
        self.pool = GlobalAvgPool2d()
        self.feature_dim = feature_dim

    def forward(self, x):
        x = self.stem(x)
        for block in self.blocks:
            x = block(x)
        return self.pool(x)

    def backward(self, dfeat):
        dx = self.pool.backward(dfeat)
        for block in reversed(list(self.blocks)):
            dx = block.backward(dx)
        return self.stem.backward(dx)


def _attach_att(block, channels, spec, rng_att, dtype):
    if spec.attention_enabled:
        block.att = CbamBlock(channels, reduction=spec.resolved_reduction,
                              kernel_size=spec.spatial_kernel, rng=rng_att,
                              dtype=dtype)
    return block


def build_extractor(spec, seed=0, dtype=np.float32):
    rng = np.random.default_rng([int(seed), 0xB0])
    rng_att = np.random.default_rng([int(seed), 0xA7])
    if spec.architecture == "tiny":
        stem = Sequential(
            Conv2d(3, 8, 3, bias=False, rng=rng, dtype=dtype),
            BatchNorm(8, spatial=True, dtype=dtype),
            ReLU(),
        )
        plan = [(8, 16, 2), (16, 32, 2), (32, 64, 2), (64, 64, 1)]
        blocks = []
        for in_ch, out_ch, stride in plan:
            block = ResidualBlock(in_ch, out_ch, stride, rng, dtype=dtype)
            blocks.append(_attach_att(block, out_ch, spec, rng_att, dtype))
        return FeatureExtractor(stem, blocks, FEATURE_DIMS["tiny"])

    stem = Sequential(
        Conv2d(3, 64, 7, stride=2, pad=3, bias=False, rng=rng, dtype=dtype),
        BatchNorm(64, spatial=True, dtype=dtype),
        ReLU(),
        MaxPool2d(3, 2, pad=1),
    )
    blocks = []
    in_ch = 64
    for stage, n_blocks in enumerate(RESNET50_STAGE_BLOCKS):
        mid = 64 * (2 ** stage)
        for b in range(n_blocks):
            stride = 2 if (stage > 0 and b == 0) else 1
            block = Bottleneck(in_ch, mid, stride, rng, dtype=dtype)
            in_ch = mid * 4
            blocks.append(_attach_att(block, in_ch, spec, rng_att, dtype))
    return FeatureExtractor(stem, blocks, FEATURE_DIMS["resnet50"])


def load_pretrained(extractor, path):
    """Load conv-trunk weights (stem + blocks, including BN statistics) from
    an ``.npz`` archive keyed by parameter name. Attention blocks and the
    head are left at their fresh initialization."""
    path = Path(path) if path else None
    if path is None or not path.exists():
        raise ConfigError(f"pretrained weight file not found: {path}")
    archive = np.load(path)
    def is_trunk(name):
        return (name.startswith(("stem.", "blocks.")) and ".att." not in name)

    wanted = {}
    for name, p in extractor.named_parameters():
        if is_trunk(name):
            wanted[name] = p
    buffers = {name: None for name, _ in extractor.named_buffers()
               if is_trunk(name)}
    missing = [k for k in list(wanted) + list(buffers) if k not in archive.files]
    if missing:
        raise ConfigError(f"pretrained archive missing keys: {missing[:5]}"
                          f"{'...' if len(missing) > 5 else ''}")
    for name, p in wanted.items():
        arr = archive[name]
        if arr.shape != p.data.shape:
            raise ConfigError(
                f"pretrained shape mismatch for {name}: "
                f"{arr.shape} vs {p.data.shape}"
            )
        p.data = arr.astype(p.data.dtype).copy()
        p.grad = np.zeros_like(p.data)
    for name in buffers:
        extractor._assign_buffer(name, archive[name])


class SingleViewModel(Module):
    def __init__(self, extractor, head, backbone_spec, head_spec):
        super().__init__()
        self.extractor = extractor
        self.head = head
        self.backbone_spec = backbone_spec
        self.head_spec = head_spec
        self.frozen = False
        self.trained = False

    @property
    def feature_dim(self):
        return self.extractor.feature_dim

    def forward(self, x):
        return self.head(self.extractor(x))

    def backward(self, dlogits):
        dfeat = self.head.backward(dlogits)
        if self.frozen:
            return None
        return self.extractor.backward(dfeat)

    def trainable_parameters(self):
        if self.frozen:
            return [p for _, p in self.head.named_parameters()]
        return self.parameters()


def build_model(spec, head=None, seed=0, dtype=np.float32):
    head_spec = head or HeadSpec()
    if head_spec.input_dim is not None and head_spec.input_dim != spec.feature_dim:
        raise ConfigError(
            f"head input width {head_spec.input_dim} does not match "
            f"extractor feature width {spec.feature_dim}"
        )
    extractor = build_extractor(spec, seed=seed, dtype=dtype)
    if spec.pretrained_init == "imagenet":
        load_pretrained(extractor, spec.pretrained_path)
    rng_head = np.random.default_rng([int(seed), 0x4EAD])
    head_module = ClassifierHead(spec.feature_dim, head_spec, rng_head, dtype=dtype)
    return SingleViewModel(extractor, head_module, spec, head_spec)


def count_attention_blocks(model):
    return sum(1 for m in model.modules() if isinstance(m, CbamBlock))


def _eval_forward(fn):
    def wrapper(model, batch, *args, **kwargs):
        was_training = model.training
        model.train(False)
        try:
            return fn(model, batch, *args, **kwargs)
        finally:
            model.train(was_training)
    return wrapper


@_eval_forward
def forward_features(model, batch):
    """Inference-mode pooled features, (B, feature_dim)."""
    return model.extractor(batch)


@_eval_forward
def forward_logits(model, batch):
    """Inference-mode class logits, (B, 6)."""
    return model.forward(batch)
