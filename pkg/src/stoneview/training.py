"""Training procedures: repeated seeded runs of the single-view model and of
the frozen-extractor multi-view model, checkpointing with integrity
checksums, and gradient verification.

Defaults follow the experiment protocol exactly: 30 epochs, batch size 32,
Adam at learning rate 2e-4, six-class cross-entropy, five runs per model
with per-run seeds derived as seed + run_index.
"""

import hashlib
import io
import json
import tempfile
import zipfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import _procenv
from .backbone import (
    BackboneSpec,
    ClassifierHead,
    HeadSpec,
    SingleViewModel,
    build_extractor,
    build_model,
)
from .dataset.constants import CLASS_TO_INDEX
from .dataset.tensorize import patches_to_arrays
from .errors import (
    CheckpointCorruptError,
    CheckpointMismatchError,
    ConfigError,
    DataError,
    TrainingDivergedError,
)
from .evaluation import MetricsReport, compute_metrics
from .fusion import (
    MultiViewModel,
    build_multiview,
    fuse,
    normalize_strategy,
    pair_index_streams,
    pair_views,
)
from .nn import Adam, cross_entropy, seed_dropout
from .nn.gradcheck import check_gradients, projection_loss
from .nn.layers import Dropout

CHECKPOINT_FORMAT_VERSION = 1
TEST_PAIRING_EPOCH = 1_000_003  # pairing stream reserved for test-time pairs

MODES = ("single_view_surface", "single_view_section", "single_view_mixed",
         "multi_view")
_MODE_VIEW = {"single_view_surface": "surface",
              "single_view_section": "section",
              "single_view_mixed": None}


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    optimizer: str = "adam"
    learning_rate: float = 2e-4
    loss: str = "cross_entropy"
    runs: int = 5
    seed: int = 0
    mode: str = "single_view_mixed"
    arch: str = "tiny"
    attention: bool = True
    fusion: str = None
    dropout_p: float = 0.5
    jobs: int = 1
    deterministic: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if self.loss != "cross_entropy":
            raise ConfigError(f"unsupported loss {self.loss!r}")
        if self.fusion is not None:
            self.fusion = normalize_strategy(self.fusion)
        if self.mode == "multi_view" and self.fusion is None:
            self.fusion = "max_pool"

    def hyperparameters(self):
        """The protocol-defining knobs, exactly as configured."""
        return {"epochs": self.epochs, "batch": self.batch_size,
                "lr": self.learning_rate, "dropout": self.dropout_p,
                "runs": self.runs}

    def as_dict(self):
        return asdict(self)

    @staticmethod
    def from_json(path, **overrides):
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        obj.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return TrainConfig(**obj)
        except TypeError as exc:
            raise ConfigError(f"bad train config: {exc}") from exc

    def backbone_spec(self):
        return BackboneSpec(architecture=self.arch,
                            attention_enabled=self.attention)

    def head_spec(self):
        return HeadSpec(dropout_p=self.dropout_p)


@dataclass
class RunRecord:
    run_index: int
    seed: int
    epoch_log: list = field(default_factory=list)
    test_metrics: MetricsReport = None
    checkpoint_path: str = None

    def as_dict(self):
        return {
            "run_index": self.run_index,
            "seed": self.seed,
            "epoch_log": self.epoch_log,
            "test_metrics": self.test_metrics.as_dict() if self.test_metrics else None,
            "checkpoint_path": self.checkpoint_path,
        }

    @staticmethod
    def from_dict(obj):
        metrics = obj.get("test_metrics")
        return RunRecord(
            run_index=obj["run_index"],
            seed=obj["seed"],
            epoch_log=obj["epoch_log"],
            test_metrics=MetricsReport.from_dict(metrics) if metrics else None,
            checkpoint_path=obj.get("checkpoint_path"),
        )


def parameter_checksum(module, prefix=""):
    """SHA-256 over all (sorted) parameter names and raw bytes."""
    digest = hashlib.sha256()
    for name, p in sorted(module.named_parameters(), key=lambda kv: kv[0]):
        if not name.startswith(prefix):
            continue
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(p.data).tobytes())
    return digest.hexdigest()


def _fit(model, get_epoch_data, config, run_seed, run_index):
    """Shared mini-batch loop. ``get_epoch_data(epoch)`` supplies that
    epoch's (inputs, labels); inputs may be one array or a tuple of arrays."""
    model.train(True)
    seed_dropout(model, run_seed)
    rng = np.random.default_rng([int(run_seed), 0x517])
    opt = Adam(model.trainable_parameters(), lr=config.learning_rate)
    log = []
    for epoch in range(config.epochs):
        inputs, labels = get_epoch_data(epoch)
        n = len(labels)
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for s in range(0, n, config.batch_size):
            sel = order[s:s + config.batch_size]
            if isinstance(inputs, tuple):
                xb = tuple(part[sel] for part in inputs)
            else:
                xb = inputs[sel]
            yb = labels[sel]
            logits = model.forward(xb)
            loss, dlogits = cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise TrainingDivergedError(run_index, run_seed, epoch)
            opt.zero_grad()
            model.backward(dlogits)
            opt.step()
            total_loss += loss * len(sel)
            correct += int((logits.argmax(axis=1) == yb).sum())
        log.append({"epoch": epoch, "loss": total_loss / n,
                    "accuracy": correct / n})
    model.train(False)
    return log


def _predict(forward, x, batch_size=512):
    parts = []
    n = len(x[0]) if isinstance(x, tuple) else len(x)
    for s in range(0, n, batch_size):
        xb = (tuple(part[s:s + batch_size] for part in x)
              if isinstance(x, tuple) else x[s:s + batch_size])
        parts.append(forward(xb).argmax(axis=1))
    return np.concatenate(parts)


def _view_subset(patches, view):
    if view is None:
        return list(patches)
    return [p for p in patches if p.view == view]


def _write_epoch_log(path, log):
    with open(path, "w", encoding="utf-8") as fh:
        for row in log:
            fh.write(json.dumps(row) + "\n")


def _ensure_out_dir(out_dir):
    if out_dir is None:
        out_dir = tempfile.mkdtemp(prefix="stoneview-ckpt-")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


# -- single-view --------------------------------------------------------

def _run_single_view(config, xtr, ytr, xte, yte, run_index, out_dir):
    run_seed = config.seed + run_index
    model = build_model(config.backbone_spec(), config.head_spec(),
                        seed=run_seed)
    log = _fit(model, lambda _epoch: (xtr, ytr), config, run_seed, run_index)
    model.trained = True
    preds = _predict(model.forward, xte)
    metrics = compute_metrics(preds, yte)
    ckpt = str(Path(out_dir) / f"run{run_index}.ckpt")
    save_checkpoint(model, ckpt, train_fingerprint=config.as_dict())
    _write_epoch_log(Path(out_dir) / f"run{run_index}_epochs.jsonl", log)
    return RunRecord(run_index=run_index, seed=run_seed, epoch_log=log,
                     test_metrics=metrics, checkpoint_path=ckpt)


def _sv_worker(payload):
    config = TrainConfig(**payload["config"])
    rec = _run_single_view(
        config, payload["xtr"], payload["ytr"], payload["xte"], payload["yte"],
        payload["run_index"], payload["out_dir"],
    )
    return rec.as_dict()


def _pool(jobs):
    return ProcessPoolExecutor(
        max_workers=jobs,
        mp_context=get_context("spawn"),
        initializer=_procenv.limit_blas_threads,
    )


def train_single_view(config, data, out_dir=None):
    """Run ``config.runs`` independent trainings of the single-view model.

    ``data`` maps split names to patch lists ({"train": [...], "test":
    [...]}); the mode's view filter selects the patches. Returns the first
    run's model plus one RunRecord per run. ``config.jobs`` bounds run
    parallelism.
    """
    if config.mode == "multi_view":
        raise ConfigError("use train_multiview for multi_view mode")
    view = _MODE_VIEW[config.mode]
    train_patches = _view_subset(data["train"], view)
    test_patches = _view_subset(data["test"], view)
    if not train_patches or not test_patches:
        raise ConfigError(f"empty split for mode {config.mode}")
    xtr, ytr = patches_to_arrays(train_patches)
    xte, yte = patches_to_arrays(test_patches)
    out_dir = _ensure_out_dir(out_dir)

    records = []
    if config.jobs > 1 and config.runs > 1:
        payloads = [{"config": config.as_dict(), "xtr": xtr, "ytr": ytr,
                     "xte": xte, "yte": yte, "run_index": r,
                     "out_dir": str(out_dir)} for r in range(config.runs)]
        with _pool(config.jobs) as pool:
            for rec in pool.map(_sv_worker, payloads):
                records.append(RunRecord.from_dict(rec))
    else:
        for r in range(config.runs):
            records.append(_run_single_view(config, xtr, ytr, xte, yte, r,
                                            out_dir))
    model, _ = load_checkpoint(records[0].checkpoint_path)
    return model, records


# -- multi-view ---------------------------------------------------------

def extract_feature_table(extractor, patches, batch_size=512):
    """Frozen-extractor features for every patch, plus an id -> row map."""
    x, _ = patches_to_arrays(patches)
    was = extractor.training
    extractor.train(False)
    try:
        rows = [extractor(x[s:s + batch_size])
                for s in range(0, len(patches), batch_size)]
    finally:
        extractor.train(was)
    feats = np.concatenate(rows, axis=0)
    return feats, {id(p): i for i, p in enumerate(patches)}


class _HeadOnly:
    """Adapter letting the shared fit loop train a multi-view head on
    precomputed fused features."""

    def __init__(self, model):
        self.model = model

    def train(self, flag=True):
        self.model.head.train(flag)

    def trainable_parameters(self):
        return self.model.trainable_parameters()

    def forward(self, fused):
        return self.model.forward_from_features(fused)

    def backward(self, dlogits):
        return self.model.backward(dlogits)

    def modules(self):
        return self.model.head.modules()


def _pairs_to_fused(pairs, feats, row_of, strategy):
    sur_rows = np.array([row_of[id(p.surface)] for p in pairs])
    sec_rows = np.array([row_of[id(p.section)] for p in pairs])
    fused = fuse(feats[sur_rows], feats[sec_rows], strategy)
    labels = np.array([CLASS_TO_INDEX[p.label] for p in pairs], dtype=np.int64)
    return fused, labels


def _class_view_rows(patches, row_of):
    """Per-class arrays of feature rows for each view, in patch order (the
    same order pair_views sees, so index streams line up exactly)."""
    table = {ci: {"surface": [], "section": []}
             for ci in range(len(CLASS_TO_INDEX))}
    for p in patches:
        table[CLASS_TO_INDEX[p.stone_class]][p.view].append(row_of[id(p)])
    out = {}
    for ci, views in table.items():
        if not any(len(r) for r in views.values()):
            continue
        if not all(len(r) for r in views.values()):
            raise DataError(f"class index {ci} is missing one view entirely")
        out[ci] = {v: np.asarray(rows, dtype=np.int64)
                   for v, rows in views.items()}
    return out


def _fused_epoch(class_rows, feats, strategy, seed, epoch):
    fused_parts, label_parts = [], []
    for ci in sorted(class_rows):
        sur_rows = class_rows[ci]["surface"]
        sec_rows = class_rows[ci]["section"]
        sur_idx, sec_idx = pair_index_streams(len(sur_rows), len(sec_rows),
                                              seed, epoch, ci)
        fused_parts.append(fuse(feats[sur_rows[sur_idx]],
                                feats[sec_rows[sec_idx]], strategy))
        label_parts.append(np.full(len(sur_idx), ci, dtype=np.int64))
    return np.concatenate(fused_parts), np.concatenate(label_parts)


def _run_multiview(config, base, feats_tr, class_rows_tr,
                   fused_te, yte, run_index, out_dir):
    run_seed = config.seed + run_index
    model = build_multiview(base, config.fusion, head=config.head_spec(),
                            seed=run_seed)
    frozen_before = parameter_checksum(model, prefix="surface_extractor.")

    def epoch_data(epoch):
        return _fused_epoch(class_rows_tr, feats_tr, config.fusion,
                            run_seed, epoch)

    log = _fit(_HeadOnly(model), epoch_data, config, run_seed, run_index)
    model.trained = True
    frozen_after = parameter_checksum(model, prefix="surface_extractor.")
    assert frozen_before == frozen_after, "frozen extractor drifted"
    preds = _predict(model.forward_from_features, fused_te)
    metrics = compute_metrics(preds, yte)
    ckpt = str(Path(out_dir) / f"run{run_index}.ckpt")
    save_checkpoint(model, ckpt, train_fingerprint=config.as_dict())
    _write_epoch_log(Path(out_dir) / f"run{run_index}_epochs.jsonl", log)
    return model, RunRecord(run_index=run_index, seed=run_seed, epoch_log=log,
                            test_metrics=metrics, checkpoint_path=ckpt)


def train_multiview(config, base, data, out_dir=None):
    """Train the fusion head on a frozen duplicated extractor.

    ``base`` is a trained mixed-view single-view model or a checkpoint path.
    Extractor features are computed once and cached; train pairings are
    re-drawn per epoch, while test pairs come from one fixed stream so
    metrics are comparable across runs and models sharing a seed.
    """
    if config.mode != "multi_view":
        raise ConfigError("train_multiview requires multi_view mode")
    if isinstance(base, (str, Path)):
        base, _ = load_checkpoint(base, expected_kind="single_view")
    if not isinstance(base, SingleViewModel):
        raise CheckpointMismatchError("multi-view base must be single-view")
    if base.backbone_spec.architecture != config.arch:
        raise CheckpointMismatchError(
            f"base checkpoint architecture {base.backbone_spec.architecture!r} "
            f"does not match configured {config.arch!r}"
        )
    train_patches = list(data["train"])
    test_patches = list(data["test"])
    missing = [v for v in ("surface", "section")
               if not any(p.view == v for p in train_patches)]
    if missing:
        raise ConfigError(f"multi-view training needs both views; missing {missing}")
    feats_tr, row_tr = extract_feature_table(base.extractor, train_patches)
    feats_te, row_te = extract_feature_table(base.extractor, test_patches)
    class_rows_tr = _class_view_rows(train_patches, row_tr)
    test_pairs = pair_views(test_patches, config.seed, TEST_PAIRING_EPOCH)
    fused_te, yte = _pairs_to_fused(test_pairs, feats_te, row_te, config.fusion)
    out_dir = _ensure_out_dir(out_dir)

    model = None
    records = []
    if config.jobs > 1 and config.runs > 1:
        payloads = [{"config": config.as_dict(),
                     "base_state": {k: v for k, v in base.extractor.state_dict().items()},
                     "backbone_spec": asdict(base.backbone_spec),
                     "feats_tr": feats_tr, "class_rows_tr": class_rows_tr,
                     "fused_te": fused_te, "yte": yte,
                     "run_index": r, "out_dir": str(out_dir)}
                    for r in range(config.runs)]
        with _pool(config.jobs) as pool:
            for rec in pool.map(_mv_worker, payloads):
                records.append(RunRecord.from_dict(rec))
        model, _ = load_checkpoint(records[0].checkpoint_path)
    else:
        for r in range(config.runs):
            m, rec = _run_multiview(config, base, feats_tr, class_rows_tr,
                                    fused_te, yte, r, out_dir)
            records.append(rec)
            if model is None:
                model = m
    return model, records


def _mv_worker(payload):
    config = TrainConfig(**payload["config"])
    spec_dict = dict(payload["backbone_spec"])
    spec_dict["pretrained_init"] = "random"
    base = build_model(BackboneSpec(**spec_dict), config.head_spec(), seed=0)
    base.extractor.load_state_dict(payload["base_state"])
    base.trained = True
    _, rec = _run_multiview(config, base, payload["feats_tr"],
                            payload["class_rows_tr"], payload["fused_te"],
                            payload["yte"], payload["run_index"],
                            payload["out_dir"])
    return rec.as_dict()


# -- checkpointing ------------------------------------------------------

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)  # fixed entry dates keep archives byte-stable


def _zip_entry(zf, name, data):
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, data)


def _state_digest(state):
    digest = hashlib.sha256()
    for name in sorted(state):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(state[name]).tobytes())
    return digest.hexdigest()


def save_checkpoint(model, path, train_fingerprint=None):
    """Single-archive checkpoint: parameters + metadata + SHA-256 checksum."""
    if isinstance(model, MultiViewModel):
        kind = "multi_view"
        extra = {"strategy": model.strategy}
    elif isinstance(model, SingleViewModel):
        kind = "single_view"
        extra = {}
    else:
        raise ConfigError(f"cannot checkpoint {type(model).__name__}")
    state = {k: np.ascontiguousarray(v) for k, v in model.state_dict().items()}
    head_spec = asdict(model.head_spec)
    head_spec["layer_widths"] = list(head_spec["layer_widths"])
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": kind,
        "backbone_spec": asdict(model.backbone_spec),
        "head_spec": head_spec,
        "trained": bool(model.trained),
        "train_fingerprint": train_fingerprint,
        "params_sha256": _state_digest(state),
        **extra,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        _zip_entry(zf, "meta.json", json.dumps(meta, indent=2, sort_keys=True))
        for name in sorted(state):
            buf = io.BytesIO()
            np.save(buf, state[name])
            _zip_entry(zf, f"params/{name}.npy", buf.getvalue())
    tmp.replace(path)
    return path


def load_checkpoint(path, expected_kind=None, expected_arch=None):
    """Rebuild a model from a checkpoint; verifies the payload checksum."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            state = {}
            for entry in zf.namelist():
                if entry.startswith("params/") and entry.endswith(".npy"):
                    name = entry[len("params/"):-len(".npy")]
                    state[name] = np.load(io.BytesIO(zf.read(entry)))
    except (zipfile.BadZipFile, KeyError, ValueError) as exc:
        raise CheckpointCorruptError(f"unreadable checkpoint {path}: {exc}") from exc
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointMismatchError(
            f"checkpoint format {meta.get('format_version')} unsupported"
        )
    if _state_digest(state) != meta["params_sha256"]:
        raise CheckpointCorruptError(
            f"checkpoint {path} failed its integrity checksum"
        )
    if expected_kind and meta["kind"] != expected_kind:
        raise CheckpointMismatchError(
            f"expected {expected_kind} checkpoint, found {meta['kind']}"
        )
    spec_dict = dict(meta["backbone_spec"])
    if expected_arch and spec_dict["architecture"] != expected_arch:
        raise CheckpointMismatchError(
            f"expected architecture {expected_arch!r}, found "
            f"{spec_dict['architecture']!r}"
        )
    spec_dict["pretrained_init"] = "random"  # weights come from the payload
    spec = BackboneSpec(**spec_dict)
    head_dict = dict(meta["head_spec"])
    head_dict["layer_widths"] = tuple(head_dict["layer_widths"])
    head_spec = HeadSpec(**head_dict)
    if meta["kind"] == "single_view":
        model = build_model(spec, head_spec, seed=0)
        model.load_state_dict(state)
    else:
        width = (spec.feature_dim if meta["strategy"] == "max_pool"
                 else 2 * spec.feature_dim)
        extractors = [build_extractor(spec, seed=0) for _ in range(2)]
        head = ClassifierHead(width, head_spec, np.random.default_rng(0))
        model = MultiViewModel(extractors[0], extractors[1], meta["strategy"],
                               head, spec, head_spec)
        model.load_state_dict(state)
    model.trained = bool(meta.get("trained", False))
    return model, meta


# -- gradient verification ----------------------------------------------

def verify_gradients(target, sample=None, tolerance=1e-4, step=1e-5,
                     sample_fraction=1.0, seed=0):
    """Analytic-vs-numeric gradient report for a block or a full model.

    A 64-bit target is expected. When ``sample`` contains labels the loss is
    the six-class cross-entropy; otherwise a fixed random projection of the
    block output. Dropout layers are silenced for the comparison (the check
    needs a deterministic function); batch norm stays in batch-statistics
    mode.
    """
    rng = np.random.default_rng([int(seed), 0x6C])
    sample = sample or {}
    x = sample.get("x")
    if x is None:
        raise ConfigError("verify_gradients needs sample={'x': ...}")
    labels = sample.get("labels")
    saved_ps = []
    for m in target.modules():
        if isinstance(m, Dropout):
            saved_ps.append((m, m.p))
            m.p = 0.0
    target.train(True)
    try:
        if labels is None:
            loss_fn = projection_loss(target, x, rng=rng)
        else:
            def loss_fn():
                logits = target.forward(x)
                loss, dlogits = cross_entropy(logits, labels)
                return loss, (lambda: target.backward(dlogits))
        return check_gradients(target, loss_fn, tolerance=tolerance,
                               step=step, sample_fraction=sample_fraction,
                               rng=rng)
    finally:
        target.train(False)
        for m, p in saved_ps:
            m.p = p
