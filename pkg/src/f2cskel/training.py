"""Optimization and evaluation: Adam with exponential LR decay, the training
loop with stratified validation and best-checkpoint tracking, crop
augmentation for oversized caches, and classification metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import configfile
from .dataset import ImageDataset
from .encoding import SkeletonImage
from .errors import ConfigError, FormatError
from .layers import softmax_cross_entropy_batch
from .network import ArchConfig, images_to_inputs, init_params, network_backward, network_forward
from .runio import atomic_write_text


@dataclass
class TrainConfig:
    base_lr: float = 0.001
    decay: float = 0.9  # per-epoch exponential factor
    epochs: int = 25
    batch_size: int = 32
    seed: int = 0
    precision: str = "f64"
    val_fraction: float = 0.2
    crops_per_sample: int = 20  # used when the cache is larger than the arch input

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if not 0 < self.decay <= 1:
            raise ConfigError("decay must be in (0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be at least 1")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if not 0 <= self.val_fraction < 0.5:
            raise ConfigError("val_fraction must be in [0, 0.5)")
        if self.crops_per_sample < 1:
            raise ConfigError("crops_per_sample must be at least 1")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


def train_config_to_dict(cfg: TrainConfig) -> dict[str, str]:
    return {
        "schema": "train",
        "schema_version": "1",
        "base_lr": repr(cfg.base_lr),
        "decay": repr(cfg.decay),
        "epochs": str(cfg.epochs),
        "batch_size": str(cfg.batch_size),
        "seed": str(cfg.seed),
        "precision": cfg.precision,
        "val_fraction": repr(cfg.val_fraction),
        "crops_per_sample": str(cfg.crops_per_sample),
    }


def load_train_config(path: str | Path) -> TrainConfig:
    cfg = configfile.load_config(path, schema="train", version=1)
    src = str(path)
    return TrainConfig(
        base_lr=configfile.get_float(cfg, "base_lr", src),
        decay=configfile.get_float(cfg, "decay", src),
        epochs=configfile.get_int(cfg, "epochs", src),
        batch_size=configfile.get_int(cfg, "batch_size", src),
        seed=configfile.get_int(cfg, "seed", src),
        precision=cfg.get("precision", "f64"),
        val_fraction=configfile.get_float(cfg, "val_fraction", src),
        crops_per_sample=configfile.get_int(cfg, "crops_per_sample", src),
    )


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """Standard bias-corrected Adam update, applied in place."""
    missing = set(params) - set(grads)
    if missing:
        raise ValueError(f"gradients missing for {sorted(missing)[:3]}...")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """lr(e) = base_lr * decay^e."""
    return cfg.base_lr * cfg.decay ** epoch


# --------------------------------------------------------------------------
# Crop augmentation


def _crop_offsets(count: int, seed, max_oy: int, max_ox: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.stack(
        [rng.integers(0, max_oy + 1, size=count), rng.integers(0, max_ox + 1, size=count)],
        axis=1,
    )


def augment_sbu(
    images: tuple[SkeletonImage, ...],
    count: int = 20,
    seed: int | np.random.SeedSequence = 0,
    crop_h: int = 224,
    crop_w: int = 224,
) -> list[tuple[SkeletonImage, ...]]:
    """Seeded random crops of one sample; identical offsets across all four streams."""
    h, w = images[0].height, images[0].width
    for img in images:
        if (img.height, img.width) != (h, w):
            raise ValueError("all stream images of one sample must share dims")
    if h < crop_h or w < crop_w:
        raise ValueError(f"cannot crop {crop_h}x{crop_w} from {h}x{w}")
    offsets = _crop_offsets(count, seed, h - crop_h, w - crop_w)
    out = []
    for oy, ox in offsets:
        out.append(
            tuple(
                SkeletonImage(
                    pixels=img.pixels[oy:oy + crop_h, ox:ox + crop_w],
                    basis=img.basis,
                    kind=img.kind,
                )
                for img in images
            )
        )
    return out


class _SampleView:
    """Batch loader mapping sample handles to byte quadruples of arch input size.

    When the cache images exceed the architecture's input dims, training
    samples are a fixed seeded set of crops per base image (the augmented
    dataset) and evaluation samples take the center crop.
    """

    def __init__(self, dataset: ImageDataset, arch: ArchConfig, cfg: TrainConfig):
        self.dataset = dataset
        self.arch = arch
        h, w = dataset.image_hw
        self.crop = (h, w) != (arch.image_h, arch.image_w)
        if self.crop and (h < arch.image_h or w < arch.image_w):
            raise ConfigError(
                f"cache images are {h}x{w} but the architecture needs"
                f" {arch.image_h}x{arch.image_w}; re-encode with matching dims"
            )
        if self.crop:
            children = np.random.SeedSequence(cfg.seed).spawn(len(dataset.names))
            self.offsets = np.stack(
                [
                    _crop_offsets(
                        cfg.crops_per_sample, child, h - arch.image_h, w - arch.image_w
                    )
                    for child in children
                ]
            )  # (N, crops, 2)
            self.center = ((h - arch.image_h) // 2, (w - arch.image_w) // 2)

    def train_samples(self, base_indices: np.ndarray) -> list[tuple[int, int]]:
        """(base index, crop index) handles; crop index -1 means no crop."""
        if not self.crop:
            return [(int(i), -1) for i in base_indices]
        crops = self.offsets.shape[1]
        return [(int(i), c) for i in base_indices for c in range(crops)]

    def eval_samples(self, base_indices: np.ndarray) -> list[tuple[int, int]]:
        return [(int(i), -2 if self.crop else -1) for i in base_indices]

    def load(self, handles: list[tuple[int, int]]) -> tuple[np.ndarray, np.ndarray]:
        """Handles -> ((B, 4, h, w, 3) bytes, (B,) labels)."""
        ah, aw = self.arch.image_h, self.arch.image_w
        quads = np.empty((len(handles), 4, ah, aw, 3), dtype=np.uint8)
        labels = np.empty(len(handles), dtype=np.int64)
        for k, (i, c) in enumerate(handles):
            img = self.dataset.images[i]
            if c == -1:
                quads[k] = img
            else:
                oy, ox = self.center if c == -2 else self.offsets[i, c]
                quads[k] = img[:, oy:oy + ah, ox:ox + aw]
            labels[k] = self.dataset.labels[i]
        return quads, labels


# --------------------------------------------------------------------------
# Metrics


@dataclass
class EvalReport:
    accuracy: float
    precision: np.ndarray  # (C,)
    recall: np.ndarray  # (C,)
    support: np.ndarray  # (C,) int
    confusion: np.ndarray  # (C, C) int, row = true class


def metrics_from_confusion(confusion: np.ndarray) -> EvalReport:
    confusion = np.asarray(confusion, dtype=np.int64)
    tp = np.diag(confusion).astype(np.float64)
    col = confusion.sum(axis=0).astype(np.float64)
    row = confusion.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, col, out=np.zeros_like(tp), where=col > 0)
    recall = np.divide(tp, row, out=np.zeros_like(tp), where=row > 0)
    total = confusion.sum()
    accuracy = float(tp.sum() / total) if total else 0.0
    return EvalReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        support=confusion.sum(axis=1),
        confusion=confusion,
    )


def evaluate(
    params: dict[str, np.ndarray],
    arch: ArchConfig,
    dataset: ImageDataset,
    indices: np.ndarray,
    cfg: TrainConfig | None = None,
) -> EvalReport:
    """Accuracy, per-class precision/recall, and the confusion matrix."""
    cfg = cfg or TrainConfig()
    if len(indices) == 0:
        raise ConfigError("cannot evaluate an empty sample set")
    num_classes = params["head/fc2/b"].shape[0]
    if int(dataset.labels[indices].max()) >= num_classes:
        raise ConfigError("dataset contains class ids beyond the checkpoint's classifier")
    view = _SampleView(dataset, arch, cfg)
    handles = view.eval_samples(indices)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for start in range(0, len(handles), cfg.batch_size):
        quads, labels = view.load(handles[start:start + cfg.batch_size])
        xs = images_to_inputs(quads, arch, dtype=cfg.dtype)
        logits, _ = network_forward(xs, params, arch, train=False)
        pred = logits.argmax(axis=1)
        np.add.at(confusion, (labels, pred), 1)
    return metrics_from_confusion(confusion)


def format_report(report: EvalReport) -> str:
    """Machine-parsable records, one per line; floats keep full precision."""
    lines = [f"accuracy\t{float(report.accuracy)!r}"]
    for c in range(len(report.precision)):
        lines.append(
            f"class\t{c}\t{float(report.precision[c])!r}\t{float(report.recall[c])!r}"
            f"\t{int(report.support[c])}"
        )
    for c, row in enumerate(report.confusion):
        lines.append("confusion\t%d\t%s" % (c, " ".join(str(int(v)) for v in row)))
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> EvalReport:
    accuracy = None
    classes: dict[int, tuple[float, float, int]] = {}
    conf_rows: dict[int, list[int]] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        if parts[0] == "accuracy":
            accuracy = float(parts[1])
        elif parts[0] == "class":
            classes[int(parts[1])] = (float(parts[2]), float(parts[3]), int(parts[4]))
        elif parts[0] == "confusion":
            conf_rows[int(parts[1])] = [int(v) for v in parts[2].split()]
        else:
            raise FormatError(f"unknown report record {parts[0]!r}")
    if accuracy is None or not classes or len(conf_rows) != len(classes):
        raise FormatError("incomplete report")
    n = len(classes)
    precision = np.array([classes[c][0] for c in range(n)])
    recall = np.array([classes[c][1] for c in range(n)])
    support = np.array([classes[c][2] for c in range(n)], dtype=np.int64)
    confusion = np.array([conf_rows[c] for c in range(n)], dtype=np.int64)
    return EvalReport(
        accuracy=accuracy, precision=precision, recall=recall, support=support,
        confusion=confusion,
    )


def format_report_human(report: EvalReport) -> str:
    """Table with per-class precision/recall as one-decimal percentages."""
    lines = [
        f"accuracy: {100.0 * report.accuracy:.1f}%",
        "",
        "class   prec.    rec.  support",
    ]
    for c in range(len(report.precision)):
        lines.append(
            f"{c:>5}  {100.0 * report.precision[c]:>6.1f}  {100.0 * report.recall[c]:>6.1f}"
            f"  {int(report.support[c]):>7}"
        )
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Training loop


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_acc: float


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    best_epoch: int
    metrics: list[EpochMetrics]
    num_classes: int
    val_names: list[str] = field(default_factory=list)


def write_metrics(path: str | Path, rows: list[EpochMetrics]) -> None:
    lines = ["epoch\tlr\ttrain_loss\ttrain_acc\tval_acc"]
    for r in rows:
        lines.append(f"{r.epoch}\t{r.lr!r}\t{r.train_loss!r}\t{r.train_acc!r}\t{r.val_acc!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_metrics(path: str | Path) -> list[EpochMetrics]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "epoch\tlr\ttrain_loss\ttrain_acc\tval_acc":
        raise FormatError(f"{path}: unexpected metrics header")
    rows = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        e, lr, tl, ta, va = ln.split("\t")
        rows.append(EpochMetrics(int(e), float(lr), float(tl), float(ta), float(va)))
    return rows


def _stratified_val_split(
    indices: np.ndarray, labels: np.ndarray, fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Hold out the last `fraction` of a seeded shuffle, per class."""
    train_idx: list[int] = []
    val_idx: list[int] = []
    for cls in np.unique(labels[indices]):
        cls_idx = indices[labels[indices] == cls]
        perm = cls_idx[rng.permutation(len(cls_idx))]
        k = int(len(perm) * fraction + 0.5)
        k = min(k, len(perm) - 1)  # never empty a class out of training
        if k > 0:
            val_idx.extend(perm[-k:])
            train_idx.extend(perm[:-k])
        else:
            train_idx.extend(perm)
    return np.array(sorted(train_idx), dtype=np.int64), np.array(sorted(val_idx), dtype=np.int64)


def train(
    dataset: ImageDataset,
    train_names: list[str],
    cfg: TrainConfig,
    arch: ArchConfig,
) -> TrainResult:
    """Seeded epoch/minibatch loop; retains the best-validation parameters.

    20% (configurable) of the training samples, stratified by class, form the
    validation set; per-epoch train loss/accuracy come from the training
    passes themselves.
    """
    name_to_idx = {n: i for i, n in enumerate(dataset.names)}
    try:
        base_indices = np.array([name_to_idx[n] for n in train_names], dtype=np.int64)
    except KeyError as exc:
        raise ConfigError(f"training split names sample {exc} absent from the cache") from None
    if len(base_indices) == 0:
        raise ConfigError("training split is empty")
    labels = dataset.labels
    if labels.min() < 0:
        raise ConfigError("negative class ids in dataset")
    num_classes = dataset.num_classes()
    if num_classes < 2:
        raise ConfigError("need at least 2 classes to train")

    seed_root = np.random.SeedSequence(cfg.seed)
    val_seed, shuffle_seed = seed_root.spawn(2)
    val_rng = np.random.default_rng(val_seed)
    shuffle_rng = np.random.default_rng(shuffle_seed)

    train_base, val_base = _stratified_val_split(
        base_indices, labels, cfg.val_fraction, val_rng
    )
    view = _SampleView(dataset, arch, cfg)
    train_handles = view.train_samples(train_base)
    val_handles = view.eval_samples(val_base)

    dtype = cfg.dtype
    params = init_params(cfg.seed, arch, num_classes, dtype=dtype)
    state = adam_init(params)

    best_val = -1.0
    best_epoch = -1
    best_params = {k: v.copy() for k, v in params.items()}
    rows: list[EpochMetrics] = []
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        order = shuffle_rng.permutation(len(train_handles))
        total_loss = 0.0
        correct = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_handles[i] for i in order[start:start + cfg.batch_size]]
            quads, batch_labels = view.load(batch)
            xs = images_to_inputs(quads, arch, dtype=dtype)
            logits, cache = network_forward(xs, params, arch, train=True)
            loss, dlogits = softmax_cross_entropy_batch(logits, batch_labels)
            grads, _ = network_backward(dlogits.astype(dtype, copy=False), cache, params, arch)
            adam_step(params, grads, state, lr)
            total_loss += loss * len(batch)
            correct += int((logits.argmax(axis=1) == batch_labels).sum())
        train_loss = total_loss / len(train_handles)
        train_acc = correct / len(train_handles)
        val_acc = (
            _subset_accuracy(params, arch, view, val_handles, cfg)
            if len(val_handles)
            else float("nan")
        )
        rows.append(EpochMetrics(epoch, lr, train_loss, train_acc, val_acc))
        if len(val_handles) and val_acc > best_val:
            best_val = val_acc
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
    if best_epoch < 0:  # no validation set: keep the final parameters
        best_epoch = cfg.epochs - 1
        best_params = {k: v.copy() for k, v in params.items()}
    return TrainResult(
        params=best_params,
        best_epoch=best_epoch,
        metrics=rows,
        num_classes=num_classes,
        val_names=[dataset.names[i] for i in val_base],
    )


def _subset_accuracy(params, arch, view, handles, cfg) -> float:
    correct = 0
    for start in range(0, len(handles), cfg.batch_size):
        quads, labels = view.load(handles[start:start + cfg.batch_size])
        xs = images_to_inputs(quads, arch, dtype=cfg.dtype)
        logits, _ = network_forward(xs, params, arch, train=False)
        correct += int((logits.argmax(axis=1) == labels).sum())
    return correct / len(handles)
