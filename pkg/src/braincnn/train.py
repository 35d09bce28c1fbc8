"""Training loop, early stopping, checkpoint container, evaluation metrics,
and history export (CSV table + SVG chart)."""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .data import AugmentParams, DatasetIndex, load_and_preprocess, make_batches
from .errors import (CheckpointCorruptError, CheckpointFormatError,
                     CheckpointVersionError, ClassMismatchError, DataError,
                     NumericalError, ShapeError, TrainingDiverged)
from .layers import (ConvGeometry, LayerSpec, ModelSpec, ParameterSet,
                     backward_pass, forward_pass, init_parameters)
from .optim import (AdamaxHyper, AdamaxState, adamax_step,
                    categorical_cross_entropy)
from .rng import derived_rng


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    patience: int = 5
    min_delta: float = 0.0
    hyper: AdamaxHyper = field(default_factory=AdamaxHyper)
    init_seed: int = 1
    shuffle_seed: int = 2
    augment_seed: int = 3
    augment: AugmentParams | None = None
    image_size: int = 224
    loss_reduction: str = "mean"
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ShapeError(f"invalid training config: {self}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0         # 1-based
    stop_reason: str = ""

    @property
    def val_losses(self):
        return [r.val_loss for r in self.records]


@dataclass
class Checkpoint:
    model: ModelSpec
    pset: ParameterSet
    class_names: list[str]
    meta: dict = field(default_factory=dict)
    version: int = 1


def early_stop_check(validation_losses, patience: int, min_delta: float = 0.0) -> str:
    """'stop' when no strict improvement happened in the last `patience`
    epochs, else 'continue'."""
    if not validation_losses:
        raise ShapeError("empty loss list")
    best_pos = 0
    best = validation_losses[0]
    for i, v in enumerate(validation_losses[1:], start=1):
        if v < best - min_delta:
            best = v
            best_pos = i
    since_best = len(validation_losses) - 1 - best_pos
    return "stop" if since_best >= patience else "continue"


def _epoch_pass(model, pset, index, config, epoch, train: bool,
                state: AdamaxState | None, loader):
    """One pass over a partition; returns (mean loss, accuracy)."""
    total_loss = 0.0
    correct = 0
    seen = 0
    aug = config.augment if train else None
    drop_rng = derived_rng(config.init_seed, epoch)
    for images, labels in make_batches(
            index, config.batch_size, shuffle=train,
            shuffle_seed=int(derived_rng(config.shuffle_seed, epoch).integers(2 ** 62)),
            augment_params=aug,
            augment_seed=int(derived_rng(config.augment_seed, epoch).integers(2 ** 62)),
            loader=loader, image_size=config.image_size):
        if train:
            probs, caches = forward_pass(model, pset, images, "train", drop_rng)
        else:
            probs, _ = forward_pass(model, pset, images, "infer")
        batch_loss = categorical_cross_entropy(probs, labels, config.loss_reduction)
        if not np.isfinite(batch_loss):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
        total_loss += batch_loss * len(images)
        correct += int((probs.argmax(axis=1) == labels.argmax(axis=1)).sum())
        seen += len(images)
        if train:
            # fused softmax/cross-entropy adjoint enters below the softmax layer
            logits_grad = (probs - labels)
            if config.loss_reduction == "mean":
                logits_grad = logits_grad / len(images)
            grads = backward_pass(model, pset, caches, logits_grad, from_logits=True)
            adamax_step(pset.params, grads, state, config.hyper)
    return total_loss / seen, correct / seen


def train(model: ModelSpec, train_idx: DatasetIndex, val_idx: DatasetIndex,
          config: TrainConfig, loader=load_and_preprocess):
    """Full training run; returns (TrainingHistory, best Checkpoint).

    The checkpoint is overwritten (in memory, and on disk when
    config.checkpoint_path is set) whenever validation loss strictly
    improves; on divergence the last good checkpoint survives.
    """
    if not train_idx.entries or not val_idx.entries:
        raise DataError("train and validation partitions must be non-empty")
    if len(train_idx.class_names) != model.class_count:
        raise DataError(
            f"model expects {model.class_count} classes, dataset has "
            f"{len(train_idx.class_names)}")
    pset = init_parameters(model, derived_rng(config.init_seed))
    state = AdamaxState.for_params(pset.params)
    history = TrainingHistory()
    best: Checkpoint | None = None
    best_loss = np.inf
    for epoch in range(1, config.epochs + 1):
        try:
            tr_loss, tr_acc = _epoch_pass(model, pset, train_idx, config, epoch,
                                          True, state, loader)
            va_loss, va_acc = _epoch_pass(model, pset, val_idx, config, epoch,
                                          False, None, loader)
        except (TrainingDiverged, NumericalError) as e:
            history.stop_reason = f"diverged: {e}"
            raise TrainingDiverged(str(e)) from None
        history.records.append(EpochRecord(epoch, tr_loss, tr_acc, va_loss, va_acc))
        if va_loss < best_loss - config.min_delta:
            best_loss = va_loss
            history.best_epoch = epoch
            best = Checkpoint(model, pset.copy(), list(train_idx.class_names),
                              meta={"epoch": epoch, "val_loss": va_loss})
            if config.checkpoint_path:
                save_checkpoint(best, config.checkpoint_path)
        if early_stop_check(history.val_losses, config.patience,
                            config.min_delta) == "stop":
            history.stop_reason = f"early stop at epoch {epoch}"
            break
    else:
        history.stop_reason = f"reached max epochs ({config.epochs})"
    return history, best


# ------------------------------------------------------------------ metrics

@dataclass
class EvaluationReport:
    loss: float
    accuracy: float
    confusion: np.ndarray          # rows true, cols predicted
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    incorrect: int
    incorrect_pct: float
    class_names: list[str]


def classification_report(confusion: np.ndarray, class_names, loss=0.0) -> EvaluationReport:
    """Derive every report field from a confusion matrix (integer tallies)."""
    confusion = np.asarray(confusion, dtype=np.int64)
    total = int(confusion.sum())
    trace = int(np.trace(confusion))
    support = confusion.sum(axis=1)
    pred_totals = confusion.sum(axis=0)
    diag = np.diag(confusion).astype(np.float64)
    with np.errstate(invalid="ignore"):
        precision = np.where(pred_totals > 0, diag / np.maximum(pred_totals, 1), 0.0)
        recall = np.where(support > 0, diag / np.maximum(support, 1), 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / np.where(denom > 0, denom, 1), 0.0)
    incorrect = total - trace
    return EvaluationReport(
        loss=loss, accuracy=trace / total, confusion=confusion,
        precision=precision, recall=recall, f1=f1, support=support,
        incorrect=incorrect, incorrect_pct=100.0 * incorrect / total,
        class_names=list(class_names))


def evaluate(ckpt: Checkpoint, partition: DatasetIndex, batch_size=32,
             loader=load_and_preprocess, image_size=None) -> EvaluationReport:
    if not partition.entries:
        raise DataError("evaluation partition is empty")
    if partition.class_names != ckpt.class_names:
        raise ClassMismatchError(
            f"checkpoint classes {ckpt.class_names} != dataset classes "
            f"{partition.class_names}")
    size = image_size or ckpt.model.input_shape[0]
    c = ckpt.model.class_count
    confusion = np.zeros((c, c), dtype=np.int64)
    total_loss = 0.0
    seen = 0
    for images, labels in make_batches(partition, batch_size, loader=loader,
                                       image_size=size):
        probs, _ = forward_pass(ckpt.model, ckpt.pset, images, "infer")
        total_loss += categorical_cross_entropy(probs, labels) * len(images)
        seen += len(images)
        pred = probs.argmax(axis=1)
        true = labels.argmax(axis=1)
        for t, p in zip(true, pred):
            confusion[t, p] += 1
    return classification_report(confusion, partition.class_names,
                                 loss=total_loss / seen)


# --------------------------------------------------------------- checkpoints

MAGIC = b"BRCNNCK1"
FORMAT_VERSION = 1


def _geom_to_dict(g: ConvGeometry | None):
    return None if g is None else {"kernel_h": g.kernel_h, "kernel_w": g.kernel_w,
                                   "stride": g.stride, "padding": g.padding}


def _model_to_dict(model: ModelSpec) -> dict:
    layers = []
    for l in model.layers:
        d = asdict(l)
        d["geometry"] = _geom_to_dict(l.geometry)
        layers.append(d)
    return {"layers": layers, "input_shape": list(model.input_shape),
            "class_count": model.class_count}


def _model_from_dict(d: dict) -> ModelSpec:
    layers = []
    for ld in d["layers"]:
        ld = dict(ld)
        g = ld.pop("geometry")
        layers.append(LayerSpec(geometry=ConvGeometry(**g) if g else None, **ld))
    return ModelSpec(tuple(layers), tuple(d["input_shape"]), d["class_count"])


def save_checkpoint(ckpt: Checkpoint, path):
    """Binary container: magic, version, JSON header with a shape table,
    then raw little-endian tensor buffers in header order."""
    tensors = []
    buffers = []
    for group, d in (("params", ckpt.pset.params), ("buffers", ckpt.pset.buffers)):
        for name in sorted(d):
            arr = d[name]
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            tensors.append({"group": group, "name": name,
                            "shape": list(arr.shape), "dtype": str(arr.dtype)})
            buffers.append(le.tobytes())
    header = json.dumps({
        "model": _model_to_dict(ckpt.model),
        "class_names": ckpt.class_names,
        "meta": ckpt.meta,
        "tensors": tensors,
    }, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for b in buffers:
            f.write(b)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) + 12 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"not a checkpoint file: {path}")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint version {version} in {path}")
    (hlen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    if off + hlen > len(raw):
        raise CheckpointCorruptError(f"truncated header in {path}")
    try:
        header = json.loads(raw[off:off + hlen].decode())
        model = _model_from_dict(header["model"])
        class_names = list(header["class_names"])
        meta = dict(header["meta"])
        tensors = list(header["tensors"])
    except (UnicodeDecodeError, ValueError, KeyError, TypeError, ShapeError) as e:
        raise CheckpointCorruptError(f"corrupt header in {path}: {e}") from None
    off += hlen
    pset = ParameterSet()
    for t in tensors:
        try:
            dtype = np.dtype(t["dtype"])
            shape = tuple(int(s) for s in t["shape"])
            group, name = t["group"], t["name"]
        except (TypeError, ValueError, KeyError) as e:
            raise CheckpointCorruptError(f"bad shape table in {path}: {e}") from None
        nbytes = dtype.itemsize * int(np.prod(shape))
        if off + nbytes > len(raw):
            raise CheckpointCorruptError(f"truncated tensor {t['name']} in {path}")
        arr = np.frombuffer(raw, dtype=dtype.newbyteorder("<"), count=int(np.prod(shape)),
                            offset=off).reshape(shape).astype(dtype)
        off += nbytes
        target = pset.params if group == "params" else pset.buffers
        target[name] = arr.copy()
    if off != len(raw):
        raise CheckpointCorruptError(f"trailing bytes in {path}")
    return Checkpoint(model, pset, class_names, meta, version)


# ------------------------------------------------------------------- export

def history_csv(history: TrainingHistory) -> str:
    lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
    for r in history.records:
        lines.append(f"{r.epoch},{r.train_loss:.9g},{r.train_acc:.9g},"
                     f"{r.val_loss:.9g},{r.val_acc:.9g}")
    return "\n".join(lines) + "\n"


def _svg_panel(out, title, series, y_max, x_count, ox, oy, w, h):
    out.write(f'<g data-panel="{title}" data-y-max="{y_max:.9g}">\n')
    out.write(f'<rect x="{ox}" y="{oy}" width="{w}" height="{h}" '
              'fill="none" stroke="black"/>\n')
    out.write(f'<text x="{ox}" y="{oy - 6}" font-size="12">{title} '
              f'(y: 0..{y_max:.4g})</text>\n')
    for si, (label, values) in enumerate(series):
        pts = []
        for i, v in enumerate(values):
            x = ox + (w * i / max(x_count - 1, 1))
            y = oy + h - (h * v / y_max if y_max > 0 else 0)
            pts.append(f"{x:.3f},{y:.3f}")
        color = ("steelblue", "darkorange")[si % 2]
        out.write(f'<polyline fill="none" stroke="{color}" data-series="{label}" '
                  f'points="{" ".join(pts)}"/>\n')
    out.write("</g>\n")


def history_svg(history: TrainingHistory) -> str:
    """Two stacked panels (losses, accuracies) as a deterministic SVG."""
    records = history.records
    n = len(records)
    loss_max = max(max(r.train_loss for r in records),
                   max(r.val_loss for r in records)) * 1.05
    acc_max = max(max(r.train_acc for r in records),
                  max(r.val_acc for r in records)) * 1.05
    out = io.StringIO()
    out.write('<svg xmlns="http://www.w3.org/2000/svg" width="640" height="480" '
              'viewBox="0 0 640 480">\n')
    _svg_panel(out, "loss",
               [("train_loss", [r.train_loss for r in records]),
                ("val_loss", [r.val_loss for r in records])],
               loss_max, n, 40, 30, 560, 180)
    _svg_panel(out, "accuracy",
               [("train_acc", [r.train_acc for r in records]),
                ("val_acc", [r.val_acc for r in records])],
               acc_max, n, 40, 270, 560, 180)
    out.write("</svg>\n")
    return out.getvalue()


def export_history(history: TrainingHistory, directory):
    """Write history.csv and curves.svg; byte-stable for identical input."""
    if not history.records:
        raise ShapeError("cannot export an empty history")
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
        (d / "history.csv").write_text(history_csv(history))
        (d / "curves.svg").write_text(history_svg(history))
    except OSError as e:
        raise DataError(f"cannot write history to {d}: {e}") from None
    return d / "history.csv", d / "curves.svg"
