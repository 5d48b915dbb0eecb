"""Adam training loop, per-SNR evaluation, and report emission.

Training is fully deterministic under a fixed seed and single-threaded
execution: batch order, parameter init, and every update depend only on
the configs and the dataset.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import IQFrame, batches
from .errors import ConfigError, DataError, NumericError, ShapeError
from .layers import cross_entropy
from .model import (
    ModelConfig,
    ModelParams,
    build_model,
    frame_array,
    logits_batch,
    predict_array,
)
from .seeding import derive_seed
from .tensor import Tensor, default_dtype, set_default_dtype

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    clip_norm: float = 5.0  # global gradient norm; 0 disables
    dtype: str = "float32"  # training-speed switch; oracles stay float64

    def validate(self) -> None:
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("adam_beta1", "adam_beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must be in [0,1), got {b}")
        if self.adam_eps <= 0:
            raise ConfigError(f"adam_eps must be > 0, got {self.adam_eps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.clip_norm < 0:
            raise ConfigError(f"clip_norm must be >= 0, got {self.clip_norm}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def fresh(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)


@dataclass
class SnrConfusion:
    """Per-SNR K x K count matrices: rows true label, columns predicted."""

    matrices: dict[int, np.ndarray]
    class_names: list[str] | None = None


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              cfg: TrainConfig, t: int) -> None:
    """Standard Adam with bias correction, updating in place."""
    if t < 1:
        raise ShapeError(f"step index must be >= 1, got {t}")
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("params, grads, and state lengths disagree")
    b1, b2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.learning_rate
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for idx, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[idx].shape:
            raise ShapeError(f"tensor {idx}: shapes disagree ({p.shape} vs {g.shape})")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in tensor {idx} at step {t}")
        m = state.m[idx]
        v = state.v[idx]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def _clip_gradients(grads: list[np.ndarray], clip_norm: float, context: str) -> None:
    if clip_norm <= 0:
        return
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > clip_norm:
        scale = clip_norm / total
        for g in grads:
            g *= scale
        log.info("gradient norm %.3f clipped to %.1f (%s)", total, clip_norm, context)


def _as_arrays(frames: list[IQFrame]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([frame_array(f) for f in frames])
    y = np.asarray([f.class_index for f in frames], dtype=np.int64)
    return x, y


def train(cfg_model: ModelConfig, cfg_train: TrainConfig,
          train_set: list[IQFrame], val_set: list[IQFrame]
          ) -> tuple[ModelParams, TrainHistory]:
    """Train from scratch; returns final parameters and the epoch log."""
    cfg_model.validate()
    cfg_train.validate()
    if not train_set or not val_set:
        raise DataError("train and validation sets must be non-empty")

    previous_dtype = default_dtype()
    set_default_dtype(cfg_train.dtype)
    try:
        x_train, y_train = _as_arrays(train_set)
        x_val, y_val = _as_arrays(val_set)
        if y_train.max() >= cfg_model.num_classes or y_val.max() >= cfg_model.num_classes:
            raise DataError("class index exceeds the configured class count")

        params = build_model(cfg_model)
        tensors = params.tensors()
        arrays = [t.data for t in tensors]
        state = AdamState.fresh(arrays)
        history = TrainHistory()
        step = 0

        for epoch in range(cfg_train.epochs):
            epoch_seed = derive_seed(cfg_train.seed, "epoch", epoch)
            loss_sum = 0.0
            correct = 0
            for batch_no, batch_idx in enumerate(batches(list(range(len(train_set))),
                                                         cfg_train.batch_size, epoch_seed)):
                xb = Tensor(x_train[batch_idx])
                yb = y_train[batch_idx]
                logits = logits_batch(params, cfg_model, xb)
                loss = cross_entropy(logits, yb)
                if not np.isfinite(loss.item()):
                    raise NumericError(f"non-finite loss at epoch {epoch}, batch {batch_no}")
                loss.backward()
                grads = [t.grad for t in tensors]
                _clip_gradients(grads, cfg_train.clip_norm, f"epoch {epoch} batch {batch_no}")
                step += 1
                adam_step(arrays, grads, state, cfg_train, step)
                loss_sum += loss.item() * len(batch_idx)
                correct += int(np.sum(np.argmax(logits.data, axis=1) == yb))
            history.train_loss.append(loss_sum / len(train_set))
            history.train_acc.append(correct / len(train_set))
            val_preds = predict_array(params, cfg_model, x_val)
            history.val_acc.append(float(np.mean(val_preds == y_val)))
    finally:
        set_default_dtype(previous_dtype)

    return params, history


def evaluate(params: ModelParams, cfg_model: ModelConfig, test_set: list[IQFrame],
             class_names: list[str] | None = None
             ) -> tuple[SnrConfusion, dict[int, float], float]:
    """Per-SNR confusion matrices, per-SNR accuracy, overall accuracy."""
    if not test_set:
        raise DataError("test set must be non-empty")
    k = cfg_model.num_classes
    x, y = _as_arrays(test_set)
    if y.min() < 0 or y.max() >= k:
        raise DataError(f"class index out of range [0, {k}) in test data")
    preds = predict_array(params, cfg_model, x)

    matrices: dict[int, np.ndarray] = {}
    for frame, true, pred in zip(test_set, y, preds):
        snr = int(frame.snr_db)
        if snr not in matrices:
            matrices[snr] = np.zeros((k, k), dtype=np.int64)
        matrices[snr][true, pred] += 1

    accuracy_by_snr = {
        snr: float(np.trace(mat)) / float(mat.sum()) for snr, mat in matrices.items()
    }
    overall = float(np.mean(preds == y))
    return SnrConfusion(matrices, class_names), accuracy_by_snr, overall


# ---------------------------------------------------------------------------
# report files


def _svg_accuracy_chart(points: list[tuple[int, float]]) -> str:
    width, height = 640, 400
    left, right, top, bottom = 60, 20, 20, 50
    xs = [p[0] for p in points]
    x_lo, x_hi = min(xs), max(xs)
    span = x_hi - x_lo or 1

    def sx(v: float) -> float:
        return left + (v - x_lo) / span * (width - left - right)

    def sy(v: float) -> float:
        return top + (1.0 - v) * (height - top - bottom)

    poly = " ".join(f"{sx(s):.2f},{sy(a):.2f}" for s, a in points)
    ticks = []
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        ticks.append(f'<text x="{left - 8}" y="{sy(frac):.2f}" text-anchor="end" '
                     f'font-size="12">{frac:.2f}</text>')
    for s in xs:
        ticks.append(f'<text x="{sx(s):.2f}" y="{height - bottom + 18}" '
                     f'text-anchor="middle" font-size="12">{s}</text>')
    tick_body = "\n  ".join(ticks)
    return f"""<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">
  <rect x="0" y="0" width="{width}" height="{height}" fill="white"/>
  <line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>
  <line x1="{left}" y1="{height - bottom}" x2="{width - right}" y2="{height - bottom}" stroke="black"/>
  {tick_body}
  <text x="{(left + width - right) / 2}" y="{height - 10}" text-anchor="middle" font-size="14">SNR (dB)</text>
  <text x="16" y="{(top + height - bottom) / 2}" text-anchor="middle" font-size="14" transform="rotate(-90 16 {(top + height - bottom) / 2})">accuracy</text>
  <polyline fill="none" stroke="#1f6fb2" stroke-width="2" points="{poly}"/>
</svg>
"""


def emit_report(confusion: SnrConfusion, accuracy_by_snr: dict[int, float], out_dir) -> list:
    """Write per-SNR confusion CSVs, the accuracy curve CSV, and an SVG."""
    if not confusion.matrices:
        raise DataError("nothing to report: no confusion matrices")
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    k = next(iter(confusion.matrices.values())).shape[0]
    names = confusion.class_names or [f"class_{i}" for i in range(k)]
    written = []

    for snr in sorted(confusion.matrices):
        path = out / f"confusion_{snr}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", *names])
            for row_name, row in zip(names, confusion.matrices[snr]):
                writer.writerow([row_name, *(int(v) for v in row)])
        written.append(path)

    curve = sorted(accuracy_by_snr.items())
    curve_path = out / "accuracy_vs_snr.csv"
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["snr_db", "accuracy"])
        for snr, acc in curve:
            writer.writerow([snr, repr(float(acc))])
    written.append(curve_path)

    svg_path = out / "accuracy_vs_snr.svg"
    svg_path.write_text(_svg_accuracy_chart(curve), encoding="utf-8")
    written.append(svg_path)
    return written


def write_history(history: TrainHistory, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "train_acc", "val_acc"])
        for epoch, (loss, acc, val) in enumerate(
            zip(history.train_loss, history.train_acc, history.val_acc)
        ):
            writer.writerow([epoch, repr(loss), repr(acc), repr(val)])
