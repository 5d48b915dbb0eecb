"""The full classifier: residual front-end, conv reduction, attention
BiLSTM, and a three-layer dense head, assembled from one config record.

Pipeline per frame: (2, T) tensor -> residual blocks (channels
2 -> 32 -> 32) -> conv(k=3, s=2) + relu -> transpose to time-major ->
stacked BiLSTM -> attention pooling -> dense(128) + relu ->
dense(64) + relu -> dense(K) -> softmax.
"""

from __future__ import annotations

import json
import struct
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .dataset import IQFrame
from .errors import ConfigError, ShapeError, TruncatedError, VersionError, BadMagicError
from .layers import (
    AttentionParams,
    Conv1dParams,
    DenseParams,
    LstmParams,
    ResidualBlockParams,
    attention_pool,
    bilstm_forward,
    conv1d,
    dense_forward,
    relu,
    residual_block_forward,
)
from .seeding import philox
from .tensor import Tensor, default_dtype, reshape, softmax, transpose

RESIDUAL_KERNEL = 3

PARAMS_MAGIC = b"RMRA"
PARAMS_VERSION = 1


@dataclass
class ModelConfig:
    num_classes: int
    frame_length: int = 128
    in_channels: int = 2
    residual_channels: int = 32
    residual_blocks: int = 2
    reduce_kernel: int = 3
    reduce_stride: int = 2
    lstm_hidden: int = 64
    lstm_layers: int = 2
    dense_sizes: tuple[int, ...] = (128, 64)
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        for name in ("frame_length", "in_channels", "residual_channels", "residual_blocks",
                     "reduce_kernel", "reduce_stride", "lstm_hidden", "lstm_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if len(self.dense_sizes) != 2 or any(s < 1 for s in self.dense_sizes):
            raise ConfigError(f"dense_sizes must be two positive sizes, got {self.dense_sizes}")
        if self.reduce_kernel % 2 == 0 or RESIDUAL_KERNEL % 2 == 0:
            raise ConfigError(f"reduce_kernel must be odd, got {self.reduce_kernel}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.sequence_length() < 1:
            raise ConfigError(
                f"frame_length {self.frame_length} too short for reduce_stride {self.reduce_stride}"
            )

    def sequence_length(self) -> int:
        """Time steps seen by the LSTM after the reduction conv."""
        pad = (self.reduce_kernel - 1) // 2
        return (self.frame_length + 2 * pad - self.reduce_kernel) // self.reduce_stride + 1

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "frame_length": self.frame_length,
            "in_channels": self.in_channels,
            "residual_channels": self.residual_channels,
            "residual_blocks": self.residual_blocks,
            "reduce_kernel": self.reduce_kernel,
            "reduce_stride": self.reduce_stride,
            "lstm_hidden": self.lstm_hidden,
            "lstm_layers": self.lstm_layers,
            "dense_sizes": list(self.dense_sizes),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "dense_sizes" in kwargs:
            kwargs["dense_sizes"] = tuple(kwargs["dense_sizes"])
        return cls(**kwargs)


class ModelParams:
    """All trainable tensors of the network, in a fixed build order."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None):
        cfg.validate()
        self.blocks: list[ResidualBlockParams] = []
        ch = cfg.in_channels
        for _ in range(cfg.residual_blocks):
            out_ch = cfg.residual_channels
            conv1 = Conv1dParams(
                _weight(rng, (out_ch, ch, RESIDUAL_KERNEL)),
                _zeros((out_ch,)),
            )
            conv2 = Conv1dParams(
                _weight(rng, (out_ch, out_ch, RESIDUAL_KERNEL)),
                _zeros((out_ch,)),
            )
            proj = None
            if ch != out_ch:
                proj = Conv1dParams(_weight(rng, (out_ch, ch, 1)), _zeros((out_ch,)))
            self.blocks.append(ResidualBlockParams(conv1, conv2, proj))
            ch = out_ch

        self.reduce = Conv1dParams(
            _weight(rng, (cfg.residual_channels, ch, cfg.reduce_kernel)),
            _zeros((cfg.residual_channels,)),
        )

        self.lstm: list[tuple[LstmParams, LstmParams]] = []
        d_in = cfg.residual_channels
        for _ in range(cfg.lstm_layers):
            fwd = _lstm_params(rng, d_in, cfg.lstm_hidden)
            bwd = _lstm_params(rng, d_in, cfg.lstm_hidden)
            self.lstm.append((fwd, bwd))
            d_in = 2 * cfg.lstm_hidden

        width = 2 * cfg.lstm_hidden
        self.attention = AttentionParams(
            DenseParams(_weight(rng, (width, width)), _zeros((width,)))
        )

        sizes = [width, *cfg.dense_sizes, cfg.num_classes]
        self.classifier = [
            DenseParams(_weight(rng, (sizes[i + 1], sizes[i])), _zeros((sizes[i + 1],)))
            for i in range(3)
        ]

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for i, block in enumerate(self.blocks):
            out.append((f"res{i}.conv1.weight", block.conv1.weight))
            out.append((f"res{i}.conv1.bias", block.conv1.bias))
            out.append((f"res{i}.conv2.weight", block.conv2.weight))
            out.append((f"res{i}.conv2.bias", block.conv2.bias))
            if block.projection is not None:
                out.append((f"res{i}.proj.weight", block.projection.weight))
                out.append((f"res{i}.proj.bias", block.projection.bias))
        out.append(("reduce.weight", self.reduce.weight))
        out.append(("reduce.bias", self.reduce.bias))
        for i, (fwd, bwd) in enumerate(self.lstm):
            for tag, p in (("fwd", fwd), ("bwd", bwd)):
                out.append((f"lstm{i}.{tag}.w_input", p.w_input))
                out.append((f"lstm{i}.{tag}.w_recurrent", p.w_recurrent))
                out.append((f"lstm{i}.{tag}.bias", p.bias))
        out.append(("attention.query.weight", self.attention.query.weight))
        out.append(("attention.query.bias", self.attention.query.bias))
        for i, dense in enumerate(self.classifier):
            out.append((f"dense{i}.weight", dense.weight))
            out.append((f"dense{i}.bias", dense.bias))
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def param_count(self) -> int:
        return sum(t.size for t in self.tensors())


def _zeros(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape, dtype=default_dtype()), requires_grad=True)


def _weight(rng: np.random.Generator | None, shape: tuple[int, ...]) -> Tensor:
    """Uniform Glorot; conv fans include the kernel extent."""
    if rng is None:
        return _zeros(shape)
    if len(shape) == 3:
        out_ch, in_ch, k = shape
        fan_in, fan_out = in_ch * k, out_ch * k
    else:
        fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-limit, limit, size=shape).astype(default_dtype())
    return Tensor(data, requires_grad=True)


def _lstm_params(rng: np.random.Generator | None, d_in: int, hidden: int) -> LstmParams:
    p = LstmParams(
        _weight(rng, (4 * hidden, d_in)),
        _weight(rng, (4 * hidden, hidden)),
        _zeros((4 * hidden,)),
    )
    # forget-gate bias starts at 1.0 as a trainability aid
    p.bias.data[hidden : 2 * hidden] = 1.0
    return p


def build_model(cfg: ModelConfig) -> ModelParams:
    """Deterministic initialization: same cfg and seed, same bytes."""
    return ModelParams(cfg, rng=philox(cfg.seed))


@contextmanager
def inference_mode(params: ModelParams):
    """Temporarily drop grad tracking so forward builds no tape."""
    tensors = params.tensors()
    saved = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, flag in zip(tensors, saved):
            t.requires_grad = flag


def logits_batch(params: ModelParams, cfg: ModelConfig, x: Tensor) -> Tensor:
    """Unnormalized class scores for a (B, channels, T) batch tensor."""
    if x.ndim != 3 or x.shape[1] != cfg.in_channels or x.shape[2] != cfg.frame_length:
        raise ShapeError(
            f"expected (B, {cfg.in_channels}, {cfg.frame_length}) input, got {x.shape}"
        )
    h = x
    for block in params.blocks:
        h = residual_block_forward(block, h)
    pad = (cfg.reduce_kernel - 1) // 2
    h = relu(conv1d(h, params.reduce.weight, params.reduce.bias,
                    stride=cfg.reduce_stride, padding=pad))
    h = transpose(h, (0, 2, 1))  # (B, T', C)
    h = bilstm_forward(params.lstm, h)
    context, _ = attention_pool(params.attention, h)
    a = relu(dense_forward(params.classifier[0], context))
    a = relu(dense_forward(params.classifier[1], a))
    return dense_forward(params.classifier[2], a)


def frame_array(frame: IQFrame) -> np.ndarray:
    return np.stack([np.asarray(frame.i), np.asarray(frame.q)]).astype(default_dtype())


def forward(params: ModelParams, cfg: ModelConfig, frame: IQFrame) -> Tensor:
    """Class probabilities for one frame; output sums to 1."""
    x = frame_array(frame)
    if x.shape != (cfg.in_channels, cfg.frame_length):
        raise ShapeError(f"frame shape {x.shape} does not match config "
                         f"({cfg.in_channels}, {cfg.frame_length})")
    logits = logits_batch(params, cfg, Tensor(x[None, :, :]))
    return softmax(reshape(logits, (cfg.num_classes,)))


def predict(params: ModelParams, cfg: ModelConfig, frame: IQFrame) -> int:
    """argmax class; ties break toward the lowest index."""
    probs = forward(params, cfg, frame)
    return int(np.argmax(probs.data))


def predict_array(params: ModelParams, cfg: ModelConfig, x: np.ndarray,
                  chunk: int = 256) -> np.ndarray:
    """Predicted classes for an (N, channels, T) array, without a tape."""
    preds = np.empty(x.shape[0], dtype=np.int64)
    with inference_mode(params):
        for lo in range(0, x.shape[0], chunk):
            batch = Tensor(x[lo : lo + chunk])
            logits = logits_batch(params, cfg, batch)
            preds[lo : lo + batch.shape[0]] = np.argmax(logits.data, axis=1)
    return preds


# ---------------------------------------------------------------------------
# parameter file: magic, version u32 LE, length-prefixed JSON config echo,
# then each tensor as extent list + float64 LE values, in build order


def save_params(params: ModelParams, cfg: ModelConfig, path,
                class_names: list[str] | None = None) -> None:
    blob = {"config": cfg.to_dict()}
    if class_names is not None:
        blob["class_names"] = list(class_names)
    encoded = json.dumps(blob, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<I", PARAMS_VERSION))
        fh.write(struct.pack("<I", len(encoded)))
        fh.write(encoded)
        for _, t in params.named_tensors():
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedError(f"parameter file truncated while reading {what}")
    return buf


def load_params(path, expected_cfg: ModelConfig | None = None
                ) -> tuple[ModelParams, ModelConfig, list[str] | None]:
    """Read a parameter file; returns (params, config, class_names)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(PARAMS_MAGIC))
        if magic != PARAMS_MAGIC:
            raise BadMagicError(f"not a parameter file: magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != PARAMS_VERSION:
            raise VersionError(f"unsupported parameter file version {version}")
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        blob = json.loads(_read_exact(fh, blob_len, "config echo").decode("utf-8"))
        cfg = ModelConfig.from_dict(blob["config"])
        class_names = blob.get("class_names")

        if expected_cfg is not None:
            mine = expected_cfg.to_dict()
            theirs = cfg.to_dict()
            for key in mine:
                if key != "seed" and mine[key] != theirs[key]:
                    raise ShapeError(
                        f"config mismatch on {key}: file has {theirs[key]}, expected {mine[key]}"
                    )

        params = ModelParams(cfg)
        for name, t in params.named_tensors():
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, f"{name} rank"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, f"{name} extents"))
            if shape != t.shape:
                raise ShapeError(f"{name}: file shape {shape} does not match config shape {t.shape}")
            raw = _read_exact(fh, 8 * t.size, f"{name} values")
            t.data = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(default_dtype())
        trailing = fh.read(1)
        if trailing:
            raise TruncatedError("parameter file has trailing bytes")
    return params, cfg, class_names
