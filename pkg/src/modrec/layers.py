"""Differentiable building blocks of the classifier.

Dense layers, residual blocks over the time axis, LSTM cells, stacked
bidirectional LSTM, attention pooling, and a fused cross-entropy loss.
Each op accepts either a single sample or a leading batch axis; the
batched path is what makes training affordable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import (
    Tensor,
    _acc_new,
    _grad_buffer,
    _sigmoid_values,
    add,
    concat,
    conv1d,
    matmul,
    relu,
    reshape,
    softmax,
    stack,
    take_index,
    transpose,
)

# gate block ordering within the fused 4H preactivation
GATE_ORDER = ("input", "forget", "candidate", "output")


@dataclass
class DenseParams:
    weight: Tensor  # (out, in)
    bias: Tensor  # (out,)


@dataclass
class Conv1dParams:
    weight: Tensor  # (out_channels, in_channels, k)
    bias: Tensor  # (out_channels,)


@dataclass
class ResidualBlockParams:
    conv1: Conv1dParams
    conv2: Conv1dParams
    projection: Conv1dParams | None  # 1x1 skip conv, present iff channels change


@dataclass
class LstmParams:
    w_input: Tensor  # (4H, D), gate blocks in GATE_ORDER
    w_recurrent: Tensor  # (4H, H)
    bias: Tensor  # (4H,)

    @property
    def hidden_size(self) -> int:
        return self.w_recurrent.shape[-1]


@dataclass
class AttentionParams:
    query: DenseParams  # square projection on the concatenated 2H state


def dense_forward(p: DenseParams, x: Tensor) -> Tensor:
    """weight @ x + bias; batched input uses x @ weight^T + bias."""
    if x.ndim == 1:
        return add(matmul(p.weight, x), p.bias)
    return add(matmul(x, transpose(p.weight)), p.bias)


def _same_padding(kernel: int) -> int:
    if kernel % 2 == 0:
        raise ShapeError(f"residual convs need odd kernels to preserve length, got {kernel}")
    return (kernel - 1) // 2


def residual_block_forward(p: ResidualBlockParams, x: Tensor) -> Tensor:
    """relu(conv2(relu(conv1(x))) + skip(x)) with a length-preserving body."""
    in_ch = x.shape[-2]
    out_ch = p.conv2.weight.shape[0]
    if (p.projection is None) != (in_ch == out_ch):
        raise ShapeError(
            f"projection must be present iff channels change ({in_ch} -> {out_ch})"
        )
    h = relu(conv1d(x, p.conv1.weight, p.conv1.bias, stride=1, padding=_same_padding(p.conv1.weight.shape[-1])))
    f = conv1d(h, p.conv2.weight, p.conv2.bias, stride=1, padding=_same_padding(p.conv2.weight.shape[-1]))
    skip = x if p.projection is None else conv1d(x, p.projection.weight, p.projection.bias, stride=1, padding=0)
    return relu(add(f, skip))


def _cell_from_preactivation(z: Tensor, c_prev: Tensor, hidden: int) -> tuple[Tensor, Tensor]:
    """Fused gate math: i,f,o sigmoid, g tanh (blocks in GATE_ORDER),
    c = f*c_prev + i*g, h = o*tanh(c).

    Fused into two tape nodes with an analytic backward; the LSTM scan
    dominates training time and per-gate nodes are too slow.
    """
    zd = z.data
    i = _sigmoid_values(zd[..., 0:hidden])
    f = _sigmoid_values(zd[..., hidden : 2 * hidden])
    g = np.tanh(zd[..., 2 * hidden : 3 * hidden])
    o = _sigmoid_values(zd[..., 3 * hidden : 4 * hidden])
    cp = c_prev.data
    c = Tensor._from_op(f * cp + i * g, (z, c_prev))
    tc = np.tanh(c.data)
    h = Tensor._from_op(o * tc, (z, c))

    if c.requires_grad:

        def _bw_c():
            dc = c.grad
            if z.requires_grad:
                zg = _grad_buffer(z)
                zg[..., 0:hidden] += dc * g * (i * (1.0 - i))
                zg[..., hidden : 2 * hidden] += dc * cp * (f * (1.0 - f))
                zg[..., 2 * hidden : 3 * hidden] += dc * i * (1.0 - g * g)
            if c_prev.requires_grad:
                _acc_new(c_prev, dc * f)

        c._backward = _bw_c
    if h.requires_grad:

        def _bw_h():
            dh = h.grad
            if z.requires_grad:
                _grad_buffer(z)[..., 3 * hidden : 4 * hidden] += dh * tc * (o * (1.0 - o))
            if c.requires_grad:
                _acc_new(c, dh * o * (1.0 - tc * tc))

        h._backward = _bw_h
    return h, c


def lstm_cell_step(p: LstmParams, x_t: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step; accepts (D,)/(H,) vectors or (B,D)/(B,H) batches."""
    hidden = p.hidden_size
    single = x_t.ndim == 1
    if single:
        x_t = reshape(x_t, (1,) + x_t.shape)
        h_prev = reshape(h_prev, (1,) + h_prev.shape)
        c_prev = reshape(c_prev, (1,) + c_prev.shape)
    z = add(add(matmul(x_t, transpose(p.w_input)), matmul(h_prev, transpose(p.w_recurrent))), p.bias)
    h, c = _cell_from_preactivation(z, c_prev, hidden)
    if single:
        h = reshape(h, (hidden,))
        c = reshape(c, (hidden,))
    return h, c


def _lstm_scan_step(wh: Tensor, zx: Tensor, t: int, h_prev: Tensor, c_prev: Tensor,
                    hidden: int) -> tuple[Tensor, Tensor]:
    """One fused recurrence step: z = zx[:,t] + h_prev @ wh^T, then gates.

    Same math as lstm_cell_step but one gemm and two tape nodes per
    step; the scan dominates training time.
    """
    whd = wh.data
    z = zx.data[:, t, :] + h_prev.data @ whd.T
    i = _sigmoid_values(z[:, 0:hidden])
    f = _sigmoid_values(z[:, hidden : 2 * hidden])
    g = np.tanh(z[:, 2 * hidden : 3 * hidden])
    o = _sigmoid_values(z[:, 3 * hidden : 4 * hidden])
    cp = c_prev.data
    hp = h_prev.data
    c = Tensor._from_op(f * cp + i * g, (zx, h_prev, c_prev, wh))
    tc = np.tanh(c.data)
    h = Tensor._from_op(o * tc, (zx, h_prev, wh, c))
    if not c.requires_grad:
        return h, c

    dz_output = [None]  # handoff from h's backward to c's

    def _bw_h():
        dh = h.grad
        if dh is None:
            return
        _acc_new(c, dh * o * (1.0 - tc * tc))
        dz_output[0] = dh * tc * (o * (1.0 - o))

    def _bw_c():
        dc = c.grad
        if dc is None:
            return
        dz = np.empty_like(z)
        dz[:, 0:hidden] = dc * g * (i * (1.0 - i))
        dz[:, hidden : 2 * hidden] = dc * cp * (f * (1.0 - f))
        dz[:, 2 * hidden : 3 * hidden] = dc * i * (1.0 - g * g)
        dz[:, 3 * hidden : 4 * hidden] = 0.0 if dz_output[0] is None else dz_output[0]
        if zx.requires_grad:
            _grad_buffer(zx)[:, t, :] += dz
        if h_prev.requires_grad:
            _acc_new(h_prev, dz @ whd)
        if wh.requires_grad:
            _acc_new(wh, dz.T @ hp)
        if c_prev.requires_grad:
            _acc_new(c_prev, dc * f)

    h._backward = _bw_h
    c._backward = _bw_c
    return h, c


def _scan(p: LstmParams, x: Tensor, reverse: bool) -> list[Tensor]:
    """Run one direction over x (B,T,D); returns hiddens in time order."""
    b, t_len, d = x.shape
    hidden = p.hidden_size
    dtype = p.w_input.data.dtype
    # input-side projections for all steps at once; bias folded in here
    zx = add(matmul(reshape(x, (b * t_len, d)), transpose(p.w_input)), p.bias)
    zx = reshape(zx, (b, t_len, 4 * hidden))
    h = Tensor(np.zeros((b, hidden), dtype=dtype))
    c = Tensor(np.zeros((b, hidden), dtype=dtype))
    hiddens: list[Tensor | None] = [None] * t_len
    steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
    for t in steps:
        h, c = _lstm_scan_step(p.w_recurrent, zx, t, h, c, hidden)
        hiddens[t] = h
    return hiddens  # type: ignore[return-value]


def bilstm_forward(layers: list[tuple[LstmParams, LstmParams]], x: Tensor) -> Tensor:
    """Stacked bidirectional LSTM from zero initial states.

    x is (T, D) or (B, T, D); every layer emits the per-step concat of
    the forward and backward hidden states, so layer l > 1 consumes a
    2H-wide input.
    """
    if x.ndim not in (2, 3):
        raise ShapeError(f"bilstm input must be (T,D) or (B,T,D), got {x.shape}")
    single = x.ndim == 2
    if single:
        x = reshape(x, (1,) + x.shape)
    if x.shape[1] < 1:
        raise ShapeError("empty sequence")
    for p_fwd, p_bwd in layers:
        fwd = _scan(p_fwd, x, reverse=False)
        bwd = _scan(p_bwd, x, reverse=True)
        per_step = [concat([fwd[t], bwd[t]], axis=-1) for t in range(x.shape[1])]
        x = stack(per_step, axis=1)
    if single:
        x = reshape(x, x.shape[1:])
    return x


def attention_pool(p: AttentionParams, hiddens: Tensor) -> tuple[Tensor, Tensor]:
    """Softmax-weighted pooling with a projected last state as query.

    Returns (context, weights): score_t = <query, hiddens[t]>, weights
    softmax over t, context the weighted average of hidden states.
    """
    if hiddens.ndim == 2:  # (T, 2H)
        t_len = hiddens.shape[0]
        query = dense_forward(p.query, take_index(hiddens, t_len - 1, axis=0))
        weights = softmax(matmul(hiddens, query))
        context = matmul(weights, hiddens)
        return context, weights
    if hiddens.ndim == 3:  # (B, T, 2H)
        b, t_len, width = hiddens.shape
        query = dense_forward(p.query, take_index(hiddens, t_len - 1, axis=1))
        scores = reshape(matmul(hiddens, reshape(query, (b, width, 1))), (b, t_len))
        weights = softmax(scores)
        context = reshape(matmul(reshape(weights, (b, 1, t_len)), hiddens), (b, width))
        return context, weights
    raise ShapeError(f"attention input must be (T,2H) or (B,T,2H), got {hiddens.shape}")


def cross_entropy(logits: Tensor, label) -> Tensor:
    """-log softmax(logits)[label], fused for stability.

    logits (K,) with an int label, or (B,K) with B labels; the batched
    form returns the mean loss.
    """
    ld = logits.data
    if ld.ndim == 1:
        ld2 = ld[None, :]
        labels = np.asarray([label], dtype=np.int64)
    elif ld.ndim == 2:
        ld2 = ld
        labels = np.asarray(label, dtype=np.int64)
        if labels.shape != (ld2.shape[0],):
            raise ShapeError(f"need {ld2.shape[0]} labels, got shape {labels.shape}")
    else:
        raise ShapeError(f"logits must be (K,) or (B,K), got {ld.shape}")
    n, k = ld2.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0, {k})")

    m = ld2.max(axis=1, keepdims=True)
    e = np.exp(ld2 - m)
    se = e.sum(axis=1, keepdims=True)
    log_probs = (ld2 - m) - np.log(se)
    losses = -log_probs[np.arange(n), labels]
    out = Tensor._from_op(np.asarray(losses.mean()), (logits,))
    if out.requires_grad:
        probs = e / se

        def _bw():
            gl = probs.copy()
            gl[np.arange(n), labels] -= 1.0
            gl *= out.grad / n
            _acc_new(logits, gl.reshape(ld.shape))

        out._backward = _bw
    return out
