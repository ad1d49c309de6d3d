"""Differentiable primitives.

Each op computes its forward value with numpy and, when a tape is active and
an input requires gradients, records a closure that maps the output gradient
to one gradient per input (``None`` for inputs that do not need one).
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, record

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ShapeError(ValueError):
    pass


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


def conv_output_length(T: int, k: int, stride: int = 1, dilation: int = 1, padding: int = 0) -> int:
    span = dilation * (k - 1) + 1
    if T + 2 * padding < span:
        raise ShapeError(
            f"padded length {T + 2 * padding} shorter than dilated kernel span {span}"
        )
    return (T + 2 * padding - span) // stride + 1


def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1,
           dilation: int = 1, padding: int = 0) -> Tensor:
    """Dilated, strided 1-D cross-correlation with zero padding.

    x: [B, C_in, T], w: [C_out, C_in, k], bias: [C_out] -> [B, C_out, T_out].
    """
    _check(x.data.ndim == 3, f"conv1d input must be [B,C,T], got {x.shape}")
    _check(w.data.ndim == 3, f"conv1d weight must be [O,C,k], got {w.shape}")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError("conv1d needs stride >= 1, dilation >= 1, padding >= 0")
    B, C, T = x.shape
    O, Cw, k = w.shape
    _check(C == Cw, f"conv1d channel mismatch: input has {C}, weight expects {Cw}")
    if bias is not None:
        _check(bias.shape == (O,), f"conv1d bias must be [{O}], got {bias.shape}")
    T_out = conv_output_length(T, k, stride, dilation, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    reach = stride * (T_out - 1) + 1
    taps = [xp[:, :, j * dilation: j * dilation + reach: stride] for j in range(k)]
    cols = np.stack(taps, axis=1).reshape(B, k * C, T_out)
    w2 = w.data.transpose(0, 2, 1).reshape(O, k * C)
    y = np.matmul(w2, cols)
    if bias is not None:
        y += bias.data[None, :, None]

    def backward(gy):
        gw = np.matmul(gy, cols.transpose(0, 2, 1)).sum(axis=0)
        gw = gw.reshape(O, k, C).transpose(0, 2, 1)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(w2.T, gy).reshape(B, k, C, T_out)
            gxp = np.zeros((B, C, T + 2 * padding))
            for j in range(k):
                gxp[:, :, j * dilation: j * dilation + reach: stride] += gcols[:, j]
            gx = gxp[:, :, padding: padding + T]
        gb = np.einsum("bot->o", gy) if bias is not None else None
        return gx, gw, gb

    inputs = (x, w) if bias is None else (x, w, bias)
    return record("conv1d", inputs, y, backward)


def linear(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x @ w.T + bias for x: [B, F_in], w: [F_out, F_in]."""
    _check(x.data.ndim == 2 and w.data.ndim == 2, "linear expects 2-D input and weight")
    _check(x.shape[1] == w.shape[1],
           f"linear inner dimension mismatch: {x.shape} vs weight {w.shape}")
    if bias is not None:
        _check(bias.shape == (w.shape[0],), f"linear bias must be [{w.shape[0]}]")
    y = x.data @ w.data.T
    if bias is not None:
        y = y + bias.data

    def backward(gy):
        gx = gy @ w.data if x.requires_grad else None
        gw = gy.T @ x.data
        gb = gy.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    inputs = (x, w) if bias is None else (x, w, bias)
    return record("linear", inputs, y, backward)


def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray | None = None,
                running_var: np.ndarray | None = None, mode: str = "train",
                update_stats: bool = True, momentum: float = BN_MOMENTUM,
                eps: float = BN_EPS) -> Tensor:
    """Per-channel normalization of [B, C, T] input.

    ``mode="train"`` normalizes with batch statistics and, if ``update_stats``,
    folds them into the running buffers in place (unbiased variance).
    ``mode="eval"`` uses the running buffers.
    """
    _check(x.data.ndim == 3, f"batchnorm1d input must be [B,C,T], got {x.shape}")
    B, C, T = x.shape
    _check(gamma.shape == (C,) and beta.shape == (C,), "batchnorm1d gamma/beta must be [C]")
    n = B * T
    if mode == "train":
        if n < 2:
            raise ValueError("batchnorm1d in train mode needs at least 2 values per channel")
        mean = np.einsum("bct->c", x.data) / n
        var = np.maximum(np.einsum("bct,bct->c", x.data, x.data) / n - mean * mean, 0.0)
        if update_stats and running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var * n / (n - 1)
    elif mode == "eval":
        if running_mean is None or running_var is None:
            raise ValueError("batchnorm1d eval mode needs running statistics")
        mean, var = running_mean.copy(), running_var.copy()
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")

    invstd = 1.0 / np.sqrt(var + eps)
    scale = gamma.data * invstd
    y = x.data * scale[None, :, None]
    y += (beta.data - mean * scale)[None, :, None]

    def backward(gy):
        sum_gy = np.einsum("bct->c", gy)
        # sum of gy * normalized input, per channel
        s = (np.einsum("bct,bct->c", gy, x.data) - mean * sum_gy) * invstd
        gx = None
        if x.requires_grad:
            gx = gy * scale[None, :, None]
            if mode == "train":
                k1 = -scale * invstd * s / n
                gx += x.data * k1[None, :, None]
                gx += (-scale * sum_gy / n - k1 * mean)[None, :, None]
        return gx, s, sum_gy

    return record("batchnorm1d", (x, gamma, beta), y, backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    return record("relu", (x,), out, lambda gy: (gy * (out > 0),))


def add(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"add shape mismatch: {a.shape} vs {b.shape}")
    return record("add", (a, b), a.data + b.data, lambda gy: (gy, gy))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"mul shape mismatch: {a.shape} vs {b.shape}")
    return record("mul", (a, b), a.data * b.data, lambda gy: (gy * b.data, gy * a.data))


def tensor_sum(x: Tensor) -> Tensor:
    return record("sum", (x,), np.asarray(x.data.sum()),
                  lambda gy: (np.broadcast_to(gy, x.shape).copy(),))


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the temporal axis: [B, C, T] -> [B, C]."""
    _check(x.data.ndim == 3, f"global_avg_pool input must be [B,C,T], got {x.shape}")
    T = x.shape[2]

    def backward(gy):
        return (np.repeat(gy[:, :, None] / T, T, axis=2),)

    return record("global_avg_pool", (x,), x.data.mean(axis=2), backward)


def embedding_lookup(table: Tensor, index) -> Tensor:
    """Row lookup. An int gives a [E] vector; an int array gives [..., E]."""
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError("embedding indices must be integers")
    V = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= V):
        raise IndexError(f"embedding index out of range [0, {V})")

    def backward(gy):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, gy)
        return (gt,)

    return record("embedding_lookup", (table,), table.data[idx], backward)


def select(x: Tensor, i: int) -> Tensor:
    """x[i] along the leading axis."""

    def backward(gy):
        g = np.zeros_like(x.data)
        g[i] = gy
        return (g,)

    return record("select", (x,), x.data[i], backward)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step.

    w: [4H, I+H] acting on the concatenation [x, h]; b: [4H]. Gate rows are
    ordered input, forget, cell candidate, output.
    """
    _check(x.data.ndim == 2 and h.data.ndim == 2, "lstm_cell expects [B,I] and [B,H]")
    B, I = x.shape
    H = h.shape[1]
    _check(h.shape == (B, H) and c.shape == (B, H), "lstm_cell h/c must both be [B,H]")
    _check(w.shape == (4 * H, I + H), f"lstm_cell weight must be [{4 * H},{I + H}], got {w.shape}")
    _check(b.shape == (4 * H,), f"lstm_cell bias must be [{4 * H}]")

    xh = np.concatenate([x.data, h.data], axis=1)
    z = xh @ w.data.T + b.data
    ig = _sigmoid(z[:, :H])
    fg = _sigmoid(z[:, H:2 * H])
    gg = np.tanh(z[:, 2 * H:3 * H])
    og = _sigmoid(z[:, 3 * H:])
    c_new = fg * c.data + ig * gg
    tc = np.tanh(c_new)
    h_new = og * tc

    def backward(gout):
        gh, gc = gout[0], gout[1]
        dc = gc + gh * og * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * gg * ig * (1.0 - ig),
            dc * c.data * fg * (1.0 - fg),
            dc * ig * (1.0 - gg * gg),
            gh * tc * og * (1.0 - og),
        ], axis=1)
        dxh = dz @ w.data
        return dxh[:, :I], dxh[:, I:], dc * fg, dz.T @ xh, dz.sum(axis=0)

    hc = record("lstm_cell", (x, h, c, w, b), np.stack([h_new, c_new]), backward)
    return select(hc, 0), select(hc, 1)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, labels, weights=None) -> tuple[Tensor, Tensor]:
    """Weighted negative log-likelihood of ``labels`` under row-wise softmax.

    loss = sum_b weights[b] * -log p[b, labels[b]]; the default weights are
    1/B (batch mean). Returns the scalar loss and the probabilities.
    """
    _check(logits.data.ndim == 2, f"logits must be [B,K], got {logits.shape}")
    B, K = logits.shape
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    _check(y.shape == (B,), f"need {B} labels, got {y.shape[0]}")
    if y.size and (y.min() < 0 or y.max() >= K):
        raise ValueError(f"label out of range [0, {K})")
    wts = np.full(B, 1.0 / B) if weights is None else np.asarray(weights, dtype=np.float64)
    _check(wts.shape == (B,), "weights must have one entry per row")

    logp = log_softmax(logits.data)
    probs = np.exp(logp)
    rows = np.arange(B)
    loss = -(wts * logp[rows, y]).sum()

    def backward(gy):
        g = probs.copy()
        g[rows, y] -= 1.0
        return (g * (wts * gy)[:, None],)

    return record("softmax_cross_entropy", (logits,), np.asarray(loss), backward), Tensor(probs)
