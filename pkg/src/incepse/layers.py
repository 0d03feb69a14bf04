"""Neural network primitives on [B, C, L] tensors, each with its own backward.

Convolutions are cross-correlations (no kernel flip). "Same" padding follows
the usual rule for strided windows: the output length is ``ceil(L / stride)``
and the total padding ``max((out - 1) * stride + K - L, 0)`` is split with
the extra element on the right. Convolutions pad with zeros, max-pooling
with ``-inf``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .autodiff import ShapeError, Tensor, record_op

__all__ = [
    "ConvParams",
    "LinearParams",
    "BatchNormState",
    "same_padding",
    "conv1d",
    "maxpool1d",
    "batchnorm1d",
    "linear",
    "global_avg_pool",
    "dropout",
    "channel_scale",
    "bce_with_logits",
]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class ConvParams:
    weight: Tensor  # [Cout, Cin, K]
    bias: Tensor | None = None  # [Cout]
    stride: int = 1

    def __post_init__(self):
        if self.weight.values.ndim != 3:
            raise ShapeError(f"conv weight must be [Cout, Cin, K], got {self.weight.shape}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"conv bias shape {self.bias.shape} does not match Cout={self.weight.shape[0]}")


@dataclass
class LinearParams:
    weight: Tensor  # [out, in]
    bias: Tensor  # [out]

    def __post_init__(self):
        if self.weight.values.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"linear params inconsistent: weight {self.weight.shape}, bias {self.bias.shape}")


@dataclass
class BatchNormState:
    """Affine parameters plus running statistics for one BN layer.

    ``running_mean`` and ``running_var`` are plain arrays updated in place
    during train-mode calls: ``new = (1 - momentum) * old + momentum * batch``,
    with the unbiased batch variance.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS
    mode: str = "train"

    @classmethod
    def fresh(cls, channels: int, dtype=np.float64) -> "BatchNormState":
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype)),
            beta=Tensor(np.zeros(channels, dtype=dtype)),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )


def same_padding(length: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Return ``(out_length, pad_left, pad_right)`` for same-style padding."""
    out = -(-length // stride)
    total = max((out - 1) * stride + kernel - length, 0)
    left = total // 2
    return out, left, total - left


def _check_bcl(name: str, x: Tensor) -> None:
    if x.values.ndim != 3:
        raise ShapeError(f"{name} expects [B, C, L], got {x.shape}")


def _im2col(xp: np.ndarray, k: int, stride: int, out_len: int) -> np.ndarray:
    """[B, Cin, Lp] -> contiguous [B * out_len, Cin * K] window matrix."""
    b, cin, _ = xp.shape
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :][:, :, :out_len, :]
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b * out_len, cin * k)


def _correlate(xp: np.ndarray, w: np.ndarray, stride: int, out_len: int) -> tuple[np.ndarray, np.ndarray]:
    cout, cin, k = w.shape
    cols = _im2col(xp, k, stride, out_len)
    y = (cols @ w.reshape(cout, cin * k).T).reshape(xp.shape[0], out_len, cout).transpose(0, 2, 1)
    return np.ascontiguousarray(y), cols


def conv1d(x: Tensor, p: ConvParams) -> Tensor:
    _check_bcl("conv1d", x)
    w = p.weight.values
    cout, cin, k = w.shape
    b, c, length = x.shape
    if c != cin:
        raise ShapeError(f"conv1d: input has {c} channels, weight expects {cin}")
    s = p.stride
    out_len, left, right = same_padding(length, k, s)
    xp = np.pad(x.values, ((0, 0), (0, 0), (left, right)))
    y, cols = _correlate(xp, w, s, out_len)
    if p.bias is not None:
        y += p.bias.values[None, :, None]

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(b * out_len, cout)
        dw = (g2.T @ cols).reshape(cout, cin, k)
        # input gradient: full correlation of the zero-stuffed gradient with the flipped kernel
        gd = np.zeros((b, cout, (out_len - 1) * s + 1 + 2 * (k - 1)), dtype=g.dtype)
        gd[:, :, k - 1:k - 1 + (out_len - 1) * s + 1:s] = g
        wt = np.ascontiguousarray(w[:, :, ::-1].transpose(1, 0, 2))
        full_len = (out_len - 1) * s + k
        dfull, _ = _correlate(gd, wt, 1, full_len)
        dx = np.zeros((b, cin, length), dtype=g.dtype)
        hi = min(length, full_len - left)
        dx[:, :, :hi] = dfull[:, :, left:left + hi]
        if p.bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2))

    inputs = (x, p.weight) + ((p.bias,) if p.bias is not None else ())
    return record_op("conv1d", inputs, y, backward)


def maxpool1d(x: Tensor, window: int = 3, stride: int = 1) -> Tensor:
    """Per-window maximum; gradient goes to the first argmax of each window."""
    _check_bcl("maxpool1d", x)
    if window < 1 or stride < 1:
        raise ValueError(f"window and stride must be >= 1, got {window}, {stride}")
    b, c, length = x.shape
    out_len, left, right = same_padding(length, window, stride)
    xp = np.pad(x.values, ((0, 0), (0, 0), (left, right)), constant_values=-np.inf)
    span = stride * (out_len - 1) + 1
    y = xp[:, :, 0:span:stride].copy()
    arg = np.zeros(y.shape, dtype=np.int16 if window < 2 ** 15 else np.int64)
    for j in range(1, window):
        cand = xp[:, :, j:j + span:stride]
        better = cand > y  # strict: ties keep the earlier index
        np.copyto(y, cand, where=better)
        np.copyto(arg, j, where=better)

    def backward(g):
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for j in range(window):
            dxp[:, :, j:j + span:stride] += np.where(arg == j, g, 0)
        return (dxp[:, :, left:left + length],)

    return record_op("maxpool1d", (x,), y, backward)


def batchnorm1d(x: Tensor, s: BatchNormState) -> Tensor:
    _check_bcl("batchnorm1d", x)
    b, c, length = x.shape
    if s.gamma.shape != (c,) or s.beta.shape != (c,):
        raise ShapeError(f"batchnorm1d: {c} channels but gamma {s.gamma.shape}, beta {s.beta.shape}")
    gamma = s.gamma.values[None, :, None]
    beta = s.beta.values[None, :, None]
    xv = x.values
    if s.mode == "train":
        n = b * length
        if n < 2:
            raise ValueError("batchnorm1d in train mode needs B*L >= 2")
        mean = xv.mean(axis=(0, 2))
        var = xv.var(axis=(0, 2))
        inv_std = 1.0 / np.sqrt(var + s.eps)
        xhat = (xv - mean[None, :, None]) * inv_std[None, :, None]
        m = s.momentum
        s.running_mean[...] = (1 - m) * s.running_mean + m * mean
        s.running_var[...] = (1 - m) * s.running_var + m * var * (n / (n - 1))

        def backward(g):
            dxhat = g * gamma
            sum_d = dxhat.sum(axis=(0, 2), keepdims=True)
            sum_dx = (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
            dx = (inv_std[None, :, None] / n) * (n * dxhat - sum_d - xhat * sum_dx)
            return dx, (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))
    elif s.mode == "eval":
        inv_std = 1.0 / np.sqrt(s.running_var + s.eps)
        xhat = (xv - s.running_mean[None, :, None]) * inv_std[None, :, None]

        def backward(g):
            return g * gamma * inv_std[None, :, None], (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))
    else:
        raise ValueError(f"unknown batchnorm mode {s.mode!r}")
    y = (gamma * xhat + beta).astype(xv.dtype, copy=False)
    return record_op("batchnorm1d", (x, s.gamma, s.beta), y, backward)


def linear(x: Tensor, p: LinearParams) -> Tensor:
    """``x @ W.T + b`` for x of shape [B, in]."""
    if x.values.ndim != 2:
        raise ShapeError(f"linear expects [B, in], got {x.shape}")
    w = p.weight.values
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[1]} != weight in-dim {w.shape[1]}")
    xv = x.values
    y = xv @ w.T + p.bias.values

    def backward(g):
        return g @ w, g.T @ xv, g.sum(axis=0)

    return record_op("linear", (x, p.weight, p.bias), y, backward)


def global_avg_pool(x: Tensor) -> Tensor:
    _check_bcl("global_avg_pool", x)
    length = x.shape[2]
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(g[:, :, None] / length, shape).copy(),)

    return record_op("global_avg_pool", (x,), x.values.mean(axis=2), backward)


def dropout(x: Tensor, p: float, mode: str = "train", rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout. Identity in eval mode or when ``p == 0``."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if mode == "eval" or p == 0:
        return x
    if mode != "train":
        raise ValueError(f"unknown dropout mode {mode!r}")
    rng = rng if rng is not None else np.random.default_rng()
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return record_op("dropout", (x,), x.values * mask, lambda g: (g * mask,))


def channel_scale(x: Tensor, w: Tensor) -> Tensor:
    """Multiply every time step of channel c in batch b by ``w[b, c]``."""
    _check_bcl("channel_scale", x)
    if w.shape != x.shape[:2]:
        raise ShapeError(f"channel_scale: weights {w.shape} do not match [B, C] = {x.shape[:2]}")
    xv, wv = x.values, w.values

    def backward(g):
        return g * wv[:, :, None], (g * xv).sum(axis=2)

    return record_op("channel_scale", (x, w), xv * wv[:, :, None], backward)


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy over all B*C entries, computed from logits."""
    y = targets.values if isinstance(targets, Tensor) else np.asarray(targets)
    if y.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: logits {logits.shape} vs targets {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("bce_with_logits: targets must be 0 or 1")
    z = logits.values
    y = y.astype(z.dtype)
    count = z.size
    loss = (np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))).sum() / count

    def backward(g):
        return ((expit(z) - y) * (g.reshape(-1)[0] / count),)

    return record_op("bce_with_logits", (logits,), np.asarray([loss], dtype=z.dtype), backward)
