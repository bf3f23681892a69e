"""Layer primitives over plain numpy arrays.

Every layer is a pair of functions: ``*_forward`` returns ``(output, cache)``
and ``*_backward`` consumes the upstream gradient and that cache. Activations
are NHWC. Nothing here keeps global state; batch-norm running statistics are
passed in and updated in place only when asked to.
"""
from __future__ import annotations

import enum

import numpy as np

BN_EPSILON = 1e-3
BN_MOMENTUM = 0.99
BCE_EPSILON = 1e-7
ELU_ALPHA = 1.0
SELU_SCALE = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772
# Above this patch-matrix size conv2d switches to a per-offset loop.
IM2COL_MAX_BYTES = 64 * 2**20


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with a layer."""


class ActivationKind(str, enum.Enum):
    RELU = "relu"
    ELU = "elu"
    SELU = "selu"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    EXPONENTIAL = "exponential"


def seeded_init(shape, fan_in: int, fan_out: int, seed: int, dtype=np.float32) -> np.ndarray:
    """Glorot-uniform initialisation, reproducible from ``seed``."""
    shape = tuple(int(d) for d in shape)
    if any(d < 1 for d in shape):
        raise ShapeError(f"zero dimension in shape {shape}")
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fan_in and fan_out must be >= 1")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(seed)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _same_padding(k: int) -> tuple[int, int]:
    total = k - 1
    return total // 2, total - total // 2


# -- convolution ----------------------------------------------------------


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Stride-1, zero-padded ("same") cross-correlation plus bias."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects NHWC input and [kh,kw,cin,cout] kernel, got {x.shape}, {w.shape}")
    n, h, wd, cin = x.shape
    kh, kw, kcin, cout = w.shape
    if cin != kcin:
        raise ShapeError(f"channel mismatch: input has {cin}, kernel expects {kcin}")
    if b.shape != (cout,):
        raise ShapeError(f"bias shape {b.shape} does not match {cout} output channels")
    (pt, pb), (pl, pr) = _same_padding(kh), _same_padding(kw)
    if h < 1 or wd < 1 or h + pt + pb < kh or wd + pl + pr < kw:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h}x{wd}")
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    dtype = np.result_type(x, w)
    if n * h * wd * kh * kw * cin * dtype.itemsize <= IM2COL_MAX_BYTES:
        cols = _im2col(xp, kh, kw, h, wd)
        y = (cols @ w.reshape(-1, cout)).reshape(n, h, wd, cout)
    else:
        # One matmul per kernel offset keeps memory at O(N*H*W*C).
        cols = None
        y = np.zeros((n, h, wd, cout), dtype=dtype)
        for i in range(kh):
            for j in range(kw):
                y += xp[:, i:i + h, j:j + wd, :] @ w[i, j]
    y += b
    return y, (xp, cols, w, (pt, pl), x.shape)


def _im2col(xp, kh, kw, h, wd):
    n, cin = xp.shape[0], xp.shape[-1]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * wd, kh * kw * cin)


def conv2d_backward(dy: np.ndarray, cache, need_dx: bool = True):
    """Gradients ``(dx, dw, db)``; ``dx`` is None when ``need_dx`` is false."""
    xp, cols, w, (pt, pl), xshape = cache
    n, h, wd, cin = xshape
    kh, kw, _, cout = w.shape
    dy2 = dy.reshape(-1, cout)
    if cols is not None:
        dw = (cols.T @ dy2).reshape(w.shape)
        if not need_dx:
            return None, dw, dy2.sum(axis=0)
        # Input gradient is a correlation of dy with the flipped kernel.
        pb, pr = kh - 1 - pt, kw - 1 - pl
        dyp = np.pad(dy, ((0, 0), (pb, pt), (pr, pl), (0, 0)))
        wf = w[::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, cin)
        dx = (_im2col(dyp, kh, kw, h, wd) @ wf).reshape(n, h, wd, cin)
        return dx, dw, dy2.sum(axis=0)
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i:i + h, j:j + wd, :].reshape(-1, cin)
            dw[i, j] = patch.T @ dy2
            dxp[:, i:i + h, j:j + wd, :] += dy @ w[i, j].T
    db = dy2.sum(axis=0)
    dx = dxp[:, pt:pt + h, pl:pl + wd, :]
    return np.ascontiguousarray(dx), dw, db


# -- pooling --------------------------------------------------------------


def maxpool2d_forward(x: np.ndarray):
    """2x2 max pooling, stride 2. Odd trailing rows/columns are dropped."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects NHWC input, got {x.shape}")
    n, h, w, c = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"spatial size {h}x{w} too small for 2x2 pooling")
    ho, wo = h // 2, w // 2
    windows = (
        x[:, : 2 * ho, : 2 * wo, :]
        .reshape(n, ho, 2, wo, 2, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, ho, wo, c, 4)
    )
    # argmax returns the first maximum in row-major window order.
    idx = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def maxpool2d_backward(dy: np.ndarray, cache):
    idx, xshape = cache
    n, h, w, c = xshape
    ho, wo = h // 2, w // 2
    onehot = idx[..., None] == np.arange(4)
    dwin = onehot * dy[..., None]
    dx = np.zeros(xshape, dtype=dy.dtype)
    dx[:, : 2 * ho, : 2 * wo, :] = (
        dwin.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * ho, 2 * wo, c)
    )
    return dx


# -- batch normalisation ---------------------------------------------------


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    update_stats: bool = True,
    eps: float = BN_EPSILON,
    momentum: float = BN_MOMENTUM,
):
    """Per-channel normalisation over every axis but the last.

    In training mode the batch statistics are used and, if ``update_stats``,
    the running statistics are moved towards them in place.
    """
    c = x.shape[-1]
    for name, arr in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)):
        if arr.shape != (c,):
            raise ShapeError(f"{name} has shape {arr.shape}, expected ({c},)")
    axes = tuple(range(x.ndim - 1))
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        if update_stats:
            running_mean *= momentum
            running_mean += (1 - momentum) * mean
            running_var *= momentum
            running_var += (1 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    y = gamma * xhat + beta
    return y, (xhat, inv_std, gamma, training, axes)


def batchnorm_backward(dy: np.ndarray, cache):
    xhat, inv_std, gamma, training, axes = cache
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma
    if not training:
        return dxhat * inv_std, dgamma, dbeta
    m = xhat.size // xhat.shape[-1]
    dx = inv_std / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


# -- dense / flatten / concat ----------------------------------------------


def flatten(x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1)


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Affine map; 4-D inputs are flattened row-major first."""
    xf = flatten(x) if x.ndim != 2 else x
    if w.ndim != 2 or xf.shape[1] != w.shape[0]:
        raise ShapeError(f"dense expects {w.shape[0]} features, got input {x.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"bias shape {b.shape} does not match {w.shape[1]} units")
    return xf @ w + b, (xf, w, x.shape)


def dense_backward(dy: np.ndarray, cache):
    xf, w, xshape = cache
    return (dy @ w.T).reshape(xshape), xf.T @ dy, dy.sum(axis=0)


def concat_channels(xs):
    if len(xs) < 2:
        raise ShapeError("concat_channels needs at least two inputs")
    lead = xs[0].shape[:-1]
    for x in xs[1:]:
        if x.shape[:-1] != lead:
            raise ShapeError(f"cannot concatenate {x.shape} with leading dims {lead}")
    splits = np.cumsum([x.shape[-1] for x in xs])[:-1]
    return np.concatenate(xs, axis=-1), splits


def concat_backward(dy: np.ndarray, splits):
    return [np.ascontiguousarray(part) for part in np.split(dy, splits, axis=-1)]


# -- activations ------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # Saturation would otherwise round to exactly 0 or 1.
    info = np.finfo(x.dtype)
    return np.clip(out, info.tiny, np.nextafter(x.dtype.type(1), x.dtype.type(0)))


def activate(kind, x: np.ndarray):
    """Apply an activation; returns ``(output, cache)``."""
    kind = ActivationKind(kind)
    if kind is ActivationKind.RELU:
        y = np.maximum(x, 0)
    elif kind is ActivationKind.ELU:
        y = np.where(x > 0, x, ELU_ALPHA * np.expm1(np.minimum(x, 0)))
    elif kind is ActivationKind.SELU:
        y = SELU_SCALE * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0)))
    elif kind is ActivationKind.SIGMOID:
        y = _sigmoid(x)
    elif kind is ActivationKind.TANH:
        y = np.tanh(x)
    else:
        y = np.exp(x)
    return y.astype(x.dtype, copy=False), (kind, x, y)


def activation_derivative(kind, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Elementwise dy/dx given the pre-activation ``x`` and output ``y``."""
    kind = ActivationKind(kind)
    if kind is ActivationKind.RELU:
        return (x > 0).astype(x.dtype)
    if kind is ActivationKind.ELU:
        return np.where(x > 0, 1.0, y + ELU_ALPHA).astype(x.dtype)
    if kind is ActivationKind.SELU:
        return np.where(x > 0, SELU_SCALE, y + SELU_SCALE * SELU_ALPHA).astype(x.dtype)
    if kind is ActivationKind.SIGMOID:
        return y * (1 - y)
    if kind is ActivationKind.TANH:
        return 1 - y * y
    return y


def activate_backward(dy: np.ndarray, cache) -> np.ndarray:
    kind, x, y = cache
    return dy * activation_derivative(kind, x, y)


# -- loss -------------------------------------------------------------------


def bce_loss(p: np.ndarray, t: np.ndarray, eps: float = BCE_EPSILON):
    """Mean binary cross-entropy and its gradient with respect to ``p``."""
    if p.shape != t.shape:
        raise ShapeError(f"prediction shape {p.shape} != target shape {t.shape}")
    pc = np.clip(p, eps, 1 - eps)
    n = p.shape[0]
    losses = -(t * np.log(pc) + (1 - t) * np.log(1 - pc))
    loss = float(losses.sum() / n)
    inside = (p >= eps) & (p <= 1 - eps)
    grad = np.where(inside, (pc - t) / (pc * (1 - pc)), 0.0) / n
    return loss, grad.astype(p.dtype, copy=False)
