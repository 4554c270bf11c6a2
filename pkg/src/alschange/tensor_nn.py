"""Dense-tensor NN kernels with hand-written backward passes.

All activations are N x C x H x W float arrays (32-bit for training,
64-bit for verification).  Every forward returns a cache consumed by
its backward; backwards are validated against central finite
differences (see grad_check).

Convolutions: 3x3, pad 1, stride 1 everywhere except the 1x1 head and
the 2x2/stride-2 transpose convolutions.  The im2col path is the fast
default; the "direct" path is an independent loop formulation kept as
its oracle (they agree to ~1e-12 in 64-bit; exact bitwise equality is
not achievable across BLAS summation orders).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBatch, OddDimension, ShapeMismatch

BN_EPS = 1e-5
BCE_CLAMP = 1e-7


# ---------------------------------------------------------------------------
# convolution

def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Padded input N,C,Hp,Wp -> (N*H*W, C*kh*kw) patch matrix."""
    n, c, hp, wp = xp.shape
    h, w = hp - kh + 1, wp - kw + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    # N,C,H,W,kh,kw -> N,H,W,C,kh,kw
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(n * h * w, c * kh * kw)


def conv2d_forward(x, w, b, pad: int = 1, method: str = "im2col"):
    """Cross-correlation with zero padding, stride 1.

    x: N,C,H,W; w: F,C,kh,kw; b: F.  Returns (y, cache).
    """
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if cw != c:
        raise ShapeMismatch(f"input has {c} channels, kernel expects {cw}")
    if b.shape != (f,):
        raise ShapeMismatch("bias shape must be (F,)")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1

    if method == "direct":
        y = np.zeros((n, f, ho, wo), dtype=x.dtype)
        for fi in range(f):
            for ci in range(c):
                for ki in range(kh):
                    for kj in range(kw):
                        y[:, fi] += xp[:, ci, ki:ki + ho, kj:kj + wo] * w[fi, ci, ki, kj]
            y[:, fi] += b[fi]
        cache = (x.shape, w, pad, None)
        return y, cache

    cols = _im2col(xp, kh, kw)
    y = cols @ w.reshape(f, -1).T + b
    y = y.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y), (x.shape, w, pad, cols)


def conv2d_backward(grad_y, cache):
    """Returns (dx, dw, db)."""
    x_shape, w, pad, cols = cache
    n, c, h, wd = x_shape
    f, _, kh, kw = w.shape
    ho, wo = grad_y.shape[2], grad_y.shape[3]
    g = grad_y.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)

    if cols is None:
        raise ValueError("direct-path cache does not support backward")
    dw = (g.T @ cols).reshape(w.shape)
    db = g.sum(axis=0)
    dcols = g @ w.reshape(f, -1)  # (N*ho*wo, C*kh*kw)
    dcols = dcols.reshape(n, ho, wo, c, kh, kw)

    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=grad_y.dtype)
    for ki in range(kh):
        for kj in range(kw):
            dxp[:, :, ki:ki + ho, kj:kj + wo] += dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    dx = dxp[:, :, pad:pad + h, pad:pad + wd]
    return np.ascontiguousarray(dx), dw, db


def conv_transpose2d_forward(x, w, stride: int = 2):
    """2x2 stride-2 transpose convolution; exactly doubles H and W.

    x: N,C,H,W; w: C,F,2,2 -> y: N,F,2H,2W.
    """
    n, c, h, wd = x.shape
    cw, f, kh, kw = w.shape
    if cw != c:
        raise ShapeMismatch(f"input has {c} channels, kernel expects {cw}")
    if stride != 2 or (kh, kw) != (2, 2):
        raise ShapeMismatch("only 2x2 kernels with stride 2 are supported")
    t = np.einsum("nchw,cfab->nfhawb", x, w, optimize=True)
    y = t.reshape(n, f, h * 2, wd * 2)
    return np.ascontiguousarray(y), (x, w)


def conv_transpose2d_backward(grad_y, cache):
    """Returns (dx, dw)."""
    x, w = cache
    n, c, h, wd = x.shape
    f = w.shape[1]
    g = grad_y.reshape(n, f, h, 2, wd, 2)
    dx = np.einsum("nfhawb,cfab->nchw", g, w, optimize=True)
    dw = np.einsum("nchw,nfhawb->cfab", x, g, optimize=True)
    return np.ascontiguousarray(dx), dw


# ---------------------------------------------------------------------------
# batch normalization

def batchnorm_forward(x, gamma, beta, running_mean, running_var,
                      mode: str = "train", momentum: float = 0.9):
    """Per-channel batch normalization over N,H,W.

    Returns (y, cache, new_running_mean, new_running_var).  Train mode
    requires at least 2 samples per channel and updates the running
    stats by exponential moving average.
    """
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch("gamma/beta must have one entry per channel")
    if mode == "train":
        if n * h * w < 2:
            raise DegenerateBatch("need >= 2 samples per channel in train mode")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        rm = momentum * running_mean + (1 - momentum) * mean
        rv = momentum * running_var + (1 - momentum) * var
    elif mode == "infer":
        mean, var = running_mean, running_var
        rm, rv = running_mean, running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")

    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = (xhat, gamma, inv_std, mode)
    return y, cache, rm, rv


def batchnorm_backward(grad_y, cache):
    """Returns (dx, dgamma, dbeta)."""
    xhat, gamma, inv_std, mode = cache
    n, c, h, w = grad_y.shape
    m = n * h * w
    dgamma = (grad_y * xhat).sum(axis=(0, 2, 3))
    dbeta = grad_y.sum(axis=(0, 2, 3))
    gscaled = grad_y * gamma[None, :, None, None]
    if mode == "infer":
        dx = gscaled * inv_std[None, :, None, None]
        return dx, dgamma, dbeta
    t1 = gscaled.sum(axis=(0, 2, 3)) / m
    t2 = (gscaled * xhat).sum(axis=(0, 2, 3)) / m
    dx = (gscaled - t1[None, :, None, None] - xhat * t2[None, :, None, None]) \
        * inv_std[None, :, None, None]
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# activations, pooling, concat

def relu_forward(x):
    return np.maximum(x, 0), (x > 0)


def relu_backward(grad_y, cache):
    return grad_y * cache


def sigmoid_forward(x):
    y = 1.0 / (1.0 + np.exp(-x))
    return y, y


def sigmoid_backward(grad_y, cache):
    y = cache
    return grad_y * y * (1.0 - y)


def maxpool2_forward(x):
    """2x2 max pooling, stride 2; records argmax (first index on ties)."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise OddDimension(f"H and W must be even, got {h}x{w}")
    ho, wo = h // 2, w // 2
    xr = x.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    arg = xr.argmax(axis=-1)
    y = np.take_along_axis(xr, arg[..., None], axis=-1)[..., 0]
    return y, (x.shape, arg)


def maxpool2_backward(grad_y, cache):
    x_shape, arg = cache
    n, c, h, w = x_shape
    ho, wo = h // 2, w // 2
    flat = np.zeros((n, c, ho, wo, 4), dtype=grad_y.dtype)
    np.put_along_axis(flat, arg[..., None], grad_y[..., None], axis=-1)
    dx = flat.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    return np.ascontiguousarray(dx)


def concat_channels(a, b):
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeMismatch(f"cannot concat {a.shape} with {b.shape}")
    return np.concatenate([a, b], axis=1)


def split_channels(grad_y, c1: int):
    """Backward of concat_channels."""
    return grad_y[:, :c1], grad_y[:, c1:]


# ---------------------------------------------------------------------------
# loss and optimizer

def bce_loss(pred, target):
    """Mean binary cross-entropy; returns (loss, grad w.r.t. pred).

    Predictions are clamped to [1e-7, 1 - 1e-7]; the gradient is zero
    where the clamp is active.
    """
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs target {target.shape}")
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = pred.size
    loss = -(target * np.log(p) + (1.0 - target) * np.log1p(-p)).mean()
    grad = (-(target / p) + (1.0 - target) / (1.0 - p)) / n
    grad = np.where((pred > BCE_CLAMP) & (pred < 1.0 - BCE_CLAMP), grad, 0.0)
    return float(loss), grad.astype(pred.dtype)


@dataclass
class Hyperparams:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    epochs: int = 150
    plateau_patience: int = 20
    lr_decay: float = 0.1


@dataclass
class AdamState:
    """Per-parameter moment accumulators keyed by parameter name."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, hyper: Hyperparams,
              lr: float | None = None) -> None:
    """In-place bias-corrected Adam update over a dict of parameters."""
    lr = hyper.lr if lr is None else lr
    state.t += 1
    t = state.t
    b1, b2 = hyper.beta1, hyper.beta2
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"grad shape {g.shape} != param shape {p.shape} for {name}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p -= lr * mhat / (np.sqrt(vhat) + hyper.eps)


# ---------------------------------------------------------------------------
# gradient verification

def rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(loss_fn, arrays, analytic_grads, eps: float = 1e-5,
               n_samples: int = 100, rng=None) -> float:
    """Max relative error of analytic vs central-difference gradients.

    loss_fn() recomputes the scalar loss from the current (mutated)
    array values; arrays/analytic_grads are parallel lists.  Arrays must
    be float64.  Samples >= n_samples coordinates across all arrays.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    total = sum(a.size for a in arrays)
    per = [max(1, round(n_samples * a.size / total)) for a in arrays]
    for arr, grad, k in zip(arrays, analytic_grads, per):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        idx = rng.choice(arr.size, size=min(k, arr.size), replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            lp = loss_fn()
            flat[i] = old - eps
            lm = loss_fn()
            flat[i] = old
            numeric = (lp - lm) / (2 * eps)
            worst = max(worst, rel_error(float(gflat[i]), numeric))
    return worst
