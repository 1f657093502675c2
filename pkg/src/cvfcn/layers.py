"""Forward and backward passes of the complex layers.

Gradients of the real loss ``J`` are packed as complex arrays whose real part
is ``dJ/d re(.)`` and whose imaginary part is ``dJ/d im(.)``.  With this
packing the backward of ``y = w * x`` is ``dx = dy * conj(w)`` and
``dw = dy * conj(x)``, which is what the conv backward uses.

Every ``*_fwd`` returns ``(out, cache)``; the matching ``*_bwd`` consumes the
cache.  Caches are plain tuples or small dataclasses and are not shared.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .ctensor import CTensor, ShapeError


# -- parameter containers --------------------------------------------------

@dataclass
class ConvParams:
    W: CTensor  # (kh, kw, in_ch, out_ch)
    b: CTensor  # (out_ch,)
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        kh, kw = self.W.shape[:2]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"kernel sizes must be odd, got {kh}x{kw}")
        if self.b.shape != (self.W.shape[3],):
            raise ShapeError(f"bias shape {self.b.shape} does not match kernel {self.W.shape}")


def _real_dtype(dtype) -> np.dtype:
    return np.finfo(dtype).dtype


@dataclass
class BNParams:
    """Complex batch norm: whitening of the (re, im) plane per channel."""

    gamma: np.ndarray  # (C, 2, 2) real
    beta: CTensor  # (C,)
    running_mean: CTensor  # (C,)
    running_cov: np.ndarray  # (C, 2, 2) real, stored without epsilon
    momentum: float = 0.9
    epsilon: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype=np.complex64, momentum=0.9, epsilon=1e-5):
        rdt = _real_dtype(dtype)
        eye = np.broadcast_to(np.eye(2, dtype=rdt), (channels, 2, 2))
        return cls(
            gamma=(eye / np.sqrt(2.0)).astype(rdt),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_cov=(0.5 * eye).astype(rdt),
            momentum=momentum,
            epsilon=epsilon,
        )

    @property
    def channels(self) -> int:
        return self.beta.shape[0]


@dataclass
class LocMap:
    """Max-location map ("switches") recorded by a pooling layer.

    ``indices`` has the pooled shape; each entry is the flat row-major index
    of the selected element in the source tensor of shape ``src_shape``.
    """

    indices: np.ndarray
    src_shape: tuple[int, ...]
    win: int = 2
    stride: int = 2

    @property
    def pooled_shape(self) -> tuple[int, ...]:
        return self.indices.shape

    @property
    def overlapping(self) -> bool:
        return self.stride < self.win


@dataclass
class DropMask:
    keep: np.ndarray  # bool, same shape as the activation
    keep_prob: float = field(default=1.0)


# -- convolution ------------------------------------------------------------

def _conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    span = n + 2 * pad - k
    if span < 0 or span % stride:
        raise ShapeError(
            f"non-integral conv output size for input {n}, kernel {k}, "
            f"stride {stride}, pad {pad}"
        )
    return span // stride + 1


def _im2col(x: CTensor, kh: int, kw: int, stride: int, pad: int):
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    B, H, W, C = x.shape
    Ho = (H - kh) // stride + 1
    Wo = (W - kw) // stride + 1
    if kh == 1 and kw == 1:
        cols = x[:, ::stride, ::stride, :]
        return np.ascontiguousarray(cols).reshape(B * Ho * Wo, C), Ho, Wo
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    # (B, Ho, Wo, C, kh, kw) -> (B, Ho, Wo, kh, kw, C) to match kernel layout
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(B * Ho * Wo, kh * kw * C)
    return cols, Ho, Wo


def cconv2d_fwd(x: CTensor, p: ConvParams):
    """Complex convolution (cross-correlation) with zero padding."""
    if x.ndim != 4:
        raise ShapeError(f"conv input must be (B, H, W, C), got {x.shape}")
    kh, kw, cin, cout = p.W.shape
    if x.shape[3] != cin:
        raise ShapeError(f"input has {x.shape[3]} channels, kernel expects {cin}")
    B, H, W, _ = x.shape
    _conv_out_size(H, kh, p.stride, p.pad)
    _conv_out_size(W, kw, p.stride, p.pad)
    cols, Ho, Wo = _im2col(x, kh, kw, p.stride, p.pad)
    y = cols @ p.W.reshape(kh * kw * cin, cout)
    y += p.b
    return y.reshape(B, Ho, Wo, cout), (cols, x.shape, p)


def cconv2d_bwd(cache, dY: CTensor):
    cols, x_shape, p = cache
    kh, kw, cin, cout = p.W.shape
    B, H, W, _ = x_shape
    if dY.shape[0] != B or dY.shape[3] != cout:
        raise ShapeError(f"upstream gradient {dY.shape} does not match cache")
    g = dY.reshape(-1, cout)
    # (g^H cols)^H == cols^H g, but conjugates the narrower operand
    dW = (g.conj().T @ cols).conj().T.reshape(p.W.shape)
    db = g.sum(axis=0)
    dcols = g @ p.W.reshape(kh * kw * cin, cout).conj().T
    Ho, Wo = dY.shape[1], dY.shape[2]
    s, pad = p.stride, p.pad
    dxp = np.zeros((B, H + 2 * pad, W + 2 * pad, cin), dtype=dY.dtype)
    dc = dcols.reshape(B, Ho, Wo, kh, kw, cin)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + s * Ho:s, j:j + s * Wo:s, :] += dc[:, :, :, i, j, :]
    dX = dxp[:, pad:pad + H, pad:pad + W, :] if pad else dxp
    return dX, dW, db


# -- batch normalization ----------------------------------------------------

def _inv_sqrt_2x2(vrr, vri, vii):
    """Closed-form inverse square root of the SPD matrix [[vrr, vri], [vri, vii]]."""
    s = np.sqrt(vrr * vii - vri * vri)
    t = np.sqrt(vrr + vii + 2.0 * s)
    inv = 1.0 / (s * t)
    return (vii + s) * inv, -vri * inv, (vrr + s) * inv


def cbn_fwd(x: CTensor, p: BNParams, training: bool):
    """Complex batch normalization over (batch, height, width) per channel.

    In training mode the running statistics of ``p`` are updated in place.
    """
    if x.ndim != 4 or x.shape[3] != p.channels:
        raise ShapeError(f"BN expects (B, H, W, {p.channels}), got {x.shape}")
    n = x.shape[0] * x.shape[1] * x.shape[2]
    rdt = _real_dtype(x.dtype)
    eps = rdt.type(p.epsilon)
    if training:
        if n < 2:
            raise ValueError("complex batch norm needs more than one element per channel")
        mu = x.mean(axis=(0, 1, 2))
        xc = x - mu
        xr, xi = xc.real, xc.imag
        crr = (xr * xr).mean(axis=(0, 1, 2))
        cii = (xi * xi).mean(axis=(0, 1, 2))
        cri = (xr * xi).mean(axis=(0, 1, 2))
        m = p.momentum
        p.running_mean[...] = m * p.running_mean + (1 - m) * mu
        batch_cov = np.stack([np.stack([crr, cri], -1), np.stack([cri, cii], -1)], -2)
        p.running_cov[...] = m * p.running_cov + (1 - m) * batch_cov
    else:
        mu = p.running_mean.astype(x.dtype)
        xc = x - mu
        xr, xi = xc.real, xc.imag
        crr = p.running_cov[:, 0, 0].astype(rdt)
        cri = p.running_cov[:, 0, 1].astype(rdt)
        cii = p.running_cov[:, 1, 1].astype(rdt)
    vrr, vri, vii = crr + eps, cri, cii + eps
    m00, m01, m11 = _inv_sqrt_2x2(vrr, vri, vii)
    hr = m00 * xr + m01 * xi
    hi = m01 * xr + m11 * xi
    g = p.gamma.astype(rdt)
    out = np.empty_like(x)
    out.real = g[:, 0, 0] * hr + g[:, 0, 1] * hi + p.beta.real
    out.imag = g[:, 1, 0] * hr + g[:, 1, 1] * hi + p.beta.imag
    cache = (xr, xi, hr, hi, (vrr, vri, vii), (m00, m01, m11), g, training)
    return out, cache


def _inv_sqrt_grad(vrr, vri, vii, dm):
    """Pull ``dJ/dM`` back through ``M = V^{-1/2}`` for a batch of 2x2 SPD ``V``."""
    V = np.stack([np.stack([vrr, vri], -1), np.stack([vri, vii], -1)], -2)
    lam, U = np.linalg.eigh(V)
    r = np.sqrt(lam)
    # divided difference of f(l) = l^{-1/2}; the diagonal is f'(l)
    F = -1.0 / (r[:, :, None] * r[:, None, :] * (r[:, :, None] + r[:, None, :]))
    Ut = np.swapaxes(U, -1, -2)
    return U @ (F * (Ut @ dm @ U)) @ Ut


def cbn_bwd(cache, dY: CTensor):
    xr, xi, hr, hi, (vrr, vri, vii), (m00, m01, m11), g, training = cache
    axes = (0, 1, 2)
    gr, gi = dY.real, dY.imag
    dbeta = dY.sum(axis=axes)
    dgamma = np.empty_like(g)
    dgamma[:, 0, 0] = (gr * hr).sum(axis=axes)
    dgamma[:, 0, 1] = (gr * hi).sum(axis=axes)
    dgamma[:, 1, 0] = (gi * hr).sum(axis=axes)
    dgamma[:, 1, 1] = (gi * hi).sum(axis=axes)
    dhr = g[:, 0, 0] * gr + g[:, 1, 0] * gi
    dhi = g[:, 0, 1] * gr + g[:, 1, 1] * gi
    dxr = m00 * dhr + m01 * dhi
    dxi = m01 * dhr + m11 * dhi
    if training:
        n = xr.shape[0] * xr.shape[1] * xr.shape[2]
        dm = np.empty_like(g)
        dm[:, 0, 0] = (dhr * xr).sum(axis=axes)
        dm[:, 0, 1] = (dhr * xi).sum(axis=axes)
        dm[:, 1, 0] = (dhi * xr).sum(axis=axes)
        dm[:, 1, 1] = (dhi * xi).sum(axis=axes)
        dv = _inv_sqrt_grad(vrr, vri, vii, dm)
        s = (dv + np.swapaxes(dv, -1, -2)) / n
        dxr = dxr + s[:, 0, 0] * xr + s[:, 0, 1] * xi
        dxi = dxi + s[:, 1, 0] * xr + s[:, 1, 1] * xi
        dxr = dxr - dxr.mean(axis=axes)
        dxi = dxi - dxi.mean(axis=axes)
    dX = np.empty_like(dY)
    dX.real = dxr
    dX.imag = dxi
    return dX, dgamma, dbeta


# -- activation -------------------------------------------------------------

def crelu_fwd(x: CTensor):
    out = np.empty_like(x)
    out.real = np.maximum(x.real, 0)
    out.imag = np.maximum(x.imag, 0)
    return out, x


def crelu_bwd(cache, dY: CTensor) -> CTensor:
    x = cache
    dX = np.empty_like(dY)
    dX.real = np.where(x.real > 0, dY.real, 0)
    dX.imag = np.where(x.imag > 0, dY.imag, 0)
    return dX


# -- pooling ----------------------------------------------------------------

def _pool_out(n: int, win: int, stride: int) -> int:
    if win > n:
        raise ShapeError(f"pooling window {win} exceeds input size {n}")
    return (n - win) // stride + 1


def cmaxpool_fwd(x: CTensor, win: int = 2, stride: int = 2):
    """Keep the largest-magnitude element of each window (first wins ties)."""
    if x.ndim != 4:
        raise ShapeError(f"pool input must be (B, H, W, C), got {x.shape}")
    B, H, W, C = x.shape
    Ho, Wo = _pool_out(H, win, stride), _pool_out(W, win, stride)
    mag2 = x.real * x.real + x.imag * x.imag
    view = sliding_window_view(mag2, (win, win), axis=(1, 2))[:, ::stride, ::stride]
    view = view[:, :Ho, :Wo].reshape(B, Ho, Wo, C, win * win)
    k = view.argmax(axis=-1)
    di, dj = np.divmod(k, win)
    rows = np.arange(Ho)[None, :, None, None] * stride + di
    cols = np.arange(Wo)[None, None, :, None] * stride + dj
    b = np.arange(B)[:, None, None, None]
    c = np.arange(C)[None, None, None, :]
    flat = ((b * H + rows) * W + cols) * C + c
    loc = LocMap(indices=flat, src_shape=x.shape, win=win, stride=stride)
    return x.reshape(-1)[flat], loc


def topleft_locmap(src_shape, win: int = 2, stride: int = 2) -> LocMap:
    """Location map that always selects the top-left element of each window."""
    B, H, W, C = src_shape
    Ho, Wo = _pool_out(H, win, stride), _pool_out(W, win, stride)
    rows = np.arange(Ho)[None, :, None, None] * stride
    cols = np.arange(Wo)[None, None, :, None] * stride
    b = np.arange(B)[:, None, None, None]
    c = np.arange(C)[None, None, None, :]
    flat = ((b * H + rows) * W + cols) * C + c
    return LocMap(indices=np.broadcast_to(flat, (B, Ho, Wo, C)).copy(),
                  src_shape=tuple(src_shape), win=win, stride=stride)


def cmaxpool_bwd(loc: LocMap, dY: CTensor) -> CTensor:
    if dY.shape != loc.pooled_shape:
        raise ShapeError(f"gradient {dY.shape} does not match pooled shape {loc.pooled_shape}")
    dX = np.zeros(int(np.prod(loc.src_shape)), dtype=dY.dtype)
    if loc.overlapping:
        np.add.at(dX, loc.indices.ravel(), dY.ravel())
    else:
        dX[loc.indices.ravel()] = dY.ravel()
    return dX.reshape(loc.src_shape)


def cmaxunpool_fwd(x: CTensor, loc: LocMap, out_shape=None) -> CTensor:
    """Scatter ``x`` to the recorded max locations; everything else is zero."""
    if out_shape is not None and tuple(out_shape) != tuple(loc.src_shape):
        raise ShapeError(f"out_shape {tuple(out_shape)} != locmap source {loc.src_shape}")
    if x.shape != loc.pooled_shape:
        raise ShapeError(f"input {x.shape} does not match locmap {loc.pooled_shape}")
    out = np.zeros(int(np.prod(loc.src_shape)), dtype=x.dtype)
    out[loc.indices.ravel()] = x.ravel()
    return out.reshape(loc.src_shape)


def cmaxunpool_bwd(loc: LocMap, dY: CTensor) -> CTensor:
    if dY.shape != tuple(loc.src_shape):
        raise ShapeError(f"gradient {dY.shape} does not match source {loc.src_shape}")
    return dY.reshape(-1)[loc.indices]


# -- output layer and dropout ----------------------------------------------

def cout_fwd(x: CTensor):
    """Element-wise logistic applied to the real and imaginary parts."""
    out = np.empty_like(x)
    out.real = expit(x.real)
    out.imag = expit(x.imag)
    return out, out


def cout_bwd(cache, dY: CTensor) -> CTensor:
    o = cache
    dX = np.empty_like(dY)
    dX.real = dY.real * o.real * (1 - o.real)
    dX.imag = dY.imag * o.imag * (1 - o.imag)
    return dX


def dropout_fwd(x: CTensor, keep_prob: float, rng: np.random.Generator | None,
                training: bool):
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    if not training or keep_prob == 1.0:
        return x, DropMask(keep=np.ones(x.shape, dtype=bool), keep_prob=1.0)
    keep = rng.random(x.shape) < keep_prob
    scale = x.real.dtype.type(1.0 / keep_prob)
    return x * keep * scale, DropMask(keep=keep, keep_prob=keep_prob)


def dropout_bwd(mask: DropMask, dY: CTensor) -> CTensor:
    if mask.keep_prob == 1.0:
        return dY
    return dY * mask.keep * dY.real.dtype.type(1.0 / mask.keep_prob)
