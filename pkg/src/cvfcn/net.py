"""The complex fully convolutional network.

Topology (``w1..w5`` are the block widths, 12/24/48/96/192 by default)::

    B1..B5   conv 3x3 -> BN -> CReLU -> maxpool 2x2/2   (pre-pool output kept)
    B6       conv 1x1 -> BN -> CReLU -> dropout
    B7..B10  unpool (switches of B5..B2) -> + skip -> conv 3x3 -> BN -> CReLU
    B11      unpool (switches of B1) -> + skip -> conv 3x3 to K -> logistic

Skip fusion adds the pre-pool activation of the mirror downsampling block to
the unpooled map.  Without location maps the unpooling writes every value to
the top-left cell of its window.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterator

import numpy as np

from . import layers as L
from .ctensor import (DTYPE, CTensor, FormatError, ShapeError, crop,
                      read_cvt, reflect_pad, write_cvt)
from .initializers import InitSpec, init_kernel

CVM_MAGIC = b"CVM"
CVM_VERSION = b"1"
DEPTH = 5
MULTIPLE = 2 ** DEPTH


class ConfigError(ValueError):
    pass


@dataclass
class NetConfig:
    num_classes: int
    in_channels: int = 6
    widths: tuple[int, ...] = (12, 24, 48, 96, 192)
    width_scale: Fraction = Fraction(1)
    enable_skips: bool = True
    enable_locmaps: bool = True
    keep_prob: float = 0.5

    def __post_init__(self):
        self.width_scale = Fraction(self.width_scale).limit_denominator(10_000)
        self.widths = tuple(int(w) for w in self.widths)
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.in_channels < 1:
            raise ConfigError("in_channels must be positive")
        if len(self.widths) != DEPTH:
            raise ConfigError(f"expected {DEPTH} block widths, got {len(self.widths)}")
        if self.width_scale <= 0:
            raise ConfigError("width_scale must be positive")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ConfigError("keep_prob must lie in (0, 1]")
        self.scaled_widths()

    def scaled_widths(self) -> tuple[int, ...]:
        out = []
        for w in self.widths:
            s = w * self.width_scale
            if s.denominator != 1 or s < 1:
                raise ConfigError(f"width {w} x {self.width_scale} is not a positive integer")
            out.append(int(s))
        return tuple(out)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["width_scale"] = str(self.width_scale)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        d["width_scale"] = Fraction(d["width_scale"])
        return cls(**d)


@dataclass
class ForwardCache:
    layers: list = field(default_factory=list)
    locmaps: list = field(default_factory=list)
    training: bool = True


class NetModel:
    def __init__(self, config: NetConfig, convs: list[L.ConvParams],
                 bns: list[L.BNParams], dtype=DTYPE):
        self.config = config
        self.convs = convs
        self.bns = bns
        self.dtype = np.dtype(dtype)

    # -- parameters -------------------------------------------------------

    def named_parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        """Trainable arrays in topology order (live references)."""
        for i, conv in enumerate(self.convs):
            yield f"B{i + 1}.conv.W", conv.W
            yield f"B{i + 1}.conv.b", conv.b
            if i < len(self.bns):
                yield f"B{i + 1}.bn.gamma", self.bns[i].gamma
                yield f"B{i + 1}.bn.beta", self.bns[i].beta

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, bn in enumerate(self.bns):
            yield f"B{i + 1}.bn.running_mean", bn.running_mean
            yield f"B{i + 1}.bn.running_cov", bn.running_cov

    def _state_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        # checkpoint order: per block W, b, gamma, beta, running mean/cov
        for i, conv in enumerate(self.convs):
            yield f"B{i + 1}.conv.W", conv.W
            yield f"B{i + 1}.conv.b", conv.b
            if i < len(self.bns):
                bn = self.bns[i]
                yield f"B{i + 1}.bn.gamma", bn.gamma
                yield f"B{i + 1}.bn.beta", bn.beta
                yield f"B{i + 1}.bn.running_mean", bn.running_mean
                yield f"B{i + 1}.bn.running_cov", bn.running_cov

    def parameters(self) -> dict[str, np.ndarray]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def astype(self, dtype) -> "NetModel":
        """Deep copy with every array cast to ``dtype`` (complex) or its real part."""
        dtype = np.dtype(dtype)
        rdt = np.finfo(dtype).dtype
        convs = [L.ConvParams(c.W.astype(dtype), c.b.astype(dtype), c.stride, c.pad)
                 for c in self.convs]
        bns = [L.BNParams(b.gamma.astype(rdt), b.beta.astype(dtype),
                          b.running_mean.astype(dtype), b.running_cov.astype(rdt),
                          b.momentum, b.epsilon) for b in self.bns]
        return NetModel(self.config, convs, bns, dtype)

    def copy(self) -> "NetModel":
        return self.astype(self.dtype)

    # -- passes -----------------------------------------------------------

    def forward(self, x: CTensor, training: bool = False,
                rng: np.random.Generator | None = None):
        return forward(self, x, training, rng)

    def backward(self, cache: ForwardCache, dO: CTensor) -> dict[str, np.ndarray]:
        return backward(self, cache, dO)


def build(config: NetConfig, init: InitSpec | None = None, dtype=DTYPE) -> NetModel:
    init = init or InitSpec()
    rng = np.random.default_rng(init.seed)
    w = config.scaled_widths()
    K = config.num_classes
    # (kernel, cin, cout, pad) for B1..B11
    plan = []
    cin = config.in_channels
    for wi in w:
        plan.append((3, cin, wi, 1))
        cin = wi
    plan.append((1, w[-1], w[-1], 0))
    for i in range(DEPTH - 1, 0, -1):
        plan.append((3, w[i], w[i - 1], 1))
    plan.append((3, w[0], K, 1))

    convs, bns = [], []
    for k, ci, co, pad in plan:
        W = init_kernel((k, k, ci, co), init, rng, dtype)
        convs.append(L.ConvParams(W, np.zeros(co, dtype=dtype), stride=1, pad=pad))
    for _, _, co, _ in plan[:-1]:
        bns.append(L.BNParams.create(co, dtype))
    return NetModel(config, convs, bns, dtype)


def forward(m: NetModel, x: CTensor, training: bool = False,
            rng: np.random.Generator | None = None):
    """Run the network; returns ``(O, cache)`` with ``O`` of shape (B, H, W, K)."""
    cfg = m.config
    if x.ndim != 4:
        raise ShapeError(f"input must be (B, H, W, C), got {x.shape}")
    if x.shape[3] != cfg.in_channels:
        raise ShapeError(f"input has {x.shape[3]} channels, model expects {cfg.in_channels}")
    if x.shape[1] % MULTIPLE or x.shape[2] % MULTIPLE:
        raise ShapeError(f"spatial dims {x.shape[1:3]} must be multiples of {MULTIPLE}")
    x = x.astype(m.dtype, copy=False)
    cache = ForwardCache(training=training)
    skips = []
    h = x
    for i in range(DEPTH):
        h, c_conv = L.cconv2d_fwd(h, m.convs[i])
        h, c_bn = L.cbn_fwd(h, m.bns[i], training)
        h, c_relu = L.crelu_fwd(h)
        skips.append(h)
        h, loc = L.cmaxpool_fwd(h, 2, 2)
        cache.locmaps.append(loc)
        cache.layers.append((c_conv, c_bn, c_relu, loc))

    h, c_conv = L.cconv2d_fwd(h, m.convs[DEPTH])
    h, c_bn = L.cbn_fwd(h, m.bns[DEPTH], training)
    h, c_relu = L.crelu_fwd(h)
    h, mask = L.dropout_fwd(h, cfg.keep_prob, rng, training)
    cache.layers.append((c_conv, c_bn, c_relu, mask))

    for j in range(DEPTH):
        li = DEPTH + 1 + j
        src = DEPTH - 1 - j
        loc = cache.locmaps[src]
        if not cfg.enable_locmaps:
            loc = L.topleft_locmap(loc.src_shape, loc.win, loc.stride)
        h = L.cmaxunpool_fwd(h, loc)
        if cfg.enable_skips:
            h = h + skips[src]
        h, c_conv = L.cconv2d_fwd(h, m.convs[li])
        if li < len(m.bns):
            h, c_bn = L.cbn_fwd(h, m.bns[li], training)
            h, c_relu = L.crelu_fwd(h)
            cache.layers.append((loc, c_conv, c_bn, c_relu))
        else:
            cache.layers.append((loc, c_conv, None, None))
    O, c_out = L.cout_fwd(h)
    cache.layers.append(c_out)
    return O, cache


def backward(m: NetModel, cache: ForwardCache, dO: CTensor) -> dict[str, np.ndarray]:
    """Gradients of the loss for every entry of ``m.named_parameters()``."""
    cfg = m.config
    n_conv = len(m.convs)
    if len(cache.layers) != n_conv + 1 or len(cache.locmaps) != DEPTH:
        raise ValueError("forward cache does not match this model")
    grads: dict[str, np.ndarray] = {}

    def put_conv(i, dW, db):
        grads[f"B{i + 1}.conv.W"] = dW
        grads[f"B{i + 1}.conv.b"] = db

    def put_bn(i, dg, dbeta):
        grads[f"B{i + 1}.bn.gamma"] = dg
        grads[f"B{i + 1}.bn.beta"] = dbeta

    dh = L.cout_bwd(cache.layers[-1], dO.astype(m.dtype, copy=False))
    dskips = [None] * DEPTH
    for j in reversed(range(DEPTH)):
        li = DEPTH + 1 + j
        src = DEPTH - 1 - j
        loc, c_conv, c_bn, c_relu = cache.layers[li]
        if c_bn is not None:
            dh = L.crelu_bwd(c_relu, dh)
            dh, dg, dbeta = L.cbn_bwd(c_bn, dh)
            put_bn(li, dg, dbeta)
        dh, dW, db = L.cconv2d_bwd(c_conv, dh)
        put_conv(li, dW, db)
        if cfg.enable_skips:
            dskips[src] = dh
        dh = L.cmaxunpool_bwd(loc, dh)

    c_conv, c_bn, c_relu, mask = cache.layers[DEPTH]
    dh = L.dropout_bwd(mask, dh)
    dh = L.crelu_bwd(c_relu, dh)
    dh, dg, dbeta = L.cbn_bwd(c_bn, dh)
    put_bn(DEPTH, dg, dbeta)
    dh, dW, db = L.cconv2d_bwd(c_conv, dh)
    put_conv(DEPTH, dW, db)

    for i in reversed(range(DEPTH)):
        c_conv, c_bn, c_relu, loc = cache.layers[i]
        dh = L.cmaxpool_bwd(loc, dh)
        if dskips[i] is not None:
            dh = dh + dskips[i]
        dh = L.crelu_bwd(c_relu, dh)
        dh, dg, dbeta = L.cbn_bwd(c_bn, dh)
        put_bn(i, dg, dbeta)
        dh, dW, db = L.cconv2d_bwd(c_conv, dh)
        put_conv(i, dW, db)

    return {name: grads[name] for name, _ in m.named_parameters()}


def predict_labels(O: CTensor) -> np.ndarray:
    """1-based class ids from ``argmax_k re(O_k) + im(O_k)``; ties go to the lower id."""
    score = O.real + O.imag
    return (np.argmax(score, axis=-1) + 1).astype(np.int64)


def pad_amounts(n: int, multiple: int = MULTIPLE) -> tuple[int, int]:
    total = (-n) % multiple
    return total // 2, total - total // 2


def predict_image(m: NetModel, cube: CTensor) -> np.ndarray:
    """Dense labels for an ``(H, W, C)`` cube of any size."""
    if cube.ndim != 3:
        raise ShapeError(f"expected an (H, W, C) cube, got {cube.shape}")
    ph = pad_amounts(cube.shape[0])
    pw = pad_amounts(cube.shape[1])
    x = reflect_pad(cube, ph, pw)[None]
    O, _ = forward(m, x, training=False)
    return crop(predict_labels(O)[0], ph, pw)


# -- checkpoint -------------------------------------------------------------

def save(m: NetModel, path) -> None:
    """Write ``CVM1``, a u32-prefixed JSON config, then CVT payloads."""
    blob = json.dumps({"config": m.config.to_dict()}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CVM_MAGIC + CVM_VERSION)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, arr in m._state_arrays():
            write_cvt(f, arr)


def load(path) -> NetModel:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8 or data[:3] != CVM_MAGIC:
        raise FormatError(f"{path}: not a CVM checkpoint")
    if data[3:4] != CVM_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {data[3:4]!r}")
    (n,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + n:
        raise FormatError(f"{path}: truncated config blob")
    try:
        meta = json.loads(data[8:8 + n].decode("utf-8"))
        config = NetConfig.from_dict(meta["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: bad config blob ({exc})") from exc
    m = build(config)
    buf = io.BytesIO(data[8 + n:])
    for name, arr in m._state_arrays():
        payload = read_cvt(buf)
        if payload.shape != arr.shape:
            raise FormatError(f"{path}: {name} has shape {payload.shape}, expected {arr.shape}")
        arr[...] = payload if np.iscomplexobj(arr) else payload.real
    if buf.read(1):
        raise FormatError(f"{path}: trailing bytes")
    return m


__all__ = [
    "ConfigError", "NetConfig", "NetModel", "ForwardCache", "build", "forward",
    "backward", "predict_labels", "predict_image", "save", "load",
]
