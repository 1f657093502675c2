"""Finite-difference verification of every backward pass.

Each check builds a random problem, evaluates the analytic gradient in the
requested precision, and compares it with central differences computed in
float64.  The probe loss is ``J = sum(re(conj(A) * out))`` for a fixed random
``A``, so the upstream gradient is ``A`` itself.

Errors are scale-relative: ``max|analytic - numeric| / max|analytic|`` per
gradient tensor.  For the whole network the denominator is floored at 1% of
the largest gradient anywhere, because conv biases that feed batch norm have
an exactly zero gradient.
"""

from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterator

import numpy as np

from . import layers as L
from .initializers import InitSpec
from .net import NetConfig, build

F32_TOL = 1e-4
F64_TOL = 1e-6
FD_STEP = 1e-6


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<28s} max rel err {self.error:.3e} (tol {self.tolerance:.0e})"


def _crandn(rng, shape, dtype=np.complex128):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).astype(dtype)


def probe(out: np.ndarray, A: np.ndarray) -> float:
    return float(np.sum(out.real * A.real + out.imag * A.imag))


def numeric_grad(f: Callable[[], float], arr: np.ndarray, index=None,
                 h: float = FD_STEP) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``arr`` (perturbed in place).

    Complex entries get separate real and imaginary steps and the result is
    packed as ``dJ/d re + 1j * dJ/d im``.  ``index`` restricts the entries
    (an iterable of index tuples); other entries are returned as 0.
    """
    g = np.zeros(arr.shape, dtype=np.complex128)
    parts = (1.0, 1j) if np.iscomplexobj(arr) else (1.0,)
    for i in (np.ndindex(arr.shape) if index is None else index):
        orig = arr[i]
        for part in parts:
            arr[i] = orig + h * part
            fp = f()
            arr[i] = orig - h * part
            fm = f()
            arr[i] = orig
            g[i] += part * (fp - fm) / (2 * h)
    return g


def scaled_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 0.0) -> float:
    a = np.asarray(analytic, dtype=np.complex128)
    n = np.asarray(numeric, dtype=np.complex128)
    diff = np.max(np.abs(a.real - n.real)), np.max(np.abs(a.imag - n.imag))
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), floor, 1e-300)
    return float(max(diff) / scale)


# -- per-layer checks -------------------------------------------------------

def _check_conv(rng, dtype):
    x = _crandn(rng, (2, 4, 4, 2))
    p64 = L.ConvParams(_crandn(rng, (3, 3, 2, 3)), _crandn(rng, (3,)), 1, 1)
    A = _crandn(rng, (2, 4, 4, 3))
    p = L.ConvParams(p64.W.astype(dtype), p64.b.astype(dtype), 1, 1)
    _, cache = L.cconv2d_fwd(x.astype(dtype), p)
    dX, dW, db = L.cconv2d_bwd(cache, A.astype(dtype))
    f = lambda: probe(L.cconv2d_fwd(x, p64)[0], A)
    return {"conv.dX": (dX, numeric_grad(f, x)), "conv.dW": (dW, numeric_grad(f, p64.W)),
            "conv.db": (db, numeric_grad(f, p64.b))}


def _check_bn(rng, dtype):
    x = _crandn(rng, (2, 3, 3, 2))
    A = _crandn(rng, (2, 3, 3, 2))
    p64 = L.BNParams.create(2, np.complex128)
    p64.gamma = rng.standard_normal((2, 2, 2))
    p64.beta = _crandn(rng, (2,))
    p = L.BNParams(p64.gamma.astype(np.finfo(dtype).dtype), p64.beta.astype(dtype),
                   p64.running_mean.astype(dtype), p64.running_cov.copy())
    _, cache = L.cbn_fwd(x.astype(dtype), p, True)
    dX, dg, dbeta = L.cbn_bwd(cache, A.astype(dtype))
    f = lambda: probe(L.cbn_fwd(x, p64, True)[0], A)
    return {"bn.dX": (dX, numeric_grad(f, x)), "bn.dGamma": (dg, numeric_grad(f, p64.gamma)),
            "bn.dBeta": (dbeta, numeric_grad(f, p64.beta))}


def _check_elementwise(name, fwd, bwd, rng, dtype, shape=(2, 4, 4, 3)):
    x = _crandn(rng, shape)
    A = _crandn(rng, shape)
    _, cache = fwd(x.astype(dtype))
    dX = bwd(cache, A.astype(dtype))
    f = lambda: probe(fwd(x)[0], A)
    return {f"{name}.dX": (dX, numeric_grad(f, x))}


def _check_pool(rng, dtype):
    x = _crandn(rng, (2, 4, 4, 3))
    A = _crandn(rng, (2, 2, 2, 3))
    _, loc = L.cmaxpool_fwd(x.astype(dtype))
    dX = L.cmaxpool_bwd(loc, A.astype(dtype))
    f = lambda: probe(L.cmaxpool_fwd(x)[0], A)
    return {"maxpool.dX": (dX, numeric_grad(f, x))}


def _check_unpool(rng, dtype):
    src = _crandn(rng, (2, 4, 4, 3))
    _, loc = L.cmaxpool_fwd(src)
    x = _crandn(rng, (2, 2, 2, 3))
    A = _crandn(rng, (2, 4, 4, 3))
    dX = L.cmaxunpool_bwd(loc, A.astype(dtype))
    f = lambda: probe(L.cmaxunpool_fwd(x, loc), A)
    return {"maxunpool.dX": (dX, numeric_grad(f, x))}


def _check_dropout(rng, dtype):
    x = _crandn(rng, (2, 4, 4, 3))
    A = _crandn(rng, (2, 4, 4, 3))
    seed = int(rng.integers(1 << 31))
    fwd = lambda v: L.dropout_fwd(v, 0.7, np.random.default_rng(seed), True)
    _, mask = fwd(x.astype(dtype))
    dX = L.dropout_bwd(mask, A.astype(dtype))
    f = lambda: probe(fwd(x)[0], A)
    return {"dropout.dX": (dX, numeric_grad(f, x))}


def layer_checks(seed: int = 0, dtype=np.complex64) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    tol = F32_TOL if np.dtype(dtype) == np.complex64 else F64_TOL
    pairs = {}
    pairs.update(_check_conv(rng, dtype))
    pairs.update(_check_bn(rng, dtype))
    pairs.update(_check_elementwise("crelu", L.crelu_fwd, L.crelu_bwd, rng, dtype))
    pairs.update(_check_pool(rng, dtype))
    pairs.update(_check_unpool(rng, dtype))
    pairs.update(_check_elementwise("output", L.cout_fwd, L.cout_bwd, rng, dtype))
    pairs.update(_check_dropout(rng, dtype))
    return [CheckResult(f"{name} [{np.dtype(dtype).name}]", scaled_error(a, n), tol)
            for name, (a, n) in pairs.items()]


# -- whole network ----------------------------------------------------------

def tiny_config(width_scale=Fraction(1, 12), **kw) -> NetConfig:
    kw.setdefault("keep_prob", 0.5)
    return NetConfig(num_classes=2, in_channels=2, width_scale=Fraction(width_scale), **kw)


def network_check(seed: int = 0, width_scale=Fraction(1, 12), dtype=np.complex64,
                  max_params: int = 200, size: int = 32, batch: int = 8,
                  **cfg_kw) -> CheckResult:
    """Compare the network backward with float64 central differences on at
    most ``max_params`` randomly chosen real scalars of the parameter set.

    At 32x32 input the 1x1 bottleneck sees only ``batch`` samples per
    channel; with fewer than about 4 its 2x2 covariance is near singular and
    float32 whitening cannot reach 1e-4, so the batch defaults to 8.
    """
    rng = np.random.default_rng(seed)
    cfg = tiny_config(width_scale, **cfg_kw)
    m64 = build(cfg, InitSpec(seed=seed), dtype=np.complex128)
    m = m64.astype(dtype)
    x = _crandn(rng, (batch, size, size, cfg.in_channels))
    A = _crandn(rng, (batch, size, size, cfg.num_classes))
    drop_seed = int(rng.integers(1 << 31))

    O, cache = m.forward(x.astype(dtype), training=True, rng=np.random.default_rng(drop_seed))
    grads = m.backward(cache, A.astype(dtype))

    def f():
        out, _ = m64.forward(x, training=True, rng=np.random.default_rng(drop_seed))
        return probe(out, A)

    params = m64.parameters()
    gmax = max(float(np.max(np.abs(g))) for g in grads.values())
    per_tensor = max(1, max_params // (2 * len(params)))
    worst = 0.0
    for name, arr in params.items():
        k = min(per_tensor, arr.size)
        flat = rng.choice(arr.size, size=k, replace=False)
        index = [np.unravel_index(i, arr.shape) for i in flat]
        num = numeric_grad(f, arr, index)
        sel = tuple(np.array(index).T)
        err = scaled_error(grads[name][sel], num[sel],
                           floor=max(float(np.max(np.abs(grads[name]))), 1e-2 * gmax))
        worst = max(worst, err)
    tol = F32_TOL if np.dtype(dtype) == np.complex64 else F64_TOL
    return CheckResult(f"network [{np.dtype(dtype).name}]", worst, tol)


def run_all(seed: int = 0, width_scale=Fraction(1, 12),
            dtypes=(np.complex64, np.complex128)) -> list[CheckResult]:
    out = []
    for dt in dtypes:
        out.extend(layer_checks(seed, dt))
        out.append(network_check(seed, width_scale, dt))
    return out


# -- sensitivity hook -------------------------------------------------------

def _bad_crelu_bwd(cache, dY):
    return dY


def _bad_conv_bwd(cache, dY):
    dX, dW, db = _ORIGINAL["cconv2d_bwd"](cache, dY)
    return dX, dW.conj(), db


def _bad_bn_bwd(cache, dY):
    dX, dg, dbeta = _ORIGINAL["cbn_bwd"](cache, dY)
    return dX * 1.01, dg, dbeta


def _bad_pool_bwd(loc, dY):
    return np.roll(_ORIGINAL["cmaxpool_bwd"](loc, dY), 1, axis=2)


_ORIGINAL = {n: getattr(L, n) for n in ("cconv2d_bwd", "cbn_bwd", "crelu_bwd", "cmaxpool_bwd")}
CORRUPTIONS = {
    "conv": ("cconv2d_bwd", _bad_conv_bwd),
    "bn": ("cbn_bwd", _bad_bn_bwd),
    "crelu": ("crelu_bwd", _bad_crelu_bwd),
    "pool": ("cmaxpool_bwd", _bad_pool_bwd),
}


@contextlib.contextmanager
def corrupted(which: str | None) -> Iterator[None]:
    """Temporarily swap one backward implementation for a wrong one."""
    if which is None:
        yield
        return
    attr, bad = CORRUPTIONS[which]
    setattr(L, attr, bad)
    try:
        yield
    finally:
        setattr(L, attr, _ORIGINAL[attr])


def timed_run(seed: int = 0, width_scale=Fraction(1, 12), corrupt: str | None = None):
    t0 = time.perf_counter()
    with corrupted(corrupt):
        results = run_all(seed, width_scale)
    return results, time.perf_counter() - t0
