"""Losses on complex label cubes.

Targets use the "1 + 1j" one-hot convention: the true class channel of a
labeled pixel holds ``1 + 1j`` and every other channel ``0``.  Unlabeled
pixels (class id 0) are masked out of both the value and the gradient.

All losses normalize by ``N = (#labeled pixels) * K`` and return
``(J, dJ/dO)`` with the gradient packed as ``dJ/d re + 1j * dJ/d im``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctensor import CTensor, ShapeError

CLAMP_EPS = 1e-7


class LabelError(ValueError):
    pass


class EmptyBatchError(ValueError):
    pass


@dataclass
class TargetCube:
    R: CTensor  # (..., K)
    mask: np.ndarray  # (...) bool, True where labeled


def one_hot_encode(labels: np.ndarray, K: int, dtype=np.complex64) -> TargetCube:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > K):
        raise LabelError(f"labels must lie in 0..{K}, got range "
                         f"{labels.min()}..{labels.max()}")
    mask = labels > 0
    R = np.zeros(labels.shape + (K,), dtype=dtype)
    hot = np.arange(1, K + 1) == labels[..., None]
    R[hot] = 1 + 1j
    return TargetCube(R=R, mask=mask)


def _check(O: CTensor, T: TargetCube) -> int:
    if O.shape != T.R.shape or O.shape[:-1] != T.mask.shape:
        raise ShapeError(f"output {O.shape} does not match target {T.R.shape}")
    n_pix = int(T.mask.sum())
    if n_pix == 0:
        raise EmptyBatchError("no labeled pixels in batch")
    return n_pix * O.shape[-1]


def ace_loss(O: CTensor, T: TargetCube, eps: float = CLAMP_EPS):
    """Average binary cross-entropy over the real and imaginary components."""
    N = _check(O, T)
    m = T.mask[..., None]
    o = O.astype(np.complex128)
    r = T.R.astype(np.complex128)
    J = 0.0
    dO = np.zeros(O.shape, dtype=np.complex128)
    for part, rp, op in ((1.0, r.real, o.real), (1j, r.imag, o.imag)):
        oc = np.clip(op, eps, 1 - eps)
        ll = rp * np.log(oc) + (1 - rp) * np.log(1 - oc)
        J += float(np.sum(np.where(m, ll, 0.0)))
        inside = (op > eps) & (op < 1 - eps) & m
        g = -(rp - oc) / (oc * (1 - oc)) / (2 * N)
        dO += part * np.where(inside, g, 0.0)
    return -J / (2 * N), dO.astype(O.dtype)


def cmse_loss(O: CTensor, T: TargetCube):
    N = _check(O, T)
    m = T.mask[..., None]
    d = np.where(m, T.R.astype(np.complex128) - O, 0)
    J = float(np.sum(d.real ** 2 + d.imag ** 2)) / N
    return J, (-2.0 / N * d).astype(O.dtype)


def cmae_loss(O: CTensor, T: TargetCube):
    N = _check(O, T)
    m = T.mask[..., None]
    d = np.where(m, O.astype(np.complex128) - T.R, 0)
    J = float(np.sum(np.abs(d.real) + np.abs(d.imag))) / N
    dO = (np.sign(d.real) + 1j * np.sign(d.imag)) / N
    return J, dO.astype(O.dtype)


LOSSES = {"ace": ace_loss, "cmse": cmse_loss, "cmae": cmae_loss}


def get_loss(name: str):
    try:
        return LOSSES[name]
    except KeyError:
        raise ValueError(f"unknown loss {name!r}; choose from {sorted(LOSSES)}") from None
