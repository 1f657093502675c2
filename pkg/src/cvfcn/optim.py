"""Gradient-descent updates treating each complex entry as an independent
(re, im) pair of reals.  Parameters are updated in place."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _as_real(a: np.ndarray) -> np.ndarray:
    """Interleaved real view of a complex array (the array itself if real)."""
    if np.iscomplexobj(a):
        return a.view(np.finfo(a.dtype).dtype)
    return a


def _check(params: dict, grads: dict) -> None:
    for name, p in params.items():
        g = grads.get(name)
        if g is None or g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} missing or misshaped")


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
    _check(params, grads)
    for name, p in params.items():
        p -= (lr * grads[name]).astype(p.dtype)


@dataclass
class Adam:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        _check(params, grads)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            pr = _as_real(p)
            g = _as_real(np.ascontiguousarray(grads[name], dtype=p.dtype))
            if name not in self.m:
                self.m[name] = np.zeros_like(pr)
                self.v[name] = np.zeros_like(pr)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            step = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            pr -= step.astype(pr.dtype)


def adam_step(params, grads, state: Adam) -> None:
    state.step(params, grads)
