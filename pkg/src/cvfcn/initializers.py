"""Complex weight initializers.

Two schemes are provided:

* ``rayleigh_phase`` -- magnitude drawn from a Rayleigh distribution, phase
  uniform on ``(-pi, pi)``.  A Rayleigh magnitude with scale ``s`` and a
  symmetric phase gives ``Var(W) = E|W|^2 = 2 s^2``.  The He target for ReLU
  networks is ``Var(W) = 2 / fan_in``, so ``s = he_sigma(fan_in) / sqrt(2)``.
* ``uniform_parts`` -- real and imaginary parts drawn independently from
  ``U(-bound, bound)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ctensor import DTYPE, CTensor, ShapeError


class Scheme(str, enum.Enum):
    RAYLEIGH_PHASE = "rayleigh"
    UNIFORM_PARTS = "uniform"


@dataclass(frozen=True)
class InitSpec:
    scheme: Scheme = Scheme.RAYLEIGH_PHASE
    seed: int = 0
    # Only used by UNIFORM_PARTS; ``None`` selects the Glorot-style default.
    bound: float | None = None


def he_sigma(fan_in: int) -> float:
    """He standard deviation ``sqrt(2 / fan_in)`` of a complex weight."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    return math.sqrt(2.0 / fan_in)


def rayleigh_scale(fan_in: int) -> float:
    """Rayleigh parameter giving ``Var(W) = 2 / fan_in``."""
    return he_sigma(fan_in) / math.sqrt(2.0)


def default_uniform_bound(fan_in: int) -> float:
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    return math.sqrt(6.0 / fan_in) / math.sqrt(2.0)


def conv_fan_in(shape: Sequence[int]) -> int:
    """Fan-in of a ``(kh, kw, in_ch, out_ch)`` kernel."""
    if len(shape) != 4:
        raise ShapeError(f"expected a 4-d kernel shape, got {tuple(shape)}")
    kh, kw, cin, _ = shape
    return int(kh * kw * cin)


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise ShapeError(f"all dimensions must be positive, got {shape}")
    return shape


def rayleigh_magnitudes(n, sigma: float, rng: np.random.Generator) -> np.ndarray:
    # inverse CDF on the open interval (0, 1): strictly positive, finite
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=n)
    return sigma * np.sqrt(-2.0 * np.log(u))


def init_rayleigh_phase(shape, fan_in: int, rng: np.random.Generator,
                        dtype=DTYPE) -> CTensor:
    shape = _check_shape(shape)
    sigma = rayleigh_scale(fan_in)
    mag = rayleigh_magnitudes(shape, sigma, rng)
    theta = rng.uniform(-np.pi, np.pi, size=shape)
    return (mag * np.exp(1j * theta)).astype(dtype)


def init_uniform_parts(shape, bound: float, rng: np.random.Generator,
                       dtype=DTYPE) -> CTensor:
    if not bound > 0:
        raise ValueError(f"bound must be positive, got {bound}")
    shape = _check_shape(shape)
    re = rng.uniform(-bound, bound, size=shape)
    im = rng.uniform(-bound, bound, size=shape)
    return (re + 1j * im).astype(dtype)


def init_kernel(shape, spec: InitSpec, rng: np.random.Generator,
                dtype=DTYPE) -> CTensor:
    fan_in = conv_fan_in(shape)
    if Scheme(spec.scheme) is Scheme.RAYLEIGH_PHASE:
        return init_rayleigh_phase(shape, fan_in, rng, dtype)
    bound = spec.bound if spec.bound is not None else default_uniform_bound(fan_in)
    return init_uniform_parts(shape, bound, rng, dtype)


def init_stats(scheme, fan_in: int, n_samples: int, seed: int = 0,
               bound: float | None = None, bins: int = 16) -> dict:
    """Empirical moments and goodness-of-fit statistics of ``n_samples`` draws."""
    from scipy import stats

    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    scheme = Scheme(scheme)
    rng = np.random.default_rng(seed)
    if scheme is Scheme.RAYLEIGH_PHASE:
        w = init_rayleigh_phase((n_samples,), fan_in, rng, np.complex128)
    else:
        bound = bound if bound is not None else default_uniform_bound(fan_in)
        w = init_uniform_parts((n_samples,), bound, rng, np.complex128)
    mag = np.abs(w)
    counts, _ = np.histogram(np.angle(w), bins=bins, range=(-np.pi, np.pi))
    chi2 = stats.chisquare(counts)
    out = {
        "scheme": scheme.value,
        "fan_in": fan_in,
        "n_samples": n_samples,
        "seed": seed,
        "mean_re": float(w.real.mean()),
        "mean_im": float(w.imag.mean()),
        "mean_abs": float(mag.mean()),
        "var": float(np.mean(mag ** 2) - abs(w.mean()) ** 2),
        "var_re": float(w.real.var()),
        "target_var": 2.0 / fan_in,
        "phase_bin_fractions": (counts / n_samples).tolist(),
        "phase_chi2": float(chi2.statistic),
        "phase_chi2_p": float(chi2.pvalue),
    }
    ks_crit = float(stats.kstwo.ppf(0.99, n_samples))
    if scheme is Scheme.RAYLEIGH_PHASE:
        s = rayleigh_scale(fan_in)
        ks = stats.kstest(mag, "rayleigh", args=(0.0, s))
        out.update(rayleigh_scale=s, expected_mean_abs=s * math.sqrt(math.pi / 2))
    else:
        ks = stats.kstest(w.real, "uniform", args=(-bound, 2 * bound))
        out.update(bound=bound, expected_var_re=bound ** 2 / 3)
    out.update(ks_statistic=float(ks.statistic), ks_pvalue=float(ks.pvalue),
               ks_critical_1pct=ks_crit)
    return out
