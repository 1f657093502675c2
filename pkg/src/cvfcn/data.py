"""PolSAR data pipeline: coherency matrices, input vectors, synthetic scenes,
patching, augmentation and file I/O.

Feature cubes are ``(H, W, 6)`` complex with channels
``T11, T22, T33, T12, T13, T23``.  Label grids are ``(H, W)`` integers with
0 meaning unlabeled and class ids starting at 1.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ctensor import DTYPE, CTensor, FormatError, ShapeError, hflip, load_cvt, save_cvt, vflip

UPPER = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


class CovarianceError(ValueError):
    pass


@dataclass
class Dataset:
    cube: CTensor  # (H, W, 6)
    labels: np.ndarray  # (H, W) int
    K: int

    def __post_init__(self):
        if self.cube.ndim != 3 or self.cube.shape[2] != 6:
            raise ShapeError(f"cube must be (H, W, 6), got {self.cube.shape}")
        if self.labels.shape != self.cube.shape[:2]:
            raise ShapeError(f"labels {self.labels.shape} do not match cube {self.cube.shape[:2]}")


# -- coherency matrices -----------------------------------------------------

def coherency_from_scatter(u_samples) -> np.ndarray:
    """Multi-look coherency matrix ``(1/L) sum u u^H`` of ``L`` 3-vectors."""
    u = np.asarray(u_samples, dtype=np.complex128)
    if u.ndim != 2 or u.shape[0] == 0 or u.shape[1] != 3:
        raise ValueError(f"expected a non-empty (L, 3) array of scattering vectors, got {u.shape}")
    return u.T @ u.conj() / u.shape[0]


def input_vector(T: np.ndarray) -> np.ndarray:
    """Six complex channels from the upper triangle of ``T`` (works on stacks)."""
    T = np.asarray(T)
    out = np.stack([T[..., i, j] for i, j in UPPER], axis=-1).astype(np.complex128)
    out[..., :3] = out[..., :3].real
    return out


def real_vector(T: np.ndarray) -> np.ndarray:
    """Nine real channels: diagonal, then real parts and imaginary parts of
    the off-diagonal upper triangle."""
    v = input_vector(T)
    return np.concatenate([v[..., :3].real, v[..., 3:].real, v[..., 3:].imag], axis=-1)


def complex_to_real_cube(cube: CTensor) -> np.ndarray:
    return np.concatenate([cube[..., :3].real, cube[..., 3:].real, cube[..., 3:].imag], axis=-1)


# -- synthetic scenes -------------------------------------------------------

@dataclass
class Region:
    cls: int
    x: int
    y: int
    w: int
    h: int


@dataclass
class SceneSpec:
    covs: list  # K entries of 3x3 Hermitian PSD matrices
    layout: list[Region]
    looks: int = 9
    seed: int = 0
    height: int | None = None
    width: int | None = None
    background_cov: np.ndarray | None = None

    def __post_init__(self):
        self.covs = [np.asarray(c, dtype=np.complex128) for c in self.covs]
        if self.looks < 1:
            raise ValueError(f"looks must be >= 1, got {self.looks}")
        if not self.covs:
            raise ValueError("scene needs at least one class")
        for r in self.layout:
            if not 1 <= r.cls <= len(self.covs):
                raise ValueError(f"region class {r.cls} outside 1..{len(self.covs)}")
            if r.w <= 0 or r.h <= 0 or r.x < 0 or r.y < 0:
                raise ValueError(f"bad region geometry {r}")
        if self.height is None:
            self.height = max(r.y + r.h for r in self.layout)
        if self.width is None:
            self.width = max(r.x + r.w for r in self.layout)

    @property
    def K(self) -> int:
        return len(self.covs)

    def to_json(self) -> dict:
        def enc(c):
            return [[[float(v.real), float(v.imag)] for v in row] for row in np.asarray(c)]
        d = {
            "classes": [{"cov": enc(c)} for c in self.covs],
            "looks": self.looks,
            "layout": [{"class": r.cls, "x": r.x, "y": r.y, "w": r.w, "h": r.h}
                       for r in self.layout],
            "seed": self.seed,
            "height": self.height,
            "width": self.width,
        }
        if self.background_cov is not None:
            d["background_cov"] = enc(self.background_cov)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SceneSpec":
        def dec(m):
            a = np.asarray(m, dtype=np.float64)
            if a.shape != (3, 3, 2):
                raise ValueError(f"covariance must be 3x3 [re, im] pairs, got shape {a.shape}")
            return a[..., 0] + 1j * a[..., 1]
        return cls(
            covs=[dec(c["cov"]) for c in d["classes"]],
            layout=[Region(r["class"], r["x"], r["y"], r["w"], r["h"]) for r in d["layout"]],
            looks=int(d.get("looks", 9)),
            seed=int(d.get("seed", 0)),
            height=d.get("height"),
            width=d.get("width"),
            background_cov=dec(d["background_cov"]) if "background_cov" in d else None,
        )


def load_scene_spec(path) -> SceneSpec:
    with open(path) as f:
        return SceneSpec.from_json(json.load(f))


def covariance_factor(C: np.ndarray) -> np.ndarray:
    """``F`` with ``F F^H = C``; raises if ``C`` is not Hermitian PSD."""
    C = np.asarray(C, dtype=np.complex128)
    if C.shape != (3, 3):
        raise CovarianceError(f"covariance must be 3x3, got {C.shape}")
    scale = max(np.abs(C).max(), 1e-300)
    if not np.allclose(C, C.conj().T, atol=1e-12 * scale):
        raise CovarianceError("covariance is not Hermitian")
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        lam, V = np.linalg.eigh(C)
        if lam.min() < -1e-10 * scale:
            raise CovarianceError(f"covariance is not positive semidefinite (eigenvalue {lam.min():.3g})")
        return V * np.sqrt(np.clip(lam, 0, None))


def _sample_coherency(F: np.ndarray, n: int, looks: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((n, looks, 3)) + 1j * rng.standard_normal((n, looks, 3))) / math.sqrt(2)
    u = z @ F.T
    return np.einsum("nli,nlj->nij", u, u.conj()) / looks


def synth_scene(spec: SceneSpec, chunk: int = 1 << 16) -> Dataset:
    """Draw a multi-look scene: every pixel of class ``k`` averages ``looks``
    scattering vectors from a zero-mean circular Gaussian with covariance
    ``C_k``.  Pixels outside every region get label 0 and the background
    covariance (identity unless given)."""
    H, W = spec.height, spec.width
    labels = np.zeros((H, W), dtype=np.int64)
    for r in spec.layout:
        labels[r.y:r.y + r.h, r.x:r.x + r.w] = r.cls
    factors = [covariance_factor(c) for c in spec.covs]
    bg = spec.background_cov if spec.background_cov is not None else np.eye(3)
    factors.insert(0, covariance_factor(bg))
    rng = np.random.default_rng(spec.seed)
    cube = np.zeros((H * W, 6), dtype=DTYPE)
    flat = labels.ravel()
    for k, F in enumerate(factors):
        idx = np.flatnonzero(flat == k)
        for s in range(0, idx.size, chunk):
            part = idx[s:s + chunk]
            T = _sample_coherency(F, part.size, spec.looks, rng)
            cube[part] = input_vector(T)
    return Dataset(cube=cube.reshape(H, W, 6), labels=labels, K=spec.K)


def demo_scene_spec(size: int = 256, looks: int = 9, seed: int = 0) -> SceneSpec:
    """Three well-separated diagonal classes laid out as vertical bands with
    a square inset, so every class touches several patch borders."""
    covs = [np.diag([1.0, 0.1, 0.1]), np.diag([0.1, 1.0, 0.1]), np.diag([0.1, 0.1, 1.0])]
    third = size // 3
    q = size // 4
    layout = [
        Region(1, 0, 0, third, size),
        Region(2, third, 0, third, size),
        Region(3, 2 * third, 0, size - 2 * third, size),
        Region(1, 2 * third + q // 4, q, q, q),
        Region(3, q // 4, 2 * q, q, q),
    ]
    return SceneSpec(covs=covs, layout=layout, looks=looks, seed=seed, height=size, width=size)


# -- patching ---------------------------------------------------------------

@dataclass
class PatchSet:
    data: CTensor  # (n, w, w, 6)
    labels: np.ndarray  # (n, w, w)
    offsets: np.ndarray  # (n, 2) row, col of the top-left corner
    flips: np.ndarray = field(default=None)  # (n,) 0 = none, 1 = horizontal, 2 = vertical

    def __post_init__(self):
        if self.flips is None:
            self.flips = np.zeros(len(self.data), dtype=np.int8)

    def __len__(self) -> int:
        return len(self.data)

    def subset(self, idx) -> "PatchSet":
        return PatchSet(self.data[idx], self.labels[idx], self.offsets[idx], self.flips[idx])


def patch_offsets(dim: int, window: int, stride: int) -> list[int]:
    """Strided offsets plus one edge-aligned window when the stride leaves a gap."""
    if dim < window:
        raise ShapeError(f"image size {dim} is smaller than window {window}")
    if stride < 1:
        raise ValueError("stride must be positive")
    offs = list(range(0, dim - window + 1, stride))
    if offs[-1] != dim - window:
        offs.append(dim - window)
    return offs


def extract_patches(cube: CTensor, labels: np.ndarray, window: int = 128,
                    stride: int = 40) -> PatchSet:
    H, W = labels.shape
    rows = patch_offsets(H, window, stride)
    cols = patch_offsets(W, window, stride)
    offsets = np.array([(r, c) for r in rows for c in cols], dtype=np.int64)
    data = np.stack([cube[r:r + window, c:c + window] for r, c in offsets])
    lab = np.stack([labels[r:r + window, c:c + window] for r, c in offsets])
    return PatchSet(data, lab, offsets)


def augment_flips(p: PatchSet) -> PatchSet:
    """Originals followed by their horizontal and vertical flips."""
    data = np.concatenate([p.data, hflip(p.data), vflip(p.data)])
    lab = np.concatenate([p.labels, p.labels[:, :, ::-1], p.labels[:, ::-1, :]])
    offsets = np.concatenate([p.offsets] * 3)
    flips = np.concatenate([p.flips, np.full(len(p), 1, np.int8), np.full(len(p), 2, np.int8)])
    return PatchSet(data, lab, offsets, flips)


def split_train_val(p: PatchSet, frac: float = 0.9, seed: int = 0):
    n = len(p)
    n_train = math.ceil(frac * n)
    perm = np.random.default_rng(seed).permutation(n)
    return p.subset(perm[:n_train]), p.subset(perm[n_train:])


def sample_labels(labels: np.ndarray, frac_per_class: float, seed: int = 0) -> np.ndarray:
    """Keep ``ceil(frac * n_k)`` randomly chosen pixels of each class, zero the rest."""
    if not 0 < frac_per_class <= 1:
        raise ValueError(f"frac_per_class must lie in (0, 1], got {frac_per_class}")
    rng = np.random.default_rng(seed)
    flat = labels.ravel()
    out = np.zeros_like(flat)
    for k in np.unique(flat[flat > 0]):
        idx = np.flatnonzero(flat == k)
        keep = max(1, math.ceil(frac_per_class * idx.size))
        chosen = np.sort(rng.choice(idx, size=keep, replace=False))
        out[chosen] = k
    return out.reshape(labels.shape)


# -- file I/O ---------------------------------------------------------------

_PNM_HEADER = re.compile(rb"\A(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)"
                         rb"\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def write_pgm(path, grid: np.ndarray, maxval: int | None = None) -> None:
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ShapeError(f"PGM needs a 2-d grid, got {grid.shape}")
    if grid.size and (grid.min() < 0 or grid.max() > 255):
        raise FormatError("PGM values must lie in 0..255")
    maxval = int(grid.max() if maxval is None else maxval)
    maxval = max(maxval, 1)
    if grid.size and grid.max() > maxval:
        raise FormatError(f"value {grid.max()} exceeds maxval {maxval}")
    h, w = grid.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        f.write(grid.astype(np.uint8).tobytes())


def read_pgm(path) -> tuple[np.ndarray, int]:
    data = Path(path).read_bytes()
    m = _PNM_HEADER.match(data)
    if not m or m.group(1) != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = int(m.group(2)), int(m.group(3)), int(m.group(4))
    if not 0 < maxval < 256:
        raise FormatError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    body = data[m.end():]
    if len(body) != w * h:
        raise FormatError(f"{path}: expected {w * h} pixel bytes, found {len(body)}")
    grid = np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.int64)
    if grid.max(initial=0) > maxval:
        raise FormatError(f"{path}: pixel value exceeds maxval {maxval}")
    return grid, maxval


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = _PNM_HEADER.match(data)
    if not m or m.group(1) != b"P6":
        raise FormatError(f"{path}: not a binary PPM (P6) file")
    w, h = int(m.group(2)), int(m.group(3))
    return np.frombuffer(data[m.end():], dtype=np.uint8).reshape(h, w, 3)


def palette(K: int) -> np.ndarray:
    """Fixed colors; row 0 is black for unlabeled, row k for class k."""
    base = np.array([
        [0, 0, 0], [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200],
        [245, 130, 48], [145, 30, 180], [70, 240, 240], [240, 50, 230],
        [210, 245, 60], [250, 190, 212], [0, 128, 128], [220, 190, 255],
        [170, 110, 40], [255, 250, 200], [128, 0, 0], [170, 255, 195],
    ], dtype=np.uint8)
    if K + 1 <= len(base):
        return base[:K + 1]
    rng = np.random.default_rng(12345)
    extra = rng.integers(0, 256, size=(K + 1 - len(base), 3), dtype=np.uint8)
    return np.concatenate([base, extra])


def colorize(labels: np.ndarray, K: int) -> np.ndarray:
    return palette(K)[labels]


def save_dataset(d: Dataset, cube_path, labels_path) -> None:
    save_cvt(cube_path, d.cube)
    write_pgm(labels_path, d.labels, maxval=d.K)


def load_dataset(cube_path, labels_path) -> Dataset:
    cube = load_cvt(cube_path)
    if cube.ndim != 3 or cube.shape[2] != 6:
        raise FormatError(f"{cube_path}: cube must be (H, W, 6), got {cube.shape}")
    labels, maxval = read_pgm(labels_path)
    if labels.shape != cube.shape[:2]:
        raise FormatError(f"label grid {labels.shape} does not match cube {cube.shape[:2]}")
    return Dataset(cube=cube, labels=labels, K=maxval)
