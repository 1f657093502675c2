"""Mini-batch training of the network on patches of a labeled scene."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import data as D
from . import metrics
from .initializers import InitSpec, Scheme
from .losses import EmptyBatchError, get_loss, one_hot_encode
from .net import MULTIPLE, ConfigError, NetConfig, NetModel, build, predict_labels
from .optim import Adam

log = logging.getLogger(__name__)

CSV_HEADER = "epoch,train_loss,val_loss,val_oa,wall_seconds"


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 30
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    window: int = 128
    stride: int = 40
    width_scale: Fraction = Fraction(1)
    keep_prob: float = 0.5
    loss: str = "ace"
    init: str = "rayleigh"
    init_bound: float | None = None
    frac_per_class: float = 1.0
    train_frac: float = 0.9
    seed: int = 0
    skips: bool = True
    locmaps: bool = True
    augment: bool = True
    patience: int | None = None
    # stop as soon as validation OA reaches this value
    target_oa: float | None = None
    overfit: int = 0
    overfit_steps: int = 500
    overfit_target: float = 0.01


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_oa: float
    wall_seconds: float

    def csv(self, timing: bool = True) -> str:
        wall = f"{self.wall_seconds:.3f}" if timing else "nan"
        return (f"{self.epoch},{self.train_loss:.6f},{self.val_loss:.6f},"
                f"{self.val_oa:.6f},{wall}")


@dataclass
class TrainResult:
    model: NetModel  # best by validation loss
    final_model: NetModel
    history: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    train_mask: np.ndarray | None = None

    def epochs_to(self, oa: float) -> int | None:
        for row in self.history:
            if row.val_oa >= oa:
                return row.epoch
        return None


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for s in range(0, n, size):
        yield order[s:s + size]


def evaluate_patches(model: NetModel, patches: D.PatchSet, K: int, loss_fn,
                     batch_size: int = 8) -> tuple[float, float]:
    """Loss and OA over the labeled pixels of ``patches`` in inference mode."""
    total_loss, total_n = 0.0, 0
    conf = np.zeros((K, K), dtype=np.int64)
    for s in range(0, len(patches), batch_size):
        x = patches.data[s:s + batch_size]
        lab = patches.labels[s:s + batch_size]
        if not (lab > 0).any():
            continue
        O, _ = model.forward(x, training=False)
        T = one_hot_encode(lab, K)
        n = int(T.mask.sum()) * K
        J, _ = loss_fn(O, T)
        total_loss += J * n
        total_n += n
        conf += metrics.confusion(predict_labels(O), lab, K)
    if total_n == 0:
        return math.nan, math.nan
    return total_loss / total_n, metrics.oa(conf)


def make_model(cfg: TrainConfig, K: int, in_channels: int = 6) -> NetModel:
    net_cfg = NetConfig(num_classes=K, in_channels=in_channels, width_scale=cfg.width_scale,
                        enable_skips=cfg.skips, enable_locmaps=cfg.locmaps,
                        keep_prob=cfg.keep_prob)
    init = InitSpec(scheme=Scheme(cfg.init), seed=cfg.seed, bound=cfg.init_bound)
    return build(net_cfg, init)


def fit(cube: np.ndarray, train_labels: np.ndarray, K: int, cfg: TrainConfig,
        on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Train on patches of ``cube``; only pixels labeled in ``train_labels`` count."""
    if not (train_labels > 0).any():
        raise EmptyBatchError("no labeled pixels to train on")
    if cfg.window % MULTIPLE or cfg.window < 2 * MULTIPLE:
        # a 32-pixel window leaves one bottleneck pixel per patch, so batch
        # norm there degenerates whenever a batch holds a single patch
        raise ConfigError(f"window must be a multiple of {MULTIPLE} and at least "
                          f"{2 * MULTIPLE}, got {cfg.window}")
    rng = np.random.default_rng(cfg.seed)
    loss_fn = get_loss(cfg.loss)
    model = make_model(cfg, K, cube.shape[-1])
    opt = Adam(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)

    patches = D.extract_patches(cube, train_labels, cfg.window, cfg.stride)
    if cfg.overfit:
        return _overfit(model, patches, K, cfg, loss_fn, opt, rng, on_epoch)
    if cfg.augment:
        patches = D.augment_flips(patches)
    train, val = D.split_train_val(patches, cfg.train_frac, cfg.seed)
    log.info("training on %d patches, validating on %d", len(train), len(val))

    result = TrainResult(model=model.copy(), final_model=model)
    best_loss = math.inf
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for idx in _batches(len(train), cfg.batch_size, rng):
            lab = train.labels[idx]
            if not (lab > 0).any():
                continue
            O, cache = model.forward(train.data[idx], training=True, rng=rng)
            J, dO = loss_fn(O, one_hot_encode(lab, K))
            if not math.isfinite(J):
                raise DivergenceError(f"loss became {J} at epoch {epoch}")
            opt.step(model.parameters(), model.backward(cache, dO))
            losses.append(J)
        train_loss = float(np.mean(losses)) if losses else math.nan
        if len(val):
            val_loss, val_oa = evaluate_patches(model, val, K, loss_fn)
        else:
            val_loss, val_oa = evaluate_patches(model, train, K, loss_fn)
        row = EpochLog(epoch, train_loss, val_loss, val_oa, time.perf_counter() - t0)
        result.history.append(row)
        if on_epoch:
            on_epoch(row)
        score = val_loss if math.isfinite(val_loss) else train_loss
        if score < best_loss:
            best_loss, stale = score, 0
            result.model = model.copy()
            result.best_epoch = epoch
        else:
            stale += 1
        if cfg.patience is not None and stale >= cfg.patience:
            log.info("early stop at epoch %d", epoch)
            break
        if cfg.target_oa is not None and val_oa >= cfg.target_oa:
            break
    return result


def _overfit(model, patches, K, cfg, loss_fn, opt, rng, on_epoch) -> TrainResult:
    keep = [i for i in range(len(patches)) if (patches.labels[i] > 0).any()][:cfg.overfit]
    batch = patches.subset(np.array(keep))
    T = one_hot_encode(batch.labels, K)
    result = TrainResult(model=model, final_model=model)
    for step in range(1, cfg.overfit_steps + 1):
        t0 = time.perf_counter()
        O, cache = model.forward(batch.data, training=True, rng=rng)
        J, dO = loss_fn(O, T)
        if not math.isfinite(J):
            raise DivergenceError(f"loss became {J} at step {step}")
        opt.step(model.parameters(), model.backward(cache, dO))
        oa = metrics.oa(metrics.confusion(predict_labels(O), batch.labels, K))
        row = EpochLog(step, J, J, oa, time.perf_counter() - t0)
        result.history.append(row)
        if on_epoch:
            on_epoch(row)
        if J < cfg.overfit_target:
            break
    result.best_epoch = result.history[-1].epoch
    return result
