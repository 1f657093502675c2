"""Command-line interface: ``cvfcn {synth,train,predict,eval,gradcheck,init-stats}``.

Exit codes are 0 on success, 1 for usage or configuration errors, 2 for
unreadable or inconsistent data files and 3 for numerical failures (NaN loss,
gradient check or overfit threshold not met).
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import data as D
from . import gradcheck, metrics
from . import net as N
from .ctensor import FormatError, ShapeError, load_cvt
from .initializers import Scheme, init_stats
from .losses import LOSSES, EmptyBatchError, LabelError
from .train import CSV_HEADER, DivergenceError, TrainConfig, fit

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SEED_ENV = "CVFCN_SEED"

log = logging.getLogger("cvfcn")


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; that code is reserved for data errors
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fraction(text: str) -> Fraction:
    try:
        f = Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a fraction: {text!r}") from exc
    if f <= 0:
        raise argparse.ArgumentTypeError("width scale must be positive")
    return f


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def resolve_seed(seed: int | None) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return 0 if seed is None else seed


# -- subcommands ------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.spec is None:
        seed = resolve_seed(args.seed)
        spec = D.demo_scene_spec(size=args.size, looks=args.looks, seed=seed)
    else:
        spec = D.load_scene_spec(args.spec)
        if args.seed is not None or os.environ.get(SEED_ENV):
            spec.seed = resolve_seed(args.seed)
    if args.write_spec:
        Path(args.write_spec).write_text(json.dumps(spec.to_json(), indent=2) + "\n")
    ds = D.synth_scene(spec)
    D.save_dataset(ds, args.cube, args.labels)
    counts = np.bincount(ds.labels.ravel(), minlength=ds.K + 1)
    print(f"wrote {args.cube} {ds.cube.shape} and {args.labels}")
    for k in range(1, ds.K + 1):
        print(f"class {k}: {counts[k]} pixels")
    if counts[0]:
        print(f"unlabeled: {counts[0]} pixels")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, beta1=args.beta1,
        beta2=args.beta2, window=args.window, stride=args.stride,
        width_scale=args.width_scale, keep_prob=args.keep_prob, loss=args.loss,
        init=args.init, init_bound=args.init_bound, frac_per_class=args.frac_per_class,
        train_frac=args.train_frac, seed=resolve_seed(args.seed), skips=not args.no_skips,
        locmaps=not args.no_locmaps, augment=not args.no_augment, patience=args.patience,
        overfit=args.overfit, overfit_steps=args.overfit_steps,
        overfit_target=args.overfit_target,
    )


def cmd_train(args) -> int:
    cfg = _train_config(args)
    ds = D.load_dataset(args.cube, args.labels)
    train_labels = D.sample_labels(ds.labels, cfg.frac_per_class, cfg.seed)
    if args.train_mask:
        D.write_pgm(args.train_mask, train_labels, maxval=ds.K)

    timing = not args.no_timing
    with contextlib.ExitStack() as stack:
        sink = stack.enter_context(open(args.log, "w")) if args.log else None

        def emit(line: str) -> None:
            if sink:
                sink.write(line + "\n")
                sink.flush()
            if not args.quiet:
                print(line, flush=True)

        emit(CSV_HEADER)
        result = fit(ds.cube, train_labels, ds.K, cfg, on_epoch=lambda r: emit(r.csv(timing)))

    model = result.final_model if cfg.overfit else result.model
    N.save(model, args.checkpoint)
    if args.final_checkpoint:
        N.save(result.final_model, args.final_checkpoint)
    last = result.history[-1]
    if cfg.overfit:
        if not last.train_loss < cfg.overfit_target:
            raise NumericalFailure(
                f"overfit loss {last.train_loss:.4g} still above {cfg.overfit_target} "
                f"after {last.epoch} steps")
        print(f"overfit reached loss {last.train_loss:.4g} at step {last.epoch}",
              file=sys.stderr)
    else:
        best = result.history[result.best_epoch - 1]
        print(f"best epoch {best.epoch}: val_loss {best.val_loss:.6f} val_oa {best.val_oa:.6f}",
              file=sys.stderr)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = N.load(args.checkpoint)
    cube = load_cvt(args.cube)
    if cube.ndim != 3 or cube.shape[2] != model.config.in_channels:
        raise FormatError(f"{args.cube}: expected (H, W, {model.config.in_channels}) cube, "
                          f"got {cube.shape}")
    labels = N.predict_image(model, cube)
    K = model.config.num_classes
    D.write_pgm(args.out, labels, maxval=K)
    color = args.color or str(Path(args.out).with_suffix(".ppm"))
    D.write_ppm(color, D.colorize(labels, K))
    print(f"wrote {args.out} and {color} ({labels.shape[0]}x{labels.shape[1]}, K={K})")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred, kp = D.read_pgm(args.pred)
    truth, kt = D.read_pgm(args.truth)
    if pred.shape != truth.shape:
        raise FormatError(f"prediction {pred.shape} and truth {truth.shape} differ in shape")
    K = args.classes or max(kp, kt)
    mask = None
    if args.exclude:
        excl, _ = D.read_pgm(args.exclude)
        if excl.shape != truth.shape:
            raise FormatError(f"exclusion mask {excl.shape} does not match truth {truth.shape}")
        mask = excl == 0
    text = metrics.report_json(metrics.confusion(pred, truth, K, mask))
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = resolve_seed(args.seed)
    results, seconds = gradcheck.timed_run(seed, args.width_scale, args.corrupt)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {seconds:.1f} s")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_init_stats(args) -> int:
    if args.n_samples < 1:
        raise UsageError("--n-samples must be at least 1")
    if args.fan_in < 1:
        raise UsageError("--fan-in must be at least 1")
    stats = init_stats(args.scheme, args.fan_in, args.n_samples, resolve_seed(args.seed),
                       bound=args.bound)
    text = json.dumps(stats, indent=2 if args.pretty else None)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cvfcn", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="cap BLAS threads; 1 makes every run bit-reproducible")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic labeled scene")
    s.add_argument("--spec", help="scene spec JSON (default: built-in 3-class demo scene)")
    s.add_argument("--cube", required=True, help="output CVT cube")
    s.add_argument("--labels", required=True, help="output PGM label map")
    s.add_argument("--size", type=_positive_int, default=256)
    s.add_argument("--looks", type=_positive_int, default=9)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--write-spec", help="also write the spec that was used as JSON")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a network on a labeled scene")
    t.add_argument("--cube", required=True)
    t.add_argument("--labels", required=True)
    t.add_argument("--checkpoint", required=True, help="output for the best-validation model")
    t.add_argument("--final-checkpoint", help="also save the last-epoch model")
    t.add_argument("--log", help="CSV training log (also echoed to stdout)")
    t.add_argument("--train-mask", help="write the sampled training labels as PGM")
    t.add_argument("--epochs", type=_positive_int, default=200)
    t.add_argument("--batch-size", type=_positive_int, default=30)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--beta1", type=float, default=0.9)
    t.add_argument("--beta2", type=float, default=0.999)
    t.add_argument("--window", type=_positive_int, default=128)
    t.add_argument("--stride", type=_positive_int, default=40)
    t.add_argument("--width-scale", type=_fraction, default=Fraction(1))
    t.add_argument("--keep-prob", type=float, default=0.5)
    t.add_argument("--loss", choices=sorted(LOSSES), default="ace")
    t.add_argument("--init", choices=[s.value for s in Scheme], default="rayleigh")
    t.add_argument("--init-bound", type=float, default=None,
                   help="half-width for --init uniform (default sqrt(6/fan_in)/sqrt(2))")
    t.add_argument("--frac-per-class", type=float, default=1.0)
    t.add_argument("--train-frac", type=float, default=0.9,
                   help="share of patches used for training; the rest validate")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--no-skips", action="store_true")
    t.add_argument("--no-locmaps", action="store_true")
    t.add_argument("--no-augment", action="store_true")
    t.add_argument("--patience", type=_positive_int, default=None,
                   help="stop after this many epochs without a lower val loss")
    t.add_argument("--overfit", type=int, default=0, metavar="N",
                   help="memorize N patches instead of training normally")
    t.add_argument("--overfit-steps", type=_positive_int, default=500)
    t.add_argument("--overfit-target", type=float, default=0.01)
    t.add_argument("--no-timing", action="store_true",
                   help="write nan in the wall_seconds column so logs are reproducible")
    t.add_argument("-q", "--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="label every pixel of a cube")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--cube", required=True)
    pr.add_argument("--out", required=True, help="class-id PGM")
    pr.add_argument("--color", help="colorized PPM (default: --out with .ppm suffix)")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="score a predicted map against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--exclude", help="PGM whose nonzero pixels are left out (training pixels)")
    e.add_argument("--classes", type=_positive_int, default=None)
    e.add_argument("--out", help="write the metrics JSON here too")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of all backward passes")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--width-scale", type=_fraction, default=Fraction(1, 12))
    g.add_argument("--corrupt", choices=sorted(gradcheck.CORRUPTIONS), default=None,
                   help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)

    i = sub.add_parser("init-stats", help="empirical statistics of an initializer")
    i.add_argument("--scheme", choices=[s.value for s in Scheme], default="rayleigh")
    i.add_argument("--fan-in", type=int, required=True)
    i.add_argument("--n-samples", type=int, default=100_000)
    i.add_argument("--seed", type=int, default=None)
    i.add_argument("--bound", type=float, default=None)
    i.add_argument("--out")
    i.add_argument("--pretty", action="store_true")
    i.set_defaults(func=cmd_init_stats)
    return p


def _fail(code: int, msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limits = threadpool_limits(args.threads) if args.threads else contextlib.nullcontext()
    try:
        with limits, np.errstate(over="ignore", under="ignore"):
            return args.func(args)
    except (FormatError, ShapeError, LabelError, EmptyBatchError,
            metrics.EmptyEvaluationError, OSError) as exc:
        return _fail(EXIT_DATA, str(exc))
    except (DivergenceError, NumericalFailure, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, str(exc))
    except (UsageError, N.ConfigError, ValueError, KeyError, TypeError) as exc:
        return _fail(EXIT_CONFIG, f"{type(exc).__name__}: {exc}" if isinstance(exc, KeyError)
                     else str(exc))


if __name__ == "__main__":
    sys.exit(main())
