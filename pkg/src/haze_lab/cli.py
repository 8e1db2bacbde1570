"""``haze-lab`` command line.

Exit codes: 0 success, 1 invalid arguments, 2 I/O failure, 3 numeric
failure (solver non-convergence, divergence, non-finite training loss).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .dcp import DcpParams, coarse_transmission, estimate_airlight, recover_radiance
from .image import (ImageFormatError, SUPPORTED_SUFFIXES, SynthSpec, compose_haze, load_image,
                    load_map, save_image, save_map)
from .loss import build_loss_context, energy_gradient, energy_terms
from .matting import assemble_laplacian, matting_weights, refine_guided_filter, refine_soft_matting
from .metrics import EvalReport, score, select_best_epoch
from .net.augment import augment
from .net.model import CanConfig, predict_transmission
from .net.predict import transmission_for
from .net.serialize import ModelFormatError, load_model, save_model
from .net.train import NonFiniteLossError, TrainConfig, train
from .optimize import OptimizeConfig, optimize_transmission

log = logging.getLogger("haze_lab")

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "HAZE_LAB_THREADS"


class UsageError(Exception):
    pass


class NumericError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {s}")
    return v


def _nonneg_float(s):
    v = float(s)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {s}")
    return v


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _rgb(s):
    parts = s.split(",")
    try:
        vals = tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"airlight must be R,G,B numbers, got {s!r}") from None
    if len(vals) != 3 or any(not 0 < v <= 1 for v in vals):
        raise argparse.ArgumentTypeError(f"airlight must be three values in (0, 1], got {s!r}")
    return vals


def _add_dcp_options(p):
    p.add_argument("--omega", type=_positive_float, default=0.95)
    p.add_argument("--t0", type=_positive_float, default=0.1)
    p.add_argument("--patch", type=_positive_int, default=15)


def _dcp_params(args) -> DcpParams:
    try:
        return DcpParams(args.patch, args.omega, args.t0)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _default_jobs() -> int:
    env = os.environ.get(THREADS_ENV)
    if env is None:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="haze-lab", description="Dark channel prior dehazing toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("dehaze", help="dehaze a single image")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--method", choices=["coarse", "matting", "guided", "optimize", "net"],
                   default="matting")
    p.add_argument("--model", help="model weights file (method net)")
    _add_dcp_options(p)
    p.add_argument("--lambda", dest="lam", type=_positive_float, default=1e-4)
    p.add_argument("--eps", type=_positive_float, default=1e-6, help="matting regularizer")
    p.add_argument("--tol", type=_positive_float, default=1e-6, help="CG relative residual")
    p.add_argument("--max-iter", type=_positive_int, default=2000, help="CG iteration cap")
    p.add_argument("--radius", type=_positive_int, default=20, help="guided filter radius")
    p.add_argument("--eps-gf", type=_positive_float, default=1e-3, help="guided filter regularizer")
    p.add_argument("--max-steps", type=int, default=500, help="descent steps (method optimize)")
    p.add_argument("--grad-tol", type=_nonneg_float, default=0.0,
                   help="stop descent when |grad| falls below this fraction of its start")
    p.add_argument("--save-tmap", help="write the transmission map as grayscale")

    p = sub.add_parser("synth", help="compose a hazy image from a clear one")
    p.add_argument("clear")
    p.add_argument("-o", "--output", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--depth", help="grayscale depth map, scaled by --depth-scale")
    g.add_argument("--uniform-depth", type=_nonneg_float)
    p.add_argument("--depth-scale", type=_positive_float, default=1.0)
    p.add_argument("--beta", type=_nonneg_float, required=True)
    p.add_argument("--airlight", type=_rgb, required=True)
    p.add_argument("--save-tmap")

    p = sub.add_parser("train", help="unsupervised training on a directory of hazy images")
    p.add_argument("--corpus", required=True)
    p.add_argument("--val", help="directory with hazy/ and clear/ subdirectories")
    p.add_argument("--epochs", type=_positive_int, default=30)
    p.add_argument("--batch", type=_positive_int, default=24)
    p.add_argument("--lr", type=_nonneg_float, default=3e-4)
    p.add_argument("--lr-decay", type=_positive_float, default=0.96)
    p.add_argument("--decay-epochs", type=_positive_int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--blocks", type=_positive_int, default=6)
    p.add_argument("--width", type=_positive_int, default=32)
    p.add_argument("--max-steps", type=_positive_int)
    p.add_argument("--no-augment", action="store_true")
    _add_dcp_options(p)
    p.add_argument("--lambda", dest="lam", type=_positive_float, default=1e-4)
    p.add_argument("--eps", type=_positive_float, default=1e-6)
    p.add_argument("-o", "--output", required=True, help="model file; metrics go to <output>.log")

    p = sub.add_parser("eval", help="PSNR/SSIM of a model over paired directories")
    p.add_argument("--model", required=True)
    p.add_argument("--hazy", required=True)
    p.add_argument("--clear", required=True)
    _add_dcp_options(p)
    p.add_argument("--jobs", type=_positive_int, default=None)
    p.add_argument("-o", "--output", required=True, help="report prefix; writes .txt and .json")

    p = sub.add_parser("loss", help="evaluate the DCP energy of a transmission map")
    p.add_argument("--image", required=True)
    p.add_argument("--tmap")
    _add_dcp_options(p)
    p.add_argument("--lambda", dest="lam", type=_positive_float, default=1e-4)
    p.add_argument("--eps", type=_positive_float, default=1e-6)
    return parser


class _Timer:
    def __init__(self):
        self.stages: list[tuple[str, float]] = []

    def run(self, name, fn, *args, **kwargs):
        start = time.perf_counter()
        out = fn(*args, **kwargs)
        self.stages.append((name, time.perf_counter() - start))
        return out

    def report(self):
        for name, sec in self.stages:
            print(f"{name:<16}{sec:10.4f} s")


def _list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in SUPPORTED_SUFFIXES)


def cmd_dehaze(args) -> int:
    dcp = _dcp_params(args)
    img = load_image(args.input)
    timer = _Timer()
    if args.method == "net":
        if not args.model:
            raise UsageError("--method net requires --model")
        model = load_model(args.model)
        a = timer.run("airlight", estimate_airlight, img, dcp.patch)
        t = timer.run("transmission", predict_transmission, model, img)
    else:
        a = timer.run("airlight", estimate_airlight, img, dcp.patch)
        coarse = timer.run("transmission", coarse_transmission, img, a, dcp)
        if args.method == "coarse":
            t = coarse
        elif args.method == "matting":
            def refine():
                lap = assemble_laplacian(matting_weights(img, args.eps))
                return refine_soft_matting(coarse, lap, args.lam, args.tol, args.max_iter)
            res = timer.run("refinement", refine)
            if not res.converged:
                raise NumericError(f"conjugate gradient did not converge in {res.iterations} "
                                   f"iterations (relative residual {res.residual:.3e})")
            log.info("CG converged in %d iterations, residual %.3e", res.iterations, res.residual)
            t = res.t
        elif args.method == "guided":
            t = timer.run("refinement", refine_guided_filter, coarse, img, args.radius, args.eps_gf)
        else:
            def descend():
                ctx = build_loss_context(img, dcp, args.eps, args.lam)
                cfg = OptimizeConfig(max_steps=max(args.max_steps, 0), grad_tol=args.grad_tol)
                return optimize_transmission(ctx, cfg)
            res = timer.run("refinement", descend)
            if res.diverged:
                raise NumericError(f"gradient descent diverged after {res.steps} steps")
            t = res.t
    out = timer.run("reconstruction", recover_radiance, img, t, a, dcp.t0)
    save_image(out, args.output)
    if args.save_tmap:
        save_map(t, args.save_tmap)
    timer.report()
    return EXIT_OK


def cmd_synth(args) -> int:
    clear = load_image(args.clear)
    if args.depth:
        depth = load_map(args.depth) * args.depth_scale
        if depth.shape != clear.shape[:2]:
            raise UsageError(f"depth map {depth.shape} does not match image {clear.shape[:2]}")
    else:
        depth = np.full(clear.shape[:2], args.uniform_depth)
    hazy, t = compose_haze(clear, SynthSpec(args.beta, args.airlight, depth))
    save_image(hazy, args.output)
    if args.save_tmap:
        save_map(t, args.save_tmap)
    return EXIT_OK


def _load_pairs(hazy_dir, clear_dir):
    hazy = {p.stem: p for p in _list_images(hazy_dir)}
    clear = {p.stem: p for p in _list_images(clear_dir)}
    names = sorted(set(hazy) & set(clear))
    skipped = sorted((set(hazy) ^ set(clear)))
    return [(n, hazy[n], clear[n]) for n in names], skipped


def cmd_train(args) -> int:
    dcp = _dcp_params(args)
    paths = _list_images(args.corpus)
    if not paths:
        raise UsageError(f"no images found in corpus directory {args.corpus}")
    rng = np.random.default_rng(args.seed)
    corpus, names = [], []
    for path in paths:
        img = load_image(path)
        variants = [img] if args.no_augment else augment(img, rng)
        corpus.extend(variants)
        names.extend(f"{path.name}#{k}" for k in range(len(variants)))
    shapes = {im.shape for im in corpus}
    if len(shapes) > 1 and args.batch > 1:
        raise UsageError("corpus images differ in size; use augmentation or --batch 1")
    val_pairs = None
    if args.val:
        pairs, skipped = _load_pairs(Path(args.val) / "hazy", Path(args.val) / "clear")
        for name in skipped:
            log.warning("validation file without a partner: %s", name)
        val_pairs = [(load_image(h), load_image(c)) for _, h, c in pairs]
        if not val_pairs:
            raise UsageError(f"no hazy/clear pairs found under {args.val}")
    try:
        can_cfg = CanConfig.with_blocks(args.blocks, args.width)
        train_cfg = TrainConfig(batch_size=args.batch, lr=args.lr, lr_decay=args.lr_decay,
                                decay_epochs=args.decay_epochs, epochs=args.epochs, seed=args.seed,
                                max_steps=args.max_steps, eps=args.eps, lam=args.lam)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    try:
        result = train(corpus, can_cfg, train_cfg, dcp, names=names, val_pairs=val_pairs,
                       keep_snapshots=bool(val_pairs))
    except NonFiniteLossError as exc:
        raise NumericError(str(exc)) from exc
    lines = [m.to_line() for m in result.epochs]
    model = result.model
    if val_pairs:
        best = select_best_epoch(result.reports)
        model = result.snapshots[best]
        lines.append(f"best_epoch={best}")
    lines.append(f"step_losses={' '.join(repr(x) for x in result.step_losses)}")
    save_model(model, args.output)
    Path(str(args.output) + ".log").write_text("\n".join(lines) + "\n")
    for line in lines[:-1]:
        print(line)
    return EXIT_OK


def load_eval_model(path):
    """Model used by ``eval``; a separate hook so tests can substitute an oracle."""
    return load_model(path)


def cmd_eval(args) -> int:
    dcp = _dcp_params(args)
    model = load_eval_model(args.model)
    pairs, skipped = _load_pairs(args.hazy, args.clear)
    if not pairs:
        raise UsageError("no hazy/clear files could be paired by name")
    jobs = args.jobs or _default_jobs()

    def run(pair):
        name, hp, cp = pair
        hazy, clear = load_image(hp), load_image(cp)
        if hazy.shape != clear.shape:
            return name, None
        start = time.perf_counter()
        t = transmission_for(model, hazy)
        a = estimate_airlight(hazy, dcp.patch)
        dehazed = recover_radiance(hazy, t, a, dcp.t0)
        elapsed = max(time.perf_counter() - start, 1e-9)
        return name, (*score(dehazed, clear), elapsed)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(run, pairs))
    else:
        results = [run(p) for p in pairs]
    report = EvalReport(skipped=list(skipped))
    for name, vals in results:
        if vals is None:
            log.warning("size mismatch, skipping %s", name)
            report.skipped.append(name)
        else:
            report.add(name, *vals)
    if not report.names:
        raise UsageError("no usable image pairs")
    out = Path(args.output)
    stem = out.with_suffix("") if out.suffix in (".txt", ".json") else out
    Path(str(stem) + ".txt").write_text(report.to_text())
    Path(str(stem) + ".json").write_text(report.to_json())
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_loss(args) -> int:
    dcp = _dcp_params(args)
    img = load_image(args.image)
    ctx = build_loss_context(img, dcp, args.eps, args.lam)
    if args.tmap:
        t = load_map(args.tmap)
        if t.shape != ctx.shape:
            raise UsageError(f"transmission map {t.shape} does not match image {ctx.shape}")
    else:
        t = ctx.coarse
    smooth, fidelity = energy_terms(ctx, t)
    grad = energy_gradient(ctx, t)
    print(f"energy          {smooth + fidelity!r}")
    print(f"smoothness      {smooth!r}")
    print(f"fidelity        {fidelity!r}")
    print(f"grad_inf_norm   {float(np.abs(grad).max())!r}")
    return EXIT_OK


COMMANDS = {"dehaze": cmd_dehaze, "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "loss": cmd_loss}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (FileNotFoundError, IsADirectoryError, PermissionError, ImageFormatError,
            ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":
    sys.exit(main())
