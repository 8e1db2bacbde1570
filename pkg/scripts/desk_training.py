"""Desk-scale unsupervised training of the context-aggregation network.

Trains on synthetic hazy images with the DCP energy as the only signal,
then reports the loss curve and, per image, the energy of the network's
transmission against the energy of the coarse estimate. Optionally writes
the model and per-epoch log.

    python3 scripts/desk_training.py --images 8 --steps 200 --lr 1e-2
"""
import argparse
import time

import numpy as np

from haze_lab.dcp import DcpParams
from haze_lab.loss import build_loss_context, energy
from haze_lab.metrics import validate
from haze_lab.net.model import CanConfig
from haze_lab.net.serialize import save_model
from haze_lab.net.train import TrainConfig, corpus_loss, train
from haze_lab.synthetic import natural_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--images", type=int, default=8)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--blocks", type=int, default=2)
    ap.add_argument("--width", type=int, default=8)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--lr", type=float, default=1e-2)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--save", help="write the trained model here")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    scenes = [natural_scene(rng, size=args.size) for _ in range(args.images)]
    corpus = [s.hazy for s in scenes]
    steps_per_epoch = -(-args.images // args.batch)
    cfg = CanConfig.with_blocks(args.blocks, args.width)
    tc = TrainConfig(batch_size=args.batch, lr=args.lr, seed=args.seed, max_steps=args.steps,
                     epochs=-(-args.steps // steps_per_epoch))

    start = time.perf_counter()
    res = train(corpus, cfg, tc)
    elapsed = time.perf_counter() - start
    losses = res.step_losses
    print(f"trained {len(losses)} steps in {elapsed:.1f} s")
    for k in sorted({0, len(losses) // 4, len(losses) // 2, 3 * len(losses) // 4, len(losses) - 1}):
        print(f"  step {k:4d}  batch loss {losses[k]:.4f}")
    print(f"final / initial batch loss: {losses[-1] / losses[0]:.4f}")

    ctxs = [build_loss_context(im, DcpParams()) for im in corpus]
    learned = corpus_loss(res.model, corpus, contexts=ctxs)
    coarse = [energy(c, c.coarse) for c in ctxs]
    wins = 0
    for i, (m, c) in enumerate(zip(learned, coarse)):
        wins += m <= c
        print(f"  image {i}: network energy {m:10.3f}   coarse energy {c:10.3f}")
    print(f"network below coarse on {wins}/{len(corpus)} images")

    rep = validate(res.model, [(s.hazy, s.clear) for s in scenes])
    print(f"training-set PSNR {rep.mean_psnr:.2f} dB, SSIM {rep.mean_ssim:.4f}")
    if args.save:
        save_model(res.model, args.save)
        print(f"model written to {args.save}")


if __name__ == "__main__":
    main()
