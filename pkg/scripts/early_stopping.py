"""Energy and dehazing quality along a gradient-descent run.

Descends the DCP energy from the coarse map and records, at checkpoints,
the energy and the PSNR of the dehazed result against ground truth. On
the synthetic scenes this shows how far lowering the energy and improving
the reconstruction go together.

    python3 scripts/early_stopping.py --size 48 --checkpoints 0 10 100 1000 10000
"""
import argparse

import numpy as np

from haze_lab.dcp import DcpParams, recover_radiance
from haze_lab.loss import build_loss_context
from haze_lab.metrics import psnr
from haze_lab.optimize import OptimizeConfig, optimize_transmission
from haze_lab.synthetic import natural_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=48)
    ap.add_argument("--scenes", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--checkpoints", type=int, nargs="+", default=[0, 10, 100, 1000, 10000])
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    params = DcpParams()
    for k in range(args.scenes):
        scene = natural_scene(rng, size=args.size)
        ctx = build_loss_context(scene.hazy, params)
        print(f"scene {k}")
        for steps in sorted(args.checkpoints):
            res = optimize_transmission(ctx, OptimizeConfig(max_steps=steps))
            out = recover_radiance(scene.hazy, res.t, ctx.airlight, params.t0)
            print(f"  steps {steps:6d}  energy {res.trace[-1]:12.4f}  "
                  f"psnr {psnr(out, scene.clear):7.3f} dB")


if __name__ == "__main__":
    main()
