"""Compare transmission refinements on synthetic hazy scenes.

For each scene, dehaze with the coarse map, soft matting, the guided
filter and gradient descent on the DCP energy, then print PSNR/SSIM
against the clear image and the wall-clock time of each method.

    python3 scripts/compare_refinement.py --pairs 10 --size 64
"""
import argparse
import time

import numpy as np

from haze_lab.dcp import DcpParams, coarse_transmission, estimate_airlight, recover_radiance
from haze_lab.loss import build_loss_context
from haze_lab.matting import matting_laplacian, refine_guided_filter, refine_soft_matting
from haze_lab.metrics import psnr, ssim
from haze_lab.optimize import OptimizeConfig, optimize_transmission
from haze_lab.synthetic import natural_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=10)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--descent-steps", type=int, default=500)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    params = DcpParams()
    methods = ["coarse", "matting", "guided", "descent", "true t"]
    scores = {m: [] for m in methods}
    times = {m: [] for m in methods}
    for _ in range(args.pairs):
        scene = natural_scene(rng, size=args.size)
        a = estimate_airlight(scene.hazy, params.patch)
        start = time.perf_counter()
        coarse = coarse_transmission(scene.hazy, a, params)
        t_coarse = time.perf_counter() - start

        maps = {"coarse": (coarse, t_coarse)}
        start = time.perf_counter()
        maps["matting"] = (refine_soft_matting(coarse, matting_laplacian(scene.hazy)).t,
                           t_coarse + time.perf_counter() - start)
        start = time.perf_counter()
        maps["guided"] = (refine_guided_filter(coarse, scene.hazy, radius=max(2, args.size // 16)),
                          t_coarse + time.perf_counter() - start)
        start = time.perf_counter()
        ctx = build_loss_context(scene.hazy, params)
        res = optimize_transmission(ctx, OptimizeConfig(max_steps=args.descent_steps))
        maps["descent"] = (res.t, time.perf_counter() - start)
        maps["true t"] = (scene.t, 0.0)

        for name, (t, sec) in maps.items():
            out = recover_radiance(scene.hazy, t, a, params.t0)
            scores[name].append((psnr(out, scene.clear), ssim(out, scene.clear)))
            times[name].append(sec)

    print(f"{'method':<10}{'psnr_db':>10}{'ssim':>9}{'time_s':>10}")
    for name in methods:
        p, s = np.mean(scores[name], axis=0)
        print(f"{name:<10}{p:>10.3f}{s:>9.4f}{np.mean(times[name]):>10.4f}")


if __name__ == "__main__":
    main()
