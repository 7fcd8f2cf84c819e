#!/usr/bin/env python3
"""Rendering-loss depth refinement demo.

Builds a synthetic scene, perturbs per-pixel plane logits away from ground
truth, then runs the splat-based refinement against two held-out novel views
and reports the depth RMSE before/after plus the loss trace.
"""

import argparse
import time

import numpy as np

from mvsweep.costvol import regress_depth
from mvsweep.harness.config import PipelineConfig
from mvsweep.scenegen import generate_scene, make_trajectory, quarter_depth, raycast
from mvsweep.splat import refine_probability_volume


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=10)
    parser.add_argument("--steps", type=int, default=60)
    parser.add_argument("--noise", type=float, default=1.2)
    parser.add_argument("--prior", type=float, default=0.1)
    parser.add_argument("--footprint", type=float, default=0.35)
    args = parser.parse_args()

    config = PipelineConfig()
    planes = config.planes()
    scene = generate_scene(seed=args.seed, n_boxes=1)
    views = make_trajectory(scene, 5, seed=args.seed + 1)
    gts = [raycast(scene, v) for v in views]
    src_idx, novel_idx = [0, 1, 2], [3, 4]

    rng = np.random.default_rng(0)
    volumes = []
    for i in src_idx:
        gt_q = quarter_depth(gts[i].depth)
        z = -args.prior * (planes.depths - gt_q[..., None]) ** 2 / (2 * (planes.spacing / 2) ** 2)
        z += rng.normal(0, args.noise, z.shape)
        e = np.exp(z - z.max(-1, keepdims=True))
        volumes.append(e / e.sum(-1, keepdims=True))

    def rmse(vols):
        tot, n = 0.0, 0
        for b, i in zip(vols, src_idx):
            gt_q = quarter_depth(gts[i].depth)
            m = (gt_q >= config.depth_min) & (gt_q <= config.depth_max)
            tot += ((regress_depth(b, planes) - gt_q)[m] ** 2).sum()
            n += m.sum()
        return float(np.sqrt(tot / n))

    initial = rmse(volumes)
    t0 = time.time()
    result = refine_probability_volume(
        volumes, planes,
        [views[i] for i in src_idx], [gts[i].image for i in src_idx],
        [views[i] for i in novel_idx], [gts[i].image for i in novel_idx],
        steps=args.steps, step_size=config.refine_step_size,
        footprint_scale=args.footprint,
    )
    final = rmse(result.volumes)
    trace = result.loss_trace
    print(f"depth RMSE: {initial:.4f} -> {final:.4f}  ({(initial-final)/initial:.1%} better)")
    print(f"loss: {trace[0]:.5f} -> {trace[-1]:.5f} over {len(trace)-1} steps "
          f"({time.time()-t0:.0f}s), non-increasing={all(b <= a for a, b in zip(trace, trace[1:]))}")


if __name__ == "__main__":
    main()
