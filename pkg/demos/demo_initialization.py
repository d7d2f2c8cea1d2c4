#!/usr/bin/env python3
"""Walkthrough: deterministic 4DoF initialization under heavy outliers.

The initializer votes yaw over translation-invariant pair constraints, then
solves translation by exact maximum-clique consensus.  Unlike RANSAC it is a
pure function: repeated runs return bit-identical poses.
"""

import math
import time

import numpy as np

from mapvins.geometry import wrap_angle
from mapvins.initializer import InitConfig, initialize
from mapvins.sim import make_matching_problem

CASES = [(26, 0.82), (68, 0.78), (15, 0.47), (49, 0.65), (82, 0.72), (138, 0.38)]

print("=== Determinism and accuracy across operating points ===")
print(f"{'N':>4} {'inlier rate':>12} {'yaw err':>10} {'t err':>8} "
      f"{'recall':>7} {'runs identical':>15} {'time':>8}")
for n, w in CASES:
    corrs, camera, wfc, truth = make_matching_problem(n, w, sigma_px=1.0,
                                                      seed=n, tilt=0.1)
    poses = set()
    t0 = time.perf_counter()
    for _ in range(10):
        res = initialize(corrs, InitConfig(sigma_px=1.0), [camera], wfc.rotation)
        poses.add((res.refined_pose.yaw, tuple(res.refined_pose.translation)))
    elapsed = (time.perf_counter() - t0) / 10
    true_inliers = {i for i, c in enumerate(corrs) if c.is_inlier}
    recall = len(true_inliers & set(res.translation_inliers)) / len(true_inliers)
    yerr = math.degrees(abs(wrap_angle(res.refined_pose.yaw - truth.yaw)))
    terr = np.linalg.norm(res.refined_pose.translation - truth.translation)
    print(f"{n:>4} {w:>12.2f} {yerr:>9.3f}d {terr:>7.3f}m {recall:>7.0%} "
          f"{str(len(poses) == 1):>15} {elapsed * 1e3:>6.0f}ms")

print("\n=== Stage breakdown on one 80%-outlier instance ===")
corrs, camera, wfc, truth = make_matching_problem(100, 0.2, 1.0, seed=123, tilt=0.1)
res = initialize(corrs, InitConfig(sigma_px=1.0), [camera], wfc.rotation)
true_inliers = {i for i, c in enumerate(corrs) if c.is_inlier}
print(f"100 correspondences, {len(true_inliers)} true inliers")
print(f"yaw voting kept {len(res.yaw_inliers)} correspondences "
      f"(consensus count {res.consensus})")
print(f"translation clique kept {len(res.translation_inliers)}; "
      f"true inliers retained: "
      f"{len(true_inliers & set(res.translation_inliers))}/{len(true_inliers)}")
print(f"refined pose error: "
      f"{math.degrees(abs(wrap_angle(res.refined_pose.yaw - truth.yaw))):.3f} deg / "
      f"{np.linalg.norm(res.refined_pose.translation - truth.translation):.3f} m")
