#!/usr/bin/env python3
"""Walkthrough: IMU-aided 2-point RANSAC and why sample size matters.

With gravity known, two 2D-3D correspondences pin the remaining 4 degrees of
freedom.  The success probability of RANSAC after k iterations is
1 - (1 - w^n)^k, so dropping the minimal sample size n from 3 to 2 is worth
more than any constant-factor speedup once outliers dominate.
"""

import numpy as np

from mapvins.geometry import wrap_angle
from mapvins.sim import make_matching_problem
from mapvins.solvers import (
    MatchingFailureError,
    RansacConfig,
    align_correspondences,
    ransac_matching_frame,
    ransac_success_probability,
)

print("=== Predicted success probability, Eq-style ===")
print(f"{'inlier rate':>12} {'n=2,k=100':>10} {'n=3,k=100':>10}")
for w in (0.1, 0.2, 0.3, 0.5):
    print(f"{w:>12.1f} {ransac_success_probability(w, 2, 100):>10.3f} "
          f"{ransac_success_probability(w, 3, 100):>10.3f}")

print("\n=== Empirical check at 80% outliers ===")
corrs, camera, wfc, truth = make_matching_problem(300, 0.2, 0.0, seed=9)
frame = align_correspondences(corrs, [camera], wfc.rotation)
for n_sample in (2, 3):
    wins = 0
    trials = 200
    for seed in range(trials):
        try:
            res = ransac_matching_frame(
                frame, RansacConfig(iterations=100, threshold_px=1e-5,
                                    min_inliers=2, sample_size=n_sample, seed=seed))
            wins += (abs(wrap_angle(res.cam_from_map.yaw - truth.yaw)) < 1e-6
                     and np.linalg.norm(res.cam_from_map.translation
                                        - truth.translation) < 1e-5)
        except MatchingFailureError:
            pass
    pred = ransac_success_probability(0.2, n_sample, 100)
    print(f"sample size {n_sample}: empirical {wins / trials:.3f} "
          f"vs predicted {pred:.3f}")

print("\n=== Reliability weights steer sampling toward inliers ===")
corrs, camera, wfc, truth = make_matching_problem(150, 0.2, 1.0, seed=5)
frame = align_correspondences(corrs, [camera], wfc.rotation)
for use_weights in (False, True):
    wins = 0
    for seed in range(100):
        try:
            res = ransac_matching_frame(
                frame, RansacConfig(iterations=20, threshold_px=3.0, min_inliers=5,
                                    use_weights=use_weights, seed=seed))
            wins += (abs(wrap_angle(res.cam_from_map.yaw - truth.yaw)) < 0.01
                     and np.linalg.norm(res.cam_from_map.translation
                                        - truth.translation) < 0.1)
        except MatchingFailureError:
            pass
    label = "weighted" if use_weights else "uniform "
    print(f"{label} sampling, k=20: {wins}/100 trials recover the pose")
