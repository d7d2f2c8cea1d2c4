"""Causal evaluation metrics.

Errors of a map-based localization system decompose into mapping error
(keyframe poses and reconstructed points), matching/alignment error
(pose-vs-pose), local trajectory error (first-frame alignment only, so the
number at time t reflects only information available at t), and map
trajectory error (no alignment at all: the map frame is the output frame).

All functions are pure.  Trajectory files are plain text, one sample per
line: ``t tx ty tz qx qy qz qw`` (JPL scalar-last quaternion); point clouds
are whitespace-separated XYZ lines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from mapvins.geometry import RigidTransform, Rotation


class MetricError(ValueError):
    pass


class DegenerateGeometryError(MetricError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """Timestamped poses in one named frame; timestamps strictly increasing."""

    times: np.ndarray
    poses: tuple[RigidTransform, ...]
    frame: str = "unnamed"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or len(t) != len(self.poses):
            raise MetricError("times and poses must have equal length")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise MetricError("timestamps must be strictly increasing")
        object.__setattr__(self, "times", t)

    def __len__(self):
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    @classmethod
    def from_samples(cls, samples, frame="unnamed") -> "Trajectory":
        times = [s[0] for s in samples]
        poses = tuple(s[1] for s in samples)
        return cls(np.asarray(times, dtype=float), poses, frame)


def save_trajectory(traj: Trajectory, path) -> None:
    lines = []
    for t, pose in zip(traj.times, traj.poses):
        q = pose.rotation.quaternion
        p = pose.translation
        lines.append(" ".join(repr(float(x)) for x in (t, p[0], p[1], p[2],
                                                       q[0], q[1], q[2], q[3])))
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory(path, frame="unnamed") -> Trajectory:
    times, poses = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        tok = line.split()
        if len(tok) != 8:
            raise MetricError(f"{path}:{lineno}: expected 8 fields, got {len(tok)}")
        vals = [float(x) for x in tok]
        times.append(vals[0])
        poses.append(RigidTransform(Rotation(np.array(vals[4:8])), vals[1:4]))
    return Trajectory(np.array(times), tuple(poses), frame)


def save_point_cloud(points: np.ndarray, path) -> None:
    lines = [" ".join(repr(float(v)) for v in row) for row in np.atleast_2d(points)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_point_cloud(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rows.append([float(x) for x in line.split()])
    return np.array(rows).reshape(-1, 3)


def trajectory_from_pose_log(path, frame: str | int = "local") -> Trajectory:
    """Converter from the filter's JSON-lines pose log.

    ``frame`` selects the local-frame stream or, given a map id, that map's
    causal pose stream.
    """
    import json

    samples = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if frame == "local":
            q, p = rec["q_local"], rec["p_local"]
        else:
            entry = rec["maps"].get(str(frame))
            if entry is None:
                continue
            q, p = entry["q"], entry["p"]
        samples.append((rec["t"], RigidTransform(Rotation(np.array(q)), p)))
    if not samples:
        raise MetricError(f"pose log has no records for frame {frame!r}")
    return Trajectory.from_samples(samples, str(frame))


def associate(est: Trajectory, gt: Trajectory, tolerance: float = 0.01):
    """Nearest-timestamp association within ``tolerance`` seconds."""
    pairs = []
    gt_times = gt.times
    for i, t in enumerate(est.times):
        j = int(np.searchsorted(gt_times, t))
        best, best_dt = None, tolerance + 1e-12
        for cand in (j - 1, j):
            if 0 <= cand < len(gt_times):
                dt = abs(gt_times[cand] - t)
                if dt < best_dt:
                    best, best_dt = cand, dt
        if best is not None and best_dt <= tolerance:
            pairs.append((i, best))
    return pairs


def align_se3(est: Trajectory, gt: Trajectory,
              tolerance: float = 0.01) -> RigidTransform:
    """Least-squares SE(3) alignment (rotation + translation, no scale).

    Returns T minimizing sum ||gt_i - T * est_i||^2 over associated pairs
    (closed form via the centered cross-covariance SVD).
    """
    pairs = associate(est, gt, tolerance)
    if len(pairs) < 3:
        raise MetricError(f"need >= 3 associated pairs, got {len(pairs)}")
    a = np.array([est.poses[i].translation for i, _ in pairs])
    b = np.array([gt.poses[j].translation for _, j in pairs])
    mu_a = a.mean(axis=0)
    mu_b = b.mean(axis=0)
    cov = (b - mu_b).T @ (a - mu_a) / len(a)
    u, s, vt = np.linalg.svd(cov)
    if s[1] < 1e-12 * max(s[0], 1e-300):
        raise DegenerateGeometryError("trajectory points are collinear")
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, 1.0, d]) @ vt
    rotation = Rotation.from_matrix(rot)
    return RigidTransform(rotation, mu_b - rot @ mu_a)


def mapping_keyframe_error(map_traj: Trajectory, gt_traj: Trajectory,
                           tolerance: float = 0.01) -> float:
    """Keyframe-position RMSE after full SE(3) alignment (the ATE of the map)."""
    transform = align_se3(map_traj, gt_traj, tolerance)
    pairs = associate(map_traj, gt_traj, tolerance)
    errs = [gt_traj.poses[j].translation - transform.apply(map_traj.poses[i].translation)
            for i, j in pairs]
    return float(np.sqrt(np.mean(np.sum(np.array(errs) ** 2, axis=1))))


@dataclass(frozen=True)
class IcpResult:
    rmse: float
    converged: bool
    iterations: int
    transform: RigidTransform


def mapping_point_error(reconstructed: np.ndarray, ground_truth: np.ndarray,
                        max_iterations: int = 30, tol: float = 1e-6,
                        max_pair_distance: float = 1.0) -> IcpResult:
    """Point-to-point ICP alignment, then nearest-neighbor RMSE.

    Non-convergence is reported, not raised: the partial result carries the
    last alignment.  Pairs farther than ``max_pair_distance`` are ignored.
    """
    recon = np.atleast_2d(np.asarray(reconstructed, dtype=float))
    gt = np.atleast_2d(np.asarray(ground_truth, dtype=float))
    if recon.size == 0 or gt.size == 0:
        raise MetricError("point clouds must be non-empty")
    if not (np.isfinite(recon).all() and np.isfinite(gt).all()):
        raise MetricError("point clouds must have finite coordinates")
    tree = cKDTree(gt)
    transform = RigidTransform.identity()
    moved = recon.copy()
    converged = False
    last_rmse = np.inf
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        dist, idx = tree.query(moved)
        keep = dist <= max_pair_distance
        if keep.sum() < 3:
            break
        src = moved[keep]
        dst = gt[idx[keep]]
        mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
        cov = (dst - mu_d).T @ (src - mu_s)
        u, _, vt = np.linalg.svd(cov)
        d = np.sign(np.linalg.det(u @ vt))
        rot = u @ np.diag([1.0, 1.0, d]) @ vt
        step = RigidTransform(Rotation.from_matrix(rot), mu_d - rot @ mu_s)
        moved = moved @ step.rotation.as_matrix().T + step.translation
        transform = step @ transform
        rmse = float(np.sqrt(np.mean(dist[keep] ** 2)))
        if abs(last_rmse - rmse) < tol:
            converged = True
            break
        last_rmse = rmse
    dist, _ = tree.query(moved)
    keep = dist <= max_pair_distance
    rmse = float(np.sqrt(np.mean(dist[keep] ** 2))) if keep.any() else float("inf")
    return IcpResult(rmse, converged, iterations, transform)


def alignment_error(est: RigidTransform, gt: RigidTransform) -> tuple[float, float]:
    """(translation error in meters, rotation error in radians)."""
    dt = float(np.linalg.norm(gt.translation - est.translation))
    rel = est.rotation.as_matrix().T @ gt.rotation.as_matrix()
    c = (np.trace(rel) - 1.0) / 2.0
    dr = float(math.acos(min(1.0, max(-1.0, c))))
    return dt, dr


def local_trajectory_error(est: Trajectory, gt: Trajectory,
                           tolerance: float = 0.01) -> float:
    """Causal trajectory RMSE: align the first pose only, never re-align.

    The full SE(3) of the first pose pair fixes the frame; errors over
    samples 2..N use that fixed transform with 1/(N-1) normalization.
    """
    pairs = associate(est, gt, tolerance)
    if len(pairs) < 2:
        raise MetricError("need at least 2 associated samples")
    i0, j0 = pairs[0]
    transform = gt.poses[j0] @ est.poses[i0].inverse()
    errs = [gt.poses[j].translation - transform.apply(est.poses[i].translation)
            for i, j in pairs[1:]]
    return float(np.sqrt(np.mean(np.sum(np.array(errs) ** 2, axis=1))))


def map_trajectory_error(est_in_map: Trajectory, gt_in_map: Trajectory,
                         tolerance: float = 0.01) -> float:
    """Positional RMSE with no alignment whatsoever (causal map-frame ATE)."""
    pairs = associate(est_in_map, gt_in_map, tolerance)
    if not pairs:
        raise MetricError("no associated samples")
    errs = [gt_in_map.poses[j].translation - est_in_map.poses[i].translation
            for i, j in pairs]
    return float(np.sqrt(np.mean(np.sum(np.array(errs) ** 2, axis=1))))
