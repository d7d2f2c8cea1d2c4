"""IMU-aided minimal pose solvers and the RANSAC matching engine.

The estimation problem: with pitch and roll known from inertial sensing, the
pose between a gravity-aligned query frame and a gravity-aligned map frame
has 4 degrees of freedom, one yaw angle plus translation.  Two 2D-3D
correspondences then suffice for a minimal solution: each correspondence
pins the transformed map point to its projection ray (two constraints), and
eliminating the translation from the four constraints leaves a single
trigonometric equation

    d1 * sin(alpha) + d2 * cos(alpha) + d3 = 0

whose up-to-two roots back-substitute into a linear system for t.

Everything here works on rays, not normalized image coordinates, so the same
solver covers the single-camera case (all rays through the origin) and the
multi-camera case where correspondences from a rigid rig are expressed in
one unified gravity-aligned reference frame with per-ray centers.

Solved pose convention: ``cam_from_map`` such that
``X_query = R(yaw) @ F_map + t``.  ``MatchResult.pose_in_map`` gives the
inverse, the query pose expressed in the queried map's frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from mapvins.cameras import CameraModel
from mapvins.geometry import RigidTransform, Rotation, YawPose, decompose_yaw, wrap_angle
from mapvins.sim import Correspondence

_MIN_DEPTH = 1e-3


class DegenerateSampleError(ValueError):
    """The sampled correspondence pair cannot constrain the 4DoF pose."""


class MatchingFailureError(RuntimeError):
    """RANSAC could not produce a pose meeting the inlier floor."""


@dataclass(frozen=True)
class BearingMatch:
    """One correspondence lifted into the gravity-aligned solving frame."""

    ray: np.ndarray          # unit direction in the solving frame
    center: np.ndarray       # ray origin in the solving frame (0 for mono)
    point: np.ndarray        # landmark position in the map frame
    pixel: np.ndarray
    camera_id: int
    weight: float
    index: int               # position in the source correspondence list


@dataclass(frozen=True)
class MatchingFrame:
    """Prepared matches plus per-camera reprojection contexts."""

    matches: list[BearingMatch]
    cameras: dict[int, CameraModel]
    cam_from_solving: dict[int, RigidTransform]

    def arrays(self):
        points = np.array([m.point for m in self.matches]).reshape(-1, 3)
        pixels = np.array([m.pixel for m in self.matches]).reshape(-1, 2)
        cam_ids = np.array([m.camera_id for m in self.matches], dtype=int)
        weights = np.array([m.weight for m in self.matches])
        return points, pixels, cam_ids, weights


@dataclass(frozen=True)
class SolverCandidate:
    pose: YawPose
    sample_indices: tuple[int, ...]


@dataclass
class RansacConfig:
    iterations: int = 100
    threshold_px: float = 3.0
    min_inliers: int = 5
    use_weights: bool = False
    seed: int = 0
    sample_size: int = 2     # 3 enables the 3-sample baseline for comparisons
    polish: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.threshold_px <= 0:
            raise ValueError("inlier threshold must be positive")
        if self.sample_size not in (2, 3):
            raise ValueError("sample_size must be 2 or 3")


@dataclass(frozen=True)
class MatchResult:
    cam_from_map: YawPose
    inlier_indices: tuple[int, ...]
    inlier_ratio: float
    iterations: int

    @property
    def pose_in_map(self) -> YawPose:
        """The query pose expressed in the queried map frame."""
        return self.cam_from_map.inverse()


def align_correspondences(corrs: list[Correspondence], rig: list[CameraModel],
                          body_attitude: Rotation,
                          reference_camera: int = 0) -> MatchingFrame:
    """Lift raw pixel correspondences into one gravity-aligned solving frame.

    ``body_attitude`` is the IMU-to-world rotation supplying pitch and roll
    (the simulator passes truth; the filter passes its current estimate).
    For a multi-camera rig all rays are expressed in the leveled frame of the
    reference camera using the calibrated extrinsics, which is what makes the
    2-point solver applicable to the pooled correspondence set.
    """
    map_ids = {c.map_id for c in corrs}
    if len(map_ids) > 1:
        raise ValueError(f"correspondences mix map ids {sorted(map_ids)}")
    cams = {c.camera_id: c for c in rig}
    ref = cams[reference_camera]
    world_from_ref_rot = body_attitude @ ref.imu_from_camera.rotation
    _, tilt = decompose_yaw(world_from_ref_rot)
    level_from_ref = RigidTransform(tilt, np.zeros(3))  # leveled frame at ref center

    cam_from_solving: dict[int, RigidTransform] = {}
    solving_from_cam: dict[int, RigidTransform] = {}
    for cam in rig:
        ref_from_cam = ref.imu_from_camera.inverse() @ cam.imu_from_camera
        s_from_c = level_from_ref @ ref_from_cam
        solving_from_cam[cam.camera_id] = s_from_c
        cam_from_solving[cam.camera_id] = s_from_c.inverse()

    pixels = np.array([c.pixel for c in corrs], dtype=float).reshape(-1, 2)
    cam_ids = np.array([c.camera_id for c in corrs], dtype=int)
    rays = np.empty((len(corrs), 3))
    for cam in rig:
        sel = np.flatnonzero(cam_ids == cam.camera_id)
        if len(sel) == 0:
            continue
        v = cam.normalize(pixels[sel])
        r = v @ solving_from_cam[cam.camera_id].rotation.as_matrix().T
        rays[sel] = r / np.linalg.norm(r, axis=1, keepdims=True)
    matches = [
        BearingMatch(rays[i], solving_from_cam[c.camera_id].translation, c.point,
                     pixels[i], c.camera_id, c.weight, i)
        for i, c in enumerate(corrs)
    ]
    return MatchingFrame(matches, cams, cam_from_solving)


def _ray_basis(ray: np.ndarray) -> np.ndarray:
    """Two orthonormal rows spanning the plane orthogonal to ``ray``."""
    seed = np.array([0.0, 0.0, 1.0]) if abs(ray[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    b1 = np.cross(seed, ray)
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(ray, b1)
    return np.vstack([b1, b2])


def _linear_rows(m: BearingMatch):
    """Rows of b^T (cos*A + sin*B + C + t - c) = 0 for one correspondence."""
    fx, fy, fz = m.point
    a_vec = np.array([fx, fy, 0.0])    # cos(alpha) part of R(alpha) @ F
    b_vec = np.array([-fy, fx, 0.0])   # sin(alpha) part
    c_vec = np.array([0.0, 0.0, fz])
    basis = _ray_basis(m.ray)
    cos_coef = basis @ a_vec
    sin_coef = basis @ b_vec
    const = basis @ (c_vec - m.center)
    return cos_coef, sin_coef, basis, const


def tim_coefficients(m1: BearingMatch, m2: BearingMatch):
    """Translation-invariant coefficients (d1, d2, d3) for a match pair.

    ``d(alpha) = d1 sin + d2 cos + d3`` vanishes at any yaw consistent with
    both correspondences, regardless of translation.
    """
    cos1, sin1, rows1, e1 = _linear_rows(m1)
    cos2, sin2, rows2, e2 = _linear_rows(m2)
    trans_mat = np.vstack([rows1, rows2])               # 4 x 3
    cos_coef = np.concatenate([cos1, cos2])
    sin_coef = np.concatenate([sin1, sin2])
    const = np.concatenate([e1, e2])
    # left null space of the translation block eliminates t
    _, sing, vt = np.linalg.svd(trans_mat.T, full_matrices=True)
    null = vt[-1]
    rank_ok = sing[-1] > 1e-9 * max(sing[0], 1.0)
    d1, d2, d3 = canonical_tim(float(null @ sin_coef), float(null @ cos_coef),
                               float(null @ const))
    scale = max(np.linalg.norm(cos_coef), np.linalg.norm(sin_coef),
                np.linalg.norm(const), 1e-30)
    return d1, d2, d3, (trans_mat, cos_coef, sin_coef, const, rank_ok, scale)


def _solve_translation_for_yaw(system, alpha: float) -> np.ndarray:
    trans_mat, cos_coef, sin_coef, const, _, _ = system
    rhs = -(cos_coef * math.cos(alpha) + sin_coef * math.sin(alpha) + const)
    t, *_ = np.linalg.lstsq(trans_mat, rhs, rcond=None)
    return t


def solve_2pt(m1: BearingMatch, m2: BearingMatch) -> list[SolverCandidate]:
    """Closed-form 4DoF candidates from two gravity-aligned correspondences.

    Returns up to two candidates (the two roots of the yaw equation), each
    satisfying both projection-ray constraints exactly for exact inputs.
    """
    if np.linalg.norm(m1.point - m2.point) < 1e-9:
        raise DegenerateSampleError("coincident map points")
    d1, d2, d3, system = tim_coefficients(m1, m2)
    if not system[4]:
        raise DegenerateSampleError("rank-deficient translation system")
    scale = system[5]
    if math.hypot(d1, d2) <= 1e-10 * scale:
        if abs(d3) <= 1e-10 * scale:
            raise DegenerateSampleError("yaw-unobservable pair")
        return []  # inconsistent: no yaw satisfies the pair
    roots = _yaw_roots(d1, d2, d3)
    if roots is None:
        return []  # inconsistent: no yaw satisfies the pair
    out = []
    for alpha in roots:
        t = _solve_translation_for_yaw(system, alpha)
        out.append(SolverCandidate(YawPose(alpha, t), (m1.index, m2.index)))
    return out


def match_row_arrays(matches: list[BearingMatch]):
    """Stacked per-match linear rows, shared by RANSAC and TIM construction.

    For match ``i`` the two rows of ``basis @ (cos*A + sin*B + C + t - c) = 0``
    are encoded as ``cos_c[i] (2,)``, ``sin_c[i] (2,)``, ``bas[i] (2,3)``,
    ``con[i] (2,)``.  Vectorized equivalent of :func:`_linear_rows`.
    """
    rays = np.array([m.ray for m in matches]).reshape(-1, 3)
    points = np.array([m.point for m in matches]).reshape(-1, 3)
    centers = np.array([m.center for m in matches]).reshape(-1, 3)
    n = len(rays)
    seeds = np.where(np.abs(rays[:, 2:3]) < 0.9,
                     np.array([[0.0, 0.0, 1.0]]), np.array([[1.0, 0.0, 0.0]]))
    b1 = np.cross(seeds, rays)
    b1 /= np.linalg.norm(b1, axis=1, keepdims=True)
    b2 = np.cross(rays, b1)
    bas = np.stack([b1, b2], axis=1)                       # (n, 2, 3)
    a_vec = np.column_stack([points[:, 0], points[:, 1], np.zeros(n)])
    b_vec = np.column_stack([-points[:, 1], points[:, 0], np.zeros(n)])
    c_vec = np.column_stack([np.zeros(n), np.zeros(n), points[:, 2]])
    cos_c = np.einsum("nij,nj->ni", bas, a_vec)
    sin_c = np.einsum("nij,nj->ni", bas, b_vec)
    con = np.einsum("nij,nj->ni", bas, c_vec - centers)
    return cos_c, sin_c, bas, con


def _pair_null_vector(m_rows: np.ndarray) -> np.ndarray:
    """Left null vector of a stacked 4x3 translation block via Hodge dual."""
    c0, c1, c2 = m_rows[:, 0], m_rows[:, 1], m_rows[:, 2]

    def det3(rows):
        a, b, c = rows
        return (c0[a] * (c1[b] * c2[c] - c1[c] * c2[b])
                - c1[a] * (c0[b] * c2[c] - c0[c] * c2[b])
                + c2[a] * (c0[b] * c1[c] - c0[c] * c1[b]))

    return np.array([det3((1, 2, 3)), -det3((0, 2, 3)),
                     det3((0, 1, 3)), -det3((0, 1, 2))])


def _solve_pair_fast(rows, i: int, j: int):
    """Closed-form pair solve over precomputed row arrays.

    Same math as :func:`solve_2pt` (tested to agree) without per-call SVD:
    the left null vector of the 4x3 translation block comes from 3x3 minors
    and the back-substitution solves 3x3 normal equations.
    """
    cos_c, sin_c, bas, con = rows
    m_rows = np.vstack([bas[i], bas[j]])
    null = _pair_null_vector(m_rows)
    nn = np.linalg.norm(null)
    scale = np.abs(m_rows).max()
    if nn < 1e-12 * max(scale, 1.0) ** 3:
        return None  # translation block rank deficient
    null /= nn
    cvec = np.concatenate([cos_c[i], cos_c[j]])
    svec = np.concatenate([sin_c[i], sin_c[j]])
    evec = np.concatenate([con[i], con[j]])
    d1, d2, d3 = canonical_tim(float(null @ svec), float(null @ cvec),
                               float(null @ evec))
    coef_scale = max(np.linalg.norm(cvec), np.linalg.norm(svec),
                     np.linalg.norm(evec), 1e-30)
    if math.hypot(d1, d2) <= 1e-10 * coef_scale:
        return None  # yaw-unobservable or inconsistent pair
    roots = _yaw_roots(d1, d2, d3)
    if roots is None:
        return None
    out = []
    mtm = m_rows.T @ m_rows
    for alpha in roots:
        rhs = -(cvec * math.cos(alpha) + svec * math.sin(alpha) + evec)
        t = np.linalg.solve(mtm, m_rows.T @ rhs)
        out.append((alpha, t))
    return out


def canonical_tim(d1: float, d2: float, d3: float):
    """Fix the overall sign of (d1, d2, d3); TIMs are defined up to scale."""
    for lead in (d2, d1, d3):
        if lead != 0.0:
            if lead < 0.0:
                return -d1, -d2, -d3
            break
    return d1, d2, d3


def _yaw_roots(d1: float, d2: float, d3: float):
    """Roots of d1 sin + d2 cos + d3 = 0 (caller checks degeneracy first)."""
    amp = math.hypot(d1, d2)
    s_target = -d3 / amp
    if abs(s_target) > 1.0:
        if abs(s_target) > 1.0 + 1e-9:
            return None
        s_target = math.copysign(1.0, s_target)
    phi = math.atan2(d2, d1)
    base = math.asin(s_target)
    roots = [wrap_angle(base - phi), wrap_angle(math.pi - base - phi)]
    if abs(wrap_angle(roots[0] - roots[1])) < 1e-12:
        return roots[:1]
    return roots


class _Verifier:
    """Vectorized inlier counting for candidate poses over a MatchingFrame."""

    def __init__(self, frame: MatchingFrame):
        self.points, self.pixels, cam_ids, self.weights = frame.arrays()
        self.groups = []
        for cam_id in sorted(frame.cameras):
            sel = np.flatnonzero(cam_ids == cam_id)
            if len(sel) == 0:
                continue
            cam = frame.cameras[cam_id]
            cfs = frame.cam_from_solving[cam_id]
            self.groups.append((sel, cam, cfs.rotation.as_matrix(), cfs.translation))

    def batch_errors(self, yaws: np.ndarray, ts: np.ndarray) -> np.ndarray:
        """Reprojection errors, shape (candidates, matches)."""
        cos_v, sin_v = np.cos(yaws), np.sin(yaws)
        c = len(yaws)
        rot = np.zeros((c, 3, 3))
        rot[:, 0, 0] = cos_v
        rot[:, 0, 1] = -sin_v
        rot[:, 1, 0] = sin_v
        rot[:, 1, 1] = cos_v
        rot[:, 2, 2] = 1.0
        solved = np.einsum("cij,nj->cni", rot, self.points) + ts[:, None, :]
        err = np.full((c, len(self.points)), np.inf)
        for sel, cam, r_cs, t_cs in self.groups:
            p = solved[:, sel, :] @ r_cs.T + t_cs
            z = p[..., 2]
            ok = z > _MIN_DEPTH
            z_safe = np.where(ok, z, 1.0)
            dx = cam.fx * p[..., 0] / z_safe + cam.cx - self.pixels[sel, 0]
            dy = cam.fy * p[..., 1] / z_safe + cam.cy - self.pixels[sel, 1]
            err[:, sel] = np.where(ok, np.hypot(dx, dy), np.inf)
        return err

    def errors(self, pose: YawPose) -> np.ndarray:
        return self.batch_errors(np.array([pose.yaw]),
                                 pose.translation[None, :])[0]

    def inliers(self, pose: YawPose, threshold: float) -> np.ndarray:
        return np.flatnonzero(self.errors(pose) <= threshold)


def refine_yaw_pose(frame: MatchingFrame, indices, yaw0: float, t0) -> YawPose:
    """Nonlinear least-squares polish of (yaw, t) over pixel residuals."""
    sub = [frame.matches[i] for i in indices]
    points = np.array([m.point for m in sub])
    pixels = np.array([m.pixel for m in sub])
    cams = [frame.cameras[m.camera_id] for m in sub]
    cfs = [frame.cam_from_solving[m.camera_id] for m in sub]
    rot_cs = np.array([c.rotation.as_matrix() for c in cfs])
    t_cs = np.array([c.translation for c in cfs])
    f = np.array([[c.fx, c.fy] for c in cams])
    c0 = np.array([[c.cx, c.cy] for c in cams])

    def residuals(x):
        yaw, t = x[0], x[1:]
        rot = np.array([[math.cos(yaw), -math.sin(yaw), 0.0],
                        [math.sin(yaw), math.cos(yaw), 0.0],
                        [0.0, 0.0, 1.0]])
        solved = points @ rot.T + t
        p_cam = np.einsum("nij,nj->ni", rot_cs, solved) + t_cs
        z = np.clip(p_cam[:, 2], _MIN_DEPTH, None)
        pix = f * p_cam[:, :2] / z[:, None] + c0
        return (pix - pixels).ravel()

    sol = least_squares(residuals, np.array([yaw0, *np.asarray(t0, dtype=float)]),
                        method="lm", xtol=1e-14, ftol=1e-14, gtol=1e-14)
    return YawPose(sol.x[0], sol.x[1:])


def ransac_matching_frame(frame: MatchingFrame, cfg: RansacConfig) -> MatchResult:
    """RANSAC over an already-prepared MatchingFrame.

    Deterministic given ``cfg.seed``; the winning candidate has the highest
    verified inlier count, ties broken by earliest (iteration, root) pair, so
    any parallel execution reducing with the same key agrees.  Candidate
    hypotheses are generated sequentially (cheap closed forms), then verified
    in one vectorized pass.
    """
    n = len(frame.matches)
    if n < cfg.sample_size:
        raise MatchingFailureError(
            f"need at least {cfg.sample_size} correspondences, got {n}")
    verifier = _Verifier(frame)
    rows = match_row_arrays(frame.matches)
    points = np.array([m.point for m in frame.matches])
    rng = np.random.default_rng(cfg.seed)
    probs = None
    if cfg.use_weights:
        w = verifier.weights.clip(min=1e-9)
        probs = w / w.sum()

    yaws, ts, gates = [], [], []
    for _ in range(cfg.iterations):
        picks = rng.choice(n, size=cfg.sample_size, replace=False, p=probs)
        i, j = int(picks[0]), int(picks[1])
        if np.linalg.norm(points[i] - points[j]) < 1e-9:
            continue
        solutions = _solve_pair_fast(rows, i, j)
        if not solutions:
            continue
        gate = int(picks[2]) if cfg.sample_size == 3 else -1
        for alpha, t in solutions:  # candidates stay in (iteration, root) order
            yaws.append(alpha)
            ts.append(t)
            gates.append(gate)

    if not yaws:
        raise MatchingFailureError("no candidate met the inlier floor")
    errs = verifier.batch_errors(np.array(yaws), np.array(ts))
    counts = (errs <= cfg.threshold_px).sum(axis=1)
    gates = np.array(gates)
    gated = gates >= 0
    if gated.any():  # 3-sample baseline: the third draw must fit the model too
        third = errs[np.arange(len(gates)), np.where(gated, gates, 0)]
        counts = np.where(gated & (third > cfg.threshold_px), -1, counts)
    best_idx = int(np.argmax(counts))  # first maximum = earliest (iter, root)
    if counts[best_idx] < max(cfg.min_inliers, cfg.sample_size):
        raise MatchingFailureError("no candidate met the inlier floor")

    pose = YawPose(yaws[best_idx], ts[best_idx])
    inliers = np.flatnonzero(errs[best_idx] <= cfg.threshold_px)
    if cfg.polish and len(inliers) >= 2:
        for _ in range(2):  # polish, re-collect inliers, polish again
            pose = refine_yaw_pose(frame, inliers, pose.yaw, pose.translation)
            inliers = verifier.inliers(pose, cfg.threshold_px)
            if len(inliers) < max(cfg.min_inliers, cfg.sample_size):
                raise MatchingFailureError("polish collapsed the inlier set")
    return MatchResult(pose, tuple(int(i) for i in inliers),
                       len(inliers) / n, cfg.iterations)


def ransac_pose(corrs: list[Correspondence], cfg: RansacConfig,
                rig: list[CameraModel], body_attitude: Rotation,
                reference_camera: int = 0) -> MatchResult:
    """2P (or MC2P, when the rig has several cameras) RANSAC pose estimation."""
    frame = align_correspondences(corrs, rig, body_attitude, reference_camera)
    return ransac_matching_frame(frame, cfg)


def ransac_success_probability(w: float, n: int, k: int) -> float:
    """P(at least one all-inlier sample in k draws of size n at inlier rate w)."""
    if not 0.0 <= w <= 1.0:
        raise ValueError("inlier rate must be in [0, 1]")
    if n < 1 or k < 1:
        raise ValueError("sample size and iterations must be >= 1")
    return 1.0 - (1.0 - w ** n) ** k
