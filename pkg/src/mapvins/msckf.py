"""Multi-map Schmidt-MSCKF.

State (error-state dimensions in parentheses):

* IMU block: attitude (3), velocity (3), position (3), gyro bias (3),
  accel bias (3) -- the attitude stores ``R_IL`` (local-to-body).
* Sliding window: up to B cloned past IMU poses (6 each).
* Map transforms: one local-to-map pose ``(R_GL, p_GL)`` per registered map
  (6 each).  These are the states that absorb drift corrections.
* Nuisance keyframes: map keyframe poses lifted for correlation bookkeeping
  (6 each).  Schmidt treatment: their means and their own covariance block
  are never modified by updates; only cross-covariances evolve.

Error convention: left multiplicative for rotations,
``R = (I - skew(dtheta)) @ R_hat``, additive for everything else.  The filter
is a single-owner mutable object; updates mutate in place and return the
state for call chaining.

Measurement conventions match the simulator: white IMU noise and bias
random-walk sigmas are discrete per-sample values, pixel noises are in
pixels for camera rows; keyframe anchor rows use normalized image
coordinates with sigma scaled by 1/f.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from mapvins.cameras import CameraModel
from mapvins.geometry import GRAVITY, RigidTransform, Rotation, skew
from mapvins.mapmodel import MapBundle
from mapvins.sim import ImuSample

IMU_DIM = 15
_TH = slice(0, 3)
_V = slice(3, 6)
_P = slice(6, 9)
_BG = slice(9, 12)
_BA = slice(12, 15)


class FilterError(RuntimeError):
    pass


@dataclass
class FilterConfig:
    window_size: int = 11
    # discrete per-sample IMU noise (same convention as sim.ImuNoiseParams)
    sigma_g: float = 1e-3
    sigma_a: float = 1e-2
    sigma_wg: float = 1e-6
    sigma_wa: float = 1e-5
    # measurement noise
    local_sigma_px: float = 0.5
    map_sigma_px: float = 1.0
    map_inflation: float = 1.0
    # nuisance keyframes: 0 sigma treats keyframes as exact constants and
    # skips nuisance bookkeeping entirely
    kf_sigma_pos: float = 0.01
    kf_sigma_rot: float = math.radians(0.1)
    max_nuisance_keyframes: int = 30
    # two anchors per landmark leave 2 + 2*2 - 3 = 3 projected rows, enough
    # to both correct the pose and expose wrong-landmark outliers to the gate
    anchors_per_landmark: int = 2
    cross_anchors_per_landmark: int = 1
    # initial uncertainty of a freshly registered map transform
    tau_sigma_pos: float = 0.3
    tau_sigma_rot: float = math.radians(1.0)
    chi2_confidence: float = 0.95
    max_tracks_per_update: int = 40


@dataclass(frozen=True)
class TrackObservation:
    frame: int
    camera_id: int
    pixel: np.ndarray


@dataclass(frozen=True)
class FeatureTrack:
    feature_id: int
    observations: tuple[TrackObservation, ...]


@dataclass(frozen=True)
class MapMatchItem:
    camera_id: int
    pixel: np.ndarray
    landmark_id: int


@dataclass
class MapObservation:
    """Filtered matches against one map, plus anchoring metadata.

    ``cross`` lists (landmark_id, other_map_id, other_landmark_id) for
    features associated across maps; the association source is external
    (the scenario table in simulation).
    """

    map_id: int
    matches: list[MapMatchItem]
    anchors: dict[int, tuple[int, ...]] = field(default_factory=dict)
    cross: list[tuple[int, int, int]] = field(default_factory=list)


@dataclass
class UpdateReport:
    used: int = 0
    gated: int = 0
    skipped: int = 0
    rows: int = 0
    max_nullspace_residual: float = 0.0


def _small_rotation(dtheta: np.ndarray) -> Rotation:
    return Rotation(np.array([0.5 * dtheta[0], 0.5 * dtheta[1], 0.5 * dtheta[2], 1.0]))


class FilterState:
    """Mutable multi-map Schmidt-MSCKF state; single-owner semantics."""

    def __init__(self, config: FilterConfig, rig: list[CameraModel],
                 start_time: float = 0.0):
        self.config = config
        self.rig = {cam.camera_id: cam for cam in rig}
        self.time = start_time
        self.q_IL = Rotation.identity()
        self.v = np.zeros(3)
        self.p = np.zeros(3)
        self.bg = np.zeros(3)
        self.ba = np.zeros(3)
        self.clones: OrderedDict[int, tuple[Rotation, np.ndarray]] = OrderedDict()
        self.map_tau: OrderedDict[int, tuple[Rotation, np.ndarray]] = OrderedDict()
        self.bundles: dict[int, MapBundle] = {}
        self.keyframes: OrderedDict[tuple[int, int], tuple[Rotation, np.ndarray]] = \
            OrderedDict()
        self.P = np.zeros((IMU_DIM, IMU_DIM))
        self.last_report: UpdateReport | None = None
        self._chi2_cache: dict[int, float] = {}

    # -- dimensions ---------------------------------------------------------

    @property
    def active_dim(self) -> int:
        return IMU_DIM + 6 * len(self.clones) + 6 * len(self.map_tau)

    @property
    def nuisance_dim(self) -> int:
        return 6 * len(self.keyframes)

    @property
    def dim(self) -> int:
        return self.active_dim + self.nuisance_dim

    def clone_index(self, frame: int) -> int:
        return IMU_DIM + 6 * list(self.clones).index(frame)

    def tau_index(self, map_id: int) -> int:
        return IMU_DIM + 6 * len(self.clones) + 6 * list(self.map_tau).index(map_id)

    def kf_index(self, map_id: int, kf_id: int) -> int:
        return self.active_dim + 6 * list(self.keyframes).index((map_id, kf_id))

    def _chi2_gate(self, dof: int) -> float:
        if dof not in self._chi2_cache:
            self._chi2_cache[dof] = float(chi2.ppf(self.config.chi2_confidence, dof))
        return self._chi2_cache[dof]

    # -- initialization -------------------------------------------------------

    def set_pose(self, world_from_imu: RigidTransform, velocity, bg=None, ba=None):
        self.q_IL = world_from_imu.rotation.inverse()
        self.p = np.asarray(world_from_imu.translation, dtype=float).copy()
        self.v = np.asarray(velocity, dtype=float).copy()
        if bg is not None:
            self.bg = np.asarray(bg, dtype=float).copy()
        if ba is not None:
            self.ba = np.asarray(ba, dtype=float).copy()

    def set_imu_covariance(self, sigma_theta, sigma_v, sigma_p, sigma_bg, sigma_ba):
        diag = np.concatenate([np.full(3, sigma_theta ** 2), np.full(3, sigma_v ** 2),
                               np.full(3, sigma_p ** 2), np.full(3, sigma_bg ** 2),
                               np.full(3, sigma_ba ** 2)])
        self.P[:IMU_DIM, :IMU_DIM] = np.diag(diag)

    # -- pose readers -----------------------------------------------------------

    def world_from_imu(self) -> RigidTransform:
        return RigidTransform(self.q_IL.inverse(), self.p)

    def clone_pose(self, frame: int) -> RigidTransform:
        q, p = self.clones[frame]
        return RigidTransform(q.inverse(), p)

    def map_from_local(self, map_id: int) -> RigidTransform:
        q, p = self.map_tau[map_id]
        return RigidTransform(q, p)


# -- propagation ---------------------------------------------------------------


def propagate(state: FilterState, samples: list[ImuSample]) -> FilterState:
    """IMU mean and covariance propagation over a batch of samples.

    Mean: closed-form rotation with averaged rates, trapezoidal velocity and
    position.  Covariance: first-order Phi and additive noise, compounded
    per sample and applied to P once per batch.  Map transforms and nuisance
    keyframes are untouched by construction.
    """
    if len(samples) < 2:
        return state
    cfg = state.config
    phi_acc = np.eye(IMU_DIM)
    q_acc = np.zeros((IMU_DIM, IMU_DIM))
    t_prev = state.time
    for s0, s1 in zip(samples[:-1], samples[1:]):
        dt = s1.t - s0.t
        if dt <= 0 or s0.t < t_prev - 1e-12:
            raise FilterError(f"non-monotone IMU timestamps near t={s0.t}")
        t_prev = s0.t

        r_il = state.q_IL.as_matrix()
        omega = 0.5 * (s0.gyro + s1.gyro) - state.bg
        acc0 = s0.accel - state.ba
        acc1 = s1.accel - state.ba

        rot_inc = Rotation.from_rotvec(-omega * dt)
        q_next = rot_inc @ state.q_IL
        r_il_next = q_next.as_matrix()
        q_mid = Rotation.from_rotvec(-omega * (0.5 * dt)) @ state.q_IL
        # Simpson quadrature of the rotated specific force (midpoint rotation
        # is exact for piecewise-constant rates); needed to hold the 1e-5 m
        # round-trip budget at 200 Hz
        f_0 = r_il.T @ acc0 + GRAVITY
        f_mid = q_mid.as_matrix().T @ (0.5 * (acc0 + acc1)) + GRAVITY
        f_1 = r_il_next.T @ acc1 + GRAVITY
        v_next = state.v + dt / 6.0 * (f_0 + 4.0 * f_mid + f_1)
        p_next = state.p + state.v * dt + dt * dt / 6.0 * (f_0 + 2.0 * f_mid)

        e_mat = rot_inc.as_matrix()
        phi = np.eye(IMU_DIM)
        phi[_TH, _TH] = e_mat
        phi[_TH, _BG] = -dt * e_mat
        phi[_V, _TH] = -dt * r_il.T @ skew(acc0)
        phi[_V, _BA] = -dt * r_il.T
        phi[_P, _V] = dt * np.eye(3)
        phi[_P, _TH] = -0.5 * dt * dt * r_il.T @ skew(acc0)
        phi[_P, _BA] = -0.5 * dt * dt * r_il.T

        q_step = np.zeros((IMU_DIM, IMU_DIM))
        q_step[_TH, _TH] = (cfg.sigma_g * dt) ** 2 * np.eye(3)
        q_step[_V, _V] = (cfg.sigma_a * dt) ** 2 * np.eye(3)
        q_step[_BG, _BG] = cfg.sigma_wg ** 2 * np.eye(3)
        q_step[_BA, _BA] = cfg.sigma_wa ** 2 * np.eye(3)

        phi_acc = phi @ phi_acc
        q_acc = phi @ q_acc @ phi.T + q_step

        state.q_IL = q_next
        state.v = v_next
        state.p = p_next

    n = state.dim
    state.P[:IMU_DIM, :IMU_DIM] = (phi_acc @ state.P[:IMU_DIM, :IMU_DIM] @ phi_acc.T
                                   + q_acc)
    if n > IMU_DIM:
        state.P[:IMU_DIM, IMU_DIM:n] = phi_acc @ state.P[:IMU_DIM, IMU_DIM:n]
        state.P[IMU_DIM:n, :IMU_DIM] = state.P[:IMU_DIM, IMU_DIM:n].T
    state.P[:n, :n] = 0.5 * (state.P[:n, :n] + state.P[:n, :n].T)
    state.time = samples[-1].t
    return state


def clone_and_marginalize(state: FilterState, frame: int) -> FilterState:
    """Append a clone of the current pose; drop the oldest beyond the window."""
    d = state.dim
    insert_at = IMU_DIM + 6 * len(state.clones)  # end of the clone section
    jac = np.zeros((6, d))
    jac[0:3, _TH] = np.eye(3)
    jac[3:6, _P] = np.eye(3)
    cross = jac @ state.P
    corner = cross @ jac.T
    big = np.zeros((d + 6, d + 6))
    keep = np.r_[0:insert_at, insert_at + 6:d + 6]
    big[np.ix_(keep, keep)] = state.P
    big[insert_at:insert_at + 6][:, keep] = cross
    big[np.ix_(keep, np.arange(insert_at, insert_at + 6))] = cross.T
    big[insert_at:insert_at + 6, insert_at:insert_at + 6] = corner
    state.P = big
    state.clones[frame] = (state.q_IL, state.p.copy())

    while len(state.clones) > state.config.window_size:
        oldest = next(iter(state.clones))
        start = state.clone_index(oldest)
        del state.clones[oldest]
        keep = np.r_[0:start, start + 6:state.P.shape[0]]
        state.P = state.P[np.ix_(keep, keep)]
    return state


# -- corrections -------------------------------------------------------------


def _apply_active_correction(state: FilterState, dx: np.ndarray) -> None:
    state.q_IL = _small_rotation(dx[_TH]) @ state.q_IL
    state.v = state.v + dx[_V]
    state.p = state.p + dx[_P]
    state.bg = state.bg + dx[_BG]
    state.ba = state.ba + dx[_BA]
    for k, frame in enumerate(state.clones):
        base = IMU_DIM + 6 * k
        q, p = state.clones[frame]
        state.clones[frame] = (_small_rotation(dx[base:base + 3]) @ q,
                               p + dx[base + 3:base + 6])
    for k, map_id in enumerate(state.map_tau):
        base = IMU_DIM + 6 * len(state.clones) + 6 * k
        q, p = state.map_tau[map_id]
        state.map_tau[map_id] = (_small_rotation(dx[base:base + 3]) @ q,
                                 p + dx[base + 3:base + 6])


def _schmidt_update(state: FilterState, h_active: np.ndarray,
                    h_nuisance: np.ndarray, residual: np.ndarray,
                    noise: np.ndarray) -> None:
    """Schmidt-EKF step: gain on the active block only, nuisance frozen.

    ``noise`` is the (already projected) measurement covariance.  P_NN and
    the nuisance means are left untouched; cross covariance P_AN updated.
    """
    a = state.active_dim
    n = state.dim
    p_aa = state.P[:a, :a]
    p_an = state.P[:a, a:n]
    p_nn = state.P[a:n, a:n]
    u = p_aa @ h_active.T
    v = p_an @ h_nuisance.T if h_nuisance.size else np.zeros((a, 0))
    if h_nuisance.size:
        u = u + v
        s_mat = (h_active @ p_aa @ h_active.T
                 + h_active @ p_an @ h_nuisance.T
                 + h_nuisance @ p_an.T @ h_active.T
                 + h_nuisance @ p_nn @ h_nuisance.T + noise)
    else:
        s_mat = h_active @ u + noise
    s_mat = 0.5 * (s_mat + s_mat.T)
    try:
        k_gain = np.linalg.solve(s_mat, u.T).T
    except np.linalg.LinAlgError:
        k_gain = u @ np.linalg.pinv(s_mat)
    dx = k_gain @ residual
    _apply_active_correction(state, dx)
    state.P[:a, :a] = p_aa - k_gain @ u.T
    if n > a:
        w = h_active @ p_an
        if h_nuisance.size:
            w = w + h_nuisance @ p_nn
        state.P[:a, a:n] = p_an - k_gain @ w
        state.P[a:n, :a] = state.P[:a, a:n].T
    state.P[:a, :a] = 0.5 * (state.P[:a, :a] + state.P[:a, :a].T)


def _projection_jacobian(cam: CameraModel, p_c: np.ndarray) -> np.ndarray:
    x, y, z = p_c
    return np.array([[cam.fx / z, 0.0, -cam.fx * x / z ** 2],
                     [0.0, cam.fy / z, -cam.fy * y / z ** 2]])


def _normalized_jacobian(p_c: np.ndarray) -> np.ndarray:
    x, y, z = p_c
    return np.array([[1.0 / z, 0.0, -x / z ** 2],
                     [0.0, 1.0 / z, -y / z ** 2]])


def triangulate(world_from_cams: list[RigidTransform], pixels: list[np.ndarray],
                cams: list[CameraModel]):
    """Linear DLT triangulation followed by two Gauss-Newton steps."""
    rows = []
    rhs = []
    for wfc, pix, cam in zip(world_from_cams, pixels, cams):
        ray = wfc.rotation.rotate(cam.normalize(pix))
        ray = ray / np.linalg.norm(ray)
        basis = np.array([[-ray[1], ray[0], 0.0] if abs(ray[2]) > 0.9
                          else [0.0, -ray[2], ray[1]]])
        b1 = np.cross(np.array([0.0, 0.0, 1.0]) if abs(ray[2]) < 0.9
                      else np.array([1.0, 0.0, 0.0]), ray)
        b1 /= np.linalg.norm(b1)
        b2 = np.cross(ray, b1)
        for b in (b1, b2):
            rows.append(b)
            rhs.append(b @ wfc.translation)
    a_mat = np.array(rows)
    b_vec = np.array(rhs)
    try:
        point, res, rank, sv = np.linalg.lstsq(a_mat, b_vec, rcond=None)
    except np.linalg.LinAlgError:
        return None
    if rank < 3 or sv[-1] < 1e-6 * sv[0]:
        return None
    for _ in range(2):  # small GN polish on pixel residuals
        jac = []
        res_v = []
        for wfc, pix, cam in zip(world_from_cams, pixels, cams):
            cfw = wfc.inverse()
            p_c = cfw.apply(point)
            if p_c[2] < 1e-2:
                return None
            jac.append(_projection_jacobian(cam, p_c) @ cfw.rotation.as_matrix())
            res_v.append(pix - cam.project(p_c))
        jac = np.vstack(jac)
        res_v = np.concatenate(res_v)
        try:
            step, *_ = np.linalg.lstsq(jac, res_v, rcond=None)
        except np.linalg.LinAlgError:
            return None
        point = point + step
    return point


def update_local(state: FilterState, tracks: list[FeatureTrack]) -> FilterState:
    """MSCKF update from feature tracks over the sliding window.

    Features are triangulated from the current clone estimates, their
    position dependency removed by left null-space projection (asserted
    orthogonal), then a Schmidt-style update is applied with an empty
    nuisance Jacobian, so map keyframes stay frozen here too.
    """
    report = UpdateReport()
    cfg = state.config
    stacked_h = []
    stacked_r = []
    sigma = cfg.local_sigma_px
    a = state.active_dim

    for track in tracks[: cfg.max_tracks_per_update]:
        obs = [o for o in track.observations if o.frame in state.clones]
        if len(obs) < 2:
            report.skipped += 1
            continue
        poses = [state.clone_pose(o.frame) @ state.rig[o.camera_id].imu_from_camera
                 for o in obs]
        point = triangulate(poses, [o.pixel for o in obs],
                            [state.rig[o.camera_id] for o in obs])
        if point is None:
            report.skipped += 1
            continue
        rows_x = np.zeros((2 * len(obs), a))
        rows_f = np.zeros((2 * len(obs), 3))
        resid = np.zeros(2 * len(obs))
        ok = True
        for k, o in enumerate(obs):
            cam = state.rig[o.camera_id]
            q_clone, p_clone = state.clones[o.frame]
            r_il = q_clone.as_matrix()
            cam_from_imu = cam.imu_from_camera.inverse()
            r_ci = cam_from_imu.rotation.as_matrix()
            p_in_imu = r_il @ (point - p_clone)
            p_c = r_ci @ p_in_imu + cam_from_imu.translation
            if p_c[2] < 1e-2:
                ok = False
                break
            pj = _projection_jacobian(cam, p_c)
            base = state.clone_index(o.frame)
            rows_x[2 * k:2 * k + 2, base:base + 3] = pj @ r_ci @ skew(p_in_imu)
            rows_x[2 * k:2 * k + 2, base + 3:base + 6] = -pj @ r_ci @ r_il
            rows_f[2 * k:2 * k + 2] = pj @ r_ci @ r_il
            resid[2 * k:2 * k + 2] = o.pixel - cam.project(p_c)
        if not ok:
            report.skipped += 1
            continue
        # whiten (unit noise), then remove the landmark by left null-space
        # projection of the feature Jacobian
        rows_x = rows_x / sigma
        rows_f = rows_f / sigma
        resid = resid / sigma
        u_mat, _, _ = np.linalg.svd(rows_f, full_matrices=True)
        nullspace = u_mat[:, 3:]
        report.max_nullspace_residual = max(
            report.max_nullspace_residual,
            float(np.abs(nullspace.T @ rows_f).max()))
        h_proj = nullspace.T @ rows_x
        r_proj = nullspace.T @ resid
        s_mat = h_proj @ state.P[:a, :a] @ h_proj.T + np.eye(len(r_proj))
        gamma = float(r_proj @ np.linalg.solve(s_mat, r_proj))
        if gamma > state._chi2_gate(len(r_proj)):
            report.gated += 1
            continue
        stacked_h.append(h_proj)
        stacked_r.append(r_proj)
        report.used += 1

    if stacked_h:
        h_all = np.vstack(stacked_h)
        r_all = np.concatenate(stacked_r)
        report.rows = len(r_all)
        _schmidt_update(state, h_all, np.zeros((len(r_all), state.nuisance_dim)),
                        r_all, np.eye(len(r_all)))
    state.last_report = report
    return state


# -- map updates ----------------------------------------------------------------


def register_map(state: FilterState, bundle: MapBundle,
                 map_from_local: RigidTransform,
                 sigma_pos: float | None = None,
                 sigma_rot: float | None = None) -> FilterState:
    """Augment the state with a new map transform (and remember the bundle)."""
    if bundle.map_id in state.map_tau:
        raise FilterError(f"map {bundle.map_id} already registered")
    cfg = state.config
    sigma_pos = cfg.tau_sigma_pos if sigma_pos is None else sigma_pos
    sigma_rot = cfg.tau_sigma_rot if sigma_rot is None else sigma_rot
    insert_at = IMU_DIM + 6 * len(state.clones) + 6 * len(state.map_tau)
    d = state.dim
    new_p = np.insert(state.P, insert_at, np.zeros((6, d)), axis=0)
    new_p = np.insert(new_p, insert_at, np.zeros((6, d + 6)), axis=1)
    block = np.diag([sigma_rot ** 2] * 3 + [sigma_pos ** 2] * 3)
    new_p[insert_at:insert_at + 6, insert_at:insert_at + 6] = block
    state.P = new_p
    state.map_tau[bundle.map_id] = (map_from_local.rotation,
                                    map_from_local.translation.copy())
    state.bundles[bundle.map_id] = bundle
    return state


def ensure_keyframe(state: FilterState, map_id: int, kf_id: int) -> bool:
    """Lift a map keyframe into the nuisance block (no-op when present).

    Returns False when the keyframe cannot be lifted (zero-sigma mode or the
    nuisance budget is exhausted); callers then treat its pose as constant.
    """
    cfg = state.config
    if cfg.kf_sigma_pos == 0.0 and cfg.kf_sigma_rot == 0.0:
        return False
    key = (map_id, kf_id)
    if key in state.keyframes:
        return True
    if len(state.keyframes) >= cfg.max_nuisance_keyframes:
        return False
    pose = state.bundles[map_id].keyframes[kf_id].pose
    d = state.dim
    new_p = np.zeros((d + 6, d + 6))
    new_p[:d, :d] = state.P
    new_p[d:, d:] = np.diag([cfg.kf_sigma_rot ** 2] * 3 + [cfg.kf_sigma_pos ** 2] * 3)
    state.P = new_p
    state.keyframes[key] = (pose.rotation, pose.translation.copy())
    return True


def _map_rows_for_landmark(state: FilterState, obs: MapObservation,
                           items: list[MapMatchItem], point_map: np.ndarray,
                           lifted: dict[tuple[int, int], bool]):
    """Stacked rows (active, nuisance, feature, residual, noise) for one landmark."""
    cfg = state.config
    a = state.active_dim
    n_dim = state.nuisance_dim
    map_id = obs.map_id
    q_tau, p_tau = state.map_tau[map_id]
    r_gl = q_tau.as_matrix()
    r_il = state.q_IL.as_matrix()

    rows_a, rows_n, rows_f, resid, sigmas = [], [], [], [], []
    tau_base = state.tau_index(map_id)

    # current-camera rows (pixels)
    point_local = r_gl.T @ (point_map - p_tau)
    for item in items:
        cam = state.rig[item.camera_id]
        cam_from_imu = cam.imu_from_camera.inverse()
        r_ci = cam_from_imu.rotation.as_matrix()
        p_in_imu = r_il @ (point_local - state.p)
        p_c = r_ci @ p_in_imu + cam_from_imu.translation
        if p_c[2] < 1e-2:
            continue
        pj = _projection_jacobian(cam, p_c)
        d_imu = pj @ r_ci
        row_a = np.zeros(a)
        row_n = np.zeros(n_dim)
        mat_th = d_imu @ skew(p_in_imu)
        mat_p = -d_imu @ r_il
        d_local = d_imu @ r_il  # sensitivity to the point in {L}
        mat_tau_th = d_local @ (-r_gl.T @ skew(point_map - p_tau))
        mat_tau_p = d_local @ (-r_gl.T)
        d_f = d_local @ r_gl.T
        row_block = np.zeros((2, a))
        row_block[:, 0:3] = mat_th
        row_block[:, 6:9] = mat_p
        row_block[:, tau_base:tau_base + 3] = mat_tau_th
        row_block[:, tau_base + 3:tau_base + 6] = mat_tau_p
        rows_a.append(row_block)
        rows_n.append(np.zeros((2, n_dim)))
        rows_f.append(d_f)
        resid.extend(item.pixel - cam.project(p_c))
        sigmas.extend([cfg.map_sigma_px * cfg.map_inflation] * 2)

    # intra-map keyframe anchor rows (normalized coordinates)
    bundle = state.bundles[map_id]
    lm_id = items[0].landmark_id
    for kf_id in obs.anchors.get(lm_id, ())[: cfg.anchors_per_landmark]:
        kf_data = bundle.keyframes[kf_id]
        use_nuisance = lifted.get((map_id, kf_id), False)
        if use_nuisance:
            q_kf, p_kf = state.keyframes[(map_id, kf_id)]
        else:
            q_kf, p_kf = kf_data.pose.rotation, kf_data.pose.translation
        r_gkf = q_kf.as_matrix()
        stored = bundle.landmarks[lm_id].position
        p_k = r_gkf.T @ (point_map - p_kf)
        z_meas_p = r_gkf.T @ (stored - p_kf)
        if p_k[2] < 1e-2 or z_meas_p[2] < 1e-2:
            continue
        nj = _normalized_jacobian(p_k)
        row_block = np.zeros((2, a))
        row_n = np.zeros((2, n_dim))
        d_f = nj @ r_gkf.T
        if use_nuisance:
            base = state.kf_index(map_id, kf_id) - a
            row_n[:, base:base + 3] = nj @ (-r_gkf.T @ skew(point_map - p_kf))
            row_n[:, base + 3:base + 6] = nj @ (-r_gkf.T)
        rows_a.append(row_block)
        rows_n.append(row_n)
        rows_f.append(d_f)
        cam0 = next(iter(state.rig.values()))
        f_ref = 0.5 * (cam0.fx + cam0.fy)
        resid.extend(z_meas_p[:2] / z_meas_p[2] - p_k[:2] / p_k[2])
        sigmas.extend([cfg.map_sigma_px * cfg.map_inflation / f_ref] * 2)

    # cross-map keyframe rows (normalized coordinates)
    for x_lm, other_map, other_lm in obs.cross:
        if x_lm != lm_id or other_map not in state.map_tau:
            continue
        other_bundle = state.bundles[other_map]
        other_rec = other_bundle.landmarks.get(other_lm)
        if other_rec is None:
            continue
        q_tau_s, p_tau_s = state.map_tau[other_map]
        r_sl = q_tau_s.as_matrix()
        tau_s_base = state.tau_index(other_map)
        for kf_id in other_rec.observing_keyframes[: cfg.cross_anchors_per_landmark]:
            use_nuisance = lifted.get((other_map, kf_id), False)
            if use_nuisance:
                q_kf, p_kf = state.keyframes[(other_map, kf_id)]
            else:
                kf_pose = other_bundle.keyframes[kf_id].pose
                q_kf, p_kf = kf_pose.rotation, kf_pose.translation
            r_skf = q_kf.as_matrix()
            v_s = r_sl @ point_local + p_tau_s
            p_k = r_skf.T @ (v_s - p_kf)
            z_meas_p = r_skf.T @ (other_rec.position - p_kf)
            if p_k[2] < 1e-2 or z_meas_p[2] < 1e-2:
                continue
            nj = _normalized_jacobian(p_k)
            d_vs = nj @ r_skf.T
            row_block = np.zeros((2, a))
            row_n = np.zeros((2, n_dim))
            # through tau_s
            row_block[:, tau_s_base:tau_s_base + 3] = d_vs @ skew(r_sl @ point_local)
            row_block[:, tau_s_base + 3:tau_s_base + 6] = d_vs
            # through tau_k via the local-frame point
            d_local = d_vs @ r_sl
            row_block[:, tau_base:tau_base + 3] = \
                d_local @ (-r_gl.T @ skew(point_map - p_tau))
            row_block[:, tau_base + 3:tau_base + 6] = d_local @ (-r_gl.T)
            d_f = d_local @ r_gl.T
            if use_nuisance:
                base = state.kf_index(other_map, kf_id) - a
                row_n[:, base:base + 3] = nj @ (-r_skf.T @ skew(v_s - p_kf))
                row_n[:, base + 3:base + 6] = nj @ (-r_skf.T)
            rows_a.append(row_block)
            rows_n.append(row_n)
            rows_f.append(d_f)
            cam0 = next(iter(state.rig.values()))
            f_ref = 0.5 * (cam0.fx + cam0.fy)
            resid.extend(z_meas_p[:2] / z_meas_p[2] - p_k[:2] / p_k[2])
            sigmas.extend([cfg.map_sigma_px * cfg.map_inflation / f_ref] * 2)

    if not rows_a:
        return None
    return (np.vstack(rows_a), np.vstack(rows_n), np.vstack(rows_f),
            np.array(resid), np.array(sigmas))


def update_map(state: FilterState, obs: MapObservation) -> FilterState:
    """Schmidt-EKF update from filtered map matches (Eq.-13/14/15 structure).

    Landmark positions are never states: each landmark's rows are projected
    onto the left null space of its position Jacobian.  Nuisance keyframe
    means and their covariance block are bit-identical before and after.
    """
    if obs.map_id not in state.map_tau:
        raise FilterError(f"map {obs.map_id} is not registered")
    cfg = state.config
    report = UpdateReport()

    # lift anchors first (state augmentation, not part of the update proper)
    lifted: dict[tuple[int, int], bool] = {}
    for lm_id, kf_ids in obs.anchors.items():
        for kf_id in kf_ids[: cfg.anchors_per_landmark]:
            lifted[(obs.map_id, kf_id)] = ensure_keyframe(state, obs.map_id, kf_id)
    for _, other_map, other_lm in obs.cross:
        if other_map not in state.map_tau:
            continue
        rec = state.bundles[other_map].landmarks.get(other_lm)
        if rec is None:
            continue
        for kf_id in rec.observing_keyframes[: cfg.cross_anchors_per_landmark]:
            lifted[(other_map, kf_id)] = ensure_keyframe(state, other_map, kf_id)

    a = state.active_dim
    n_dim = state.nuisance_dim
    by_landmark: dict[int, list[MapMatchItem]] = {}
    for item in obs.matches:
        by_landmark.setdefault(item.landmark_id, []).append(item)

    stacked_a, stacked_n, stacked_r, stacked_sig = [], [], [], []
    for lm_id, items in sorted(by_landmark.items()):
        bundle = state.bundles[obs.map_id]
        rec = bundle.landmarks.get(lm_id)
        if rec is None:
            report.skipped += 1
            continue
        built = _map_rows_for_landmark(state, obs, items, rec.position, lifted)
        if built is None:
            report.skipped += 1
            continue
        rows_a, rows_n, rows_f, resid, sigmas = built
        if len(resid) <= 3:
            report.skipped += 1
            continue
        # whiten all rows to unit noise: the null-space split is only
        # information-preserving on whitened Jacobians, and the projected
        # measurement covariance becomes exactly identity
        w = 1.0 / np.asarray(sigmas)
        rows_a = rows_a * w[:, None]
        rows_n = rows_n * w[:, None]
        rows_f = rows_f * w[:, None]
        resid = resid * w
        u_mat, _, _ = np.linalg.svd(rows_f, full_matrices=True)
        nullspace = u_mat[:, 3:]
        report.max_nullspace_residual = max(
            report.max_nullspace_residual, float(np.abs(nullspace.T @ rows_f).max()))
        h_a = nullspace.T @ rows_a
        h_n = nullspace.T @ rows_n
        r_proj = nullspace.T @ resid
        p_full = state.P[:state.dim, :state.dim]
        h_full = np.hstack([h_a, h_n])
        s_mat = h_full @ p_full @ h_full.T + np.eye(len(r_proj))
        gamma = float(r_proj @ np.linalg.solve(s_mat, r_proj))
        if gamma > state._chi2_gate(len(r_proj)):
            report.gated += 1
            continue
        stacked_a.append(h_a)
        stacked_n.append(h_n)
        stacked_r.append(r_proj)
        report.used += 1

    if stacked_a:
        h_a = np.vstack(stacked_a)
        h_n = np.vstack(stacked_n)
        r_all = np.concatenate(stacked_r)
        report.rows = len(r_all)
        _schmidt_update(state, h_a, h_n, r_all, np.eye(len(r_all)))
    state.last_report = report
    return state


def current_pose_in_map(state: FilterState, map_id: int) -> RigidTransform:
    """Causal output: map_from_imu = map_from_local * local_from_imu."""
    if map_id not in state.map_tau:
        raise FilterError(f"map {map_id} is not registered")
    return state.map_from_local(map_id) @ state.world_from_imu()
