"""Deterministic, globally optimal 4DoF initialization.

Pipeline: build translation-invariant measurements (TIMs) from all
correspondence pairs, exhaustively vote yaw over a discretized grid (globally
optimal over the grid by construction, with per-constraint slack covering the
cell width so no true inlier can be missed), then solve the 3DoF translation
by exact maximum-clique search over a pairwise compatibility graph, and
finally polish with nonlinear least squares on the surviving inliers.

Every stage is a pure deterministic function of its inputs: repeated calls
return bit-identical results, which is the property that distinguishes this
module from the RANSAC path.

Geometry of a TIM, for rays through the origin (the single-camera case):
a pair (i, j) is consistent with yaw alpha iff the rotated baseline
``R(alpha) @ (F_i - F_j)`` is coplanar with the two rays, i.e.

    d(alpha) = (r_i x r_j) . (R(alpha) @ (F_i - F_j)) = 0

which expands to ``d1 sin(alpha) + d2 cos(alpha) + d3`` with coefficients
from the correspondence geometry alone.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from mapvins.cameras import CameraModel
from mapvins.geometry import Rotation, YawPose, wrap_angle
from mapvins.sim import Correspondence
from mapvins.solvers import (
    MatchingFrame,
    align_correspondences,
    refine_yaw_pose,
)


class InitializationError(RuntimeError):
    """Initialization could not reach the configured consensus floor."""


@dataclass(frozen=True)
class TimConstraint:
    """One translation-invariant yaw constraint from a correspondence pair."""

    i: int
    j: int
    d1: float
    d2: float
    d3: float
    bound: float

    def value(self, alpha: float) -> float:
        return self.d1 * math.sin(alpha) + self.d2 * math.cos(alpha) + self.d3


@dataclass
class InitConfig:
    grid_step: float = math.radians(0.25)
    refine_factor: int = 50
    sigma_px: float = 1.0
    tim_bound_scale: float = 3.0
    translation_bound_px: float | None = None   # default: 3 sigma + floor
    min_consensus: int = 1
    polish: bool = True

    def translation_bound(self) -> float:
        if self.translation_bound_px is not None:
            return self.translation_bound_px
        return 3.0 * self.sigma_px + 1e-6


@dataclass(frozen=True)
class InitResult:
    pose: YawPose                      # consensus-stage estimate
    refined_pose: YawPose              # after nonlinear polish
    yaw_inliers: tuple[int, ...]       # correspondence indices kept by yaw voting
    translation_inliers: tuple[int, ...]  # subset surviving the clique stage
    consensus: int
    wall_time: float


def _tim_arrays(frame: MatchingFrame, sigma_px: float, bound_scale: float):
    """Vectorized TIM coefficients and noise bounds for all pairs."""
    matches = frame.matches
    n = len(matches)
    rays = np.array([m.ray for m in matches]).reshape(-1, 3)
    points = np.array([m.point for m in matches]).reshape(-1, 3)
    # per-match ray sensitivity to pixel noise (conservative spectral bound)
    jac = np.empty(n)
    for k, m in enumerate(matches):
        cam = frame.cameras[m.camera_id]
        v = cam.normalize(m.pixel)
        jac[k] = 1.0 / (min(cam.fx, cam.fy) * np.linalg.norm(v))

    ii, jj = np.triu_indices(n, k=1)
    m_vec = np.cross(rays[ii], rays[jj])
    delta = points[ii] - points[jj]
    a_vec = np.column_stack([delta[:, 0], delta[:, 1], np.zeros(len(ii))])
    b_vec = np.column_stack([-delta[:, 1], delta[:, 0], np.zeros(len(ii))])
    c_vec = np.column_stack([np.zeros(len(ii)), np.zeros(len(ii)), delta[:, 2]])
    d1 = np.einsum("kj,kj->k", m_vec, b_vec)
    d2 = np.einsum("kj,kj->k", m_vec, a_vec)
    d3 = np.einsum("kj,kj->k", m_vec, c_vec)

    # d depends on each ray through (other_ray x w(alpha)); bound the dual
    # vector norm over alpha by |r x C| + horizontal radius, then combine the
    # two independent pixel noises in quadrature
    rho = np.linalg.norm(delta[:, :2], axis=1)
    g_i = np.linalg.norm(np.cross(rays[jj], c_vec), axis=1) + rho
    g_j = np.linalg.norm(np.cross(rays[ii], c_vec), axis=1) + rho
    sensitivity = np.sqrt((g_i * jac[ii]) ** 2 + (g_j * jac[jj]) ** 2)
    floor = 1e-9 * (1.0 + np.linalg.norm(delta, axis=1))
    bounds = bound_scale * sigma_px * math.sqrt(2.0) * sensitivity + floor

    sign = np.where(d2 != 0.0, np.sign(d2),
                    np.where(d1 != 0.0, np.sign(d1), np.sign(d3)))
    sign = np.where(sign == 0.0, 1.0, sign)
    return ii, jj, d1 * sign, d2 * sign, d3 * sign, bounds


def build_tims(frame: MatchingFrame, sigma_px: float = 1.0,
               bound_scale: float = 3.0) -> list[TimConstraint]:
    """All K(K-1)/2 pairwise yaw constraints with propagated noise bounds."""
    if len(frame.matches) < 2:
        raise InitializationError("need at least 2 correspondences")
    ii, jj, d1, d2, d3, bounds = _tim_arrays(frame, sigma_px, bound_scale)
    return [TimConstraint(int(a), int(b), float(x1), float(x2), float(x3), float(nb))
            for a, b, x1, x2, x3, nb in zip(ii, jj, d1, d2, d3, bounds)]


def _grid_vote(d1, d2, d3, bounds, centers, half_width):
    """Count satisfied constraints per grid cell, padded by the cell width.

    A constraint votes for a cell when ``|d(center)| <= bound + L * half``
    with L the Lipschitz constant of d; this guarantees a constraint whose
    feasible yaw interval intersects the cell is never missed.
    """
    lips = np.hypot(d1, d2)
    slack = bounds + lips * half_width
    counts = np.zeros(len(centers), dtype=int)
    chunk = 256
    for lo in range(0, len(centers), chunk):
        cs = centers[lo:lo + chunk]
        vals = (np.outer(d1, np.sin(cs)) + np.outer(d2, np.cos(cs))) + d3[:, None]
        counts[lo:lo + chunk] = (np.abs(vals) <= slack[:, None]).sum(axis=0)
    return counts


def _best_cell(centers, counts):
    # maximize count; ties toward the smallest |alpha|
    order = np.lexsort((centers, np.abs(centers), -counts))
    return float(centers[order[0]]), int(counts[order[0]])


def vote_yaw(tims: list[TimConstraint], step: float,
             refine_factor: int = 50) -> tuple[float, int]:
    """Exhaustive discretized yaw search over [-pi, pi]; grid-global optimum.

    The count at a coarse cell, padded by the cell width, upper-bounds the
    count of every fine grid point inside it, so descending over coarse cells
    and refining until no remaining bound can beat the best fine count yields
    the exact optimum of the fine grid (step / refine_factor) while touching
    only a handful of cells.  Deterministic; ties toward the smallest |alpha|.
    """
    if step <= 0:
        raise ValueError("grid step must be positive")
    if not tims:
        raise InitializationError("empty constraint set")
    d1 = np.array([t.d1 for t in tims])
    d2 = np.array([t.d2 for t in tims])
    d3 = np.array([t.d3 for t in tims])
    bounds = np.array([t.bound for t in tims])

    n_cells = max(8, int(math.ceil(2.0 * math.pi / step)))
    h = 2.0 * math.pi / n_cells
    fine = h / refine_factor
    centers = -math.pi + (np.arange(n_cells) + 0.5) * h
    # pad by the fine half-width too so the bound covers fine points exactly
    upper = _grid_vote(d1, d2, d3, bounds, centers, (h + fine) / 2.0)

    order = np.lexsort((centers, np.abs(centers), -upper))
    best_alpha, best_count = 0.0, -1
    for cell in order:
        if upper[cell] < best_count or (upper[cell] == best_count and best_count >= 0):
            break  # no remaining cell can beat (or improve the tie on) best
        offsets = np.arange(-(refine_factor // 2), refine_factor // 2 + 1) * fine
        fine_centers = np.array([wrap_angle(centers[cell] + o) for o in offsets])
        fine_counts = _grid_vote(d1, d2, d3, bounds, fine_centers, fine / 2.0)
        alpha_c, count_c = _best_cell(fine_centers, fine_counts)
        if count_c > best_count or (count_c == best_count
                                    and (abs(alpha_c), alpha_c)
                                    < (abs(best_alpha), best_alpha)):
            best_alpha, best_count = alpha_c, count_c
    return best_alpha, best_count


def _least_squares_yaw(tims, alpha0: float) -> float:
    """Newton refinement of sum d(alpha)^2 over the given constraints."""
    d1 = np.array([t.d1 for t in tims])
    d2 = np.array([t.d2 for t in tims])
    d3 = np.array([t.d3 for t in tims])
    alpha = alpha0
    for _ in range(8):
        s, c = math.sin(alpha), math.cos(alpha)
        r = d1 * s + d2 * c + d3
        dr = d1 * c - d2 * s
        g = 2.0 * float(r @ dr)
        h = 2.0 * float(dr @ dr - r @ (d1 * s + d2 * c))
        if h <= 0:
            break
        step = g / h
        alpha = wrap_angle(alpha - step)
        if abs(step) < 1e-15:
            break
    return alpha


def _member_rows(frame: MatchingFrame, idx, alpha: float):
    """Per-member linear rows at fixed yaw: rows @ t = rhs (ray space)."""
    from mapvins.solvers import match_row_arrays

    cos_c, sin_c, bas, con = match_row_arrays([frame.matches[k] for k in idx])
    rhs = -(cos_c * math.cos(alpha) + sin_c * math.sin(alpha) + con)  # (m, 2)
    return bas, rhs


def _provisional_depths(frame: MatchingFrame, idx, alpha: float,
                        translation) -> np.ndarray:
    """Depth of each match along its camera's optical axis at a trial pose."""
    rot = np.array([[math.cos(alpha), -math.sin(alpha), 0.0],
                    [math.sin(alpha), math.cos(alpha), 0.0],
                    [0.0, 0.0, 1.0]])
    depths = np.empty(len(idx))
    for k, gi in enumerate(idx):
        m = frame.matches[gi]
        cfs = frame.cam_from_solving[m.camera_id]
        p_cam = cfs.rotation.as_matrix() @ (rot @ m.point + translation) \
            + cfs.translation
        depths[k] = max(p_cam[2], 0.5)
    return depths


def _pair_feasibility(frame: MatchingFrame, idx, alpha: float,
                      depths: np.ndarray, bounds_px: np.ndarray,
                      slack_px: float, scale: float = 1.5):
    """Pairwise translation compatibility via weighted least squares.

    Each member's two ray-space rows are scaled by f/depth so residuals are
    in pixel units; a pair is compatible when the residual of the joint
    weighted least-squares translation stays within the stacked pixel
    bounds.  If a common translation satisfying both cones exists, the
    minimum weighted residual cannot exceed sqrt(b_i^2 + b_j^2) up to
    perspective linearization error, which ``scale`` and ``slack_px`` cover;
    this keeps true inlier pairs adjacent (recall safety).  Near-parallel
    (ill-conditioned) pairs come out with small residuals and are adjacent,
    which matches the geometry: their feasible translation set is huge.
    """
    bas, rhs = _member_rows(frame, idx, alpha)
    kappa = np.empty(len(idx))
    for k, gi in enumerate(idx):
        cam = frame.cameras[frame.matches[gi].camera_id]
        kappa[k] = 0.5 * (cam.fx + cam.fy) / depths[k]
    w_rows = bas * kappa[:, None, None]
    w_rhs = rhs * kappa[:, None]

    m = len(idx)
    ii, jj = np.triu_indices(m, k=1)
    rows = np.concatenate([w_rows[ii], w_rows[jj]], axis=1)   # (p, 4, 3)
    rr = np.concatenate([w_rhs[ii], w_rhs[jj]], axis=1)       # (p, 4)
    ata = np.einsum("pki,pkj->pij", rows, rows) + 1e-12 * np.eye(3)
    atb = np.einsum("pki,pk->pi", rows, rr)
    ts = np.linalg.solve(ata, atb[..., None])[..., 0]
    resid = np.einsum("pki,pi->pk", rows, ts) - rr
    rss = np.linalg.norm(resid, axis=1)
    limit = scale * np.hypot(bounds_px[ii], bounds_px[jj]) + slack_px
    return ii, jj, rss <= limit


def compatibility_graph(frame: MatchingFrame, idx, alpha: float,
                        depths: np.ndarray, bounds_px: np.ndarray,
                        slack_px: float) -> np.ndarray:
    """Boolean adjacency over ``idx`` for the translation consensus stage."""
    m = len(idx)
    adjacency = np.zeros((m, m), dtype=bool)
    if m < 2:
        return adjacency
    ii, jj, ok = _pair_feasibility(frame, idx, alpha, depths, bounds_px, slack_px)
    adjacency[ii[ok], jj[ok]] = True
    adjacency |= adjacency.T
    return adjacency


def max_cliques(adjacency: np.ndarray, cap: int = 512) -> list[list[int]]:
    """All maximum cliques (up to ``cap`` ties) via branch and bound.

    Greedy-coloring bounds prune the search; ties at the maximum size are
    collected so the caller can break them on model quality.  Deterministic:
    vertices are processed in a fixed degeneracy-style order.
    """
    n = len(adjacency)
    if n == 0:
        return [[]]
    adj = [set(np.flatnonzero(adjacency[v])) - {v} for v in range(n)]
    order = sorted(range(n), key=lambda v: (-len(adj[v]), v))
    best_size = 0
    found: list[list[int]] = []

    def greedy_color(cands: list[int]) -> dict[int, int]:
        colors: list[set[int]] = []
        assigned = {}
        for v in cands:
            for ci, cls in enumerate(colors):
                if not (adj[v] & cls):
                    cls.add(v)
                    assigned[v] = ci + 1
                    break
            else:
                colors.append({v})
                assigned[v] = len(colors)
        return assigned

    def expand(clique: list[int], cands: list[int]):
        nonlocal best_size, found
        if not cands:
            if len(clique) > best_size:
                best_size = len(clique)
                found = [sorted(clique)]
            elif len(clique) == best_size and len(found) < cap:
                found.append(sorted(clique))
            return
        color_of = greedy_color(cands)
        cands = sorted(cands, key=lambda v: (color_of[v], v))
        while cands:
            v = cands[-1]
            reach = len(clique) + color_of[v]
            if reach < best_size or (reach == best_size and len(found) >= cap):
                return
            cands = cands[:-1]
            expand(clique + [v], [u for u in cands if u in adj[v]])

    expand([], order)
    return found


def max_clique(adjacency: np.ndarray) -> list[int]:
    """One exact maximum clique (first tie in deterministic search order)."""
    return max_cliques(adjacency, cap=1)[0]


def _clique_translation(frame: MatchingFrame, idx, clique_local, alpha: float,
                        depths: np.ndarray) -> np.ndarray:
    """Pixel-weighted least-squares translation over clique members."""
    bas, rhs = _member_rows(frame, idx, alpha)
    kappa = np.empty(len(idx))
    for k, gi in enumerate(idx):
        cam = frame.cameras[frame.matches[gi].camera_id]
        kappa[k] = 0.5 * (cam.fx + cam.fy) / depths[k]
    sel = np.asarray(clique_local, dtype=int)
    rows = (bas[sel] * kappa[sel, None, None]).reshape(-1, 3)
    rr = (rhs[sel] * kappa[sel, None]).ravel()
    t_hat, *_ = np.linalg.lstsq(rows, rr, rcond=None)
    return t_hat


def solve_translation(frame: MatchingFrame, indices, alpha: float,
                      bound_px: float, slack_px: float = 0.0,
                      depths: np.ndarray | None = None
                      ) -> tuple[np.ndarray, list[int]]:
    """Consensus translation at fixed yaw via exact maximum-clique search.

    Two correspondences are adjacent iff a common translation can satisfy
    both of their reprojection bounds (see :func:`_pair_feasibility`); the
    returned inlier set is a maximum clique of that graph, and the
    translation is the weighted least-squares fit over the clique.
    ``depths`` weight residuals into pixel units; when absent, a provisional
    translation (coordinate-wise median of well-conditioned pair solutions)
    supplies them.
    """
    idx = list(indices)
    if not idx:
        raise InitializationError("empty correspondence set for translation")
    bounds_px = np.full(len(idx), bound_px)
    if len(idx) == 1:
        bas, rhs = _member_rows(frame, idx, alpha)
        t, *_ = np.linalg.lstsq(bas[0], rhs[0], rcond=None)
        return t, [idx[0]]

    if depths is None:
        depths = _median_pair_depths(frame, idx, alpha)
    adjacency = compatibility_graph(frame, idx, alpha, depths, bounds_px, slack_px)
    candidates = max_cliques(adjacency)
    best = None  # (rss, members, translation); ties on fit quality
    for clique_local in candidates:
        if not clique_local:
            clique_local = [0]
        t_fit = _clique_translation(frame, idx, clique_local, alpha, depths)
        rss = _clique_residual(frame, idx, clique_local, alpha, depths, t_fit)
        key = (rss, tuple(clique_local))
        if best is None or key < best[0]:
            best = (key, clique_local, t_fit)
    _, clique_local, t_hat = best
    return t_hat, [idx[k] for k in clique_local]


def _clique_residual(frame: MatchingFrame, idx, clique_local, alpha: float,
                     depths: np.ndarray, t_fit: np.ndarray) -> float:
    bas, rhs = _member_rows(frame, idx, alpha)
    kappa = np.empty(len(idx))
    for k, gi in enumerate(idx):
        cam = frame.cameras[frame.matches[gi].camera_id]
        kappa[k] = 0.5 * (cam.fx + cam.fy) / depths[k]
    sel = np.asarray(clique_local, dtype=int)
    resid = (np.einsum("mki,i->mk", bas[sel], t_fit) - rhs[sel]) * kappa[sel, None]
    return float(np.linalg.norm(resid))


def _median_pair_depths(frame: MatchingFrame, idx, alpha: float) -> np.ndarray:
    """Provisional depths from the median of well-conditioned pair solves."""
    bas, rhs = _member_rows(frame, idx, alpha)
    m = len(idx)
    ii, jj = np.triu_indices(m, k=1)
    rows = np.concatenate([bas[ii], bas[jj]], axis=1)
    rr = np.concatenate([rhs[ii], rhs[jj]], axis=1)
    ata = np.einsum("pki,pkj->pij", rows, rows)
    atb = np.einsum("pki,pk->pi", rows, rr)
    eig = np.linalg.eigvalsh(ata)
    good = eig[:, 0] > 1e-4 * np.clip(eig[:, -1], 1e-12, None)
    if good.any():
        ts = np.linalg.solve(ata[good] + 1e-12 * np.eye(3), atb[good][..., None])[..., 0]
        t_prov = np.median(ts, axis=0)
    else:
        t_prov = np.zeros(3)
    return _provisional_depths(frame, idx, alpha, t_prov)


def initialize_frame(frame: MatchingFrame, config: InitConfig | None = None) -> InitResult:
    """Run the full deterministic pipeline on prepared matches."""
    config = config or InitConfig()
    t0 = time.perf_counter()
    if len(frame.matches) < 2:
        raise InitializationError("need at least 2 correspondences")
    tims = build_tims(frame, config.sigma_px, config.tim_bound_scale)
    alpha_fine, consensus = vote_yaw(tims, config.grid_step, config.refine_factor)
    if consensus < config.min_consensus:
        raise InitializationError(
            f"yaw consensus {consensus} below floor {config.min_consensus}")

    fine_half = config.grid_step / config.refine_factor / 2.0
    retained = [t for t in tims
                if abs(t.value(alpha_fine)) <= t.bound + math.hypot(t.d1, t.d2) * fine_half]
    alpha_ls = _least_squares_yaw(retained, alpha_fine) if retained else alpha_fine
    kept_idx = sorted({t.i for t in retained} | {t.j for t in retained})
    if not kept_idx:
        kept_idx = list(range(len(frame.matches)))

    # round 1: generous slack absorbs the residual yaw-estimate error, the
    # polish on the resulting clique then pins yaw accurately
    bound = config.translation_bound()
    t_1, clique_1 = solve_translation(frame, kept_idx, alpha_ls, bound,
                                      slack_px=3.0 * config.sigma_px)
    alpha_2, t_2 = alpha_ls, t_1
    if config.polish and len(clique_1) >= 2:
        mid = refine_yaw_pose(frame, clique_1, alpha_ls, t_1)
        alpha_2, t_2 = mid.yaw, mid.translation
    # round 2: depths from the polished pose make the pixel weighting tight
    depths = _provisional_depths(frame, kept_idx, alpha_2, t_2)
    t_hat, clique = solve_translation(frame, kept_idx, alpha_2, bound,
                                      slack_px=1.0 * config.sigma_px,
                                      depths=depths)
    pose = YawPose(alpha_2, t_hat)
    refined = pose
    if config.polish and len(clique) >= 2:
        refined = refine_yaw_pose(frame, clique, pose.yaw, pose.translation)
    return InitResult(pose, refined, tuple(kept_idx), tuple(clique),
                      consensus, time.perf_counter() - t0)


def initialize(corrs: list[Correspondence], config: InitConfig | None = None,
               rig: list[CameraModel] | None = None,
               body_attitude: Rotation | None = None,
               reference_camera: int = 0) -> InitResult:
    """Deterministic 4DoF initialization from raw correspondences.

    ``rig``/``body_attitude`` lift pixels into the gravity-aligned frame, as
    in :func:`mapvins.solvers.ransac_pose`.
    """
    if rig is None or body_attitude is None:
        raise ValueError("rig and body_attitude are required to align bearings")
    frame = align_correspondences(corrs, rig, body_attitude, reference_camera)
    return initialize_frame(frame, config)
