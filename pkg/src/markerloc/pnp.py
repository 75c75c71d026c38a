"""Camera pose from 2D-3D correspondences.

Linear initialisation (full DLT for general 3D point sets, plane-induced
homography for coplanar ones), Levenberg-Marquardt refinement of the
reprojection error, and a RANSAC wrapper.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (ConsensusFailure, DegenerateGeometry, NonPositiveDepth,
                     NumericalFailure)
from .geometry import (DEPTH_EPS, CameraIntrinsics, RigidTransform,
                       extrinsics_to_camera_pose, nearest_rotation, project_points,
                       so3_exp)

COPLANAR_TOL = 1e-9
COLLINEAR_TOL = 1e-9
MAX_DAMPING = 1e16


@dataclass(frozen=True)
class Correspondence:
    world: tuple[float, float, float]
    image: tuple[float, float]
    marker_id: int = -1
    corner_index: int = 0

    def __post_init__(self):
        if self.corner_index not in (0, 1, 2, 3):
            raise ValueError("corner_index must be in 0..3")


@dataclass(frozen=True, eq=False)
class Correspondences:
    """Column-oriented batch of correspondences; what the solvers consume."""

    world: np.ndarray
    image: np.ndarray
    marker_ids: np.ndarray = None
    corner_indices: np.ndarray = None

    def __post_init__(self):
        world = np.asarray(self.world, dtype=float).reshape(-1, 3)
        image = np.asarray(self.image, dtype=float).reshape(-1, 2)
        if len(world) != len(image):
            raise ValueError("world and image arrays differ in length")
        n = len(world)
        ids = (np.full(n, -1, dtype=int) if self.marker_ids is None
               else np.asarray(self.marker_ids, dtype=int).reshape(n))
        corners = (np.arange(n, dtype=int) % 4 if self.corner_indices is None
                   else np.asarray(self.corner_indices, dtype=int).reshape(n))
        if np.any((corners < 0) | (corners > 3)):
            raise ValueError("corner indices must be in 0..3")
        object.__setattr__(self, "world", world)
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "marker_ids", ids)
        object.__setattr__(self, "corner_indices", corners)

    @classmethod
    def from_list(cls, items: list[Correspondence]) -> "Correspondences":
        return cls(np.array([c.world for c in items], dtype=float).reshape(-1, 3),
                   np.array([c.image for c in items], dtype=float).reshape(-1, 2),
                   np.array([c.marker_id for c in items], dtype=int),
                   np.array([c.corner_index for c in items], dtype=int))

    def __len__(self):
        return len(self.world)

    def __getitem__(self, idx) -> "Correspondences":
        obj = object.__new__(Correspondences)
        for name in ("world", "image", "marker_ids", "corner_indices"):
            object.__setattr__(obj, name, getattr(self, name)[idx])
        return obj

    def concat(self, other: "Correspondences") -> "Correspondences":
        return Correspondences(np.vstack([self.world, other.world]),
                               np.vstack([self.image, other.image]),
                               np.concatenate([self.marker_ids, other.marker_ids]),
                               np.concatenate([self.corner_indices, other.corner_indices]))


@dataclass(frozen=True)
class PnPConfig:
    max_lm_iterations: int = 50
    lm_cost_tolerance: float = 1e-10
    lm_initial_damping: float = 1e-3
    ransac_iterations: int = 100
    ransac_reprojection_threshold: float = 2.0
    min_inliers: int = 4
    # LM stopping tolerance for the per-sample RANSAC hypotheses only
    ransac_hypothesis_tolerance: float = 1e-6

    def __post_init__(self):
        for name in ("max_lm_iterations", "lm_cost_tolerance", "lm_initial_damping",
                     "ransac_iterations", "ransac_reprojection_threshold",
                     "ransac_hypothesis_tolerance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.min_inliers < 4:
            raise ValueError("min_inliers must be at least 4")


@dataclass(frozen=True, eq=False)
class PnPResult:
    extrinsics: RigidTransform
    camera_pose: RigidTransform
    rms_reprojection_error: float
    inlier_flags: np.ndarray
    iterations_used: int
    # sum of squared pixel residuals after each accepted LM step, initial cost first
    cost_history: tuple[float, ...] = field(default=())


def reprojection_errors(K: CameraIntrinsics, extrinsics: RigidTransform,
                        corr: Correspondences) -> np.ndarray:
    """Per-correspondence Euclidean pixel distance."""
    proj = project_points(K, extrinsics, corr.world)
    return np.linalg.norm(proj - corr.image, axis=1)


def reprojection_rms(K: CameraIntrinsics, extrinsics: RigidTransform,
                     corr: Correspondences) -> float:
    if len(corr) == 0:
        raise ValueError("need at least one correspondence")
    err = reprojection_errors(K, extrinsics, corr)
    return float(np.sqrt(np.mean(err ** 2)))


def is_coplanar(points: np.ndarray, tol: float = COPLANAR_TOL) -> bool:
    points = np.asarray(points, dtype=float)
    s = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    return bool(s[0] == 0 or s[-1] <= tol * s[0])


def _normalizing_transform(pts: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin, mean distance sqrt(dim)."""
    dim = pts.shape[1]
    centroid = pts.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(pts - centroid, axis=1))
    if mean_dist <= 0:
        raise DegenerateGeometry("all points coincide")
    s = math.sqrt(dim) / mean_dist
    T = np.eye(dim + 1)
    T[:dim, :dim] *= s
    T[:dim, dim] = -s * centroid
    return T


def _apply_h(T: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return pts @ T[:-1, :-1].T + T[:-1, -1]


def dlt_init(K: CameraIntrinsics, corr: Correspondences) -> RigidTransform:
    """Linear extrinsics from >= 6 non-coplanar correspondences."""
    n = len(corr)
    if n < 6:
        raise DegenerateGeometry(f"DLT needs at least 6 correspondences, got {n}")
    X = corr.world
    if is_coplanar(X):
        raise DegenerateGeometry("world points are coplanar; DLT is rank deficient")
    x = K.normalize(corr.image)

    Tw = _normalizing_transform(X)
    Ti = _normalizing_transform(x)
    Xn = _apply_h(Tw, X)
    xn = _apply_h(Ti, x)

    Xh = np.hstack([Xn, np.ones((n, 1))])
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xn[:, :1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -xn[:, 1:] * Xh
    _, s, Vt = np.linalg.svd(A)
    if s[-2] <= 1e-12 * s[0]:
        raise DegenerateGeometry("projection matrix null space is not one-dimensional")
    Pn = Vt[-1].reshape(3, 4)
    P = np.linalg.inv(Ti) @ Pn @ Tw

    depth = np.hstack([X, np.ones((n, 1))]) @ P[2]
    if np.count_nonzero(depth > 0) * 2 < n:
        P = -P
    M, p4 = P[:, :3], P[:, 3]
    s_m = np.linalg.svd(M, compute_uv=False)
    scale = s_m.mean()
    if not np.isfinite(scale) or scale <= 0:
        raise DegenerateGeometry("projection matrix has vanishing rotation block")
    R = nearest_rotation(M / scale)
    return RigidTransform._trusted(R, p4 / scale)


def _plane_frame(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centroid and a right-handed basis whose first two axes span the plane."""
    c = X.mean(axis=0)
    _, _, Vt = np.linalg.svd(X - c)
    A = Vt.T.copy()
    if np.linalg.det(A) < 0:
        A[:, 2] = -A[:, 2]
    return c, A


def _collinear(ab: np.ndarray, i: int, j: int, k: int) -> bool:
    u = ab[j] - ab[i]
    v = ab[k] - ab[i]
    area = abs(u[0] * v[1] - u[1] * v[0])
    return area <= COLLINEAR_TOL * max(u @ u, v @ v)


def _homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    n = len(src)
    Ts = _normalizing_transform(src)
    Td = _normalizing_transform(dst)
    s = _apply_h(Ts, src)
    d = _apply_h(Td, dst)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:2] = s
    A[0::2, 2] = 1.0
    A[0::2, 6:8] = -d[:, :1] * s
    A[0::2, 8] = -d[:, 0]
    A[1::2, 3:5] = s
    A[1::2, 5] = 1.0
    A[1::2, 6:8] = -d[:, 1:] * s
    A[1::2, 8] = -d[:, 1]
    _, sv, Vt = np.linalg.svd(A)
    if n > 4 and sv[-2] <= 1e-12 * sv[0]:
        raise DegenerateGeometry("homography is not uniquely determined")
    Hn = Vt[-1].reshape(3, 3)
    return np.linalg.inv(Td) @ Hn @ Ts


def planar_init(K: CameraIntrinsics, corr: Correspondences) -> RigidTransform:
    """Extrinsics from >= 4 coplanar correspondences via the plane homography."""
    n = len(corr)
    if n < 4:
        raise DegenerateGeometry(f"planar pose needs at least 4 correspondences, got {n}")
    X = corr.world
    c, A = _plane_frame(X)
    local = (X - c) @ A
    ab = local[:, :2]
    scale = np.max(np.abs(ab)) if n else 0.0
    if scale == 0 or np.max(np.abs(local[:, 2])) > 1e-6 * max(scale, 1.0):
        raise DegenerateGeometry("world points are not coplanar")
    if n == 4:
        for tri in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
            if _collinear(ab, *tri):
                raise DegenerateGeometry("three of four points are collinear")
    else:
        s = np.linalg.svd(ab - ab.mean(axis=0), compute_uv=False)
        if s[1] <= COLLINEAR_TOL * s[0]:
            raise DegenerateGeometry("points are collinear")

    x = K.normalize(corr.image)
    H = _homography(ab, x)
    h1, h2, h3 = H[:, 0], H[:, 1], H[:, 2]
    lam = math.sqrt(np.linalg.norm(h1) * np.linalg.norm(h2))
    if not np.isfinite(lam) or lam <= 0:
        raise DegenerateGeometry("degenerate homography")

    # depth of each plane point under the two sign choices; keep the one in front
    depth = ab @ H[2, :2] + H[2, 2]
    if np.all(depth > 0):
        sign = 1.0
    elif np.all(depth < 0):
        sign = -1.0
    else:
        raise DegenerateGeometry("no sign of the homography puts every point in front")
    r1 = sign * h1 / lam
    r2 = sign * h2 / lam
    Rp = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
    tp = sign * h3 / lam
    R = Rp @ A.T
    return RigidTransform._trusted(R, tp - R @ c)


def _residuals(K: CameraIntrinsics, R: np.ndarray, t: np.ndarray, X: np.ndarray,
               uv: np.ndarray):
    pc = X @ R.T + t
    z = pc[:, 2]
    if z.min() <= DEPTH_EPS:
        return None, None
    r = np.empty((len(X), 2))
    r[:, 0] = K.fx * pc[:, 0] / z + (K.px - uv[:, 0])
    r[:, 1] = K.fy * pc[:, 1] / z + (K.py - uv[:, 1])
    return r, pc


def _jacobian(K: CameraIntrinsics, pc: np.ndarray, t: np.ndarray) -> np.ndarray:
    """d(residual)/d(rotation increment, translation increment), left-perturbed.

    With pc = exp(w) R X + t the derivative w.r.t. w is -[R X]_x, so each
    rotation row is the cross product of R X with the projection gradient.
    """
    inv_z = 1.0 / pc[:, 2]
    a = K.fx * inv_z
    b = K.fy * inv_z
    c = -a * pc[:, 0] * inv_z
    d = -b * pc[:, 1] * inv_z
    qx, qy, qz = (pc - t).T
    J = np.zeros((2 * len(pc), 6))
    Ju, Jv = J[0::2], J[1::2]
    Ju[:, 0] = qy * c
    Ju[:, 1] = qz * a - qx * c
    Ju[:, 2] = -qy * a
    Ju[:, 3] = a
    Ju[:, 5] = c
    Jv[:, 0] = qy * d - qz * b
    Jv[:, 1] = -qx * d
    Jv[:, 2] = qx * b
    Jv[:, 4] = b
    Jv[:, 5] = d
    return J


def lm_refine(K: CameraIntrinsics, init: RigidTransform, corr: Correspondences,
              config: PnPConfig = PnPConfig()) -> PnPResult:
    """Minimise the summed squared reprojection error over the 6 pose parameters.

    Steps are accepted only if they strictly lower the cost; a rejected step
    raises the damping tenfold. Stops on a relative cost decrease below
    ``config.lm_cost_tolerance``, on ``max_lm_iterations`` accepted steps or
    when the damping overflows.
    """
    X, uv = corr.world, corr.image
    n = len(X)
    if n == 0:
        raise ValueError("need at least one correspondence")
    R = np.array(init.rotation)
    t = np.array(init.translation)
    r, pc = _residuals(K, R, t, X, uv)
    if r is None:
        raise NonPositiveDepth("initial pose puts points behind the camera")
    cost = float(np.dot(r.ravel(), r.ravel()))
    history = [cost]
    damping = config.lm_initial_damping
    accepted = 0
    # rms below 1e-10 px is treated as exact
    exact_cost = 1e-20 * n
    diag_idx = np.arange(6)

    for _ in range(config.max_lm_iterations):
        if cost <= exact_cost:
            break
        J = _jacobian(K, pc, t)
        JtJ = J.T @ J
        g = J.T @ r.ravel()
        if not math.isfinite(float(JtJ.sum() + g.sum())):
            raise NumericalFailure("non-finite normal equations")
        diag = JtJ.diagonal().copy()
        np.maximum(diag, 1e-12 * max(float(diag.max()), 1e-300), out=diag)
        improved = False
        solved = False
        while damping <= MAX_DAMPING:
            A = JtJ.copy()
            A[diag_idx, diag_idx] += damping * diag
            try:
                delta = np.linalg.solve(A, -g)
            except np.linalg.LinAlgError:
                damping *= 10.0
                continue
            solved = True
            R_new = so3_exp(delta[:3]) @ R
            t_new = t + delta[3:]
            r_new, pc_new = _residuals(K, R_new, t_new, X, uv)
            if r_new is not None:
                cost_new = float(np.dot(r_new.ravel(), r_new.ravel()))
                if cost_new < cost:
                    improved = True
                    break
            damping *= 10.0
        if not solved:
            raise NumericalFailure("normal equations singular at every damping level")
        if not improved:
            break
        rel = (cost - cost_new) / cost
        R, t, r, pc, cost = R_new, t_new, r_new, pc_new, cost_new
        history.append(cost)
        accepted += 1
        damping = max(damping / 10.0, 1e-15)
        if rel < config.lm_cost_tolerance:
            break

    extr = RigidTransform._trusted(nearest_rotation(R), t)
    return PnPResult(
        extrinsics=extr,
        camera_pose=extrinsics_to_camera_pose(extr),
        rms_reprojection_error=math.sqrt(cost / n),
        inlier_flags=np.ones(n, dtype=bool),
        iterations_used=accepted,
        cost_history=tuple(history),
    )


def solve_pnp(K: CameraIntrinsics, corr: Correspondences,
              config: PnPConfig = PnPConfig()) -> PnPResult:
    """Planar or DLT initialisation followed by LM refinement."""
    if len(corr) < 4:
        raise DegenerateGeometry(f"need at least 4 correspondences, got {len(corr)}")
    if is_coplanar(corr.world):
        init = planar_init(K, corr)
    else:
        init = dlt_init(K, corr)
    return lm_refine(K, init, corr, config)


def _classify(K: CameraIntrinsics, extr: RigidTransform, corr: Correspondences,
              threshold: float) -> tuple[np.ndarray, np.ndarray]:
    pc = extr.apply(corr.world)
    z = pc[:, 2]
    front = z > DEPTH_EPS
    err = np.full(len(corr), np.inf)
    zf = z[front]
    u = K.fx * pc[front, 0] / zf + K.px
    v = K.fy * pc[front, 1] / zf + K.py
    err[front] = np.hypot(u - corr.image[front, 0], v - corr.image[front, 1])
    return err <= threshold, err


def ransac_pnp(K: CameraIntrinsics, corr: Correspondences,
               config: PnPConfig = PnPConfig(), rng_seed: int = 0) -> PnPResult:
    """RANSAC over minimal 4-point samples, then LM on the best consensus set.

    Ties in inlier count are broken by the lower inlier rms, then by the
    earlier iteration. Sampling uses a Philox stream keyed on ``rng_seed``.
    """
    n = len(corr)
    need = max(config.min_inliers, 4)
    if n < need:
        raise DegenerateGeometry(f"need at least {need} correspondences, got {n}")
    rng = np.random.Generator(np.random.Philox(rng_seed))
    hyp_config = replace(config, lm_cost_tolerance=max(config.lm_cost_tolerance,
                                                       config.ransac_hypothesis_tolerance))
    best_flags = None
    best_key = None
    best_model = None
    for _ in range(config.ransac_iterations):
        sample = np.sort(rng.choice(n, size=4, replace=False))
        try:
            model = solve_pnp(K, corr[sample], hyp_config).extrinsics
        except (DegenerateGeometry, NumericalFailure, NonPositiveDepth):
            continue
        flags, err = _classify(K, model, corr, config.ransac_reprojection_threshold)
        count = int(flags.sum())
        if count == 0:
            continue
        rms = float(np.sqrt(np.mean(err[flags] ** 2)))
        key = (-count, rms)
        if best_key is None or key < best_key:
            best_key, best_flags, best_model = key, flags, model
    if best_flags is None or int(best_flags.sum()) < config.min_inliers:
        found = 0 if best_flags is None else int(best_flags.sum())
        raise ConsensusFailure(f"best consensus has {found} inliers, "
                               f"need {config.min_inliers}")
    refit = lm_refine(K, best_model, corr[best_flags], config)
    return PnPResult(
        extrinsics=refit.extrinsics,
        camera_pose=refit.camera_pose,
        rms_reprojection_error=refit.rms_reprojection_error,
        inlier_flags=best_flags.copy(),
        iterations_used=refit.iterations_used,
        cost_history=refit.cost_history,
    )
