"""SE(3) pose algebra, trajectory integration, and RPE/ATE metrics.

Conventions used throughout the package:

* A relative pose is 6 numbers: translation (meters) then Euler angles
  (radians), laid out ``[tx, ty, tz, rx, ry, rz]``.
* Euler angles are intrinsic X-Y'-Z'' (roll, pitch, yaw), composed as
  ``R = Rx(roll) @ Ry(pitch) @ Rz(yaw)``, wrapped to (-pi, pi].
* Trajectories are arrays of homogeneous 4x4 poses, index 0 = identity
  unless loaded from file.
* The rotation metric is the geodesic angle of the relative rotation;
  training losses elsewhere use Euler-vector differences instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

GIMBAL_LOCK_EPS = 1e-9


def wrap_angle(theta):
    """Wrap angles to (-pi, pi]."""
    wrapped = np.mod(np.asarray(theta, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


@dataclass(frozen=True)
class PoseDelta:
    """Relative 6-DoF motion: translation t (m) and Euler rotation r (rad)."""

    t: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        r = wrap_angle(np.asarray(self.r, dtype=np.float64))
        if t.shape != (3,) or r.shape != (3,):
            raise ShapeError(f"PoseDelta: t {t.shape} and r {r.shape} must be (3,)")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(r))):
            raise ValueError("PoseDelta: non-finite component")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "r", r)

    def as_vector(self):
        return np.concatenate([self.t, self.r])

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (6,):
            raise ShapeError(f"PoseDelta.from_vector: expected (6,), got {v.shape}")
        return cls(v[:3], v[3:])

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.zeros(3))


def euler_to_matrix(r) -> np.ndarray:
    """Rotation matrix for intrinsic X-Y'-Z'' Euler angles (roll, pitch, yaw)."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3,):
        raise ShapeError(f"euler_to_matrix: expected (3,), got {r.shape}")
    cx, cy, cz = np.cos(r)
    sx, sy, sz = np.sin(r)
    return np.array(
        [
            [cy * cz, -cy * sz, sy],
            [cx * sz + sx * sy * cz, cx * cz - sx * sy * sz, -sx * cy],
            [sx * sz - cx * sy * cz, sx * cz + cx * sy * sz, cx * cy],
        ]
    )


def _check_rotation(R, tol=1e-6):
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise ShapeError(f"rotation: expected (3, 3), got {R.shape}")
    err = np.max(np.abs(R @ R.T - np.eye(3)))
    if err > tol or np.linalg.det(R) < 0.0:
        raise ValueError(f"rotation: matrix not orthonormal (deviation {err:.3e})")
    return R


def matrix_to_euler(R, with_flag: bool = False):
    """Invert :func:`euler_to_matrix`.

    Near pitch = +-pi/2 the decomposition is degenerate; roll is set to 0
    and, when ``with_flag`` is requested, the sample is flagged.
    """
    R = _check_rotation(R)
    sy = np.clip(R[0, 2], -1.0, 1.0)
    pitch = np.arcsin(sy)
    degenerate = np.hypot(R[0, 0], R[0, 1]) < GIMBAL_LOCK_EPS
    if degenerate:
        roll = 0.0
        yaw = np.arctan2(R[1, 0], R[1, 1])
    else:
        roll = np.arctan2(-R[1, 2], R[2, 2])
        yaw = np.arctan2(-R[0, 1], R[0, 0])
    angles = wrap_angle(np.array([roll, pitch, yaw]))
    if with_flag:
        return angles, bool(degenerate)
    return angles


def orthonormalize(R) -> np.ndarray:
    """Nearest rotation matrix (Frobenius) via SVD, determinant forced to +1."""
    u, _, vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def delta_to_matrix(p: PoseDelta) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = euler_to_matrix(p.r)
    T[:3, 3] = p.t
    return T


def matrix_to_delta(T) -> PoseDelta:
    T = np.asarray(T, dtype=np.float64)
    if T.shape != (4, 4):
        raise ShapeError(f"matrix_to_delta: expected (4, 4), got {T.shape}")
    return PoseDelta(T[:3, 3].copy(), matrix_to_euler(T[:3, :3]))


def compose(a: PoseDelta, b: PoseDelta) -> PoseDelta:
    """Homogeneous composition T_a . T_b expressed back as a PoseDelta."""
    return matrix_to_delta(delta_to_matrix(a) @ delta_to_matrix(b))


def inverse(p: PoseDelta) -> PoseDelta:
    R = euler_to_matrix(p.r)
    return PoseDelta(-(R.T @ p.t), matrix_to_euler(R.T))


def integrate(deltas) -> np.ndarray:
    """Fold relative poses from the identity into an (n+1, 4, 4) trajectory.

    Rotation blocks are re-orthonormalized after each composition so long
    chains stay rotations to machine precision.
    """
    deltas = _as_delta_array(deltas)
    n = deltas.shape[0]
    traj = np.empty((n + 1, 4, 4))
    traj[0] = np.eye(4)
    current = np.eye(4)
    for i in range(n):
        step = np.eye(4)
        step[:3, :3] = euler_to_matrix(deltas[i, 3:])
        step[:3, 3] = deltas[i, :3]
        current = current @ step
        current[:3, :3] = orthonormalize(current[:3, :3])
        traj[i + 1] = current
    return traj


def relative_deltas(traj) -> np.ndarray:
    """Per-frame differences of a trajectory; inverse of :func:`integrate`."""
    traj = np.asarray(traj, dtype=np.float64)
    out = np.empty((traj.shape[0] - 1, 6))
    for i in range(traj.shape[0] - 1):
        prev = traj[i]
        rel = np.eye(4)
        rel[:3, :3] = prev[:3, :3].T @ traj[i + 1, :3, :3]
        rel[:3, 3] = prev[:3, :3].T @ (traj[i + 1, :3, 3] - prev[:3, 3])
        out[i, :3] = rel[:3, 3]
        out[i, 3:] = matrix_to_euler(orthonormalize(rel[:3, :3]))
    return out


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix, accurate near 0 and pi."""
    R = np.asarray(R, dtype=np.float64)
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(np.arctan2(np.linalg.norm(axis), np.trace(R) - 1.0))


def _as_delta_array(deltas) -> np.ndarray:
    if isinstance(deltas, np.ndarray):
        arr = np.asarray(deltas, dtype=np.float64)
    else:
        rows = [d.as_vector() if isinstance(d, PoseDelta) else d for d in deltas]
        arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 6:
        raise ShapeError(f"expected (n, 6) pose deltas, got {arr.shape}")
    return arr


def rpe(pred_deltas, gt_deltas) -> tuple[float, float]:
    """RMS relative pose error: translation norm and rotation geodesic angle."""
    pred = _as_delta_array(pred_deltas)
    gt = _as_delta_array(gt_deltas)
    if pred.shape != gt.shape:
        raise ShapeError(f"rpe: lengths differ ({pred.shape[0]} vs {gt.shape[0]})")
    if pred.shape[0] < 1:
        raise ValueError("rpe: need at least one frame")
    t_sq = np.sum((pred[:, :3] - gt[:, :3]) ** 2, axis=1)
    angles = np.empty(pred.shape[0])
    for i in range(pred.shape[0]):
        R_err = euler_to_matrix(gt[i, 3:]).T @ euler_to_matrix(pred[i, 3:])
        angles[i] = rotation_angle(R_err)
    return float(np.sqrt(np.mean(t_sq))), float(np.sqrt(np.mean(angles**2)))


def rigid_align(source, target) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rotation R and translation t mapping source onto target.

    No scale (rigid-body only). Returns (R, t) with target ~= source @ R.T + t.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    H = (source - mu_s).T @ (target - mu_t)
    u, _, vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    R = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = mu_t - R @ mu_s
    return R, t


def ate(pred_traj, gt_traj, align: bool = False) -> float:
    """RMS absolute trajectory error over per-frame translation distances.

    With ``align`` set, a rigid-body (no-scale) least-squares alignment of
    the predicted positions is applied first.
    """
    pred = np.asarray(pred_traj, dtype=np.float64)
    gt = np.asarray(gt_traj, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"ate: lengths differ ({pred.shape[0]} vs {gt.shape[0]})")
    if pred.shape[0] < 2:
        raise ValueError("ate: need at least two poses")
    p = pred[:, :3, 3]
    g = gt[:, :3, 3]
    if align:
        R, t = rigid_align(p, g)
        p = p @ R.T + t
    return float(np.sqrt(np.mean(np.sum((p - g) ** 2, axis=1))))
