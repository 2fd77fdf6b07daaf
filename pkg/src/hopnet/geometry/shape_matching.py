"""Weighted least-squares rigid registration (shape matching)."""

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateConfiguration
from .quaternion import quat_from_matrix

MAX_SWEEPS = 30
OFF_DIAGONAL_TOL = 1e-12


@dataclass(frozen=True)
class RigidFit:
    """Rigid transform ``x -> R x + t`` plus the RMS residual of the fit."""

    translation: np.ndarray
    rotation: np.ndarray  # unit quaternion, w >= 0
    matrix: np.ndarray
    residual: float

    def apply(self, points):
        return np.asarray(points, dtype=float) @ self.matrix.T + self.translation


def jacobi_eigh(a, max_sweeps=MAX_SWEEPS, tol=OFF_DIAGONAL_TOL):
    """Eigen-decomposition of a small symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in descending order and the matching eigenvectors as
    columns. Iteration stops once the off-diagonal Frobenius norm falls below
    ``tol`` times the matrix norm, or after ``max_sweeps`` sweeps.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), v
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                a[p, q] = a[q, p] = 0.0
                v = v @ rot
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def _rotation_from_covariance(h):
    # h = sum_i w_i a_i b_i^T, want proper R maximising tr(R h)
    lam, v = jacobi_eigh(h.T @ h)
    lam = np.clip(lam, 0.0, None)
    s = np.sqrt(lam)
    if s[0] == 0.0 or s[1] <= 1e-12 * s[0]:
        raise DegenerateConfiguration("covariance rank < 2 (collinear or coincident points)")
    if np.linalg.det(v) < 0.0:
        v[:, 2] = -v[:, 2]
    u0 = h @ v[:, 0] / s[0]
    u1 = h @ v[:, 1] / s[1]
    # re-orthonormalise against rounding before completing the frame
    u0 /= np.linalg.norm(u0)
    u1 -= u0 * (u0 @ u1)
    u1 /= np.linalg.norm(u1)
    u = np.column_stack([u0, u1, np.cross(u0, u1)])
    # u and v are both proper; a negative signed third singular value is the
    # reflection case, absorbed by flipping the weakest axis.
    return v @ u.T


def shape_match(ref_points, target_points, weights=None):
    """Best rigid transform mapping ``ref_points`` onto ``target_points``.

    Minimises ``sum_i w_i |R ref_i + t - target_i|^2`` over proper rotations.
    The residual is the weighted RMS distance after alignment.
    """
    ref = np.asarray(ref_points, dtype=float)
    tgt = np.asarray(target_points, dtype=float)
    if ref.shape != tgt.shape or ref.ndim != 2 or ref.shape[1] != 3:
        raise ValueError("ref_points and target_points must both be (N, 3)")
    if ref.shape[0] < 3:
        raise DegenerateConfiguration("shape matching needs at least 3 points")
    w = np.ones(ref.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w <= 0.0):
        raise ValueError("weights must be positive")
    wsum = w.sum()
    c_ref = (w @ ref) / wsum
    c_tgt = (w @ tgt) / wsum
    a = ref - c_ref
    b = tgt - c_tgt
    h = (a * w[:, None]).T @ b
    rot = _rotation_from_covariance(h)
    t = c_tgt - rot @ c_ref
    err = ref @ rot.T + t - tgt
    residual = float(np.sqrt(np.sum(w * np.sum(err * err, axis=1)) / wsum))
    return RigidFit(translation=t, rotation=quat_from_matrix(rot), matrix=rot, residual=residual)
