"""Pose/mesh evaluation metrics: mean point error and Procrustes-aligned variants.

Internal units are meters; every reported error is in millimeters.  The
similarity alignment is the closed-form least-squares fit over scale,
rotation, and translation, computed with a self-contained 3x3 SVD built on
cyclic Jacobi eigen-decomposition of the Gram matrix (no general-purpose
SVD is needed anywhere in the package).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateInputError

MM_PER_M = 1000.0


def jacobi_eigh3(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi sweeps.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvector columns, so ``a == v @ diag(w) @ v.T`` to roundoff.
    """
    a = np.array(a, dtype=np.float64)
    if a.shape != (3, 3):
        raise ContractError(f"jacobi_eigh3 expects a 3x3 matrix, got {a.shape}")
    a = 0.5 * (a + a.T)  # symmetrize defensively
    v = np.eye(3)
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(64):
        off = abs(a[0, 1]) + abs(a[0, 2]) + abs(a[1, 2])
        if off <= 1e-15 * scale:
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = a[p, q]
            if abs(apq) <= 1e-18 * scale:
                continue
            tau = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(tau) / (abs(tau) + np.hypot(1.0, tau)) if tau != 0 else 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            rot = np.eye(3)
            rot[p, p] = rot[q, q] = c
            rot[p, q] = s
            rot[q, p] = -s
            a = rot.T @ a @ rot
            v = v @ rot
    w = np.diag(a).copy()
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]


def svd3(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD of a 3x3 matrix via the Gram-matrix eigen route.

    Returns (u, s, vt) with singular values descending and nonnegative;
    ``u @ diag(s) @ vt`` reconstructs the input to ~1e-12 of its scale.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (3, 3):
        raise ContractError(f"svd3 expects a 3x3 matrix, got {a.shape}")
    w, v = jacobi_eigh3(a.T @ a)
    s = np.sqrt(np.clip(w, 0.0, None))
    tol = max(s[0], 1e-300) * 1e-13
    u = np.zeros((3, 3))
    rank = 0
    for i in range(3):
        if s[i] > tol:
            u[:, i] = a @ v[:, i] / s[i]
            rank = i + 1
    # complete a degenerate left basis orthonormally
    if rank == 2:
        u[:, 2] = np.cross(u[:, 0], u[:, 1])
    elif rank == 1:
        pick = np.eye(3)[np.argmin(np.abs(u[:, 0]))]
        u[:, 1] = pick - u[:, 0] * (u[:, 0] @ pick)
        u[:, 1] /= np.linalg.norm(u[:, 1])
        u[:, 2] = np.cross(u[:, 0], u[:, 1])
    elif rank == 0:
        u = np.eye(3)
    # one modified Gram-Schmidt pass to scrub roundoff drift
    for i in range(3):
        for j in range(i):
            u[:, i] -= u[:, j] * (u[:, j] @ u[:, i])
        u[:, i] /= np.linalg.norm(u[:, i])
    return u, s, v.T


@dataclass(frozen=True)
class Alignment:
    """Similarity transform ``x -> scale * rotation @ x + translation``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation


def mean_point_error(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean Euclidean distance in millimeters (inputs in meters).

    Serves both the per-joint and per-vertex flavors; the point set decides.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3 or pred.shape[0] < 1:
        raise ContractError(f"mean_point_error: incompatible point sets {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=1).mean() * MM_PER_M)


def umeyama_align(pred: np.ndarray, gt: np.ndarray) -> Alignment:
    """Least-squares similarity (s, R, t) minimizing ||s R pred + t - gt||^2.

    Closed form via the SVD of the centered cross-covariance, with the
    determinant sign fix that excludes reflections.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ContractError(f"umeyama_align: incompatible point sets {pred.shape} vs {gt.shape}")
    n = pred.shape[0]
    if n < 3:
        raise ContractError(f"umeyama_align needs at least 3 points, got {n}")
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    xp = pred - mu_p
    xg = gt - mu_g
    var_p = (xp * xp).sum() / n
    if var_p < 1e-18:
        raise DegenerateInputError("umeyama_align: prediction points are coincident")
    cov = xg.T @ xp / n
    u, s, vt = svd3(cov)
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    rot = u @ np.diag(sign) @ vt
    scale = float((s * sign).sum() / var_p)
    trans = mu_g - scale * rot @ mu_p
    return Alignment(scale=scale, rotation=rot, translation=trans)


def pa_error(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean point error (mm) after removing the best similarity transform."""
    align = umeyama_align(pred, gt)
    return mean_point_error(align.apply(pred), gt)


def write_metrics_csv(path, rows: list[dict]) -> None:
    """Write the per-sample evaluation report plus a dataset-mean footer.

    Each row needs keys sample_id, mpjpe, mpvpe, pa_mpjpe, pa_mpvpe.
    """
    cols = ("mpjpe", "mpvpe", "pa_mpjpe", "pa_mpvpe")
    lines = ["sample_id,mpjpe,mpvpe,pa_mpjpe,pa_mpvpe"]
    for row in rows:
        lines.append(",".join([str(row["sample_id"])] + [repr(float(row[c])) for c in cols]))
    if rows:
        means = {c: float(np.mean([row[c] for row in rows])) for c in cols}
        lines.append(",".join(["mean"] + [repr(means[c]) for c in cols]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
