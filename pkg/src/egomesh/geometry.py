"""Spherical, equirectangular, and fisheye coordinate transforms.

Planar image coordinates ``(x2d, y2d)`` relate to sphere longitude/latitude
``(lam, phi)`` through the equirectangular equations

    x2d = R * (lam - lam0) * cos(phi1)        lam = x2d / (R cos phi1) + lam0
    y2d = R * (phi - phi0)                    phi = y2d / R + phi0

with both angles restricted to the open interval (0, pi) for a 180-degree
field of view.  Cartesian back-projection places each (lam, phi) on the
radius-R sphere.  The fisheye camera itself uses the equidistant model
r = focal * theta, with theta the angle off the optical (+z) axis.

All functions are pure, accept scalars or numpy arrays, and are safe for
unrestricted concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ContractError, DegenerateInputError, FieldOfViewError

_EDGE = 1e-9  # open-boundary clamp for (0, pi)


@dataclass(frozen=True)
class ProjectionParams:
    """Equirectangular projection constants.

    ``radius`` is the sphere radius in planar-coordinate units; ``phi1`` the
    scaling reference latitude; ``lambda0`` / ``phi0`` the longitude and
    latitude mapped to the planar origin.
    """

    radius: float
    phi1: float = 0.0
    lambda0: float = math.pi / 2
    phi0: float = math.pi / 2

    def __post_init__(self):
        if not (self.radius > 0):
            raise ContractError(f"projection radius must be positive, got {self.radius}")
        if abs(math.cos(self.phi1)) < 1e-12:
            raise ContractError(f"cos(phi1) must be nonzero, got phi1={self.phi1}")
        for name in ("phi1", "lambda0", "phi0"):
            if not math.isfinite(getattr(self, name)):
                raise ContractError(f"{name} must be finite")


class SphereCoord(NamedTuple):
    """Longitude/latitude pair, both in (0, pi)."""

    lam: float
    phi: float


@dataclass(frozen=True)
class CameraRig:
    """Fisheye camera: equirect projection constants plus intrinsics."""

    params: ProjectionParams
    focal: float
    principal: tuple[float, float]
    image_size: tuple[int, int]

    def __post_init__(self):
        if not (self.focal > 0):
            raise ContractError(f"focal must be positive, got {self.focal}")
        h, w = self.image_size
        u0, v0 = self.principal
        if not (0 <= u0 <= w and 0 <= v0 <= h):
            raise ContractError(f"principal point {self.principal} outside image {self.image_size}")


def default_rig(height: int = 128, width: int = 128) -> CameraRig:
    """Rig whose square image spans the full hemisphere.

    Radius and focal both equal width/pi so the equirect planar span and the
    equidistant fisheye rim coincide with the image edges.
    """
    scale = width / math.pi
    return CameraRig(
        params=ProjectionParams(radius=scale),
        focal=scale,
        principal=(width / 2.0, height / 2.0),
        image_size=(height, width),
    )


def _clamp_open(a, lo: float, hi: float, what: str):
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < lo - 1e-12) or np.any(a > hi + 1e-12):
        bad = a[(a < lo - 1e-12) | (a > hi + 1e-12)].ravel()[0]
        raise FieldOfViewError(f"{what}={bad} outside the 180-degree range ({lo}, {hi})")
    return np.clip(a, lo + _EDGE, hi - _EDGE)


def pixel_to_sphere(x2d, y2d, p: ProjectionParams) -> SphereCoord:
    """Planar coordinates to (lam, phi); exact-boundary values are nudged inward."""
    lam = np.asarray(x2d, dtype=np.float64) / (p.radius * math.cos(p.phi1)) + p.lambda0
    phi = np.asarray(y2d, dtype=np.float64) / p.radius + p.phi0
    lam = _clamp_open(lam, 0.0, math.pi, "longitude")
    phi = _clamp_open(phi, 0.0, math.pi, "latitude")
    if lam.ndim == 0:
        return SphereCoord(float(lam), float(phi))
    return SphereCoord(lam, phi)


def sphere_to_pixel(s: SphereCoord, p: ProjectionParams):
    """Inverse of :func:`pixel_to_sphere` over the valid domain."""
    x2d = p.radius * (np.asarray(s.lam, dtype=np.float64) - p.lambda0) * math.cos(p.phi1)
    y2d = p.radius * (np.asarray(s.phi, dtype=np.float64) - p.phi0)
    if x2d.ndim == 0:
        return float(x2d), float(y2d)
    return x2d, y2d


def sphere_to_cart(s: SphereCoord, radius: float):
    """(lam, phi) to Cartesian (x3d, y3d, z3d) on the radius-R sphere."""
    if not (radius > 0):
        raise ContractError(f"radius must be positive, got {radius}")
    lam = np.asarray(s.lam, dtype=np.float64)
    phi = np.asarray(s.phi, dtype=np.float64)
    sp = np.sin(phi)
    x = radius * sp * np.cos(lam)
    y = radius * sp * np.sin(lam)
    z = radius * np.cos(phi)
    if lam.ndim == 0:
        return float(x), float(y), float(z)
    return x, y, z


def pixel_to_cart(x2d, y2d, p: ProjectionParams):
    """Composite transform: planar pixel straight to sphere Cartesian."""
    return sphere_to_cart(pixel_to_sphere(x2d, y2d, p), p.radius)


def pixel_center_planar(rows, cols, height: int, width: int):
    """Planar (x2d, y2d) of pixel centers, origin at the image center."""
    x2d = np.asarray(cols, dtype=np.float64) + 0.5 - width / 2.0
    y2d = np.asarray(rows, dtype=np.float64) + 0.5 - height / 2.0
    return x2d, y2d


def fisheye_project(point, rig: CameraRig):
    """Equidistant fisheye projection of camera-frame points to pixel (u, v).

    ``point`` is one (3,) vector or an (N, 3) array with +z the optical axis.
    Raises :class:`DegenerateInputError` at the camera origin and
    :class:`FieldOfViewError` beyond the 90-degree off-axis angle.
    """
    pts = np.asarray(point, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != 3:
        raise ContractError(f"fisheye_project expects 3-D points, got shape {np.shape(point)}")
    norms = np.linalg.norm(pts, axis=-1)
    if np.any(norms == 0.0):
        raise DegenerateInputError("fisheye_project: point at the camera origin")
    rho = np.hypot(pts[:, 0], pts[:, 1])
    theta = np.arctan2(rho, pts[:, 2])
    if np.any(theta > math.pi / 2 + 1e-12):
        bad = float(theta.max())
        raise FieldOfViewError(f"off-axis angle {bad:.6f} rad exceeds the 180-degree hemisphere")
    r = rig.focal * theta
    with np.errstate(invalid="ignore"):
        ux = np.where(rho > 0, pts[:, 0] / np.where(rho > 0, rho, 1.0), 0.0)
        uy = np.where(rho > 0, pts[:, 1] / np.where(rho > 0, rho, 1.0), 0.0)
    u = rig.principal[0] + r * ux
    v = rig.principal[1] + r * uy
    if single:
        return float(u[0]), float(v[0])
    return np.stack([u, v], axis=-1)
