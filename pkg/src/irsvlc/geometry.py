"""Vector helpers, mirror poses and specular-point search.

Positions and directions are plain ``numpy`` arrays of shape ``(3,)``; any
sequence of three floats is accepted as input.  Room frame: x along the room
length, y along its width, z up.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

_EPS = 1e-12


def vec3(p) -> np.ndarray:
    a = np.asarray(p, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    return a


def unit(v) -> np.ndarray:
    v = vec3(v)
    n = np.linalg.norm(v)
    if n < _EPS:
        raise ValueError("cannot normalise a zero vector")
    return v / n


def rotation_matrix(roll_deg: float, yaw_deg: float) -> np.ndarray:
    """R_z(yaw) @ R_x(roll): roll about the room x-axis first, then yaw about z."""
    r, y = np.radians(roll_deg), np.radians(yaw_deg)
    cr, sr = np.cos(r), np.sin(r)
    cy, sy = np.cos(y), np.sin(y)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return rz @ rx


def rotate_normal(base_normal, roll_deg: float, yaw_deg: float) -> np.ndarray:
    n = rotation_matrix(roll_deg, yaw_deg) @ unit(base_normal)
    # re-normalise to keep the unit-norm guarantee at machine precision
    return n / np.linalg.norm(n)


def branch_normal(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """Pointing direction of a photodiode branch.

    Azimuth is measured in the horizontal plane from +x towards +y, elevation
    upwards from the horizontal plane, so elevation 90 is zenith-pointing.
    """
    az, el = np.radians(azimuth_deg), np.radians(elevation_deg)
    return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


def incidence_cosines(src, src_normal, dst, dst_normal):
    """Emission cosine at ``src``, incidence cosine at ``dst`` and their distance.

    Negative cosines (the other point lies behind the surface) are clamped
    to zero.

    Raises
    ------
    ValueError
        If ``src`` and ``dst`` coincide.
    """
    src, dst = vec3(src), vec3(dst)
    delta = dst - src
    d = float(np.linalg.norm(delta))
    if d < _EPS:
        raise ValueError("source and destination coincide")
    direction = delta / d
    cos_irr = max(float(np.dot(vec3(src_normal), direction)), 0.0)
    cos_inc = max(float(-np.dot(vec3(dst_normal), direction)), 0.0)
    return cos_irr, cos_inc, d


def within_fov(cos_incidence: float, fov_deg: float) -> bool:
    """True when the incidence angle does not exceed ``fov_deg`` (inclusive)."""
    return bool(cos_incidence > 0.0 and cos_incidence >= fov_cos(fov_deg))


def fov_cos(fov_deg: float) -> float:
    # guard against cos(25 deg) evaluating a hair above the cosine of an
    # incidence angle that is exactly 25 deg
    return float(np.cos(np.radians(fov_deg))) - 1e-12


def _in_plane_axes(normal: np.ndarray):
    up = np.array([0.0, 0.0, 1.0]) if abs(normal[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(up, normal)
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    return u, v


@dataclass(frozen=True)
class MirrorPose:
    """A flat rectangular mirror.

    The width axis of the unrotated mirror is horizontal and the height axis
    lies in the wall plane; both rotate rigidly with the normal.
    """

    center: tuple
    base_normal: tuple
    roll_deg: float
    yaw_deg: float
    half_width: float
    half_height: float

    def __post_init__(self):
        if not self.half_width > 0 or not self.half_height > 0:
            raise ValueError("mirror half extents must be positive")
        n = np.linalg.norm(vec3(self.base_normal))
        if abs(n - 1.0) > 1e-9:
            raise ValueError("mirror base_normal must be a unit vector")

    def frame(self):
        """Return ``(normal, width_axis, height_axis)`` after rotation."""
        rot = rotation_matrix(self.roll_deg, self.yaw_deg)
        base = unit(self.base_normal)
        u, v = _in_plane_axes(base)
        n = rot @ base
        return n / np.linalg.norm(n), rot @ u, rot @ v

    @property
    def normal(self) -> np.ndarray:
        return self.frame()[0]


def image_point(p, mirror: MirrorPose) -> np.ndarray:
    """Reflect ``p`` across the (infinite) plane of ``mirror``."""
    p = vec3(p)
    n = mirror.normal
    return p - 2.0 * np.dot(p - vec3(mirror.center), n) * n


def specular_point(src, dst, mirror: MirrorPose) -> Optional[np.ndarray]:
    """Point on the finite mirror where a ray from ``src`` reflects into ``dst``.

    Returns ``None`` when either endpoint is not strictly in front of the
    mirror or when the reflection point falls outside the mirror rectangle.
    """
    src, dst = vec3(src), vec3(dst)
    n, u, v = mirror.frame()
    c = vec3(mirror.center)
    ds = float(np.dot(src - c, n))
    dd = float(np.dot(dst - c, n))
    if ds <= 0.0 or dd <= 0.0:
        return None
    img = src - 2.0 * ds * n
    q = img + (ds / (ds + dd)) * (dst - img)
    r = q - c
    if abs(np.dot(r, u)) > mirror.half_width or abs(np.dot(r, v)) > mirror.half_height:
        return None
    return q

