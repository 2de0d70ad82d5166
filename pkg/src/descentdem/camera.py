"""Fisheye camera model: pixel-to-ray mapping with radial distortion.

The projection follows the Kannala-Brandt convention: a pixel at radial
distance r from the principal point (in normalized focal units) views the
ray at angle theta from the optical axis, where

    r = theta * (1 + xi1*theta^2 + xi2*theta^4 + xi3*theta^6 + xi4*theta^8)

Casting a ray inverts this polynomial by Newton iteration. With all
coefficients zero the model reduces to the ideal equidistant fisheye.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientPixelsError,
    NoConvergenceError,
    OutOfFieldError,
)

NEWTON_MAX_ITER = 20
NEWTON_TOL = 1e-10


@dataclass
class FisheyeCamera:
    """Intrinsics, radial distortion, and pose of one fisheye frame.

    `rotation` maps camera coordinates to world coordinates (camera +z is
    the optical axis, +x is along image columns). `translation` is the
    camera center in world coordinates. `fov_max` is the maximum ray
    half-angle in radians.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    dist: np.ndarray
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    fov_max: float = np.pi / 2

    def __post_init__(self):
        self.dist = np.asarray(self.dist, dtype=np.float64).reshape(4)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not 0.0 <= self.fov_max <= np.pi:
            raise ValueError("fov_max must lie in [0, pi]")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation is not orthonormal (error {err:.2e})")

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "dist": [float(d) for d in self.dist],
            "width": self.width,
            "height": self.height,
            "R": [float(v) for v in self.rotation.reshape(-1)],
            "t": [float(v) for v in self.translation],
            "theta_max": float(self.fov_max),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FisheyeCamera":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            dist=np.asarray(d["dist"], dtype=np.float64),
            width=int(d["width"]),
            height=int(d["height"]),
            rotation=np.asarray(d["R"], dtype=np.float64).reshape(3, 3),
            translation=np.asarray(d["t"], dtype=np.float64),
            fov_max=float(d["theta_max"]),
        )


@dataclass
class Ray:
    """World-space viewing ray of one pixel."""

    origin: np.ndarray
    direction: np.ndarray
    theta_d: float
    pixel: tuple


@dataclass
class PixelMask:
    """Boolean validity per pixel; valid[row, col] follows image layout."""

    width: int
    height: int
    valid: np.ndarray

    def __post_init__(self):
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != (self.height, self.width):
            raise ValueError("mask array does not match stated size")

    @classmethod
    def full(cls, width: int, height: int) -> "PixelMask":
        return cls(width, height, np.ones((height, width), dtype=bool))

    def count(self) -> int:
        return int(self.valid.sum())


class RayBatch:
    """Vectorized bundle of rays; indexing yields individual `Ray` objects."""

    def __init__(self, origins, directions, theta_d, pixels):
        self.origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
        self.directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
        self.theta_d = np.asarray(theta_d, dtype=np.float64).reshape(-1)
        self.pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)

    def __len__(self) -> int:
        return self.origins.shape[0]

    def __getitem__(self, i: int) -> Ray:
        return Ray(
            origin=self.origins[i],
            direction=self.directions[i],
            theta_d=float(self.theta_d[i]),
            pixel=(float(self.pixels[i, 0]), float(self.pixels[i, 1])),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


def distort_theta(theta, dist) -> np.ndarray:
    """Forward distortion polynomial r(theta)."""
    theta = np.asarray(theta, dtype=np.float64)
    xi1, xi2, xi3, xi4 = np.asarray(dist, dtype=np.float64).reshape(4)
    t2 = theta * theta
    return theta * (1.0 + t2 * (xi1 + t2 * (xi2 + t2 * (xi3 + t2 * xi4))))


def _distort_theta_deriv(theta, dist):
    xi1, xi2, xi3, xi4 = np.asarray(dist, dtype=np.float64).reshape(4)
    t2 = theta * theta
    return 1.0 + t2 * (3 * xi1 + t2 * (5 * xi2 + t2 * (7 * xi3 + t2 * 9 * xi4)))


def solve_theta(r, dist):
    """Invert r(theta) by Newton iteration from theta0 = r.

    Returns (theta, converged) arrays of the shape of r.
    """
    r = np.asarray(r, dtype=np.float64)
    theta = r.copy()
    converged = np.zeros(r.shape, dtype=bool)
    for _ in range(NEWTON_MAX_ITER):
        f = distort_theta(theta, dist) - r
        newly = np.abs(f) <= NEWTON_TOL
        converged |= newly
        if converged.all():
            break
        df = _distort_theta_deriv(theta, dist)
        step = np.where(converged | (np.abs(df) < 1e-14), 0.0, f / np.where(df == 0, 1.0, df))
        theta = theta - step
    else:
        converged |= np.abs(distort_theta(theta, dist) - r) <= NEWTON_TOL
    return theta, converged


def _rays_from_pixels(cam: FisheyeCamera, uv: np.ndarray):
    """Vectorized pixel -> world ray core.

    Returns (directions (N,3), theta (N,), converged (N,), in_field (N,)).
    """
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    a = (uv[:, 0] - cam.cx) / cam.fx
    b = (uv[:, 1] - cam.cy) / cam.fy
    r = np.hypot(a, b)
    theta, converged = solve_theta(r, cam.dist)
    in_field = theta <= cam.fov_max + 1e-12
    sin_t = np.sin(theta)
    cos_t = np.cos(theta)
    safe_r = np.where(r > 0, r, 1.0)
    d_cam = np.stack(
        [
            np.where(r > 0, sin_t * a / safe_r, 0.0),
            np.where(r > 0, sin_t * b / safe_r, 0.0),
            cos_t,
        ],
        axis=-1,
    )
    d_world = d_cam @ cam.rotation.T
    return d_world, theta, converged, in_field


def pixel_to_ray(cam: FisheyeCamera, u: float, v: float) -> Ray:
    """World ray viewed by the continuous pixel coordinate (u, v).

    Raises NoConvergenceError if the Newton solve does not converge, and
    OutOfFieldError if the recovered angle exceeds the camera's fov_max.
    """
    d, theta, conv, in_field = _rays_from_pixels(cam, np.array([[u, v]]))
    if not conv[0]:
        raise NoConvergenceError(
            f"distortion inversion failed at pixel ({u}, {v})"
        )
    if not in_field[0]:
        raise OutOfFieldError(
            f"pixel ({u}, {v}) maps to theta={theta[0]:.4f} > fov_max={cam.fov_max:.4f}"
        )
    return Ray(
        origin=cam.translation.copy(),
        direction=d[0],
        theta_d=float(theta[0]),
        pixel=(float(u), float(v)),
    )


def rays_for_pixels(cam: FisheyeCamera, uv: np.ndarray) -> RayBatch:
    """Batch variant of pixel_to_ray for continuous coordinates (N, 2)."""
    d, theta, conv, in_field = _rays_from_pixels(cam, uv)
    if not conv.all():
        raise NoConvergenceError("distortion inversion failed for a batch pixel")
    if not in_field.all():
        raise OutOfFieldError("batch contains pixels beyond fov_max")
    origins = np.broadcast_to(cam.translation, d.shape).copy()
    return RayBatch(origins, d, theta, np.asarray(uv, dtype=np.float64))


def generate_ray_batch(
    cam: FisheyeCamera,
    mask: PixelMask,
    n: int,
    seed: int,
    jitter: bool = False,
) -> RayBatch:
    """Rays at n uniformly sampled valid pixels, deterministic given seed.

    Pixels are drawn without replacement while enough distinct valid pixels
    exist, with replacement otherwise. Rays pass through pixel centers
    (col + 0.5, row + 0.5), plus uniform sub-pixel jitter when requested.
    """
    if n == 0:
        return RayBatch(
            np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 2))
        )
    rows, cols = np.nonzero(mask.valid)
    n_valid = rows.size
    if n_valid == 0:
        raise InsufficientPixelsError("mask has no valid pixels")
    rng = np.random.Generator(np.random.PCG64(seed))
    pick = rng.choice(n_valid, size=n, replace=n > n_valid)
    u = cols[pick].astype(np.float64) + 0.5
    v = rows[pick].astype(np.float64) + 0.5
    if jitter:
        u += rng.uniform(-0.5, 0.5, size=n)
        v += rng.uniform(-0.5, 0.5, size=n)
    return rays_for_pixels(cam, np.stack([u, v], axis=-1))


def circular_mask(cam: FisheyeCamera) -> PixelMask:
    """Valid pixels are those whose center ray angle is within fov_max."""
    cc, rr = np.meshgrid(
        np.arange(cam.width, dtype=np.float64) + 0.5,
        np.arange(cam.height, dtype=np.float64) + 0.5,
    )
    uv = np.stack([cc.reshape(-1), rr.reshape(-1)], axis=-1)
    a = (uv[:, 0] - cam.cx) / cam.fx
    b = (uv[:, 1] - cam.cy) / cam.fy
    r = np.hypot(a, b)
    theta, converged = solve_theta(r, cam.dist)
    valid = converged & (theta <= cam.fov_max + 1e-12)
    return PixelMask(cam.width, cam.height, valid.reshape(cam.height, cam.width))


def load_cameras(path) -> list[FisheyeCamera]:
    """Read a dataset camera file: a JSON array of per-frame dictionaries."""
    with open(path, "r", encoding="utf-8") as f:
        frames = json.load(f)
    return [FisheyeCamera.from_dict(d) for d in frames]


def save_cameras(path, cams: list[FisheyeCamera]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump([c.to_dict() for c in cams], f, indent=1)
