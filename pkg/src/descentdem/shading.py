"""Hapke reflectance shading for particulate planetary surfaces.

The lighting scalar multiplying predicted albedo is the IMSA bidirectional
reflectance with a single-lobe Henyey-Greenstein phase function, the
two-parameter opposition surge, and the rational two-term approximation of
the Chandrasekhar H function:

    r = I * (w/4) * mu0/(mu0 + mu) * [(1 + B(g)) P(g) + H(mu0) H(mu) - 1]

with mu0 / mu the cosines of incidence and emission, g the phase angle,
P(g) = (1 - b^2) / (1 + 2 b cos g + b^2)^1.5,
B(g) = B0 / (1 + tan(g/2) / h_op), and H(x) = (1 + 2x) / (1 + 2x sqrt(1-w)).
Shadowed or grazing geometry (mu0 = 0) reflects nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import NonUnitVectorError

UNIT_TOL = 1e-9


@dataclass
class HapkeParams:
    """Single global photometric parameter set for a scene."""

    w: float = 0.8
    b_hg: float = -0.3
    B0: float = 0.6
    h_op: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.w <= 1.0:
            raise ValueError("single-scattering albedo w must be in (0, 1]")
        if not -1.0 < self.b_hg < 1.0:
            raise ValueError("asymmetry b_hg must be in (-1, 1)")
        if self.B0 < 0.0:
            raise ValueError("opposition amplitude B0 must be >= 0")
        if self.h_op <= 0.0:
            raise ValueError("opposition width h_op must be > 0")

    def to_dict(self) -> dict:
        return {"w": self.w, "b_hg": self.b_hg, "B0": self.B0, "h_op": self.h_op}

    @classmethod
    def from_dict(cls, d: dict) -> "HapkeParams":
        return cls(**d)


@dataclass
class SunGeometry:
    """Unit direction toward the sun in world coordinates, plus intensity."""

    sun_dir: np.ndarray
    intensity: float = 1.0

    def __post_init__(self):
        self.sun_dir = np.asarray(self.sun_dir, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(self.sun_dir) - 1.0) > UNIT_TOL:
            raise NonUnitVectorError("sun_dir must be unit length")
        if self.intensity <= 0:
            raise ValueError("intensity must be positive")

    def to_dict(self) -> dict:
        return {"sun_dir": [float(v) for v in self.sun_dir], "intensity": self.intensity}

    @classmethod
    def from_dict(cls, d: dict) -> "SunGeometry":
        return cls(np.asarray(d["sun_dir"]), float(d["intensity"]))

    @classmethod
    def from_angles(cls, elevation_rad: float, azimuth_rad: float, intensity=1.0):
        ce = np.cos(elevation_rad)
        return cls(
            np.array(
                [ce * np.cos(azimuth_rad), ce * np.sin(azimuth_rad), np.sin(elevation_rad)]
            ),
            intensity,
        )


def _phase_hg(cos_g: np.ndarray, b: float) -> np.ndarray:
    return (1.0 - b * b) / (1.0 + 2.0 * b * cos_g + b * b) ** 1.5


def _opposition(cos_g: np.ndarray, B0: float, h_op: float) -> np.ndarray:
    g = np.arccos(np.clip(cos_g, -1.0, 1.0))
    return B0 / (1.0 + np.tan(0.5 * g) / h_op)


def hapke_light_mu(params: HapkeParams, mu0, mu, cos_g, intensity=1.0):
    """Reflectance from incidence/emission cosines and phase cosine.

    mu0 and mu may be Tensors (differentiable path for learned normals);
    cos_g is treated as geometry and carries no gradient. mu0 and mu must
    already be clamped to be nonnegative.
    """
    cos_g = np.asarray(ad.value_of(cos_g), dtype=np.float64)
    p = _phase_hg(cos_g, params.b_hg)
    b = _opposition(cos_g, params.B0, params.h_op)
    gamma = float(np.sqrt(1.0 - params.w))

    def hfun(x):
        return (1.0 + 2.0 * x) / (1.0 + 2.0 * gamma * x)

    bracket = (1.0 + b) * p + hfun(mu0) * hfun(mu) - 1.0
    denom = mu0 + mu
    lit = np.asarray(ad.value_of(denom)) > 0
    ratio = mu0 / ad.where(lit, denom, 1.0)
    r = (0.25 * params.w * float(intensity)) * ratio * bracket
    return ad.where(lit, r, 0.0)


def hapke_light(params: HapkeParams, sun: SunGeometry, normal, view_dir):
    """Lighting scalar for unit surface normal(s) and viewing direction(s).

    normal and view_dir are (..., 3) arrays; view_dir points from the
    camera toward the surface. Returns 0 where the sun is below the local
    horizon.
    """
    normal = np.asarray(normal, dtype=np.float64)
    view_dir = np.asarray(view_dir, dtype=np.float64)
    for name, vec in (("normal", normal), ("view_dir", view_dir)):
        norms = np.linalg.norm(vec, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise NonUnitVectorError(f"{name} must be unit length")
    mu0 = np.maximum(0.0, np.sum(normal * sun.sun_dir, axis=-1))
    mu = np.maximum(0.0, -np.sum(normal * view_dir, axis=-1))
    cos_g = -np.sum(view_dir * sun.sun_dir, axis=-1)
    return hapke_light_mu(params, mu0, mu, cos_g, sun.intensity)


def heightfield_normal_components(hf, x, y, step=None):
    """Differentiable unit normal components from central differences.

    Returns (nx, ny, nz) with the same array/Tensor type as the height
    queries; the normal is proportional to (-dh/dx, -dh/dy, 1).
    """
    if step is None:
        sx = 0.5 * (hf.x_range[1] - hf.x_range[0]) / hf.grid_res[1]
        sy = 0.5 * (hf.y_range[1] - hf.y_range[0]) / hf.grid_res[0]
    else:
        sx = sy = float(step)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dhdx = (hf.height_at(x + sx, y) - hf.height_at(x - sx, y)) / (2.0 * sx)
    dhdy = (hf.height_at(x, y + sy) - hf.height_at(x, y - sy)) / (2.0 * sy)
    inv_len = 1.0 / ad.sqrt(dhdx * dhdx + dhdy * dhdy + 1.0)
    return -dhdx * inv_len, -dhdy * inv_len, inv_len


def heightfield_normal(hf, x, y, step=None) -> np.ndarray:
    """Unit surface normal(s) of the height field as an (..., 3) array."""
    with ad.no_grad():
        nx, ny, nz = heightfield_normal_components(hf, x, y, step=step)
    return np.stack(
        [ad.value_of(nx), ad.value_of(ny), ad.value_of(nz)], axis=-1
    )


def hapke_light_from_heights(params, sun, hf, x, y, view_dir, differentiable):
    """Branch-B lighting at planar points, via the field's own normals.

    view_dir is an (N, 3) constant array. When differentiable is False the
    lighting is computed outside the gradient tape (early-training staging).
    """
    view_dir = np.asarray(ad.value_of(view_dir), dtype=np.float64).reshape(-1, 3)

    def compute():
        nx, ny, nz = heightfield_normal_components(hf, x, y)
        s = sun.sun_dir
        mu0 = ad.relu(nx * s[0] + ny * s[1] + nz * s[2])
        mu = ad.relu(
            -(nx * view_dir[:, 0] + ny * view_dir[:, 1] + nz * view_dir[:, 2])
        )
        cos_g = -view_dir @ s
        return hapke_light_mu(params, mu0, mu, cos_g, sun.intensity)

    if differentiable:
        return compute()
    with ad.no_grad():
        out = compute()
    return ad.constant(ad.value_of(out))
