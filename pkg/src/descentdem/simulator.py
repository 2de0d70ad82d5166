"""Synthetic descent data: analytic terrains rendered through the fisheye
camera with Hapke shading, plus degraded pseudo-MVS height maps.

Every terrain is a closed-form, seed-deterministic height function, so
rendered depths and shading can be checked against exact ray-plane or
root-bracketing oracles.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .camera import FisheyeCamera, circular_mask, distort_theta, rays_for_pixels
from .dataset import Frame, save_dataset
from .metrics import HeightMap
from .shading import HapkeParams, SunGeometry, hapke_light

BISECT_STEPS = 30
BISECT_RTOL = 1e-6
MARCH_SAFETY = 0.25


@dataclass
class TerrainSpec:
    """Parameters of an analytic terrain; height is bounded by amplitude."""

    kind: str = "flat"
    amplitude: float = 0.0
    x_range: tuple = (-50.0, 50.0)
    y_range: tuple = (-50.0, 50.0)
    seed: int = 0
    albedo: tuple = (0.8, 0.78, 0.75)
    albedo_variation: float = 0.0
    crater_count: int = 12
    crater_radius: tuple = (4.0, 12.0)
    wavelength: float = 20.0
    wavelength_y: float = None
    octaves: int = 4
    base_cells: int = 4
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        kinds = ("flat", "gaussian_craters", "sinusoid", "value_noise")
        if self.kind not in kinds:
            raise ValueError(f"kind must be one of {kinds}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "amplitude": self.amplitude,
            "x_range": list(self.x_range),
            "y_range": list(self.y_range),
            "seed": self.seed,
            "albedo": list(self.albedo),
            "albedo_variation": self.albedo_variation,
            "crater_count": self.crater_count,
            "crater_radius": list(self.crater_radius),
            "wavelength": self.wavelength,
            "wavelength_y": self.wavelength_y,
            "octaves": self.octaves,
            "base_cells": self.base_cells,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TerrainSpec":
        d = dict(d)
        for key in ("x_range", "y_range", "albedo", "crater_radius"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def _craters(spec: TerrainSpec):
    if "craters" in spec._cache:
        return spec._cache["craters"]
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    x0, x1 = spec.x_range
    y0, y1 = spec.y_range
    n = spec.crater_count
    margin = 0.05
    cx = rng.uniform(x0 + margin * (x1 - x0), x1 - margin * (x1 - x0), n)
    cy = rng.uniform(y0 + margin * (y1 - y0), y1 - margin * (y1 - y0), n)
    sigma = rng.uniform(*spec.crater_radius, n) / 2.0
    depth = rng.uniform(0.3, 1.0, n) * spec.amplitude
    # rescale overlapping bowls so the summed relief stays within amplitude
    if n and spec.amplitude > 0:
        px = np.linspace(x0, x1, 128)
        py = np.linspace(y0, y1, 128)
        xx, yy = np.meshgrid(px, py)
        raw = _crater_sum(xx, yy, cx, cy, sigma, depth)
        peak = np.abs(raw).max()
        if peak > spec.amplitude:
            depth = depth * (spec.amplitude / peak)
    spec._cache["craters"] = (cx, cy, sigma, depth)
    return spec._cache["craters"]


def _crater_sum(x, y, cx, cy, sigma, depth):
    out = np.zeros(np.broadcast(x, y).shape, dtype=np.float64)
    for i in range(cx.size):
        r2 = (x - cx[i]) ** 2 + (y - cy[i]) ** 2
        out -= depth[i] * np.exp(-r2 / (2.0 * sigma[i] ** 2))
    return out


def _noise_lattices(spec: TerrainSpec):
    if "lattices" in spec._cache:
        return spec._cache["lattices"]
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    lats = []
    for o in range(spec.octaves):
        res = spec.base_cells * 2**o
        lats.append(rng.uniform(-1.0, 1.0, size=(res + 1, res + 1)))
    spec._cache["lattices"] = lats
    return lats


def _bilinear_lattice(lat, u, v):
    res = lat.shape[0] - 1
    gu = np.clip(u * res, 0, res)
    gv = np.clip(v * res, 0, res)
    i0 = np.minimum(gu.astype(np.int64), res - 1)
    j0 = np.minimum(gv.astype(np.int64), res - 1)
    fu = gu - i0
    fv = gv - j0
    return (
        lat[j0, i0] * (1 - fu) * (1 - fv)
        + lat[j0, i0 + 1] * fu * (1 - fv)
        + lat[j0 + 1, i0] * (1 - fu) * fv
        + lat[j0 + 1, i0 + 1] * fu * fv
    )


def terrain_height(spec: TerrainSpec, x, y):
    """Closed-form terrain elevation; vectorized over x and y."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if spec.kind == "flat":
        return np.zeros(np.broadcast(x, y).shape)
    if spec.kind == "gaussian_craters":
        cx, cy, sigma, depth = _craters(spec)
        return _crater_sum(x, y, cx, cy, sigma, depth)
    if spec.kind == "sinusoid":
        h = np.sin(2.0 * np.pi * x / spec.wavelength)
        if spec.wavelength_y is not None:
            h = 0.5 * (h + np.sin(2.0 * np.pi * y / spec.wavelength_y))
        return spec.amplitude * h
    # value_noise
    lats = _noise_lattices(spec)
    u = (x - spec.x_range[0]) / (spec.x_range[1] - spec.x_range[0])
    v = (y - spec.y_range[0]) / (spec.y_range[1] - spec.y_range[0])
    weights = np.array([0.5**o for o in range(spec.octaves)])
    weights /= weights.sum()
    out = np.zeros(np.broadcast(x, y).shape)
    for lat, w in zip(lats, weights):
        out += w * _bilinear_lattice(lat, u, v)
    return spec.amplitude * out


def terrain_gradient(spec: TerrainSpec, x, y):
    """(dh/dx, dh/dy); analytic where simple, tiny central steps otherwise."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if spec.kind == "flat":
        z = np.zeros(np.broadcast(x, y).shape)
        return z, z.copy()
    if spec.kind == "gaussian_craters":
        cx, cy, sigma, depth = _craters(spec)
        gx = np.zeros(np.broadcast(x, y).shape)
        gy = np.zeros_like(gx)
        for i in range(cx.size):
            dx = x - cx[i]
            dy = y - cy[i]
            e = depth[i] * np.exp(-(dx**2 + dy**2) / (2.0 * sigma[i] ** 2))
            gx += e * dx / sigma[i] ** 2
            gy += e * dy / sigma[i] ** 2
        return gx, gy
    if spec.kind == "sinusoid":
        k = 2.0 * np.pi / spec.wavelength
        gx = spec.amplitude * k * np.cos(k * x)
        if spec.wavelength_y is not None:
            ky = 2.0 * np.pi / spec.wavelength_y
            gx = 0.5 * gx
            gy = 0.5 * spec.amplitude * ky * np.cos(ky * y)
        else:
            gy = np.zeros_like(gx)
        return gx, gy
    step = 1e-4 * (spec.x_range[1] - spec.x_range[0])
    gx = (terrain_height(spec, x + step, y) - terrain_height(spec, x - step, y)) / (
        2 * step
    )
    gy = (terrain_height(spec, x, y + step) - terrain_height(spec, x, y - step)) / (
        2 * step
    )
    return gx, gy


def terrain_normal(spec: TerrainSpec, x, y) -> np.ndarray:
    gx, gy = terrain_gradient(spec, x, y)
    n = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def terrain_albedo(spec: TerrainSpec, x, y) -> np.ndarray:
    base = np.asarray(spec.albedo, dtype=np.float64)
    shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
    alb = np.broadcast_to(base, shape + (3,)).copy()
    if spec.albedo_variation > 0:
        mod_spec = TerrainSpec(
            kind="value_noise",
            amplitude=spec.albedo_variation,
            x_range=spec.x_range,
            y_range=spec.y_range,
            seed=spec.seed + 17,
            octaves=3,
            base_cells=6,
        )
        alb *= (1.0 + terrain_height(mod_spec, x, y))[..., None]
    return np.clip(alb, 0.0, 1.0)


@dataclass
class DescentTrajectory:
    """Strictly descending camera path aimed at a fixed look-at target."""

    n_frames: int = 16
    start_alt: float = 120.0
    end_alt: float = 40.0
    start_offset: tuple = (0.0, 0.0)
    end_offset: tuple = (0.0, 0.0)
    look_at: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("need at least one frame")
        if not self.start_alt > self.end_alt:
            raise ValueError("altitudes must be strictly decreasing")

    def to_dict(self) -> dict:
        return {
            "n_frames": self.n_frames,
            "start_alt": self.start_alt,
            "end_alt": self.end_alt,
            "start_offset": list(self.start_offset),
            "end_offset": list(self.end_offset),
            "look_at": list(self.look_at),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DescentTrajectory":
        d = dict(d)
        for key in ("start_offset", "end_offset", "look_at"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def poses(self):
        """Per-frame (position, world-from-camera rotation) pairs."""
        if self.n_frames == 1:
            fracs = np.array([0.0])
        else:
            fracs = np.linspace(0.0, 1.0, self.n_frames)
        alts = self.start_alt + fracs * (self.end_alt - self.start_alt)
        ox = self.start_offset[0] + fracs * (self.end_offset[0] - self.start_offset[0])
        oy = self.start_offset[1] + fracs * (self.end_offset[1] - self.start_offset[1])
        target = np.asarray(self.look_at, dtype=np.float64)
        out = []
        for a, x, y in zip(alts, ox, oy):
            pos = np.array([x, y, a])
            z_cam = target - pos
            z_cam = z_cam / np.linalg.norm(z_cam)
            hint = np.array([0.0, 1.0, 0.0])
            x_cam = np.cross(hint, z_cam)
            if np.linalg.norm(x_cam) < 1e-8:
                x_cam = np.cross(np.array([1.0, 0.0, 0.0]), z_cam)
            x_cam = x_cam / np.linalg.norm(x_cam)
            y_cam = np.cross(z_cam, x_cam)
            rot = np.stack([x_cam, y_cam, z_cam], axis=-1)
            out.append((pos, rot))
        return out


def make_camera(
    pos,
    rot,
    width=128,
    height=128,
    fov_deg=150.0,
    dist=(0.03, -0.01, 0.002, 0.0),
) -> FisheyeCamera:
    """Fisheye camera whose image circle fills most of the frame."""
    theta_max = np.radians(fov_deg) / 2.0
    r_edge = float(distort_theta(theta_max, np.asarray(dist)))
    f = 0.49 * min(width, height) / r_edge
    return FisheyeCamera(
        fx=f,
        fy=f,
        cx=width / 2.0,
        cy=height / 2.0,
        dist=np.asarray(dist, dtype=np.float64),
        width=width,
        height=height,
        rotation=rot,
        translation=np.asarray(pos, dtype=np.float64),
        fov_max=theta_max,
    )


def intersect_terrain(
    spec: TerrainSpec,
    origins: np.ndarray,
    directions: np.ndarray,
    march_step: float = None,
    max_steps: int = 4000,
):
    """First ray-terrain crossings by adaptive marching plus bisection.

    Returns (t, hit): hit distance per ray, NaN where the ray never crosses
    (sky). Steps shrink near the surface (a quarter of the clearance) and
    never exceed march_step; the crossing is then refined by 30 bisection
    steps to 1e-6 relative accuracy.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    n = origins.shape[0]
    if march_step is None:
        march_step = (spec.x_range[1] - spec.x_range[0]) / 256.0
    z_floor = -abs(spec.amplitude) - 1.0
    horiz_span = 4.0 * max(
        spec.x_range[1] - spec.x_range[0], spec.y_range[1] - spec.y_range[0]
    )

    t = np.zeros(n)
    down = directions[:, 2] < 0
    t_limit = np.where(
        down,
        (origins[:, 2] - z_floor) / np.where(down, -directions[:, 2], 1.0),
        horiz_span / np.maximum(np.linalg.norm(directions[:, :2], axis=1), 1e-9),
    )
    p = origins.copy()
    clear = p[:, 2] - terrain_height(spec, p[:, 0], p[:, 1])
    active = clear > 0
    t_lo = np.zeros(n)
    t_hi = np.full(n, np.nan)
    crossed = clear <= 0  # started below the surface: treat as immediate hit
    t_hi[crossed] = 0.0

    for _ in range(max_steps):
        if not active.any():
            break
        step = np.minimum(march_step, MARCH_SAFETY * clear[active])
        step = np.maximum(step, 1e-4 * march_step)
        t_new = t[active] + step
        pa = origins[active] + t_new[:, None] * directions[active]
        h = terrain_height(spec, pa[:, 0], pa[:, 1])
        c_new = pa[:, 2] - h
        idx = np.nonzero(active)[0]
        below = c_new <= 0
        t_lo[idx[~below]] = t_new[~below]
        t_hi[idx[below]] = t_new[below]
        crossed[idx[below]] = True
        out_of_range = t_new > t_limit[idx]
        t[idx] = t_new
        clear[idx] = c_new
        active[idx[below | out_of_range]] = False

    # bisection refinement on bracketed rays
    sel = crossed & (t_hi > 0)
    if sel.any():
        lo = t_lo[sel]
        hi = t_hi[sel]
        o = origins[sel]
        d = directions[sel]
        for _ in range(BISECT_STEPS):
            mid = 0.5 * (lo + hi)
            pm = o + mid[:, None] * d
            below = pm[:, 2] <= terrain_height(spec, pm[:, 0], pm[:, 1])
            hi = np.where(below, mid, hi)
            lo = np.where(below, lo, mid)
            if np.all((hi - lo) <= BISECT_RTOL * np.maximum(hi, 1.0)):
                break
        t_hit = np.full(n, np.nan)
        t_hit[sel] = 0.5 * (lo + hi)
        t_hit[crossed & (t_hi == 0)] = 0.0
        return t_hit, crossed
    t_hit = np.full(n, np.nan)
    t_hit[crossed] = 0.0
    return t_hit, crossed


def render_gt_image(
    cam: FisheyeCamera, spec: TerrainSpec, hapke: HapkeParams, sun: SunGeometry
):
    """Exact terrain rendering: RGB (linear) and per-pixel ray length.

    Only pixels inside the image circle are rendered; the rest are black
    with NaN depth, as are sky rays that never reach the surface.
    """
    mask = circular_mask(cam)
    rows, cols = np.nonzero(mask.valid)
    uv = np.stack([cols + 0.5, rows + 0.5], axis=-1)
    batch = rays_for_pixels(cam, uv)
    t_hit, crossed = intersect_terrain(spec, batch.origins, batch.directions)
    rgb = np.zeros((cam.height, cam.width, 3), dtype=np.float32)
    depth = np.full((cam.height, cam.width), np.nan, dtype=np.float32)
    hit = np.isfinite(t_hit)
    if hit.any():
        pts = batch.origins[hit] + t_hit[hit, None] * batch.directions[hit]
        normal = terrain_normal(spec, pts[:, 0], pts[:, 1])
        light = hapke_light(hapke, sun, normal, batch.directions[hit])
        albedo = terrain_albedo(spec, pts[:, 0], pts[:, 1])
        shaded = albedo * light[:, None]
        rgb[rows[hit], cols[hit]] = shaded.astype(np.float32)
        depth[rows[hit], cols[hit]] = t_hit[hit].astype(np.float32)
    return rgb, depth


def gt_heightmap(spec: TerrainSpec, res: int = 256) -> HeightMap:
    """Ground-truth DEM: terrain sampled exactly at cell centers."""
    x0, x1 = spec.x_range
    y0, y1 = spec.y_range
    dx = (x1 - x0) / res
    xs = x0 + (np.arange(res) + 0.5) * dx
    ys = y0 + (np.arange(res) + 0.5) * (y1 - y0) / res
    xx, yy = np.meshgrid(xs, ys)
    values = terrain_height(spec, xx, yy).astype(np.float32)
    return HeightMap(values, cell_size=float(dx), origin=(float(xs[0]), float(ys[0])))


def emit_dataset(
    spec: TerrainSpec,
    trajectory: DescentTrajectory,
    hapke: HapkeParams,
    sun: SunGeometry,
    out_dir,
    width: int = 128,
    height: int = 128,
    fov_deg: float = 150.0,
    dist=(0.03, -0.01, 0.002, 0.0),
    gt_res: int = 256,
) -> None:
    """Render the full descent sequence and write the dataset layout."""
    frames = []
    top_height = None
    for pos, rot in trajectory.poses():
        cam = make_camera(pos, rot, width, height, fov_deg, dist)
        rgb, _depth = render_gt_image(cam, spec, hapke, sun)
        frames.append(Frame(camera=cam, image=rgb, mask=circular_mask(cam)))
        top_height = max(top_height or -np.inf, float(pos[2]))
    meta = {
        "x_range": list(spec.x_range),
        "y_range": list(spec.y_range),
        "top_camera_height": top_height,
        "sun": sun.to_dict(),
        "hapke": hapke.to_dict(),
        "terrain": spec.to_dict(),
        "trajectory": trajectory.to_dict(),
        "fov_deg": fov_deg,
        "image_size": [width, height],
    }
    save_dataset(out_dir, frames, meta, gt_dem=gt_heightmap(spec, gt_res))


def make_pseudo_mvs(
    gt: HeightMap, hole_fraction: float, noise_sigma: float, seed: int
) -> HeightMap:
    """Degrade a DEM into an MVS stand-in: value noise plus blob holes.

    Holes come from thresholding a smoothed random field at the requested
    quantile, which yields contiguous invalid regions totaling close to
    hole_fraction of the cells.
    """
    if not 0.0 <= hole_fraction < 1.0:
        raise ValueError("hole_fraction must be in [0, 1)")
    rng = np.random.Generator(np.random.PCG64(seed))
    values = gt.values.astype(np.float64).copy()
    if noise_sigma > 0:
        values += rng.normal(0.0, noise_sigma, size=values.shape)
    if hole_fraction > 0:
        smooth = gaussian_filter(
            rng.standard_normal(values.shape), sigma=max(2.0, values.shape[0] / 32.0)
        )
        thresh = np.quantile(smooth, hole_fraction)
        values[smooth < thresh] = np.nan
    return HeightMap(values.astype(np.float32), gt.cell_size, tuple(gt.origin))


def save_terrain_spec(path, spec: TerrainSpec) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(spec.to_dict(), f, indent=1)


def load_terrain_spec(path) -> TerrainSpec:
    with open(path, "r", encoding="utf-8") as f:
        return TerrainSpec.from_dict(json.load(f))


def load_trajectory(path) -> DescentTrajectory:
    with open(path, "r", encoding="utf-8") as f:
        return DescentTrajectory.from_dict(json.load(f))
