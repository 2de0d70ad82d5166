"""Training objectives: per-branch RGB, angle-aware distortion,
height-consistency distillation, and optional MVS anchoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import NoValidCellsError
from .metrics import HeightMap
from .render import expected_depth_vertical, ray_distortion

# piecewise-constant schedules: (iteration threshold, value), value active
# from that iteration on
HEIGHT_SCHEDULE_DEFAULT = ((0, 0.0), (2000, 1.0), (4000, 0.001))
MVS_SCHEDULE_DEFAULT = ((0, 1.0), (10000, 0.01))

PRED_RGB_CAP = 4.0


def schedule_value(schedule, iteration: int) -> float:
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    value = None
    for start, v in schedule:
        if iteration >= start:
            value = v
    if value is None:
        raise ValueError("schedule must start at iteration 0")
    return float(value)


@dataclass
class LossWeights:
    """Scalar weights and iteration schedules for every loss term."""

    lambda_cA: float = 1.0
    lambda_cB: float = 0.001
    lambda_dist: float = 0.01
    height_schedule: tuple = HEIGHT_SCHEDULE_DEFAULT
    mvs_schedule: tuple = MVS_SCHEDULE_DEFAULT

    def __post_init__(self):
        if min(self.lambda_cA, self.lambda_cB, self.lambda_dist) < 0:
            raise ValueError("loss weights must be nonnegative")
        for sched in (self.height_schedule, self.mvs_schedule):
            if sched[0][0] != 0:
                raise ValueError("schedules must define a value from iteration 0")
            if any(v < 0 for _, v in sched):
                raise ValueError("schedule values must be nonnegative")

    def height_weight(self, iteration: int) -> float:
        return schedule_value(self.height_schedule, iteration)

    def mvs_weight(self, iteration: int) -> float:
        return schedule_value(self.mvs_schedule, iteration)


@dataclass
class HeightLossGrid:
    """Planar cell grid at the top camera's height for distillation rays."""

    grid_origin: tuple
    cell_size: tuple
    rows: int
    cols: int
    h_k: float
    seed: int = 0

    @classmethod
    def for_region(cls, x_range, y_range, rows, cols, h_k, seed=0):
        dx = (x_range[1] - x_range[0]) / cols
        dy = (y_range[1] - y_range[0]) / rows
        return cls(
            grid_origin=(float(x_range[0]), float(y_range[0])),
            cell_size=(dx, dy),
            rows=rows,
            cols=cols,
            h_k=float(h_k),
            seed=seed,
        )

    def sample_origins(self, iteration: int) -> np.ndarray:
        """One stratified ray origin per cell, re-jittered every iteration."""
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((self.seed, iteration)))
        )
        jj, ii = np.meshgrid(np.arange(self.cols), np.arange(self.rows))
        u = rng.uniform(0.0, 1.0, size=(self.rows, self.cols))
        v = rng.uniform(0.0, 1.0, size=(self.rows, self.cols))
        x = self.grid_origin[0] + (jj + u) * self.cell_size[0]
        y = self.grid_origin[1] + (ii + v) * self.cell_size[1]
        out = np.stack(
            [x.reshape(-1), y.reshape(-1), np.full(x.size, self.h_k)], axis=-1
        )
        return out


def rgb_loss(pred, target, weight: float):
    """Weighted mean squared color error; predictions capped at a sane
    range since lighting can push them slightly past 1."""
    pred = ad.clip(pred, 0.0, PRED_RGB_CAP)
    target = np.asarray(ad.value_of(target))
    diff = pred - target
    return float(weight) * ad.tmean(diff * diff)


def distortion_loss_angle(
    samples,
    theta_d,
    lambda_dist: float,
    per_ray=None,
    angle_aware: bool = True,
):
    """Mean per-ray distortion, scaled by cos(theta_d) per ray.

    `samples` must have weights populated (composite does this); a
    precomputed per-ray distortion can be passed to avoid recomputation.
    Setting angle_aware=False recovers the plain isotropic loss.
    """
    if per_ray is None:
        per_ray = ray_distortion(samples.weights, samples.s_boundaries())
    theta = np.asarray(ad.value_of(theta_d), dtype=np.float64)
    if angle_aware:
        per_ray = per_ray * np.cos(theta)
    return float(lambda_dist) * ad.tmean(per_ray)


def height_consistency_loss(
    rf,
    hf,
    grid: HeightLossGrid,
    lambda_height: float,
    iteration: int = 0,
    z_range=None,
    n_coarse: int = 48,
    n_fine: int = 48,
    scene_radius: float = 1.0,
    gradient_to: str = "both",
):
    """Distill geometry between branches with an L1 on surface elevation.

    Vertical rays from the top-camera grid give the radiance field's
    expected depth; h_k - depth is compared against the height field.
    `gradient_to` chooses which side(s) learn: both, radiance, or height.
    """
    if lambda_height == 0.0:
        return ad.constant(0.0)
    origins = grid.sample_origins(iteration)
    if z_range is None:
        margin = 0.1 * 2.0 * hf.h_scale
        z_range = (hf.h_offset - hf.h_scale - margin, hf.h_offset + hf.h_scale + margin)
    seed = int(
        np.random.SeedSequence((grid.seed, iteration, 0xD1)).generate_state(1)[0]
    )
    depth = expected_depth_vertical(
        rf,
        origins,
        z_range,
        n_coarse=n_coarse,
        n_fine=n_fine,
        seed=seed,
        scene_radius=scene_radius,
    )
    height, _ = hf.query(origins[:, 0], origins[:, 1])
    if gradient_to == "radiance":
        height = height.detach() if isinstance(height, ad.Tensor) else height
    elif gradient_to == "height":
        depth = depth.detach() if isinstance(depth, ad.Tensor) else depth
    elif gradient_to != "both":
        raise ValueError(f"unknown gradient_to {gradient_to!r}")
    predicted_elev = grid.h_k - depth
    return float(lambda_height) * ad.tmean(ad.absolute(predicted_elev - height))


def mvs_supervision_loss(hf, mvs: HeightMap, lambda_mvs: float):
    """L1 between an external MVS DEM and the height field at valid cells."""
    sel = mvs.valid
    if not sel.any():
        raise NoValidCellsError("MVS height map has no valid cells")
    xx, yy = mvs.cell_centers()
    x = xx[sel]
    y = yy[sel]
    target = mvs.values[sel].astype(np.float64)
    height, _ = hf.query(x, y)
    return float(lambda_mvs) * ad.tmean(ad.absolute(height - target))


def total_loss(parts: dict):
    """Sum of every term plus a float breakdown for logging."""
    total = None
    breakdown = {}
    for name, term in parts.items():
        breakdown[name] = float(np.asarray(ad.value_of(term)))
        total = term if total is None else total + term
    if total is None:
        total = ad.constant(0.0)
    breakdown["total"] = float(np.asarray(ad.value_of(total)))
    return total, breakdown
