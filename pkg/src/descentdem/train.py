"""Training loop wiring cameras, rendering, and losses per iteration.

Each iteration samples a pixel batch from one frame (round-robin over
frames), renders both scene branches along shared sample boundaries,
assembles the scheduled losses, and takes one Adam step. All randomness is
derived from the config seed, and every gradient reduction has a fixed
order, so identical runs produce bitwise-identical checkpoints and DEMs.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .camera import rays_for_pixels, solve_theta
from .dataset import DescentDataset, save_heightmap
from .errors import DataMissingError, NonFiniteLossError
from .fields import ColorHead, DirectionalColorHead, HeightField, RadianceField, contract
from .fileio import write_checkpoint
from .losses import (
    HEIGHT_SCHEDULE_DEFAULT,
    MVS_SCHEDULE_DEFAULT,
    HeightLossGrid,
    LossWeights,
    distortion_loss_angle,
    height_consistency_loss,
    mvs_supervision_loss,
    rgb_loss,
    total_loss,
)
from .metrics import HeightMap
from .render import RenderContext, render_branch_a, render_branch_b, sample_bounds


@dataclass
class TrainConfig:
    """Hyperparameters; defaults follow the reference lunar configuration
    where one was published and desk-scale choices elsewhere."""

    iterations: int = 5000
    ray_batch_size: int = 1024
    n_coarse: int = 64
    n_fine: int = 64
    t_near: float = 0.15
    t_far: float = 500.0
    # loss weights and schedules
    lambda_cA: float = 1.0
    lambda_cB: float = 0.001
    lambda_dist: float = 0.01
    height_schedule: tuple = HEIGHT_SCHEDULE_DEFAULT
    mvs_schedule: tuple = MVS_SCHEDULE_DEFAULT
    # ablations
    angle_aware_distortion: bool = True
    hapke_lighting: bool = True
    mvs_supervision: bool = False
    gradient_to: str = "both"
    # optimizer
    lr_hash: float = 1e-2
    lr_height: float = 1e-2
    lr_net: float = 1e-3
    lr_final_frac: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    dtype: str = "float32"
    deterministic: bool = True
    # height field
    hf_grid: tuple = (96, 96)
    feature_dim: int = 15
    h_scale: float = None
    h_offset: float = 0.0
    k1: float = 10000.0
    k2: float = 1000.0
    # radiance field
    rf_levels: int = 8
    rf_base_res: int = 16
    rf_growth: float = 1.5
    rf_table_size: int = 2**15
    rf_feat_per_level: int = 2
    rf_hidden: int = 64
    rf_hidden_layers: int = 2
    emb_dim: int = 15
    density_activation: str = "softplus"
    scene_radius: float = None
    # height-consistency grid
    hc_rows: int = 32
    hc_cols: int = 32
    hc_n_coarse: int = 48
    hc_n_fine: int = 48
    light_warmup_its: int = 2000
    # plumbing
    jitter_pixels: bool = True
    dem_res: int = 256
    log_interval: int = 100
    guard_interval: int = 100
    region: tuple = None  # ((x0, x1), (y0, y1)); dataset metadata if None

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if not 0 < self.t_near < self.t_far:
            raise ValueError("need 0 < t_near < t_far")
        if self.ray_batch_size < 1:
            raise ValueError("ray batch size must be >= 1")

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lambda_cA=self.lambda_cA,
            lambda_cB=self.lambda_cB,
            lambda_dist=self.lambda_dist,
            height_schedule=tuple(tuple(p) for p in self.height_schedule),
            mvs_schedule=tuple(tuple(p) for p in self.mvs_schedule),
        )

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=1)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
        cfg = cls()
        fields = {k: raw[k] for k in raw if k in asdict(cfg)}
        for key in ("height_schedule", "mvs_schedule"):
            if key in fields:
                fields[key] = tuple(tuple(p) for p in fields[key])
        for key in ("hf_grid", "region"):
            if key in fields and fields[key] is not None:
                fields[key] = tuple(
                    tuple(v) if isinstance(v, list) else v for v in fields[key]
                )
        return replace(cfg, **fields)


class ParameterSet:
    """Named parameters with Adam moment state and one shared step count."""

    def __init__(self, named: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(sorted(named.items()))
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = {k: np.zeros_like(p.value) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in self.params.items()}
        self.step_count = 0

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def gradients(self) -> dict:
        """Per-parameter gradients; parameters the loss never touched get
        zeros."""
        return {
            k: (p.grad if p.grad is not None else np.zeros_like(p.value))
            for k, p in self.params.items()
        }

    def adam_step(self, lr) -> None:
        """Bias-corrected Adam update. lr is a float or a name -> float map
        for per-group learning rates."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else 0.0
            rate = lr(name) if callable(lr) else float(lr)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            np.add(v, (1.0 - self.beta2) * np.square(g), out=v)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.value -= (rate * update).astype(p.value.dtype, copy=False)

    def state(self) -> dict:
        return {k: p.value for k, p in self.params.items()}


def backward(loss: ad.Tensor) -> None:
    """Reverse-mode pass; gradients land in each parameter's .grad."""
    ad.backward(loss)


@dataclass
class TrainResult:
    heightmap: HeightMap
    checkpoint: dict
    log_rows: list
    radiance_field: RadianceField
    height_field: HeightField
    color_head: object
    config: TrainConfig


class _FrameSampler:
    """Cached valid-pixel sampler for one frame (same semantics as
    camera.generate_ray_batch, without re-scanning the mask)."""

    def __init__(self, frame):
        self.frame = frame
        rows, cols = np.nonzero(frame.mask.valid)
        self.rows = rows
        self.cols = cols

    def sample(self, n, seed, jitter) -> tuple:
        if self.rows.size == 0:
            raise DataMissingError("frame has no valid pixels")
        rng = np.random.Generator(np.random.PCG64(seed))
        pick = rng.choice(self.rows.size, size=n, replace=n > self.rows.size)
        r = self.rows[pick]
        c = self.cols[pick]
        u = c + 0.5
        v = r + 0.5
        if jitter:
            # jitter can push border pixels past fov_max; those fall back
            # to their (always valid) centers
            uj = u + rng.uniform(-0.5, 0.5, size=n)
            vj = v + rng.uniform(-0.5, 0.5, size=n)
            cam = self.frame.camera
            a = (uj - cam.cx) / cam.fx
            b = (vj - cam.cy) / cam.fy
            theta, conv = solve_theta(np.hypot(a, b), cam.dist)
            ok = conv & (theta <= cam.fov_max)
            u = np.where(ok, uj, u)
            v = np.where(ok, vj, v)
        batch = rays_for_pixels(self.frame.camera, np.stack([u, v], axis=-1))
        targets = self.frame.image[r, c].astype(np.float64)
        return batch, targets


def _subseed(root: int, *keys) -> int:
    return int(np.random.SeedSequence((root,) + keys).generate_state(1)[0])


def _learning_rate_factor(it: int, total: int, final_frac: float) -> float:
    return final_frac + (1.0 - final_frac) * 0.5 * (
        1.0 + np.cos(np.pi * it / max(total, 1))
    )


def train(
    dataset: DescentDataset,
    config: TrainConfig,
    out_dir=None,
    mvs: HeightMap = None,
    log_fn=print,
) -> TrainResult:
    """Optimize both representations against the descent imagery.

    Writes checkpoint.bin, dem.pfm/.json, and train_log.csv into out_dir
    when given, and returns the final height map plus parameter state.
    """
    if dataset.n_frames < 1:
        raise DataMissingError("dataset has no frames")
    if all(f.mask.count() == 0 for f in dataset.frames):
        raise DataMissingError("dataset has no valid pixels")
    if config.mvs_supervision and mvs is None:
        raise DataMissingError("MVS supervision enabled but no MVS map given")

    dtype = np.float32 if config.dtype == "float32" else np.float64
    x_range, y_range = config.region or dataset.region()
    h_k = dataset.top_camera_height()
    scene_radius = config.scene_radius
    if scene_radius is None:
        half_diag = float(
            np.hypot(
                max(abs(x_range[0]), abs(x_range[1])),
                max(abs(y_range[0]), abs(y_range[1])),
            )
        )
        scene_radius = 1.05 * max(half_diag, abs(h_k))
    h_scale = config.h_scale
    if h_scale is None:
        amp = dataset.meta.get("terrain", {}).get("amplitude", 0.0)
        h_scale = 1.5 * amp if amp else 0.1 * (x_range[1] - x_range[0])

    rf = RadianceField.create(
        levels=config.rf_levels,
        base_res=config.rf_base_res,
        growth=config.rf_growth,
        table_size=config.rf_table_size,
        feat_per_level=config.rf_feat_per_level,
        hidden=config.rf_hidden,
        n_hidden_layers=config.rf_hidden_layers,
        emb_dim=config.emb_dim,
        density_activation=config.density_activation,
        seed=_subseed(config.seed, 1),
        dtype=dtype,
    )
    hf = HeightField.create(
        x_range=x_range,
        y_range=y_range,
        grid_res=config.hf_grid,
        feature_dim=config.feature_dim,
        h_scale=h_scale,
        h_offset=config.h_offset,
        k1=config.k1,
        k2=config.k2,
        seed=_subseed(config.seed, 2),
        dtype=dtype,
    )
    head_cls = ColorHead if config.hapke_lighting else DirectionalColorHead
    head = head_cls.create(
        emb_dim=config.emb_dim, seed=_subseed(config.seed, 3), dtype=dtype
    )

    sun = dataset.sun()
    hapke = dataset.hapke()
    weights = config.loss_weights()
    grid = HeightLossGrid.for_region(
        x_range,
        y_range,
        config.hc_rows,
        config.hc_cols,
        h_k,
        seed=_subseed(config.seed, 4),
    )
    named = {}
    named.update(rf.parameters())
    named.update(hf.parameters())
    named.update(head.parameters())
    params = ParameterSet(named, config.beta1, config.beta2, config.adam_eps)

    def group_lr(base_factor):
        def lr_for(name):
            if name == "hf.raw_height":
                base = config.lr_height
            elif name in ("rf.tables", "hf.features"):
                base = config.lr_hash
            else:
                base = config.lr_net
            return base * base_factor

        return lr_for

    samplers = [_FrameSampler(f) for f in dataset.frames]
    z_span = 0.1 * 2.0 * h_scale
    z_range = (
        config.h_offset - h_scale - z_span,
        config.h_offset + h_scale + z_span,
    )

    def density_fn(p):
        return rf.density_at(contract(p / scene_radius))

    log_rows = []
    csv_header = "iteration,L_cA,L_cB,L_dist,L_height,L_mvs,total,seconds"
    started = time.time()

    for it in range(config.iterations):
        sampler = samplers[it % len(samplers)]
        batch, targets = sampler.sample(
            config.ray_batch_size,
            _subseed(config.seed, 10, it),
            config.jitter_pixels,
        )
        ctx = RenderContext(
            color_head=head,
            hapke=hapke,
            sun=sun,
            scene_radius=scene_radius,
            use_hapke=config.hapke_lighting,
            light_through_height=it >= config.light_warmup_its,
        )
        t = sample_bounds(
            batch.origins,
            batch.directions,
            config.t_near,
            config.t_far,
            config.n_coarse,
            config.n_fine,
            seed=_subseed(config.seed, 11, it),
            density_fn=density_fn,
        )
        out_a = render_branch_a(rf, batch, t, ctx, config.t_near, config.t_far)
        out_b = render_branch_b(hf, batch, t, ctx, config.t_near, config.t_far)
        parts = {
            "L_cA": rgb_loss(out_a.rgb, targets, weights.lambda_cA),
            "L_cB": rgb_loss(out_b.rgb, targets, weights.lambda_cB),
            "L_dist": distortion_loss_angle(
                out_a.samples,
                batch.theta_d,
                weights.lambda_dist,
                per_ray=out_a.distortion,
                angle_aware=config.angle_aware_distortion,
            ),
            "L_height": height_consistency_loss(
                rf,
                hf,
                grid,
                weights.height_weight(it),
                iteration=it,
                z_range=z_range,
                n_coarse=config.hc_n_coarse,
                n_fine=config.hc_n_fine,
                scene_radius=scene_radius,
                gradient_to=config.gradient_to,
            ),
        }
        if config.mvs_supervision:
            parts["L_mvs"] = mvs_supervision_loss(hf, mvs, weights.mvs_weight(it))
        loss, breakdown = total_loss(parts)
        if not np.isfinite(breakdown["total"]):
            raise NonFiniteLossError(f"iteration {it}: non-finite loss {breakdown}")

        params.zero_grad()
        backward(loss)
        params.adam_step(
            group_lr(
                _learning_rate_factor(it, config.iterations, config.lr_final_frac)
            )
        )

        if it % config.guard_interval == 0:
            for name, p in params.params.items():
                if not np.all(np.isfinite(p.value)):
                    raise NonFiniteLossError(
                        f"iteration {it}: parameter {name} became non-finite"
                    )
        if it % config.log_interval == 0 or it == config.iterations - 1:
            row = (
                f"{it},{breakdown['L_cA']:.6g},{breakdown['L_cB']:.6g},"
                f"{breakdown['L_dist']:.6g},{breakdown['L_height']:.6g},"
                f"{breakdown.get('L_mvs', 0.0):.6g},{breakdown['total']:.6g},"
                f"{time.time() - started:.1f}"
            )
            log_rows.append(row)
            if log_fn is not None:
                log_fn(row)

    heightmap = hf.to_heightmap((config.dem_res, config.dem_res))
    checkpoint = params.state()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_checkpoint(os.path.join(out_dir, "checkpoint.bin"), checkpoint)
        save_heightmap(os.path.join(out_dir, "dem.pfm"), heightmap)
        with open(os.path.join(out_dir, "train_log.csv"), "w", encoding="utf-8") as f:
            f.write(csv_header + "\n")
            f.write("\n".join(log_rows) + "\n")
        config.to_json(os.path.join(out_dir, "config.json"))
    return TrainResult(
        heightmap=heightmap,
        checkpoint=checkpoint,
        log_rows=log_rows,
        radiance_field=rf,
        height_field=hf,
        color_head=head,
        config=config,
    )
