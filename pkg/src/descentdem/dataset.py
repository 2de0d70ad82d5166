"""Descent dataset layout: images, masks, cameras, ground truth, metadata.

A dataset directory contains:

    images/frame_###.pfm    linear RGB float, the training source of truth
    images/frame_###.png    gamma preview, never consumed by training
    masks/mask_###.png      8-bit grayscale, nonzero = valid pixel
    cameras.json            per-frame intrinsics/distortion/pose
    gt_dem.pfm + gt_dem.json ground-truth DEM and its grid geometry
    meta.json               sun, Hapke parameters, region, seeds
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .camera import FisheyeCamera, PixelMask, load_cameras, save_cameras
from .errors import DataMissingError
from .fileio import read_mask_png, read_pfm, write_mask_png, write_pfm, write_preview_png
from .metrics import HeightMap
from .shading import HapkeParams, SunGeometry


@dataclass
class Frame:
    camera: FisheyeCamera
    image: np.ndarray
    mask: PixelMask


@dataclass
class DescentDataset:
    frames: list
    meta: dict = field(default_factory=dict)
    gt_dem: HeightMap = None

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def top_camera_height(self) -> float:
        if "top_camera_height" in self.meta:
            return float(self.meta["top_camera_height"])
        return float(max(f.camera.translation[2] for f in self.frames))

    def region(self):
        x_range = tuple(self.meta["x_range"])
        y_range = tuple(self.meta["y_range"])
        return x_range, y_range

    def sun(self) -> SunGeometry:
        return SunGeometry.from_dict(self.meta["sun"])

    def hapke(self) -> HapkeParams:
        return HapkeParams.from_dict(self.meta["hapke"])


def save_heightmap(path_pfm, hmap: HeightMap) -> None:
    write_pfm(path_pfm, hmap.values)
    meta = {
        "cell_size": hmap.cell_size,
        "origin": [float(hmap.origin[0]), float(hmap.origin[1])],
    }
    with open(os.path.splitext(path_pfm)[0] + ".json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=1)


def load_heightmap(path_pfm) -> HeightMap:
    values = read_pfm(path_pfm)
    meta_path = os.path.splitext(path_pfm)[0] + ".json"
    cell_size, origin = 1.0, (0.0, 0.0)
    if os.path.exists(meta_path):
        with open(meta_path, "r", encoding="utf-8") as f:
            meta = json.load(f)
        cell_size = float(meta["cell_size"])
        origin = tuple(meta["origin"])
    return HeightMap(values, cell_size, origin)


def save_dataset(out_dir, frames, meta, gt_dem: HeightMap = None) -> None:
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    cams = []
    for i, frame in enumerate(frames):
        write_pfm(os.path.join(out_dir, "images", f"frame_{i:03d}.pfm"), frame.image)
        write_preview_png(
            os.path.join(out_dir, "images", f"frame_{i:03d}.png"), frame.image
        )
        write_mask_png(
            os.path.join(out_dir, "masks", f"mask_{i:03d}.png"), frame.mask.valid
        )
        cams.append(frame.camera)
    save_cameras(os.path.join(out_dir, "cameras.json"), cams)
    if gt_dem is not None:
        save_heightmap(os.path.join(out_dir, "gt_dem.pfm"), gt_dem)
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=1)


def load_dataset(data_dir) -> DescentDataset:
    cam_path = os.path.join(data_dir, "cameras.json")
    if not os.path.exists(cam_path):
        raise DataMissingError(f"no cameras.json in {data_dir}")
    cameras = load_cameras(cam_path)
    frames = []
    for i, cam in enumerate(cameras):
        img_path = os.path.join(data_dir, "images", f"frame_{i:03d}.pfm")
        mask_path = os.path.join(data_dir, "masks", f"mask_{i:03d}.png")
        if not os.path.exists(img_path):
            raise DataMissingError(f"missing image {img_path}")
        image = read_pfm(img_path).astype(np.float32)
        if os.path.exists(mask_path):
            mask = PixelMask(cam.width, cam.height, read_mask_png(mask_path))
        else:
            mask = PixelMask.full(cam.width, cam.height)
        frames.append(Frame(camera=cam, image=image, mask=mask))
    if not frames:
        raise DataMissingError(f"dataset at {data_dir} has no frames")
    meta = {}
    meta_path = os.path.join(data_dir, "meta.json")
    if os.path.exists(meta_path):
        with open(meta_path, "r", encoding="utf-8") as f:
            meta = json.load(f)
    gt_dem = None
    gt_path = os.path.join(data_dir, "gt_dem.pfm")
    if os.path.exists(gt_path):
        gt_dem = load_heightmap(gt_path)
    return DescentDataset(frames=frames, meta=meta, gt_dem=gt_dem)
