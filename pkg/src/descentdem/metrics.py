"""DEM evaluation: absolute/relative elevation difference and coverage.

Conventions: a height map is a regular grid of elevations where NaN marks
an invalid cell. AED and RED are computed after the prediction has been
filled from its nearest valid cells; coverage is computed on the unfilled
prediction so holes count against it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import AllInvalidError, ShapeMismatchError

COVERAGE_EPS = 1e-12


@dataclass
class HeightMap:
    """Grid of elevations with NaN-as-invalid semantics.

    values[row, col] is the elevation at planar position
    (origin_x + col * cell_size, origin_y + row * cell_size); the origin is
    the center of cell (0, 0). Cells are square.
    """

    values: np.ndarray
    cell_size: float = 1.0
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError("height map values must be 2-D")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)

    def cell_centers(self):
        """Planar x and y coordinate arrays of all cell centers."""
        xs = self.origin[0] + np.arange(self.cols) * self.cell_size
        ys = self.origin[1] + np.arange(self.rows) * self.cell_size
        return np.meshgrid(xs, ys)

    def copy(self) -> "HeightMap":
        return HeightMap(self.values.copy(), self.cell_size, tuple(self.origin))

    def shifted(self, offset: float) -> "HeightMap":
        return HeightMap(self.values + np.float32(offset), self.cell_size, tuple(self.origin))


def _check_shapes(pred: HeightMap, gt: HeightMap):
    if pred.values.shape != gt.values.shape:
        raise ShapeMismatchError(
            f"shape {pred.values.shape} vs {gt.values.shape}"
        )


def _tie_offsets(d2: int):
    """Integer offsets (dr, dc) at exact squared distance d2."""
    offs = []
    lim = int(np.floor(np.sqrt(d2) + 0.5))
    for a in range(lim + 1):
        b2 = d2 - a * a
        if b2 < 0:
            continue
        b = int(np.floor(np.sqrt(b2) + 0.5))
        if b * b != b2:
            continue
        for dr in {a, -a}:
            for dc in {b, -b}:
                offs.append((dr, dc))
                if a != b:
                    offs.append((dc, dr))
    return sorted(set(offs))


def nearest_fill(hmap: HeightMap) -> HeightMap:
    """Replace each invalid cell by the value of its nearest valid cell.

    Distance is Euclidean in cell units; ties are broken toward the valid
    cell with the smallest row, then the smallest column.
    """
    valid = hmap.valid
    if not valid.any():
        raise AllInvalidError("height map has no valid cell")
    if valid.all():
        return hmap.copy()
    out = hmap.values.copy()
    dist = ndimage.distance_transform_edt(~valid)
    rows, cols = out.shape
    inv_r, inv_c = np.nonzero(~valid)
    d2 = np.rint(dist[inv_r, inv_c] ** 2).astype(np.int64)
    best_r = np.full(inv_r.shape, rows, dtype=np.int64)
    best_c = np.full(inv_r.shape, cols, dtype=np.int64)
    for dd in np.unique(d2):
        sel = d2 == dd
        r, c = inv_r[sel], inv_c[sel]
        br, bc = best_r[sel], best_c[sel]
        for dr, dc in _tie_offsets(int(dd)):
            nr, nc = r + dr, c + dc
            ok = (nr >= 0) & (nr < rows) & (nc >= 0) & (nc < cols)
            ok[ok] = valid[nr[ok], nc[ok]]
            better = ok & ((nr < br) | ((nr == br) & (nc < bc)))
            br = np.where(better, nr, br)
            bc = np.where(better, nc, bc)
        best_r[sel], best_c[sel] = br, bc
    out[inv_r, inv_c] = out[best_r, best_c]
    return HeightMap(out, hmap.cell_size, tuple(hmap.origin))


def aed(pred: HeightMap, gt: HeightMap) -> float:
    """Mean absolute elevation difference over ground-truth-valid cells."""
    _check_shapes(pred, gt)
    sel = gt.valid
    diff = np.abs(
        pred.values.astype(np.float64)[sel] - gt.values.astype(np.float64)[sel]
    )
    return float(diff.mean())


def _window_mean(values: np.ndarray, valid: np.ndarray, half: int) -> np.ndarray:
    """Mean over the (2*half+1)^2 window, truncated at borders.

    Only valid cells contribute; returns NaN where a window holds none.
    """
    v = np.where(valid, values.astype(np.float64), 0.0)
    cnt = valid.astype(np.float64)
    # integral images with a zero row/col prepended
    sv = np.zeros((v.shape[0] + 1, v.shape[1] + 1))
    sc = np.zeros_like(sv)
    sv[1:, 1:] = v.cumsum(0).cumsum(1)
    sc[1:, 1:] = cnt.cumsum(0).cumsum(1)
    rows, cols = v.shape
    r = np.arange(rows)[:, None]
    c = np.arange(cols)[None, :]
    r0 = np.clip(r - half, 0, rows)
    r1 = np.clip(r + half + 1, 0, rows)
    c0 = np.clip(c - half, 0, cols)
    c1 = np.clip(c + half + 1, 0, cols)
    r0b, r1b = np.broadcast_to(r0, (rows, cols)), np.broadcast_to(r1, (rows, cols))
    c0b, c1b = np.broadcast_to(c0, (rows, cols)), np.broadcast_to(c1, (rows, cols))
    wsum = sv[r1b, c1b] - sv[r0b, c1b] - sv[r1b, c0b] + sv[r0b, c0b]
    wcnt = sc[r1b, c1b] - sc[r0b, c1b] - sc[r1b, c0b] + sc[r0b, c0b]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(wcnt > 0, wsum / wcnt, np.nan)


def red(pred: HeightMap, gt: HeightMap, window_m: float = 1000.0) -> float:
    """AED after subtracting each map's own local window mean.

    The window is a square of side window_m centered on each cell and is
    truncated at map borders; the subtraction makes the metric exactly
    invariant to a constant offset between the maps.
    """
    _check_shapes(pred, gt)
    if window_m <= 0:
        raise ValueError("window_m must be positive")
    half = int(np.floor(window_m / (2.0 * pred.cell_size)))
    pred_rel = pred.values.astype(np.float64) - _window_mean(
        pred.values, pred.valid, half
    )
    gt_rel = gt.values.astype(np.float64) - _window_mean(gt.values, gt.valid, half)
    sel = gt.valid
    return float(np.abs(pred_rel[sel] - gt_rel[sel]).mean())


def coverage_at(pred: HeightMap, gt: HeightMap, tau: float = 0.1) -> float:
    """Fraction of gt-valid cells with valid, relatively-accurate prediction.

    A cell counts when the prediction is finite and
    |pred - gt| / (|gt| + eps) <= tau. Invalid predictions count as wrong,
    so holes reduce coverage.
    """
    _check_shapes(pred, gt)
    sel = gt.valid
    n = int(sel.sum())
    if n == 0:
        raise AllInvalidError("ground truth has no valid cell")
    p = pred.values.astype(np.float64)[sel]
    g = gt.values.astype(np.float64)[sel]
    ok = np.isfinite(p) & (np.abs(p - g) / (np.abs(g) + COVERAGE_EPS) <= tau)
    return float(ok.sum() / n)


def evaluate(
    pred: HeightMap, gt: HeightMap, window_m: float = 1000.0, tau: float = 0.1
) -> dict:
    """AED, RED, and coverage with the standard fill protocol applied."""
    filled = nearest_fill(pred)
    return {
        "aed": aed(filled, gt),
        "red": red(filled, gt, window_m=window_m),
        "coverage": coverage_at(pred, gt, tau=tau),
        "window_m": window_m,
        "tau": tau,
    }
