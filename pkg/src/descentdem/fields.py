"""Scene representations: volumetric radiance field and explicit height field.

The radiance field (branch A) is a multi-resolution hash grid feeding a
small density network. The height field (branch B) is a bilinear feature
grid over the ground plane whose elevation output is bounded by a scaled
tanh; it converts to volume density through a sharp sigmoid in z, encoding
the solid-surface prior. A shared color network maps either branch's
embedding to RGB.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kernels
from . import autodiff as ad
from .errors import DimensionMismatchError
from .metrics import HeightMap


def contract(p):
    """Squash unbounded positions into the open ball of radius 2.

    Identity inside the unit ball, (2 - 1/|p|) * p/|p| outside. Operates on
    a single 3-vector or an (N, 3) array.
    """
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    pts = p.reshape(-1, 3)
    norm = np.linalg.norm(pts, axis=-1, keepdims=True)
    safe = np.maximum(norm, 1.0)
    out = np.where(norm <= 1.0, pts, (2.0 - 1.0 / safe) * pts / safe)
    return out[0] if single else out


def _bilinear_setup(coord, n_cells):
    """Clamped cell-centered interpolation indices and weight for one axis."""
    x = np.clip(coord - 0.5, 0.0, float(n_cells - 1))
    i0 = np.minimum(np.floor(x).astype(np.int64), max(n_cells - 2, 0))
    frac = x - i0
    if n_cells == 1:
        i0 = np.zeros_like(i0)
        frac = np.zeros_like(frac)
    return i0, frac


@dataclass
class HeightField:
    """Learnable elevation and embedding grid over a planar region.

    Grid nodes sit at cell centers; queries interpolate bilinearly between
    the four surrounding nodes (clamping outside the region) and then apply
    h = h_offset + h_scale * tanh(raw), so elevations are always bounded.
    """

    x_range: tuple
    y_range: tuple
    grid_res: tuple
    h_scale: float
    h_offset: float
    k1: float
    k2: float
    raw_height: ad.Tensor
    features: ad.Tensor

    @classmethod
    def create(
        cls,
        x_range=(-1.0, 1.0),
        y_range=(-1.0, 1.0),
        grid_res=(64, 64),
        feature_dim=15,
        h_scale=1.0,
        h_offset=0.0,
        k1=10000.0,
        k2=1000.0,
        seed=0,
        dtype=np.float64,
    ) -> "HeightField":
        rng = np.random.Generator(np.random.PCG64(seed))
        rows, cols = grid_res
        raw = ad.parameter(np.zeros((rows, cols)), name="hf.raw_height", dtype=dtype)
        feats = ad.parameter(
            rng.uniform(-1e-2, 1e-2, size=(rows, cols, feature_dim)),
            name="hf.features",
            dtype=dtype,
        )
        return cls(
            x_range=tuple(x_range),
            y_range=tuple(y_range),
            grid_res=tuple(grid_res),
            h_scale=float(h_scale),
            h_offset=float(h_offset),
            k1=float(k1),
            k2=float(k2),
            raw_height=raw,
            features=feats,
        )

    @property
    def feature_dim(self) -> int:
        return self.features.shape[-1]

    def parameters(self) -> dict:
        return {"hf.raw_height": self.raw_height, "hf.features": self.features}

    def _grid_coords(self, x, y):
        rows, cols = self.grid_res
        x0, x1 = self.x_range
        y0, y1 = self.y_range
        gx = (np.asarray(x, dtype=np.float64) - x0) / (x1 - x0) * cols
        gy = (np.asarray(y, dtype=np.float64) - y0) / (y1 - y0) * rows
        j0, fx = _bilinear_setup(gx, cols)
        i0, fy = _bilinear_setup(gy, rows)
        return i0, j0, fx, fy

    def _interp(self, tensor, i0, j0, fx, fy):
        rows, cols = self.grid_res
        if tensor.ndim == 2:
            flat = ad.reshape(tensor, (rows * cols,))
        else:
            flat = ad.reshape(tensor, (rows * cols, tensor.shape[-1]))
        idx00 = i0 * cols + j0
        idx01 = idx00 + (1 if cols > 1 else 0)
        idx10 = idx00 + (cols if rows > 1 else 0)
        idx11 = idx10 + (1 if cols > 1 else 0)
        v00 = ad.take_rows(flat, idx00)
        v01 = ad.take_rows(flat, idx01)
        v10 = ad.take_rows(flat, idx10)
        v11 = ad.take_rows(flat, idx11)
        if tensor.ndim == 3:
            fx = fx[..., None]
            fy = fy[..., None]
        w00 = (1.0 - fx) * (1.0 - fy)
        w01 = fx * (1.0 - fy)
        w10 = (1.0 - fx) * fy
        w11 = fx * fy
        return v00 * w00 + v01 * w01 + v10 * w10 + v11 * w11

    def raw_at(self, x, y):
        """Bilinear raw (pre-tanh) height; interpolate first, then bound."""
        i0, j0, fx, fy = self._grid_coords(x, y)
        return self._interp(self.raw_height, i0, j0, fx, fy)

    def height_at(self, x, y):
        return self.h_offset + self.h_scale * ad.tanh(self.raw_at(x, y))

    def embedding_at(self, x, y):
        i0, j0, fx, fy = self._grid_coords(x, y)
        return self._interp(self.features, i0, j0, fx, fy)

    def query(self, x, y):
        """Bounded elevation and embedding at planar coordinates."""
        i0, j0, fx, fy = self._grid_coords(x, y)
        raw = self._interp(self.raw_height, i0, j0, fx, fy)
        height = self.h_offset + self.h_scale * ad.tanh(raw)
        emb = self._interp(self.features, i0, j0, fx, fy)
        return height, emb

    def density(self, x, y, z, height=None):
        """Solid-below-surface density k2 * sigmoid(k1 * (h(x,y) - z))."""
        if height is None:
            height = self.height_at(x, y)
        return self.k2 * ad.sigmoid(self.k1 * (height - np.asarray(z)))

    def fit_to(self, height_fn):
        """Set raw node heights so the field reproduces height_fn at nodes."""
        rows, cols = self.grid_res
        x0, x1 = self.x_range
        y0, y1 = self.y_range
        xs = x0 + (np.arange(cols) + 0.5) * (x1 - x0) / cols
        ys = y0 + (np.arange(rows) + 0.5) * (y1 - y0) / rows
        xx, yy = np.meshgrid(xs, ys)
        target = (np.asarray(height_fn(xx, yy)) - self.h_offset) / self.h_scale
        target = np.clip(target, -0.999999, 0.999999)
        self.raw_height.value[...] = np.arctanh(target).astype(
            self.raw_height.value.dtype
        )

    def to_heightmap(self, out_res=(256, 256)) -> HeightMap:
        """Dense DEM export: elevation sampled at output cell centers."""
        rows, cols = out_res
        x0, x1 = self.x_range
        y0, y1 = self.y_range
        dx = (x1 - x0) / cols
        dy = (y1 - y0) / rows
        xs = x0 + (np.arange(cols) + 0.5) * dx
        ys = y0 + (np.arange(rows) + 0.5) * dy
        xx, yy = np.meshgrid(xs, ys)
        with ad.no_grad():
            h = self.height_at(xx.reshape(-1), yy.reshape(-1))
        values = ad.value_of(h).reshape(rows, cols).astype(np.float32)
        return HeightMap(
            values=values,
            cell_size=float(dx),
            origin=(float(xs[0]), float(ys[0])),
        )


def _mlp_params(rng, sizes, prefix, dtype):
    params = {}
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        scale = np.sqrt(2.0 / n_in)
        params[f"{prefix}.W{i}"] = ad.parameter(
            rng.normal(0.0, scale, size=(n_in, n_out)), dtype=dtype
        )
        params[f"{prefix}.b{i}"] = ad.parameter(np.zeros(n_out), dtype=dtype)
    return params


def _mlp_forward(params, prefix, x, n_layers):
    h = x
    for i in range(n_layers):
        h = ad.matmul(h, params[f"{prefix}.W{i}"]) + params[f"{prefix}.b{i}"]
        if i < n_layers - 1:
            h = ad.relu(h)
    return h


@dataclass
class RadianceField:
    """Hash-encoded density field with a per-point embedding output."""

    levels: int
    base_res: int
    growth: float
    table_size: int
    feat_per_level: int
    hidden: int
    emb_dim: int
    density_activation: str
    n_hidden_layers: int = 2
    params: dict = field(default_factory=dict)
    resolutions: np.ndarray = None

    @classmethod
    def create(
        cls,
        levels=8,
        base_res=16,
        growth=1.5,
        table_size=2**15,
        feat_per_level=2,
        hidden=64,
        n_hidden_layers=2,
        emb_dim=15,
        density_activation="softplus",
        seed=0,
        dtype=np.float64,
    ) -> "RadianceField":
        if table_size & (table_size - 1):
            raise ValueError("table_size must be a power of two")
        rng = np.random.Generator(np.random.PCG64(seed))
        params = {
            "rf.tables": ad.parameter(
                rng.uniform(-1e-4, 1e-4, size=(levels * table_size, feat_per_level)),
                dtype=dtype,
            )
        }
        in_dim = levels * feat_per_level
        sizes = [in_dim] + [hidden] * n_hidden_layers
        params.update(_mlp_params(rng, sizes, "rf.mlp", dtype))
        scale = np.sqrt(2.0 / hidden)
        params["rf.Wd"] = ad.parameter(
            rng.normal(0.0, scale, size=(hidden, 1)), dtype=dtype
        )
        params["rf.bd"] = ad.parameter(np.zeros(1), dtype=dtype)
        params["rf.We"] = ad.parameter(
            rng.normal(0.0, scale, size=(hidden, emb_dim)), dtype=dtype
        )
        params["rf.be"] = ad.parameter(np.zeros(emb_dim), dtype=dtype)
        obj = cls(
            levels=levels,
            base_res=base_res,
            growth=growth,
            table_size=table_size,
            feat_per_level=feat_per_level,
            hidden=hidden,
            emb_dim=emb_dim,
            density_activation=density_activation,
            n_hidden_layers=n_hidden_layers,
            params=params,
        )
        obj.resolutions = np.array(
            [int(np.floor(base_res * growth**l)) for l in range(levels)],
            dtype=np.int64,
        )
        return obj

    def parameters(self) -> dict:
        return dict(self.params)

    def encode(self, p_contracted: np.ndarray):
        """Trilinear multi-resolution hash features for contracted points."""
        table = self.params["rf.tables"]
        p = np.asarray(p_contracted).reshape(-1, 3)
        u = np.clip((p + 2.0) / 4.0, 0.0, 1.0).astype(table.dtype, copy=False)
        u = np.ascontiguousarray(u)
        feat = self.feat_per_level
        out, idx, wgt = kernels.encode_forward(
            u, self.resolutions, table.value, self.table_size, feat
        )
        if not (ad.grad_enabled() and table.needs_grad):
            return ad.Tensor(out)

        def back(g):
            gtab = kernels.encode_backward_table(
                g, idx, wgt, table.value.shape[0], feat
            )
            table._accum(gtab.astype(table.value.dtype, copy=False))

        return ad.Tensor(out, needs_grad=True, parents=(table,), vjp=back)

    def query(self, p_contracted: np.ndarray):
        """Density and embedding at contracted positions (N, 3)."""
        feats = self.encode(p_contracted)
        h = _mlp_forward(self.params, "rf.mlp", feats, self.n_hidden_layers)
        h = ad.relu(h)
        raw_d = ad.reshape(
            ad.matmul(h, self.params["rf.Wd"]) + self.params["rf.bd"], (-1,)
        )
        if self.density_activation == "softplus":
            density = ad.softplus(raw_d)
        else:
            density = ad.exp(ad.clip(raw_d, -80.0, 15.0))
        emb = ad.matmul(h, self.params["rf.We"]) + self.params["rf.be"]
        return density, emb

    def density_at(self, p_contracted: np.ndarray):
        return self.query(p_contracted)[0]


@dataclass
class ColorHead:
    """Small network mapping an embedding to sigmoid-bounded RGB."""

    emb_dim: int
    hidden: int
    params: dict = field(default_factory=dict)

    @classmethod
    def create(cls, emb_dim=15, hidden=64, seed=0, dtype=np.float64) -> "ColorHead":
        rng = np.random.Generator(np.random.PCG64(seed))
        params = _mlp_params(rng, [emb_dim, hidden, 3], "color", dtype)
        return cls(emb_dim=emb_dim, hidden=hidden, params=params)

    def parameters(self) -> dict:
        return dict(self.params)

    def query(self, emb):
        if ad.value_of(emb).shape[-1] != self.emb_dim:
            raise DimensionMismatchError(
                f"embedding dim {ad.value_of(emb).shape[-1]} != {self.emb_dim}"
            )
        return ad.sigmoid(_mlp_forward(self.params, "color", emb, 2))


def encode_direction(dirs: np.ndarray) -> np.ndarray:
    """Low-order direction encoding: components plus quadratic terms."""
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    return np.stack([x, y, z, x * y, x * z, y * z, x * x, y * y, z * z], axis=-1)


@dataclass
class DirectionalColorHead:
    """Ablation color network conditioned on the viewing direction."""

    emb_dim: int
    hidden: int
    params: dict = field(default_factory=dict)

    @classmethod
    def create(
        cls, emb_dim=15, hidden=64, seed=0, dtype=np.float64
    ) -> "DirectionalColorHead":
        rng = np.random.Generator(np.random.PCG64(seed))
        params = _mlp_params(rng, [emb_dim + 9, hidden, 3], "color", dtype)
        return cls(emb_dim=emb_dim, hidden=hidden, params=params)

    def parameters(self) -> dict:
        return dict(self.params)

    def query(self, emb, dirs):
        if ad.value_of(emb).shape[-1] != self.emb_dim:
            raise DimensionMismatchError(
                f"embedding dim {ad.value_of(emb).shape[-1]} != {self.emb_dim}"
            )
        enc = encode_direction(dirs).astype(ad.value_of(emb).dtype)
        x = ad.concatenate([emb, ad.constant(enc)], axis=1)
        return ad.sigmoid(_mlp_forward(self.params, "color", x, 2))
