"""Neural BRDF field: multi-resolution hash-grid encoding + small MLP.

Maps points in the unit box [-1, 1]^3 to five material channels (RGB albedo,
roughness, metallic).  Each resolution level looks up the eight voxel corners
in its own feature table through a fixed spatial hash and interpolates
trilinearly; the concatenated level features feed a small SiLU MLP whose head
is squashed into valid BRDF ranges by construction.  Also provides UV-atlas
baking so an optimized field can ship as ordinary texture maps.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .imageio import read_png, write_png
from .meshes import TriangleMesh
from .shading import MIN_ROUGHNESS, BrdfSample

log = logging.getLogger(__name__)

# per-axis hash multipliers (XOR-combined); the first axis is left unmixed
HASH_PRIMES = (1, 2654435761, 805459861)

_CORNER_OFFSETS = torch.tensor(
    [[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=torch.int64)


@dataclass
class HashGridConfig:
    levels: int = 16
    base_resolution: int = 16
    per_level_scale: float = 1.382
    features_per_level: int = 2
    table_size_log2: int = 19

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.per_level_scale <= 1.0:
            raise ValueError("per_level_scale must exceed 1")
        if self.base_resolution < 1 or self.features_per_level < 1:
            raise ValueError("resolutions and feature counts must be positive")
        if self.table_size_log2 < 1:
            raise ValueError("table_size_log2 must be >= 1")

    @property
    def table_size(self) -> int:
        return 1 << self.table_size_log2

    def resolution(self, level: int) -> int:
        return int(math.floor(self.base_resolution * self.per_level_scale**level))

    def resolutions(self) -> np.ndarray:
        return np.array([self.resolution(l) for l in range(self.levels)])


class RowwiseLinear(nn.Module):
    """Dense layer computed per output element (broadcast-multiply + reduce).

    Unlike a GEMM-backed nn.Linear, each row's result is bitwise independent
    of the batch size, which makes parameter gradients exactly additive over
    duplicated points — a property the gradient contract promises.
    """

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = nn.Parameter(torch.empty(out_features, in_features))
        self.bias = nn.Parameter(torch.zeros(out_features))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return (x.unsqueeze(-2) * self.weight).sum(-1) + self.bias


class TextureField(nn.Module):
    """Hash-grid tables + MLP; forward returns the raw 5-channel head."""

    def __init__(self, config: HashGridConfig | None = None,
                 hidden_width: int = 64, hidden_layers: int = 2):
        super().__init__()
        self.config = config or HashGridConfig()
        c = self.config
        self.tables = nn.Parameter(
            torch.zeros(c.levels * c.table_size, c.features_per_level))
        layers = []
        width_in = c.levels * c.features_per_level
        for _ in range(hidden_layers):
            layers += [RowwiseLinear(width_in, hidden_width), nn.SiLU()]
            width_in = hidden_width
        layers.append(RowwiseLinear(width_in, 5))
        self.mlp = nn.Sequential(*layers)
        self.register_buffer(
            "level_res",
            torch.as_tensor(c.resolutions(), dtype=torch.int64), persistent=False)

    def encode(self, points: torch.Tensor) -> torch.Tensor:
        """Hash-grid features for points in [-1, 1]^3; shape (N, levels*F)."""
        c = self.config
        p01 = torch.clamp((points + 1.0) * 0.5, 0.0, 1.0)
        res = self.level_res.to(points.device)
        scaled = p01[:, None, :] * res[None, :, None].to(points.dtype)  # (N, L, 3)
        c0 = torch.floor(scaled).to(torch.int64)
        frac = scaled - c0.to(points.dtype)

        offs = _CORNER_OFFSETS.to(points.device)                # (8, 3)
        corners = c0[:, :, None, :] + offs[None, None]          # (N, L, 8, 3)
        mask = c.table_size - 1
        hashed = ((corners[..., 0] * HASH_PRIMES[0])
                  ^ (corners[..., 1] * HASH_PRIMES[1])
                  ^ (corners[..., 2] * HASH_PRIMES[2])) & mask
        level_base = (torch.arange(c.levels, device=points.device)
                      * c.table_size)[None, :, None]
        feats = self.tables[hashed + level_base]                # (N, L, 8, F)

        w = torch.where(offs[None, None, :, :] == 1,
                        frac[:, :, None, :], 1.0 - frac[:, :, None, :])
        weight = w[..., 0] * w[..., 1] * w[..., 2]              # (N, L, 8)
        out = (feats * weight[..., None]).sum(dim=2)            # (N, L, F)
        return out.reshape(len(points), c.levels * c.features_per_level)

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        return self.mlp(self.encode(points))

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        """Split into "encoding" (grid tables) and "mlp" groups for the optimizer."""
        return {"encoding": [self.tables],
                "mlp": [p for n, p in self.named_parameters() if n != "tables"]}


def init_field(config: HashGridConfig | None = None,
               rng: np.random.Generator | None = None,
               hidden_width: int = 64, hidden_layers: int = 2) -> TextureField:
    """Build a field with all randomness drawn from a numpy generator.

    Grid features start tiny (U(-1e-4, 1e-4)) and biases at zero, so the
    initial output sits near the mid-range of every BRDF channel.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    field = TextureField(config, hidden_width=hidden_width, hidden_layers=hidden_layers)
    with torch.no_grad():
        field.tables.copy_(torch.as_tensor(
            rng.uniform(-1e-4, 1e-4, size=tuple(field.tables.shape)),
            dtype=field.tables.dtype))
        for mod in field.mlp:
            if isinstance(mod, RowwiseLinear):
                bound = 1.0 / math.sqrt(mod.in_features)
                mod.weight.copy_(torch.as_tensor(
                    rng.uniform(-bound, bound, size=tuple(mod.weight.shape)),
                    dtype=mod.weight.dtype))
                mod.bias.zero_()
    return field


def _squash(raw: torch.Tensor) -> BrdfSample:
    albedo = torch.sigmoid(raw[:, 0:3])
    roughness = MIN_ROUGHNESS + (1.0 - MIN_ROUGHNESS) * torch.sigmoid(raw[:, 3])
    metallic = torch.sigmoid(raw[:, 4])
    return BrdfSample(albedo, roughness, metallic)


def query(field: TextureField, points: torch.Tensor) -> BrdfSample:
    """Evaluate the field at 3D points; clamps strays to the box with a log note."""
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"points must be (N, 3), got {tuple(points.shape)}")
    outside = int((points.abs() > 1.0 + 1e-6).any(dim=1).sum())
    if outside:
        log.warning("query: clamped %d points outside [-1,1]^3", outside)
    return _squash(field(torch.clamp(points, -1.0, 1.0)))


def query_backward(field: TextureField, points: torch.Tensor,
                   grad_albedo: torch.Tensor, grad_roughness: torch.Tensor,
                   grad_metallic: torch.Tensor) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of the query outputs w.r.t. field parameters.

    Upstream is dLoss/d(albedo, roughness, metallic); the result maps
    parameter names (as in ``field.named_parameters()``) to gradient tensors.
    Hash collisions and duplicated points accumulate additively.
    """
    sample = query(field, points)
    params = dict(field.named_parameters())
    names = list(params)
    grads = torch.autograd.grad(
        outputs=(sample.albedo, sample.roughness, sample.metallic),
        inputs=[params[n] for n in names],
        grad_outputs=(torch.as_tensor(grad_albedo, dtype=sample.albedo.dtype),
                      torch.as_tensor(grad_roughness, dtype=sample.roughness.dtype),
                      torch.as_tensor(grad_metallic, dtype=sample.metallic.dtype)),
        allow_unused=True)
    out = {}
    for name, g in zip(names, grads):
        out[name] = torch.zeros_like(params[name]) if g is None else g
    return out


@dataclass
class BakedTextures:
    """UV-space material maps; row i spans v=(i+0.5)/R, col j spans u=(j+0.5)/R."""
    albedo: np.ndarray      # (R, R, 3)
    roughness: np.ndarray   # (R, R)
    metallic: np.ndarray    # (R, R)
    mask: np.ndarray        # (R, R) bool, texels covered by UV charts (pre-dilation
                            # coverage when dilation_px=0)

    @property
    def resolution(self) -> int:
        return self.albedo.shape[0]


def _rasterize_uv(mesh: TriangleMesh, resolution: int):
    """Map covered texels to interpolated 3D surface points.

    Returns (rows, cols, positions, overlap_fraction): one entry per covered
    texel, first-covering face wins where charts overlap.
    """
    r = resolution
    uv = mesh.face_corners("uv") * r            # (F, 3, 2) in pixel units
    pos = mesh.face_corners("position")
    f = len(uv)

    lo = np.clip(np.floor(uv.min(axis=1) - 0.5).astype(np.int64), 0, r - 1)
    hi = np.clip(np.ceil(uv.max(axis=1) - 0.5).astype(np.int64), 0, r - 1)
    spans = (hi - lo + 1).prod(axis=1)
    keep = spans > 0
    face_ids = np.repeat(np.flatnonzero(keep), spans[keep])
    if len(face_ids) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros((0, 3)), 0.0

    counts = spans[keep]
    local = np.arange(len(face_ids)) - np.repeat(
        np.cumsum(counts) - counts, counts)
    w_box = (hi[face_ids, 0] - lo[face_ids, 0] + 1)
    cx = lo[face_ids, 0] + local % w_box
    cy = lo[face_ids, 1] + local // w_box
    px = cx + 0.5
    py = cy + 0.5

    a, b, c = uv[face_ids, 0], uv[face_ids, 1], uv[face_ids, 2]

    def edge(p0, p1):
        return ((p1[:, 0] - p0[:, 0]) * (py - p0[:, 1])
                - (p1[:, 1] - p0[:, 1]) * (px - p0[:, 0]))

    w0, w1, w2 = edge(b, c), edge(c, a), edge(a, b)
    area = ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
            - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    inside = (((w0 >= 0) & (w1 >= 0) & (w2 >= 0) & (area > 1e-12))
              | ((w0 <= 0) & (w1 <= 0) & (w2 <= 0) & (area < -1e-12)))
    face_ids, cx, cy = face_ids[inside], cx[inside], cy[inside]
    lam = np.stack([w0[inside], w1[inside], w2[inside]], axis=1) / area[inside, None]
    points = np.einsum("nk,nkd->nd", lam, pos[face_ids])

    flat = cy * r + cx
    order = np.argsort(flat, kind="stable")
    flat, points = flat[order], points[order]
    uniq, first, counts = np.unique(flat, return_index=True, return_counts=True)
    overlap = float((counts > 1).sum()) / max(1, r * r)
    return uniq // r, uniq % r, points[first], overlap


def _dilate(values: np.ndarray, mask: np.ndarray, steps: int) -> np.ndarray:
    """Spread covered texel values into uncovered 8-neighbors, ``steps`` times.

    ``values`` is (R, R, C); uncovered texels adjacent to covered ones take
    the mean of their covered neighbors each round.
    """
    out = values.copy()
    filled = mask.copy()
    for _ in range(steps):
        acc = np.zeros_like(out, dtype=np.float64)
        cnt = np.zeros(filled.shape, dtype=np.int64)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                src_f = np.roll(np.roll(filled, dy, axis=0), dx, axis=1)
                src_v = np.roll(np.roll(out, dy, axis=0), dx, axis=1)
                take = src_f & ~filled
                acc[take] += src_v[take]
                cnt[take] += 1
        newly = cnt > 0
        if not newly.any():
            break
        out[newly] = acc[newly] / cnt[newly][:, None]
        filled |= newly
    return out


def bake(field: TextureField, mesh: TriangleMesh, resolution: int = 1024,
         dilation_px: int = 4, chunk: int = 1 << 16) -> BakedTextures:
    """Rasterize the field into the mesh's UV atlas.

    Covered texels get the field value at their interpolated surface point;
    dilation pushes a few rings of valid values into uncovered neighbors to
    hide bilinear/nearest seams at chart borders.
    """
    mesh.require_uvs()
    if resolution < 16:
        raise ValueError("bake resolution must be >= 16")
    rows, cols, pts, overlap = _rasterize_uv(mesh, resolution)
    if overlap > 0.01:
        log.warning("bake: %.1f%% of covered texels hit by overlapping UV charts",
                    100.0 * overlap)

    r = resolution
    albedo = np.zeros((r, r, 3))
    rough = np.zeros((r, r))
    metal = np.zeros((r, r))
    mask = np.zeros((r, r), dtype=bool)
    device = field.tables.device
    dtype = field.tables.dtype
    with torch.no_grad():
        for start in range(0, len(pts), chunk):
            sl = slice(start, start + chunk)
            sample = query(field, torch.as_tensor(pts[sl], dtype=dtype, device=device))
            albedo[rows[sl], cols[sl]] = sample.albedo.cpu().numpy()
            rough[rows[sl], cols[sl]] = sample.roughness.cpu().numpy()
            metal[rows[sl], cols[sl]] = sample.metallic.cpu().numpy()
    mask[rows, cols] = True

    if dilation_px > 0 and mask.any() and not mask.all():
        albedo = _dilate(albedo, mask, dilation_px)
        scalars = _dilate(np.stack([rough, metal], axis=-1), mask, dilation_px)
        rough, metal = scalars[..., 0], scalars[..., 1]
    return BakedTextures(albedo, rough, metal, mask)


def sample_baked(baked: BakedTextures, uv: np.ndarray) -> BrdfSample:
    """Nearest-texel lookup of baked maps at UV coordinates (N, 2)."""
    r = baked.resolution
    ij = np.clip(np.floor(np.asarray(uv) * r).astype(np.int64), 0, r - 1)
    cols, rows = ij[:, 0], ij[:, 1]
    return BrdfSample(
        torch.as_tensor(baked.albedo[rows, cols], dtype=torch.float32),
        torch.as_tensor(baked.roughness[rows, cols], dtype=torch.float32),
        torch.as_tensor(baked.metallic[rows, cols], dtype=torch.float32))


def save_baked(baked: BakedTextures, out_dir) -> None:
    """Write albedo as 8-bit sRGB PNG, scalars as 16-bit linear PNGs."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_png(out / "albedo.png", np.flipud(baked.albedo) ** (1.0 / 2.2), bit_depth=8)
    write_png(out / "roughness.png", np.flipud(baked.roughness), bit_depth=16)
    write_png(out / "metallic.png", np.flipud(baked.metallic), bit_depth=16)
    write_png(out / "coverage.png", np.flipud(baked.mask.astype(np.float64)))


def load_baked(in_dir) -> BakedTextures:
    from pathlib import Path

    p = Path(in_dir)
    albedo = np.flipud(read_png(p / "albedo.png")) ** 2.2
    rough = np.flipud(read_png(p / "roughness.png"))
    metal = np.flipud(read_png(p / "metallic.png"))
    mask = np.flipud(read_png(p / "coverage.png")) > 0.5
    return BakedTextures(np.ascontiguousarray(albedo), np.ascontiguousarray(rough),
                         np.ascontiguousarray(metal), np.ascontiguousarray(mask))


FIELD_KIND = "texture_field"


def save_field(path, field: TextureField, meta: dict | None = None) -> None:
    """Checkpoint a field (weights + enough metadata to rebuild it)."""
    from .weights_io import save_weights

    c = field.config
    info = {"grid": {"levels": c.levels, "base_resolution": c.base_resolution,
                     "per_level_scale": c.per_level_scale,
                     "features_per_level": c.features_per_level,
                     "table_size_log2": c.table_size_log2},
            "hidden_width": field.mlp[0].out_features,
            "hidden_layers": (len(field.mlp) - 1) // 2}
    if meta:
        info.update(meta)
    arrays = {k: v.detach().cpu().numpy() for k, v in field.state_dict().items()}
    save_weights(path, FIELD_KIND, arrays, info)


def load_field(path) -> tuple[TextureField, dict]:
    from .weights_io import WeightsFileError, load_weights

    kind, arrays, meta = load_weights(path)
    if kind != FIELD_KIND:
        raise WeightsFileError(
            f"expected a {FIELD_KIND} checkpoint, found kind {kind!r}")
    field = TextureField(HashGridConfig(**meta["grid"]),
                         hidden_width=meta["hidden_width"],
                         hidden_layers=meta["hidden_layers"])
    field.load_state_dict({k: torch.as_tensor(v) for k, v in arrays.items()})
    return field, meta
