"""Triangle meshes, cameras, software rasterization and condition images.

Conventions used throughout:
  * right-handed world, y up; cameras look at the origin, azimuth 0 on +z
  * camera space looks down -z; `depth` is the positive distance along -z
  * meshes are normalized so the bounding-box center sits at the origin and
    the farthest vertex has norm 1
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

RASTER_NEAR = 1e-3
DEGENERATE_AREA = 1e-12


class MeshError(ValueError):
    pass


@dataclass
class TriangleMesh:
    """Indexed triangles with per-vertex position, normal and optional UV."""

    vertices: np.ndarray          # (V, 3) float64
    normals: np.ndarray           # (N, 3) float64, unit length
    uvs: np.ndarray | None        # (U, 2) float64 in [0, 1]^2, or None
    faces_pos: np.ndarray         # (F, 3) int
    faces_nrm: np.ndarray         # (F, 3) int
    faces_uv: np.ndarray | None   # (F, 3) int, or None
    degenerate_face_count: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def num_faces(self) -> int:
        return len(self.faces_pos)

    @property
    def has_uvs(self) -> bool:
        return self.uvs is not None and self.faces_uv is not None

    def validate(self) -> None:
        if self.num_faces == 0:
            raise MeshError("empty mesh")
        if self.faces_pos.min() < 0 or self.faces_pos.max() >= len(self.vertices):
            raise MeshError("position index out of range")
        if self.faces_nrm.min() < 0 or self.faces_nrm.max() >= len(self.normals):
            raise MeshError("normal index out of range")
        if self.has_uvs and (self.faces_uv.min() < 0 or self.faces_uv.max() >= len(self.uvs)):
            raise MeshError("uv index out of range")
        lengths = np.linalg.norm(self.normals, axis=1)
        if not np.allclose(lengths, 1.0, atol=1e-6):
            raise MeshError("normals are not unit length")

    def require_uvs(self) -> None:
        if not self.has_uvs:
            raise MeshError("mesh has no UV atlas (required for baking)")

    def face_corners(self, attr: str) -> np.ndarray:
        """Gather per-corner attributes, shape (F, 3, dim)."""
        if attr == "position":
            return self.vertices[self.faces_pos]
        if attr == "normal":
            return self.normals[self.faces_nrm]
        if attr == "uv":
            self.require_uvs()
            return self.uvs[self.faces_uv]
        raise KeyError(attr)


def normalize_to_unit_sphere(vertices: np.ndarray) -> np.ndarray:
    """Center at the bounding-box midpoint, scale so max vertex norm is 1."""
    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    centered = vertices - (lo + hi) / 2.0
    radius = np.linalg.norm(centered, axis=1).max()
    if radius <= 0:
        raise MeshError("mesh has zero spatial extent")
    return centered / radius


def compute_vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals (raw cross products accumulate the weighting)."""
    tri = vertices[faces]
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    normals = np.zeros_like(vertices)
    for corner in range(3):
        np.add.at(normals, faces[:, corner], fn)
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    # vertices touched only by zero-area faces have no direction; any unit
    # vector works since those faces never rasterize
    dead = lengths[:, 0] < 1e-20
    normals[dead] = (0.0, 0.0, 1.0)
    lengths[dead] = 1.0
    return normals / lengths


def _face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    tri = vertices[faces]
    return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)


def build_mesh(vertices, faces_pos, normals=None, faces_nrm=None, uvs=None, faces_uv=None,
               normalize: bool = True) -> TriangleMesh:
    """Assemble and validate a mesh from raw arrays; fills in missing normals."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces_pos = np.asarray(faces_pos, dtype=np.int64)
    if len(faces_pos) == 0:
        raise MeshError("empty mesh")
    if faces_pos.min() < 0 or faces_pos.max() >= len(vertices):
        raise MeshError("position index out of range")
    if normalize:
        vertices = normalize_to_unit_sphere(vertices)
    if normals is None or faces_nrm is None:
        normals = compute_vertex_normals(vertices, faces_pos)
        faces_nrm = faces_pos
    else:
        normals = np.asarray(normals, dtype=np.float64)
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
        if lengths.min() < 1e-8:
            normals = compute_vertex_normals(vertices, faces_pos)
            faces_nrm = faces_pos
        else:
            normals = normals / lengths
            faces_nrm = np.asarray(faces_nrm, dtype=np.int64)
    if uvs is not None and faces_uv is not None:
        uvs = np.asarray(uvs, dtype=np.float64)
        faces_uv = np.asarray(faces_uv, dtype=np.int64)
    else:
        uvs = faces_uv = None

    areas = _face_areas(vertices, faces_pos)
    degenerate = int(np.count_nonzero(areas < DEGENERATE_AREA))
    warnings = []
    if degenerate:
        if degenerate > 0.01 * len(faces_pos):
            raise MeshError(
                f"{degenerate} degenerate faces out of {len(faces_pos)} (> 1%)")
        warnings.append(f"{degenerate} zero-area faces")
        log.warning("mesh has %d zero-area faces", degenerate)

    mesh = TriangleMesh(vertices, normals, uvs, faces_pos, faces_nrm, faces_uv,
                        degenerate_face_count=degenerate, warnings=warnings)
    mesh.validate()
    if not mesh.has_uvs:
        mesh.warnings.append("no UVs (baking unavailable)")
    return mesh


def _parse_obj_index(token: str, count: int) -> int:
    idx = int(token)
    return idx - 1 if idx > 0 else count + idx


def load_mesh(path) -> TriangleMesh:
    """Load a Wavefront OBJ (v/vn/vt/f records; polygons fan-triangulated)."""
    positions, texcoords, normals = [], [], []
    f_pos, f_uv, f_nrm = [], [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            tag, args = parts[0], parts[1:]
            try:
                if tag == "v":
                    positions.append([float(x) for x in args[:3]])
                elif tag == "vt":
                    texcoords.append([float(x) for x in args[:2]])
                elif tag == "vn":
                    normals.append([float(x) for x in args[:3]])
                elif tag == "f":
                    corners = []
                    for ref in args:
                        fields = ref.split("/")
                        vi = _parse_obj_index(fields[0], len(positions))
                        ti = (_parse_obj_index(fields[1], len(texcoords))
                              if len(fields) > 1 and fields[1] else -1)
                        ni = (_parse_obj_index(fields[2], len(normals))
                              if len(fields) > 2 and fields[2] else -1)
                        corners.append((vi, ti, ni))
                    for k in range(1, len(corners) - 1):
                        a, b, c = corners[0], corners[k], corners[k + 1]
                        f_pos.append([a[0], b[0], c[0]])
                        f_uv.append([a[1], b[1], c[1]])
                        f_nrm.append([a[2], b[2], c[2]])
            except (ValueError, IndexError) as exc:
                raise MeshError(f"{path}:{lineno}: cannot parse {line.strip()!r}") from exc

    if not f_pos:
        raise MeshError(f"{path}: no faces")
    f_pos = np.asarray(f_pos, dtype=np.int64)
    f_uv = np.asarray(f_uv, dtype=np.int64)
    f_nrm = np.asarray(f_nrm, dtype=np.int64)
    have_normals = len(normals) > 0 and (f_nrm >= 0).all()
    have_uvs = len(texcoords) > 0 and (f_uv >= 0).all()
    return build_mesh(
        np.asarray(positions, dtype=np.float64),
        f_pos,
        normals=np.asarray(normals) if have_normals else None,
        faces_nrm=f_nrm if have_normals else None,
        uvs=np.asarray(texcoords) if have_uvs else None,
        faces_uv=f_uv if have_uvs else None,
    )


def save_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        if mesh.has_uvs:
            for t in mesh.uvs:
                fh.write(f"vt {t[0]:.9g} {t[1]:.9g}\n")
        for n in mesh.normals:
            fh.write(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}\n")
        for i in range(mesh.num_faces):
            corners = []
            for k in range(3):
                vi = mesh.faces_pos[i, k] + 1
                ni = mesh.faces_nrm[i, k] + 1
                if mesh.has_uvs:
                    corners.append(f"{vi}/{mesh.faces_uv[i, k] + 1}/{ni}")
                else:
                    corners.append(f"{vi}//{ni}")
            fh.write("f " + " ".join(corners) + "\n")


# ---------------------------------------------------------------------------
# cameras

@dataclass
class CameraPose:
    extrinsic: np.ndarray         # (4, 4) world-to-camera rigid transform
    fov_y: float                  # radians
    resolution: tuple[int, int]   # (width, height)
    azimuth: float = 0.0          # degrees; sampling parameters that built the pose
    elevation: float = 0.0
    radius: float = 1.0

    def __post_init__(self):
        self.extrinsic = np.asarray(self.extrinsic, dtype=np.float64)
        R = self.rotation
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise ValueError("camera rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("camera rotation has det != 1")
        if self.radius <= 0:
            raise ValueError("camera radius must be positive")
        w, h = self.resolution
        if w < 16 or h < 16:
            raise ValueError("resolution below 16x16")

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsic[:3, :3]

    @property
    def position(self) -> np.ndarray:
        return -self.rotation.T @ self.extrinsic[:3, 3]


@dataclass
class ViewConfig:
    """Spherical camera sampling ranges. Ranges are declared defaults, not
    derived from any reference; tune per scene."""
    azimuth_range: tuple[float, float] = (0.0, 360.0)
    elevation_range: tuple[float, float] = (-10.0, 45.0)
    radius_range: tuple[float, float] = (2.8, 3.4)  # unit-sphere object fills
    fov_y_deg: float = 45.0                         # ~70-90% of the frame height
    resolution: tuple[int, int] = (64, 64)

    def validate(self) -> None:
        for name in ("azimuth_range", "elevation_range", "radius_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} is empty: {(lo, hi)}")
        if self.radius_range[0] <= 0:
            raise ValueError("radius must be positive")


def look_at(eye: np.ndarray, target: np.ndarray) -> np.ndarray:
    """World-to-camera extrinsic for a camera at `eye` looking at `target`, y up."""
    eye = np.asarray(eye, dtype=np.float64)
    z_axis = eye - np.asarray(target, dtype=np.float64)
    z_axis = z_axis / np.linalg.norm(z_axis)
    up = np.array([0.0, 1.0, 0.0])
    if abs(z_axis @ up) > 1.0 - 1e-6:
        up = np.array([0.0, 0.0, -1.0]) if z_axis[1] > 0 else np.array([0.0, 0.0, 1.0])
    x_axis = np.cross(up, z_axis)
    x_axis = x_axis / np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    ext = np.eye(4)
    ext[:3, :3] = np.stack([x_axis, y_axis, z_axis])
    ext[:3, 3] = -ext[:3, :3] @ eye
    return ext


def camera_from_spherical(azimuth_deg, elevation_deg, radius, fov_y_deg,
                          resolution) -> CameraPose:
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    eye = radius * np.array([
        math.sin(az) * math.cos(el),
        math.sin(el),
        math.cos(az) * math.cos(el),
    ])
    return CameraPose(
        extrinsic=look_at(eye, np.zeros(3)),
        fov_y=math.radians(fov_y_deg),
        resolution=tuple(resolution),
        azimuth=float(azimuth_deg),
        elevation=float(elevation_deg),
        radius=float(radius),
    )


def sample_camera(rng: np.random.Generator, view: ViewConfig) -> CameraPose:
    """Draw a look-at pose from the spherical ranges; deterministic in rng state."""
    view.validate()
    az = rng.uniform(*view.azimuth_range)
    el = rng.uniform(*view.elevation_range)
    radius = rng.uniform(*view.radius_range)
    return camera_from_spherical(az, el, radius, view.fov_y_deg, view.resolution)


def view_direction(azimuth_deg: float, elevation_deg: float) -> str:
    """Coarse view word for prompt conditioning: front/side/back, overhead on top."""
    if elevation_deg > 60.0:
        return "overhead"
    az = azimuth_deg % 360.0
    if az < 45.0 or az >= 315.0:
        return "front"
    if az < 135.0 or (225.0 <= az < 315.0):
        return "side"
    return "back"


# ---------------------------------------------------------------------------
# rasterization

@dataclass
class GBuffer:
    position: np.ndarray   # (H, W, 3)
    normal: np.ndarray     # (H, W, 3), unit where covered
    uv: np.ndarray         # (H, W, 2)
    mask: np.ndarray       # (H, W) bool
    depth: np.ndarray      # (H, W), positive camera-space depth


def _project(cam: CameraPose, verts: np.ndarray):
    """Return pixel coordinates and positive view depth for world-space vertices."""
    W, H = cam.resolution
    v_cam = verts @ cam.rotation.T + cam.extrinsic[:3, 3]
    depth = -v_cam[:, 2]
    tan_half = math.tan(cam.fov_y / 2.0)
    aspect = W / H
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = v_cam[:, 0] / depth / (tan_half * aspect)
        sy = v_cam[:, 1] / depth / tan_half
    px = (sx + 1.0) * 0.5 * W
    py = (1.0 - sy) * 0.5 * H
    return np.stack([px, py], axis=1), depth


def rasterize(mesh: TriangleMesh, cam: CameraPose) -> GBuffer:
    """Depth-tested scanline-free rasterization with perspective-correct
    interpolation of position, normal and UV at pixel centers."""
    W, H = cam.resolution
    gbuf = GBuffer(
        position=np.zeros((H, W, 3)),
        normal=np.zeros((H, W, 3)),
        uv=np.zeros((H, W, 2)),
        mask=np.zeros((H, W), dtype=bool),
        depth=np.zeros((H, W)),
    )

    pix, depth = _project(cam, mesh.vertices)
    tri_pix = pix[mesh.faces_pos]          # (F, 3, 2)
    tri_depth = depth[mesh.faces_pos]      # (F, 3)

    e1 = tri_pix[:, 1] - tri_pix[:, 0]
    e2 = tri_pix[:, 2] - tri_pix[:, 0]
    area2 = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    ok = (tri_depth > RASTER_NEAR).all(axis=1) & (np.abs(area2) > 1e-12)

    lo = tri_pix.min(axis=1)
    hi = tri_pix.max(axis=1)
    ix0 = np.clip(np.ceil(lo[:, 0] - 0.5).astype(np.int64), 0, W - 1)
    ix1 = np.clip(np.floor(hi[:, 0] - 0.5).astype(np.int64), 0, W - 1)
    iy0 = np.clip(np.ceil(lo[:, 1] - 0.5).astype(np.int64), 0, H - 1)
    iy1 = np.clip(np.floor(hi[:, 1] - 0.5).astype(np.int64), 0, H - 1)
    nx = np.maximum(ix1 - ix0 + 1, 0)
    ny = np.maximum(iy1 - iy0 + 1, 0)
    counts = np.where(ok, nx * ny, 0)
    total = int(counts.sum())
    if total == 0:
        return gbuf

    fid = np.repeat(np.arange(mesh.num_faces), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    k = np.arange(total) - np.repeat(starts, counts)
    nx_f = np.repeat(nx, counts)
    px = np.repeat(ix0, counts) + k % np.maximum(nx_f, 1)
    py = np.repeat(iy0, counts) + k // np.maximum(nx_f, 1)
    cx = px + 0.5
    cy = py + 0.5

    p0, p1, p2 = tri_pix[fid, 0], tri_pix[fid, 1], tri_pix[fid, 2]

    def edge(a, b):
        return (b[:, 0] - a[:, 0]) * (cy - a[:, 1]) - (b[:, 1] - a[:, 1]) * (cx - a[:, 0])

    w0 = edge(p1, p2)
    w1 = edge(p2, p0)
    w2 = edge(p0, p1)
    a2 = area2[fid]
    inside = np.where(a2 > 0, (w0 >= 0) & (w1 >= 0) & (w2 >= 0),
                      (w0 <= 0) & (w1 <= 0) & (w2 <= 0))
    if not inside.any():
        return gbuf

    fid, px, py = fid[inside], px[inside], py[inside]
    lam = np.stack([w0[inside], w1[inside], w2[inside]], axis=1) / a2[inside, None]
    inv_z = (lam / tri_depth[fid]).sum(axis=1)
    z = 1.0 / inv_z

    flat = py * W + px
    order = np.lexsort((z, flat))
    flat, fid, lam, z = flat[order], fid[order], lam[order], z[order]
    uniq, first = np.unique(flat, return_index=True)
    fid, lam, z = fid[first], lam[first], z[first]

    coef = lam / tri_depth[fid] / (lam / tri_depth[fid]).sum(axis=1, keepdims=True)
    rows, cols = uniq // W, uniq % W

    gbuf.mask[rows, cols] = True
    gbuf.depth[rows, cols] = z
    gbuf.position[rows, cols] = np.einsum(
        "nc,ncd->nd", coef, mesh.face_corners("position")[fid])
    nrm = np.einsum("nc,ncd->nd", coef, mesh.face_corners("normal")[fid])
    nrm /= np.maximum(np.linalg.norm(nrm, axis=1, keepdims=True), 1e-20)
    gbuf.normal[rows, cols] = nrm
    if mesh.has_uvs:
        gbuf.uv[rows, cols] = np.einsum("nc,ncd->nd", coef, mesh.face_corners("uv")[fid])
    return gbuf


# ---------------------------------------------------------------------------
# condition images

NORMAL_BACKGROUND = (0.5, 0.5, 1.0)


@dataclass
class ConditionImage:
    pixels: np.ndarray   # (H, W, 3) in [0, 1]
    kind: str            # "normal" or "depth"


def render_condition(gbuf: GBuffer, cam: CameraPose, kind: str) -> ConditionImage:
    """Encode the G-buffer as a conditioning image.

    normal: camera-space normal mapped to (n+1)/2, background (0.5, 0.5, 1.0)
    depth:  min-max normalized inverse depth over the mask, background 0
    """
    H, W = gbuf.mask.shape
    if kind == "normal":
        pix = np.empty((H, W, 3))
        pix[:] = NORMAL_BACKGROUND
        n_cam = gbuf.normal[gbuf.mask] @ cam.rotation.T
        pix[gbuf.mask] = np.clip((n_cam + 1.0) / 2.0, 0.0, 1.0)
    elif kind == "depth":
        pix = np.zeros((H, W, 3))
        if gbuf.mask.any():
            inv = 1.0 / gbuf.depth[gbuf.mask]
            lo, hi = inv.min(), inv.max()
            vals = (inv - lo) / (hi - lo) if hi - lo > 1e-12 else np.ones_like(inv)
            pix[gbuf.mask] = vals[:, None]
    else:
        raise ValueError(f"unknown condition kind {kind!r}")
    return ConditionImage(pixels=pix, kind=kind)


def decode_normal_image(pixels: np.ndarray) -> np.ndarray:
    """Inverse of the normal encoding (per-pixel camera-space vectors)."""
    return pixels * 2.0 - 1.0
