"""Procedural test geometry: cube, icosphere, torus, capsule, plane.

All primitives come out normalized to the unit sphere and carry UV atlases,
so they can be rasterized, shaded and baked without external assets.
"""

from __future__ import annotations

import math

import numpy as np

from .meshes import TriangleMesh, build_mesh


def plane() -> TriangleMesh:
    """Single quad in the xy-plane facing +z, identity UV map."""
    verts = np.array([[-1, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0]], dtype=np.float64)
    normals = np.tile([[0.0, 0.0, 1.0]], (4, 1))
    uvs = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.float64)
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    return build_mesh(verts, faces, normals=normals, faces_nrm=faces,
                      uvs=uvs, faces_uv=faces)


def cube() -> TriangleMesh:
    """Axis-aligned cube, one UV tile per face in a 3x2 atlas."""
    face_axes = [  # (normal, tangent u, tangent v)
        ((1, 0, 0), (0, 0, -1), (0, 1, 0)),
        ((-1, 0, 0), (0, 0, 1), (0, 1, 0)),
        ((0, 1, 0), (1, 0, 0), (0, 0, -1)),
        ((0, -1, 0), (1, 0, 0), (0, 0, 1)),
        ((0, 0, 1), (1, 0, 0), (0, 1, 0)),
        ((0, 0, -1), (-1, 0, 0), (0, 1, 0)),
    ]
    verts, normals, uvs, faces = [], [], [], []
    inset = 0.02
    for i, (n, tu, tv) in enumerate(face_axes):
        n, tu, tv = np.array(n, float), np.array(tu, float), np.array(tv, float)
        tile_x, tile_y = i % 3, i // 3
        base = len(verts)
        for su, sv in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
            verts.append(n + su * tu + sv * tv)
            normals.append(n)
            u = (tile_x + inset + (su + 1) / 2 * (1 - 2 * inset)) / 3
            v = (tile_y + inset + (sv + 1) / 2 * (1 - 2 * inset)) / 2
            uvs.append((u, v))
        faces.append([base, base + 1, base + 2])
        faces.append([base, base + 2, base + 3])
    faces = np.array(faces)
    return build_mesh(np.array(verts), faces, normals=np.array(normals),
                      faces_nrm=faces, uvs=np.array(uvs), faces_uv=faces)


def _icosahedron():
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    return verts, faces


def icosphere(subdivisions: int = 3) -> TriangleMesh:
    """Subdivided icosahedron with spherical UVs (seam-corrected per face)."""
    verts, faces = _icosahedron()
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = (np.array(verts[a]) + np.array(verts[b])) / 2.0
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(tuple(m))
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.array(new_faces)
    verts = np.array(verts)

    # spherical projection; faces straddling the u-wrap get shifted corners
    u = np.arctan2(verts[:, 0], verts[:, 2]) / (2 * math.pi) + 0.5
    v = np.arcsin(np.clip(verts[:, 1], -1, 1)) / math.pi + 0.5
    corner_uv = np.stack([u[faces], v[faces]], axis=2)   # (F, 3, 2)
    span = corner_uv[:, :, 0].max(axis=1) - corner_uv[:, :, 0].min(axis=1)
    wrap = span > 0.5
    cu = corner_uv[:, :, 0]
    cu[wrap] = np.where(cu[wrap] < 0.5, cu[wrap] + 1.0, cu[wrap])
    corner_uv[:, :, 0] = cu / max(1.0, cu.max())

    uvs = corner_uv.reshape(-1, 2)
    faces_uv = np.arange(len(uvs)).reshape(-1, 3)
    return build_mesh(verts, faces, normals=verts.copy(), faces_nrm=faces,
                      uvs=uvs, faces_uv=faces_uv)


def _grid_faces(nu: int, nv: int) -> np.ndarray:
    """Triangulate an (nu+1) x (nv+1) vertex grid."""
    faces = []
    for j in range(nv):
        for i in range(nu):
            a = j * (nu + 1) + i
            b = a + 1
            c = a + nu + 1
            d = c + 1
            faces += [[a, b, d], [a, d, c]]
    return np.array(faces)


def _drop_degenerate(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Remove zero-area faces (grid rows collapsed onto a pole)."""
    tri = verts[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return faces[np.linalg.norm(cross, axis=1) > 1e-12]


def torus(major: float = 0.7, minor: float = 0.3, nu: int = 48, nv: int = 24) -> TriangleMesh:
    us = np.linspace(0.0, 1.0, nu + 1)
    vs = np.linspace(0.0, 1.0, nv + 1)
    uu, vv = np.meshgrid(us, vs)
    a, b = 2 * math.pi * uu, 2 * math.pi * vv
    x = (major + minor * np.cos(b)) * np.sin(a)
    y = minor * np.sin(b)
    z = (major + minor * np.cos(b)) * np.cos(a)
    verts = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    nrm = np.stack([np.cos(b) * np.sin(a), np.sin(b), np.cos(b) * np.cos(a)],
                   axis=-1).reshape(-1, 3)
    uvs = np.stack([uu, vv], axis=-1).reshape(-1, 2)
    faces = _grid_faces(nu, nv)
    return build_mesh(verts, faces, normals=nrm, faces_nrm=faces,
                      uvs=uvs, faces_uv=faces)


def capsule(radius: float = 0.45, half_height: float = 0.5,
            slices: int = 32, stacks: int = 8) -> TriangleMesh:
    """Cylinder with hemispherical caps; u wraps around, v runs pole to pole."""
    rows = []
    # lower cap, cylinder band, upper cap as latitude rows
    lats = np.concatenate([
        np.linspace(-math.pi / 2, 0.0, stacks + 1),
        np.linspace(0.0, math.pi / 2, stacks + 1),
    ])
    offsets = np.concatenate([np.full(stacks + 1, -half_height),
                              np.full(stacks + 1, half_height)])
    arc = radius * math.pi / 2
    total_len = 2 * arc + 2 * half_height
    v_coord = np.concatenate([
        (lats[: stacks + 1] + math.pi / 2) * radius / total_len,
        (arc + 2 * half_height + lats[stacks + 1:] * radius) / total_len,
    ])
    us = np.linspace(0.0, 1.0, slices + 1)
    verts, nrms, uvs = [], [], []
    for lat, off, vc in zip(lats, offsets, v_coord):
        for u in us:
            ang = 2 * math.pi * u
            n = np.array([math.cos(lat) * math.sin(ang), math.sin(lat),
                          math.cos(lat) * math.cos(ang)])
            verts.append(radius * n + np.array([0.0, off, 0.0]))
            nrms.append(n)
            uvs.append((u, vc))
    verts = np.array(verts)
    faces = _drop_degenerate(verts, _grid_faces(slices, 2 * stacks + 1))
    return build_mesh(verts, faces, normals=np.array(nrms), faces_nrm=faces,
                      uvs=np.array(uvs), faces_uv=faces)


SHAPES = {
    "sphere": icosphere,
    "cube": cube,
    "torus": torus,
    "capsule": capsule,
}


def make_shape(name: str, **kwargs) -> TriangleMesh:
    try:
        return SHAPES[name](**kwargs)
    except KeyError:
        raise KeyError(f"unknown shape {name!r}; have {sorted(SHAPES)}") from None
