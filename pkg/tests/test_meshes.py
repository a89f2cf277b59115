import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scoretex import meshes, primitives
from scoretex.meshes import (CameraPose, MeshError, ViewConfig, build_mesh,
                             camera_from_spherical, decode_normal_image,
                             load_mesh, rasterize, render_condition,
                             sample_camera, save_obj)

CUBE_OBJ = """\
v -1 -1 -1
v  1 -1 -1
v  1  1 -1
v -1  1 -1
v -1 -1  1
v  1 -1  1
v  1  1  1
v -1  1  1
f 1 2 3 4
f 5 8 7 6
f 1 5 6 2
f 2 6 7 3
f 3 7 8 4
f 4 8 5 1
"""


def test_cube_obj_loads_and_normalizes(tmp_path):
    path = tmp_path / "cube.obj"
    path.write_text(CUBE_OBJ)
    mesh = load_mesh(path)
    assert mesh.num_faces == 12  # quads fan-triangulated
    assert np.linalg.norm(mesh.vertices, axis=1).max() == pytest.approx(1.0, abs=1e-12)


def test_stored_normals_preserved(tmp_path):
    sphere = primitives.icosphere(1)
    path = tmp_path / "ico.obj"
    save_obj(sphere, path)
    again = load_mesh(path)
    assert again.normals is not None
    np.testing.assert_allclose(np.linalg.norm(again.normals, axis=1), 1.0, atol=1e-6)
    # icosphere normals are radial; after save/load they still are
    np.testing.assert_allclose(again.normals, again.vertices /
                               np.linalg.norm(again.vertices, axis=1, keepdims=True),
                               atol=1e-4)


def test_one_degenerate_face_among_many_warns(tmp_path):
    lines = []
    n = 0
    for i in range(333):
        x = i * 0.01
        lines += [f"v {x} 0 0", f"v {x + 0.005} 1 0", f"v {x + 0.01} 0 1"]
        lines.append(f"f {n + 1} {n + 2} {n + 3}")
        n += 3
    # one zero-area sliver: three collinear vertices
    lines += ["v 0 0 5", "v 0 0 6", "v 0 0 7", f"f {n + 1} {n + 2} {n + 3}"]
    path = tmp_path / "mostly_fine.obj"
    path.write_text("\n".join(lines) + "\n")
    mesh = load_mesh(path)
    assert mesh.degenerate_face_count == 1
    assert len(mesh.warnings) >= 1


def test_faces_out_of_range_rejected():
    verts = np.eye(3)
    with pytest.raises(MeshError):
        build_mesh(verts, np.array([[0, 1, 7]]))


def test_empty_mesh_rejected(tmp_path):
    path = tmp_path / "empty.obj"
    path.write_text("# nothing here\n")
    with pytest.raises(MeshError):
        load_mesh(path)


# --- cameras ---------------------------------------------------------------


def test_camera_convention_front():
    cam = camera_from_spherical(0.0, 0.0, 2.0, 45.0, (32, 32))
    np.testing.assert_allclose(cam.position, [0.0, 0.0, 2.0], atol=1e-12)


def test_camera_convention_overhead():
    cam = camera_from_spherical(0.0, 90.0, 2.0, 45.0, (32, 32))
    np.testing.assert_allclose(cam.position, [0.0, 2.0, 0.0], atol=1e-6)


def test_sample_camera_deterministic():
    view = ViewConfig()
    a = sample_camera(np.random.default_rng(42), view)
    b = sample_camera(np.random.default_rng(42), view)
    assert a.extrinsic.tobytes() == b.extrinsic.tobytes()


def test_camera_rotation_orthonormal():
    cam = camera_from_spherical(123.0, 33.0, 2.5, 50.0, (32, 32))
    r = cam.rotation
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-9)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)


def test_bad_extrinsic_rejected():
    bad = np.eye(4)
    bad[0, 0] = 2.0
    with pytest.raises(ValueError):
        CameraPose(extrinsic=bad, fov_y=0.8, resolution=(32, 32))


# --- rasterizer ------------------------------------------------------------


def _fullscreen_scene():
    verts = np.array([[-10.0, -10.0, 0.0], [10.0, -10.0, 0.0], [0.0, 10.0, 0.0]])
    uvs = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    faces = np.array([[0, 1, 2]])
    mesh = build_mesh(verts, faces, uvs=uvs, faces_uv=faces, normalize=False)
    cam = camera_from_spherical(0.0, 0.0, 2.0, 45.0, (17, 17))
    return mesh, cam


def test_center_pixel_barycentric():
    # center pixel of a 17x17 frame rays straight down -z and hits the
    # origin; barycentrics of (0,0) in this triangle are (1/4, 1/4, 1/2)
    mesh, cam = _fullscreen_scene()
    g = rasterize(mesh, cam)
    assert g.mask[8, 8]
    np.testing.assert_allclose(g.uv[8, 8], [0.25, 0.5], atol=1e-12)
    np.testing.assert_allclose(g.position[8, 8], [0.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(g.depth[8, 8], 2.0, atol=1e-12)


def test_camera_looking_away_empty_mask(unit_sphere_mesh):
    cam = camera_from_spherical(0.0, 0.0, 3.0, 45.0, (32, 32))
    ext = cam.extrinsic.copy()
    flip = np.diag([1.0, 1.0, -1.0, 1.0])  # same eye, reversed viewing axis
    ext = flip @ ext
    ext[:3, :3] *= np.array([[-1.0], [1.0], [1.0]])  # keep det = +1
    away = CameraPose(extrinsic=ext, fov_y=cam.fov_y, resolution=cam.resolution)
    g = rasterize(unit_sphere_mesh, away)
    assert not g.mask.any()


def test_depth_test_nearer_wins():
    verts = np.array([
        [-10.0, -10.0, 1.0], [10.0, -10.0, 1.0], [0.0, 10.0, 1.0],   # near
        [-10.0, -10.0, -1.0], [10.0, -10.0, -1.0], [0.0, 10.0, -1.0],  # far
    ])
    uvs = np.array([[1.0, 1.0]] * 3 + [[0.0, 0.0]] * 3)
    faces = np.array([[0, 1, 2], [3, 4, 5]])
    mesh = build_mesh(verts, faces, uvs=uvs, faces_uv=faces, normalize=False)
    cam = camera_from_spherical(0.0, 0.0, 3.0, 45.0, (17, 17))
    g = rasterize(mesh, cam)
    assert g.mask[8, 8]
    np.testing.assert_allclose(g.uv[8, 8], [1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(g.depth[8, 8], 2.0, atol=1e-12)  # 3 - 1


def test_background_sentinel_zero(unit_sphere_mesh, front_camera):
    g = rasterize(unit_sphere_mesh, front_camera)
    bg = ~g.mask
    assert bg.any()
    assert np.all(g.position[bg] == 0)
    assert np.all(g.normal[bg] == 0)
    assert np.all(g.uv[bg] == 0)
    assert np.all(g.depth[bg] == 0)


def test_covered_normals_unit(unit_sphere_mesh, front_camera):
    g = rasterize(unit_sphere_mesh, front_camera)
    lens = np.linalg.norm(g.normal[g.mask], axis=1)
    np.testing.assert_allclose(lens, 1.0, atol=1e-5)


def test_gbuffer_pure_function(unit_sphere_mesh, front_camera):
    a = rasterize(unit_sphere_mesh, front_camera)
    b = rasterize(unit_sphere_mesh, front_camera)
    assert a.position.tobytes() == b.position.tobytes()
    assert a.depth.tobytes() == b.depth.tobytes()
    assert a.mask.tobytes() == b.mask.tobytes()


def test_perspective_correct_interpolation(rng):
    """Interpolated linear-in-world attributes match ray-triangle hits."""
    for trial in range(12):
        verts = rng.uniform(-1, 1, (3, 3))
        verts[:, 2] = rng.uniform(-0.5, 0.5, 3)
        area = np.linalg.norm(np.cross(verts[1] - verts[0], verts[2] - verts[0]))
        if area < 0.3:
            continue
        # attribute = uv, chosen linear in world position: uv = (x+1, y+1)/2
        uvs = (verts[:, :2] + 1.0) / 2.0
        faces = np.array([[0, 1, 2]])
        mesh = build_mesh(verts, faces, uvs=uvs, faces_uv=faces, normalize=False)
        cam = camera_from_spherical(rng.uniform(0, 360), rng.uniform(-30, 60),
                                    3.0, 45.0, (33, 33))
        g = rasterize(mesh, cam)
        if not g.mask.any():
            continue
        ys, xs = np.nonzero(g.mask)
        pick = rng.integers(len(ys))
        y, x = ys[pick], xs[pick]
        expect = (g.position[y, x, :2] + 1.0) / 2.0
        np.testing.assert_allclose(g.uv[y, x], expect, atol=1e-4)
        # and the hit point really lies in the triangle plane
        n = np.cross(verts[1] - verts[0], verts[2] - verts[0])
        d = np.dot(g.position[y, x] - verts[0], n / np.linalg.norm(n))
        assert abs(d) < 1e-6


# --- condition images --------------------------------------------------------


def test_plane_facing_camera_normal_condition():
    mesh = primitives.plane()
    cam = camera_from_spherical(0.0, 0.0, 3.0, 45.0, (33, 33))
    g = rasterize(mesh, cam)
    cond = render_condition(g, cam, "normal")
    assert cond.kind == "normal"
    inside = cond.pixels[g.mask]
    np.testing.assert_allclose(inside, np.broadcast_to([0.5, 0.5, 1.0], inside.shape),
                               atol=1e-6)
    outside = cond.pixels[~g.mask]
    np.testing.assert_allclose(outside, np.broadcast_to([0.5, 0.5, 1.0], outside.shape),
                               atol=0)


def test_depth_condition_endpoints(unit_sphere_mesh, front_camera):
    g = rasterize(unit_sphere_mesh, front_camera)
    cond = render_condition(g, front_camera, "depth")
    vals = cond.pixels[g.mask][:, 0]
    nearest = np.argmin(g.depth[g.mask])
    farthest = np.argmax(g.depth[g.mask])
    assert vals[nearest] == pytest.approx(1.0, abs=1e-12)
    assert vals[farthest] == pytest.approx(0.0, abs=1e-12)
    assert np.all(cond.pixels[~g.mask] == 0.0)


def test_empty_mask_conditions():
    from scoretex.meshes import GBuffer

    g = GBuffer(position=np.zeros((16, 16, 3)), normal=np.zeros((16, 16, 3)),
                uv=np.zeros((16, 16, 2)), mask=np.zeros((16, 16), dtype=bool),
                depth=np.zeros((16, 16)))
    cam = camera_from_spherical(0.0, 0.0, 2.0, 45.0, (16, 16))
    n = render_condition(g, cam, "normal")
    np.testing.assert_allclose(n.pixels, np.broadcast_to([0.5, 0.5, 1.0], (16, 16, 3)))
    d = render_condition(g, cam, "depth")
    assert np.all(d.pixels == 0.0)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.05, 1))
@settings(max_examples=50, deadline=None)
def test_normal_encoding_round_trip(nx, ny, nz):
    n = np.array([nx, ny, nz])
    norm = np.linalg.norm(n)
    if norm < 1e-3:
        return
    n = n / norm
    encoded = (n + 1.0) / 2.0
    decoded = decode_normal_image(encoded[None, None, :])[0, 0]
    np.testing.assert_allclose(decoded, n, atol=1e-3)


def test_view_direction_labels():
    assert meshes.view_direction(0.0, 70.0) == "overhead"
    assert meshes.view_direction(0.0, 10.0) == "front"
    assert meshes.view_direction(180.0, 10.0) == "back"
    assert meshes.view_direction(90.0, 10.0) == "side"


def test_unit_sphere_invariant_all_primitives():
    for name in primitives.SHAPES:
        mesh = primitives.make_shape(name)
        assert np.linalg.norm(mesh.vertices, axis=1).max() == pytest.approx(1.0)
        assert mesh.has_uvs
        assert mesh.uvs.min() >= -1e-9 and mesh.uvs.max() <= 1.0 + 1e-9
        assert mesh.degenerate_face_count == 0
