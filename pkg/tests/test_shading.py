import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from scoretex import meshes, primitives, shading
from scoretex.shading import (BrdfSample, EnvironmentLight, discretize_environment,
                              environment_preset, eval_brdf, shade, shade_backward,
                              stratified_sphere, tonemap)


def _single(albedo, rough, metal, dtype=torch.float64):
    return BrdfSample(torch.tensor([albedo], dtype=dtype),
                      torch.tensor([rough], dtype=dtype),
                      torch.tensor([metal], dtype=dtype))


def _unit(v):
    v = torch.as_tensor(v, dtype=torch.float64)
    return (v / torch.linalg.norm(v)).unsqueeze(0)


UP = _unit([0.0, 1.0, 0.0])


def test_metallic_one_kills_diffuse():
    s = _single([0.8, 0.4, 0.2], 0.5, 1.0)
    d, _ = eval_brdf(s, UP, _unit([0.3, 1.0, 0.1]), _unit([-0.2, 1.0, 0.4]))
    assert torch.all(d == 0)


def test_ggx_peak_and_normal_incidence_fresnel():
    # v = l = n: D = 1/(pi * alpha^2) with alpha = r^2, F = F0, folded
    # visibility = 1/4; r=0.5 gives D = 1/(pi * 0.0625) = 5.09296...
    s = _single([1.0, 1.0, 1.0], 0.5, 0.0)
    _, spec = eval_brdf(s, UP, UP, UP)
    d_expected = 1.0 / (math.pi * 0.0625)
    assert d_expected == pytest.approx(5.0930, abs=5e-5)
    np.testing.assert_allclose(spec[0].numpy(), 0.04 * d_expected * 0.25, rtol=1e-12)


def test_normal_incidence_fresnel_tracks_metallic():
    a = [0.6, 0.3, 0.1]
    s0 = _single(a, 0.3, 0.0)
    s1 = _single(a, 0.3, 1.0)
    _, spec0 = eval_brdf(s0, UP, UP, UP)
    _, spec1 = eval_brdf(s1, UP, UP, UP)
    # same D*V factor; Fresnel F0 moves from 0.04 to the albedo
    ratio = (spec1 / spec0)[0].numpy()
    np.testing.assert_allclose(ratio, np.array(a) / 0.04, rtol=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_reciprocity_exact(seed):
    rng = np.random.default_rng(seed)
    n = UP
    # draw v, l above the horizon
    def draw():
        d = rng.normal(size=3)
        d[1] = abs(d[1]) + 0.1
        return _unit(d)
    v, l = draw(), draw()
    s = _single(rng.uniform(0, 1, 3).tolist(), rng.uniform(0.04, 1), rng.uniform(0, 1))
    d1, s1 = eval_brdf(s, n, v, l)
    d2, s2 = eval_brdf(s, n, l, v)
    assert torch.equal(d1, d2)
    assert torch.equal(s1, s2)


def test_below_horizon_is_zero():
    s = _single([0.5, 0.5, 0.5], 0.5, 0.5)
    d, sp = eval_brdf(s, UP, _unit([0.0, 1.0, 0.0]), _unit([0.0, -1.0, 0.0]))
    assert torch.all(d == 0) and torch.all(sp == 0)


# --- environment lights ------------------------------------------------------


def test_single_light_preset():
    env = environment_preset("single-light")
    assert env.num_lights == 1
    np.testing.assert_allclose(env.directions[0], [0.0, 1.0, 0.0])


def test_uniform_env_mean_direction_near_zero():
    env = environment_preset("uniform", rng=np.random.default_rng(3),
                             num_samples=10_000)
    assert np.linalg.norm(env.directions.mean(axis=0)) < 0.05


def test_environment_deterministic():
    a = environment_preset("uniform", rng=np.random.default_rng(7), num_samples=64)
    b = environment_preset("uniform", rng=np.random.default_rng(7), num_samples=64)
    assert a.directions.tobytes() == b.directions.tobytes()
    assert a.radiances.tobytes() == b.radiances.tobytes()


def test_black_environment_rejected(tmp_path):
    from scoretex.imageio import write_exr

    path = tmp_path / "black.exr"
    write_exr(path, np.zeros((8, 16, 3), dtype=np.float32))
    with pytest.raises(ValueError):
        discretize_environment(str(path), num_samples=16)


def test_hdr_environment_importance_sampling(tmp_path):
    from scoretex.imageio import write_exr

    img = np.zeros((32, 64, 3), dtype=np.float32)
    img[4, :, :] = 5.0  # bright band near the top (high elevation)
    path = tmp_path / "band.exr"
    write_exr(path, img)
    env = discretize_environment(str(path), num_samples=200,
                                 rng=np.random.default_rng(5))
    assert env.num_lights == 200
    assert env.directions[:, 1].min() > 0.8  # all samples from the band


def test_stratified_sphere_is_unit():
    dirs = stratified_sphere(np.random.default_rng(0), 500)
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)


# --- shade -------------------------------------------------------------------


@pytest.fixture(scope="module")
def sphere_scene():
    mesh = primitives.icosphere(2)
    cam = meshes.camera_from_spherical(20.0, 15.0, 3.0, 45.0, (32, 32))
    g = meshes.rasterize(mesh, cam)
    return mesh, cam, g


def _uniform_sample(g, albedo, rough, metal, dtype=torch.float64):
    n = int(g.mask.sum())
    return BrdfSample(torch.tensor([albedo] * n, dtype=dtype),
                      torch.full((n,), rough, dtype=dtype),
                      torch.full((n,), metal, dtype=dtype))


def test_empty_mask_renders_white():
    g = meshes.GBuffer(position=np.zeros((16, 16, 3)), normal=np.zeros((16, 16, 3)),
                       uv=np.zeros((16, 16, 2)), mask=np.zeros((16, 16), dtype=bool),
                       depth=np.zeros((16, 16)))
    s = BrdfSample(torch.zeros(0, 3), torch.zeros(0), torch.zeros(0))
    img = shade(g, s, environment_preset("single-light"), np.array([0.0, 0.0, 3.0]))
    assert torch.all(img.rgb == 1.0)


def test_single_light_along_normal_diffuse_term():
    # plane facing +z, light from +z, camera on +z: diffuse = a/pi * radiance
    mesh = primitives.plane()
    cam = meshes.camera_from_spherical(0.0, 0.0, 3.0, 45.0, (17, 17))
    g = meshes.rasterize(mesh, cam)
    env = EnvironmentLight(np.array([[0.0, 0.0, 1.0]]), np.array([[2.0, 2.0, 2.0]]),
                           source="test")
    s = _uniform_sample(g, [1.0, 0.0, 0.0], 1.0, 0.0)
    img = shade(g, s, env, cam.position)
    np.testing.assert_allclose(img.diffuse[0].numpy(), [2.0 / math.pi, 0.0, 0.0],
                               rtol=1e-12)
    assert torch.all(img.specular >= 0)


def test_radiance_doubling_is_exactly_linear(sphere_scene):
    _, cam, g = sphere_scene
    rng = np.random.default_rng(11)
    env1 = environment_preset("uniform", rng=rng, num_samples=16)
    env2 = EnvironmentLight(env1.directions, env1.radiances * 2.0, source="x2")
    s = _uniform_sample(g, [0.7, 0.5, 0.3], 0.4, 0.2)
    a = shade(g, s, env1, cam.position)
    b = shade(g, s, env2, cam.position)
    assert torch.equal(a.linear * 2.0, b.linear)


def test_background_exactly_white(sphere_scene):
    _, cam, g = sphere_scene
    s = _uniform_sample(g, [0.2, 0.4, 0.8], 0.5, 0.0)
    img = shade(g, s, environment_preset("three-point"), cam.position)
    assert torch.all(img.rgb[~torch.as_tensor(g.mask)] == 1.0)


def test_tonemap_matches_invariant(sphere_scene):
    _, cam, g = sphere_scene
    s = _uniform_sample(g, [0.9, 0.6, 0.1], 0.3, 0.0)
    img = shade(g, s, environment_preset("three-point"), cam.position)
    fg = img.rgb[torch.as_tensor(g.mask)]
    expect = torch.clamp(img.linear, 0.0, 1.0) ** (1.0 / 2.2)
    np.testing.assert_allclose(fg.numpy(), expect.numpy(), atol=1e-9)


def test_shade_deterministic(sphere_scene):
    _, cam, g = sphere_scene
    env = environment_preset("uniform", rng=np.random.default_rng(2), num_samples=32)
    s = _uniform_sample(g, [0.5, 0.5, 0.5], 0.5, 0.5)
    a = shade(g, s, env, cam.position)
    b = shade(g, s, env, cam.position)
    assert torch.equal(a.rgb, b.rgb)


# --- gradients ---------------------------------------------------------------


def test_backward_zero_upstream_is_zero(sphere_scene):
    _, cam, g = sphere_scene
    s = _uniform_sample(g, [0.5, 0.4, 0.3], 0.5, 0.2)
    grads = shade_backward(g, s, environment_preset("three-point"), cam.position,
                           torch.zeros(*g.mask.shape, 3, dtype=torch.float64))
    for t in grads:
        assert torch.all(t == 0)


def _clone(sample):
    return BrdfSample(sample.albedo.clone(), sample.roughness.clone(),
                      sample.metallic.clone())


def _fd_check(g, sample, env, cam_pos, indices, h=1e-5, rtol=1e-4):
    """Central finite differences through shade() on selected coordinates."""
    upstream = torch.ones(*g.mask.shape, 3, dtype=torch.float64)
    ga, gr, gm = shade_backward(g, sample, env, cam_pos, upstream)

    def loss(s):
        return float(shade(g, s, env, cam_pos).rgb.sum())

    def perturb(which, pix, delta):
        s = _clone(sample)
        t = {"albedo": s.albedo, "roughness": s.roughness, "metallic": s.metallic}[which]
        if which == "albedo":
            t[pix, 1] += delta
        else:
            t[pix] += delta
        return s

    for pix in indices:
        for which, grad in (("albedo", ga[:, 1]), ("roughness", gr), ("metallic", gm)):
            analytic = grad[pix].item()
            numeric = (loss(perturb(which, pix, h))
                       - loss(perturb(which, pix, -h))) / (2 * h)
            denom = max(abs(analytic), abs(numeric), 1e-8)
            assert abs(analytic - numeric) / denom < rtol, \
                f"pixel {pix} {which}: analytic {analytic} vs fd {numeric}"


def test_backward_matches_finite_differences(sphere_scene):
    _, cam, g = sphere_scene
    rng = np.random.default_rng(5)
    n = int(g.mask.sum())
    sample = BrdfSample(
        torch.as_tensor(rng.uniform(0.2, 0.8, (n, 3)), dtype=torch.float64),
        torch.as_tensor(rng.uniform(0.2, 0.9, n), dtype=torch.float64),
        torch.as_tensor(rng.uniform(0.1, 0.9, n), dtype=torch.float64))
    env = environment_preset("three-point")
    picks = rng.choice(n, size=4, replace=False)
    _fd_check(g, sample, env, cam.position, picks.tolist())


def test_diffuse_metallic_derivative():
    # diffuse term is (1-m) a/pi (n.l) rad: d/dm = -a/pi (n.l) rad
    mesh = primitives.plane()
    cam = meshes.camera_from_spherical(0.0, 0.0, 3.0, 45.0, (17, 17))
    g = meshes.rasterize(mesh, cam)
    env = EnvironmentLight(np.array([[0.0, 0.0, 1.0]]), np.array([[1.5, 1.5, 1.5]]),
                           source="test")
    n = int(g.mask.sum())
    albedo = torch.full((n, 3), 0.6, dtype=torch.float64)
    metal = torch.full((n,), 0.3, dtype=torch.float64, requires_grad=True)
    s = BrdfSample(albedo, torch.full((n,), 0.8, dtype=torch.float64), metal)
    img = shade(g, s, env, cam.position)
    (g_metal,) = torch.autograd.grad(img.diffuse.sum(), metal)
    expect = -0.6 / math.pi * 1.0 * 1.5 * 3  # three channels summed, n.l = 1
    np.testing.assert_allclose(g_metal.numpy(), np.full(n, expect), rtol=1e-10)


def test_tonemap_zero_stays_zero_with_finite_grad():
    x = torch.zeros(4, dtype=torch.float64, requires_grad=True)
    y = tonemap(x)
    assert torch.all(y == 0)
    (g,) = torch.autograd.grad(y.sum(), x)
    assert torch.isfinite(g).all()
