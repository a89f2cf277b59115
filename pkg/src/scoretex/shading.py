"""Physically-based shading of G-buffers under discrete environment lighting.

The reflectance model is a standard microfacet sum: a Lambertian diffuse lobe
scaled by (1 - metallic) plus a GGX specular lobe with Schlick Fresnel and
height-correlated Smith visibility.  Lighting is a fixed set of directional
samples (either analytic presets or importance-sampled from a lat-long HDR),
frozen once per run so the render is a deterministic function of the BRDF
maps.  Everything runs in torch so gradients flow to the texture field;
`shade_backward` exposes that explicitly for gradient checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

MIN_ROUGHNESS = 0.04
DIELECTRIC_F0 = 0.04
GAMMA = 2.2
_POW_EPS = 1e-20  # keeps d/dx x^(1/2.2) finite as x -> 0+


@dataclass
class EnvironmentLight:
    """Discrete directional lighting, frozen once per run.

    ``radiances`` already carries the quadrature factor (radiance times the
    solid angle each sample represents), so shading is the plain sum
    sum_j radiances[j] * f(v, l_j) * max(n.l_j, 0).  Delta lights simply use
    their radiance unscaled.
    """

    directions: np.ndarray     # (L, 3) unit vectors, surface-to-light
    radiances: np.ndarray      # (L, 3) linear RGB, weighted by sample solid angle
    source: str = "custom"

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=np.float64).reshape(-1, 3)
        norms = np.linalg.norm(self.directions, axis=1, keepdims=True)
        self.directions = self.directions / np.clip(norms, 1e-12, None)
        self.radiances = np.asarray(self.radiances, dtype=np.float64).reshape(-1, 3)
        if len(self.directions) != len(self.radiances):
            raise ValueError("light arrays disagree on sample count")
        if not np.isfinite(self.radiances).all() or (self.radiances < 0).any():
            raise ValueError("radiances must be finite and non-negative")

    @property
    def num_lights(self) -> int:
        return len(self.directions)

    def tensors(self, dtype: torch.dtype):
        return (torch.as_tensor(self.directions, dtype=dtype),
                torch.as_tensor(self.radiances, dtype=dtype))


def stratified_sphere(rng: np.random.Generator, count: int) -> np.ndarray:
    """Jittered-grid directions over the full sphere, uniform in solid angle.

    Stratifies (cos(theta), phi) on an a x b grid with a*b >= count and
    returns exactly ``count`` directions.
    """
    a = max(1, int(math.sqrt(count)))
    b = (count + a - 1) // a
    ii, jj = np.meshgrid(np.arange(a), np.arange(b), indexing="ij")
    u = (ii.ravel() + rng.random(a * b)) / a          # -> cos theta
    v = (jj.ravel() + rng.random(a * b)) / b          # -> phi
    cos_t = 1.0 - 2.0 * u
    sin_t = np.sqrt(np.clip(1.0 - cos_t**2, 0.0, None))
    phi = 2.0 * math.pi * v
    dirs = np.stack([sin_t * np.sin(phi), cos_t, sin_t * np.cos(phi)], axis=1)
    return dirs[:count]


PRESET_NAMES = ("uniform", "single-light", "three-point")


def environment_preset(name: str, rng: np.random.Generator | None = None,
                       num_samples: int = 64, intensity: float = 1.0) -> EnvironmentLight:
    """Built-in lighting rigs: "uniform", "single-light", "three-point"."""
    if name == "uniform":
        if rng is None:
            rng = np.random.default_rng(0)
        dirs = stratified_sphere(rng, num_samples)
        rad = np.full((num_samples, 3), intensity * 4.0 * math.pi / num_samples)
        return EnvironmentLight(dirs, rad, source=name)
    if name == "single-light":
        return EnvironmentLight(np.array([[0.0, 1.0, 0.0]]),
                                np.array([[intensity] * 3]), source=name)
    if name == "three-point":
        dirs = np.array([[1.0, 1.0, 1.0], [-1.0, 0.3, 0.8], [0.0, 0.5, -1.0]])
        rad = intensity * np.array([[1.0, 0.96, 0.9],
                                    [0.28, 0.3, 0.35],
                                    [0.5, 0.5, 0.5]])
        return EnvironmentLight(dirs, rad, source=name)
    raise KeyError(f"unknown lighting preset {name!r}")


def discretize_environment(source, num_samples: int = 64,
                           rng: np.random.Generator | None = None,
                           intensity: float = 1.0) -> EnvironmentLight:
    """Resolve a lighting spec: a preset name or a lat-long EXR path."""
    if isinstance(source, str) and source in PRESET_NAMES:
        return environment_preset(source, rng=rng, num_samples=num_samples,
                                  intensity=intensity)
    return load_environment(source, num_samples=num_samples, rng=rng)


def load_environment(path, num_samples: int = 256,
                     rng: np.random.Generator | None = None) -> EnvironmentLight:
    """Importance-sample a lat-long HDR map into a discrete light set.

    Texels are drawn proportionally to luminance * sin(theta); the returned
    weights make the estimator unbiased (weight = 1 / (N * pdf_solid_angle)).
    """
    from .imageio import read_exr

    if rng is None:
        rng = np.random.default_rng(0)
    img = read_exr(path)
    h, w = img.shape[:2]
    lum = img @ np.array([0.2126, 0.7152, 0.0722])
    theta = math.pi * (np.arange(h) + 0.5) / h
    density = lum * np.sin(theta)[:, None]
    total = density.sum()
    if total <= 0:
        raise ValueError(f"environment map {path} has no positive radiance")
    p_texel = (density / total).ravel()
    idx = rng.choice(h * w, size=num_samples, p=p_texel)
    iy, ix = np.divmod(idx, w)
    t = theta[iy]
    phi = 2.0 * math.pi * (ix + 0.5) / w
    dirs = np.stack([np.sin(t) * np.sin(phi), np.cos(t), np.sin(t) * np.cos(phi)], axis=1)
    texel_sa = (2.0 * math.pi / w) * (math.pi / h) * np.sin(t)
    pdf = p_texel[idx] / texel_sa
    weights = 1.0 / (num_samples * pdf)
    return EnvironmentLight(dirs, img.reshape(-1, 3)[idx] * weights[:, None],
                            source=str(path))


@dataclass
class BrdfSample:
    """Per-pixel material parameters, all torch tensors over N shading points."""
    albedo: torch.Tensor      # (N, 3) in [0, 1]
    roughness: torch.Tensor   # (N,) in [MIN_ROUGHNESS, 1]
    metallic: torch.Tensor    # (N,) in [0, 1]


def eval_brdf(sample: BrdfSample, normal: torch.Tensor, view: torch.Tensor,
              light: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Evaluate the reflectance for unit vectors n, v, l.

    Returns (diffuse, specular) contributions of shape (..., 3), already
    masked to zero where v or l falls below the horizon.  The Fresnel cosine
    is computed from v.l via the half-angle identity so the value is exactly
    symmetric under exchange of view and light.
    """
    n_dot_v = (normal * view).sum(-1)
    n_dot_l = (normal * light).sum(-1)
    above = (n_dot_v > 0) & (n_dot_l > 0)
    nv = torch.clamp(n_dot_v, min=1e-9)
    nl = torch.clamp(n_dot_l, min=1e-9)

    h = view + light
    h = h / torch.clamp(torch.linalg.norm(h, dim=-1, keepdim=True), min=1e-12)
    n_dot_h = torch.clamp((normal * h).sum(-1), min=0.0)
    # cos(v,h) = sqrt((1 + v.l) / 2): bitwise identical if v and l swap roles
    v_dot_l = (view * light).sum(-1)
    cos_vh = torch.sqrt(torch.clamp((1.0 + v_dot_l) / 2.0, min=0.0))

    rough = torch.clamp(sample.roughness, min=MIN_ROUGHNESS)
    alpha = rough * rough
    a2 = alpha * alpha
    denom = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0
    dist = a2 / (math.pi * denom * denom)

    f0 = DIELECTRIC_F0 * (1.0 - sample.metallic[..., None]) \
        + sample.albedo * sample.metallic[..., None]
    fresnel = f0 + (1.0 - f0) * (1.0 - cos_vh[..., None]) ** 5

    # height-correlated Smith, folded together with the 1/(4 nv nl) term
    lam_v = nl * torch.sqrt(nv * nv * (1.0 - a2) + a2)
    lam_l = nv * torch.sqrt(nl * nl * (1.0 - a2) + a2)
    vis = 0.5 / torch.clamp(lam_v + lam_l, min=1e-12)

    spec = dist[..., None] * fresnel * vis[..., None]
    diff = (1.0 - sample.metallic[..., None]) * sample.albedo / math.pi
    gate = above[..., None].to(diff.dtype)
    return diff * gate, spec * gate


@dataclass
class ShadeResult:
    """Flat per-pixel shading terms (N foreground pixels)."""
    linear: torch.Tensor     # (N, 3) pre-tonemap radiance
    diffuse: torch.Tensor    # (N, 3)
    specular: torch.Tensor   # (N, 3)


def shade_points(sample: BrdfSample, normal: torch.Tensor, view: torch.Tensor,
                 light: EnvironmentLight) -> ShadeResult:
    """Integrate the BRDF against the discrete light set, one light at a time."""
    l_dir, l_rad = light.tensors(sample.albedo.dtype)
    diffuse = torch.zeros_like(sample.albedo)
    specular = torch.zeros_like(sample.albedo)
    for j in range(light.num_lights):
        d, s = eval_brdf(sample, normal, view, l_dir[j].expand_as(normal))
        n_dot_l = torch.clamp((normal * l_dir[j]).sum(-1), min=0.0)
        scale = n_dot_l[..., None] * l_rad[j]
        diffuse = diffuse + d * scale
        specular = specular + s * scale
    return ShadeResult(diffuse + specular, diffuse, specular)


def shade_points_batched(sample: BrdfSample, normal: torch.Tensor,
                         view: torch.Tensor, light: EnvironmentLight) -> ShadeResult:
    """Same as shade_points but vectorized over lights (faster, more memory)."""
    l_dir, l_rad = light.tensors(sample.albedo.dtype)
    n = normal[:, None, :]
    v = view[:, None, :]
    l = l_dir[None, :, :]
    big = BrdfSample(sample.albedo[:, None, :], sample.roughness[:, None],
                     sample.metallic[:, None])
    d, s = eval_brdf(big, n, v, l)
    n_dot_l = torch.clamp((n * l).sum(-1), min=0.0)
    scale = n_dot_l[..., None] * l_rad[None, :, :]
    diffuse = (d * scale).sum(1)
    specular = (s * scale).sum(1)
    return ShadeResult(diffuse + specular, diffuse, specular)


def tonemap(linear: torch.Tensor) -> torch.Tensor:
    """Clamp to [0, 1] and gamma-encode; zero stays exactly zero."""
    safe = torch.clamp(linear, min=0.0, max=1.0)
    curved = torch.clamp(safe, min=_POW_EPS) ** (1.0 / GAMMA)
    return torch.where(safe > 0, curved, safe)


@dataclass
class RenderedImage:
    """A shaded view: tonemapped RGB on white, plus the per-pixel breakdown."""
    rgb: torch.Tensor               # (H, W, 3) in [0, 1]
    mask: np.ndarray                # (H, W) bool foreground
    linear: torch.Tensor            # (N, 3) foreground radiance
    diffuse: torch.Tensor           # (N, 3)
    specular: torch.Tensor          # (N, 3)
    fg_index: np.ndarray = field(repr=False, default=None)  # flat indices into H*W

    def numpy_rgb(self) -> np.ndarray:
        return self.rgb.detach().cpu().numpy().astype(np.float32)


def composite_on_white(values: torch.Tensor, mask: np.ndarray) -> torch.Tensor:
    """Scatter (N, 3) foreground pixels into an (H, W, 3) white image."""
    h, w = mask.shape
    img = torch.ones(h * w, 3, dtype=values.dtype, device=values.device)
    idx = torch.as_tensor(np.flatnonzero(mask.ravel()), device=values.device)
    img = img.index_copy(0, idx, values)
    return img.view(h, w, 3)


def shade(gbuf, sample: BrdfSample, light: EnvironmentLight,
          cam_position: np.ndarray) -> RenderedImage:
    """Shade a rasterized G-buffer with per-pixel BRDF parameters.

    ``sample`` holds one row per foreground pixel of ``gbuf`` (mask order,
    row-major).  Background is composited white after tonemapping.
    """
    mask = gbuf.mask
    dtype = sample.albedo.dtype
    pos = torch.as_tensor(gbuf.position[mask], dtype=dtype)
    nrm = torch.as_tensor(gbuf.normal[mask], dtype=dtype)
    if len(pos) != len(sample.albedo):
        raise ValueError(
            f"BRDF sample count {len(sample.albedo)} does not match "
            f"{len(pos)} foreground pixels")
    eye = torch.as_tensor(np.asarray(cam_position, dtype=np.float64), dtype=dtype)
    view = eye - pos
    view = view / torch.clamp(torch.linalg.norm(view, dim=-1, keepdim=True), min=1e-12)
    res = shade_points_batched(sample, nrm, view, light)
    rgb = composite_on_white(tonemap(res.linear), mask)
    return RenderedImage(rgb=rgb, mask=mask, linear=res.linear,
                         diffuse=res.diffuse, specular=res.specular,
                         fg_index=np.flatnonzero(mask.ravel()))


def shade_backward(gbuf, sample: BrdfSample, light: EnvironmentLight,
                   cam_position: np.ndarray, grad_rgb: torch.Tensor
                   ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Pull a gradient w.r.t. the output image back onto the BRDF maps.

    ``grad_rgb`` is dLoss/dRGB of shape (H, W, 3); returns
    (d/d albedo, d/d roughness, d/d metallic) matching ``sample`` shapes.
    Background pixels do not depend on the material, so their upstream
    gradient is discarded.
    """
    albedo = sample.albedo.detach().clone().requires_grad_(True)
    rough = sample.roughness.detach().clone().requires_grad_(True)
    metal = sample.metallic.detach().clone().requires_grad_(True)
    img = shade(gbuf, BrdfSample(albedo, rough, metal), light, cam_position)
    grads = torch.autograd.grad(
        img.rgb, (albedo, rough, metal),
        grad_outputs=torch.as_tensor(grad_rgb, dtype=img.rgb.dtype),
        allow_unused=False)
    return grads
