"""Procedural training corpus: shaded primitive shapes wearing flat two-color
patterns, each paired with its caption and normal/depth condition images.

Patterns are evaluated on 3D surface position so every shape works without
UV unwrapping, and captions are built only from the fixed prompt vocabulary.
Sample i deterministically cycles through the texture x shape x palette
product; only the camera pose is drawn from the generator, so a seed fully
pins the manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .diffusion import MAX_TOKENS, encode_prompt
from .meshes import ViewConfig, rasterize, render_condition, sample_camera, view_direction
from .primitives import SHAPES, make_shape
from .shading import BrdfSample, environment_preset, shade

# linear-RGB anchors for the caption color words
COLOR_RGB = {
    "red": (0.75, 0.08, 0.08),
    "green": (0.10, 0.60, 0.12),
    "blue": (0.10, 0.20, 0.75),
    "yellow": (0.80, 0.75, 0.10),
    "purple": (0.45, 0.12, 0.60),
    "orange": (0.85, 0.45, 0.08),
    "teal": (0.08, 0.55, 0.55),
    "magenta": (0.75, 0.10, 0.55),
    "olive": (0.45, 0.48, 0.10),
    "navy": (0.06, 0.08, 0.40),
    "maroon": (0.45, 0.08, 0.12),
}

TEXTURES = ("checker", "stripes", "dots", "gradient", "patches")
DEFAULT_PALETTES = (
    ("red", "green"), ("blue", "yellow"), ("purple", "orange"),
    ("teal", "maroon"), ("navy", "olive"), ("magenta", "green"),
)


@dataclass
class ToyCorpusSpec:
    count: int = 256
    resolution: int = 32
    textures: tuple[str, ...] = TEXTURES
    shapes: tuple[str, ...] = ("sphere", "cube", "torus", "capsule")
    palettes: tuple[tuple[str, str], ...] = DEFAULT_PALETTES
    roughness: float = 0.6
    metallic: float = 0.0
    lighting: str = "three-point"
    light_intensity: float = 2.5
    pattern_scale: float = 3.0

    def validate(self) -> None:
        if self.count < 0:
            raise ValueError("count must be non-negative")
        if self.resolution < 16 or self.resolution % 4:
            raise ValueError("resolution must be >= 16 and a multiple of 4")
        for t in self.textures:
            if t not in TEXTURES:
                raise ValueError(f"unknown texture {t!r}")
        for s in self.shapes:
            if s not in SHAPES:
                raise ValueError(f"unknown shape {s!r}")
        for pair in self.palettes:
            for c in pair:
                if c not in COLOR_RGB:
                    raise ValueError(f"unknown palette color {c!r}")
        if not (self.textures and self.shapes and self.palettes):
            raise ValueError("textures, shapes and palettes must be non-empty")


def procedural_albedo(texture: str, points: np.ndarray, color_a, color_b,
                      scale: float = 3.0) -> np.ndarray:
    """Evaluate a two-color pattern at (N, 3) surface points."""
    p = np.asarray(points, dtype=np.float64)
    a = np.asarray(color_a, dtype=np.float64)
    b = np.asarray(color_b, dtype=np.float64)
    if texture == "checker":
        cells = np.floor(p * scale).astype(np.int64).sum(axis=1)
        t = (cells % 2).astype(np.float64)[:, None]
    elif texture == "stripes":
        t = (np.floor(p[:, 0] * scale).astype(np.int64) % 2)[:, None].astype(np.float64)
    elif texture == "dots":
        frac = p * scale - np.floor(p * scale) - 0.5
        t = (np.linalg.norm(frac, axis=1) < 0.35)[:, None].astype(np.float64)
    elif texture == "gradient":
        t = np.clip((p[:, 1] + 1.0) / 2.0, 0.0, 1.0)[:, None]
    elif texture == "patches":
        cell = np.floor(p * (scale * 0.5)).astype(np.int64)
        h = (cell[:, 0] * 73856093) ^ (cell[:, 1] * 19349663) ^ (cell[:, 2] * 83492791)
        t = (h & 1).astype(np.float64)[:, None]
    else:
        raise ValueError(f"unknown texture {texture!r}")
    return ((1.0 - t) * a + t * b).astype(np.float32)


@dataclass
class CorpusData:
    images: np.ndarray      # (N, R, R, 3) float32 in [0, 1], white background
    normals: np.ndarray     # (N, R, R, 3) encoded camera-space normals
    depths: np.ndarray      # (N, R, R, 3) normalized inverse depth
    token_ids: np.ndarray   # (N, MAX_TOKENS) int64
    manifest: list[dict] = field(default_factory=list)

    @property
    def count(self) -> int:
        return self.images.shape[0]

    def conditions(self) -> dict[str, np.ndarray]:
        return {"normal": self.normals, "depth": self.depths}


def _render_sample(spec: ToyCorpusSpec, mesh, texture: str, shape: str,
                   palette: tuple[str, str], light, rng: np.random.Generator):
    view = ViewConfig(resolution=(spec.resolution, spec.resolution))
    cam = sample_camera(rng, view)
    gbuf = rasterize(mesh, cam)
    pts = gbuf.position[gbuf.mask]
    albedo = procedural_albedo(texture, pts, COLOR_RGB[palette[0]],
                               COLOR_RGB[palette[1]], spec.pattern_scale)
    n = len(pts)
    sample = BrdfSample(
        albedo=torch.from_numpy(albedo),
        roughness=torch.full((n,), spec.roughness, dtype=torch.float32),
        metallic=torch.full((n,), spec.metallic, dtype=torch.float32))
    img = shade(gbuf, sample, light, cam.position)
    normal = render_condition(gbuf, cam, "normal").pixels.astype(np.float32)
    depth = render_condition(gbuf, cam, "depth").pixels.astype(np.float32)
    caption = " ".join(["a", "photo", "of", palette[0], texture, shape,
                        view_direction(cam.azimuth, cam.elevation)])
    entry = {"texture": texture, "shape": shape, "palette": list(palette),
             "azimuth": round(float(cam.azimuth), 6),
             "elevation": round(float(cam.elevation), 6),
             "radius": round(float(cam.radius), 6), "caption": caption}
    return img.numpy_rgb(), normal, depth, caption, entry


def generate_corpus(spec: ToyCorpusSpec, rng: np.random.Generator) -> CorpusData:
    """Render ``spec.count`` captioned samples; count zero is a valid corpus."""
    spec.validate()
    r = spec.resolution
    images = np.zeros((spec.count, r, r, 3), dtype=np.float32)
    normals = np.zeros_like(images)
    depths = np.zeros_like(images)
    token_ids = np.zeros((spec.count, MAX_TOKENS), dtype=np.int64)
    manifest: list[dict] = []

    combos = [(t, s, p) for t in spec.textures for s in spec.shapes
              for p in spec.palettes]
    meshes = {name: make_shape(name) for name in spec.shapes}
    light = environment_preset(spec.lighting, rng=np.random.default_rng(0),
                               intensity=spec.light_intensity)
    for i in range(spec.count):
        texture, shape, palette = combos[i % len(combos)]
        rgb, nrm, dep, caption, entry = _render_sample(
            spec, meshes[shape], texture, shape, palette, light, rng)
        images[i], normals[i], depths[i] = rgb, nrm, dep
        token_ids[i] = encode_prompt(caption).ids
        entry["index"] = i
        manifest.append(entry)
    return CorpusData(images, normals, depths, token_ids, manifest)


def split_corpus(data: CorpusData, heldout_fraction: float,
                 rng: np.random.Generator) -> tuple[CorpusData, CorpusData]:
    """Random train/held-out partition (held-out gets at least one sample)."""
    if not 0.0 < heldout_fraction < 1.0:
        raise ValueError("heldout_fraction must be in (0, 1)")
    n = data.count
    if n < 2:
        raise ValueError("need at least two samples to split")
    perm = rng.permutation(n)
    k = max(1, int(round(n * heldout_fraction)))
    held, train = perm[:k], perm[k:]

    def take(idx):
        return CorpusData(data.images[idx], data.normals[idx],
                          data.depths[idx], data.token_ids[idx],
                          [data.manifest[j] for j in idx])
    return take(train), take(held)


def save_corpus(data: CorpusData, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(out / "corpus.npz", images=data.images,
                        normals=data.normals, depths=data.depths,
                        token_ids=data.token_ids)
    (out / "manifest.json").write_text(
        json.dumps(data.manifest, indent=1, sort_keys=True) + "\n")


def load_corpus(in_dir) -> CorpusData:
    src = Path(in_dir)
    with np.load(src / "corpus.npz") as z:
        arrays = {k: z[k] for k in ("images", "normals", "depths", "token_ids")}
    manifest = json.loads((src / "manifest.json").read_text())
    return CorpusData(arrays["images"], arrays["normals"], arrays["depths"],
                      arrays["token_ids"], manifest)
