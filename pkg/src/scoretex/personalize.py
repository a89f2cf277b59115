"""Binding exemplar appearance to the "[V]" token by fine-tuning a copy of
the pretrained denoiser on white-composited exemplar crops.

Plain denoising reconstruction on the exemplars only — no prior-preservation
term, no text-encoder co-training — with the control branch left frozen so
geometry conditioning keeps its pretrained behaviour.  At desk scale the
exemplars are renders of a source object with known texture, which makes
transfer fidelity measurable; arbitrary photos follow the same path.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .diffusion import (Denoiser, NoiseSchedule, PromptTokens,
                        _DivergenceDetector, add_noise, build_schedule,
                        encode_prompt)
from .meshes import ViewConfig, camera_from_spherical, rasterize, view_direction
from .primitives import make_shape
from .shading import BrdfSample, environment_preset, shade

log = logging.getLogger(__name__)

DEFAULT_PROMPT = "a photo of [V] object"


@dataclass
class ExemplarSet:
    """K prepared exemplar images (white background, shared shorter edge)."""

    images: list[np.ndarray]            # each (H, W, 3) float32 in [0, 1]
    masks: list[np.ndarray]             # each (H, W) bool foreground
    prompt: PromptTokens
    cameras: list[tuple[float, float, float]] | None = None  # (az, el, radius)

    def __post_init__(self):
        k = len(self.images)
        if not 1 <= k <= 8:
            raise ValueError(f"need 1..8 exemplars, got {k}")
        if len(self.masks) != k:
            raise ValueError("images and masks disagree in count")
        if self.cameras is not None and len(self.cameras) != k:
            raise ValueError("cameras must align with images")
        if "[V]" not in self.prompt.words():
            raise ValueError('prompt must contain the "[V]" token')
        edges = {min(img.shape[:2]) for img in self.images}
        if len(edges) != 1:
            raise ValueError(f"exemplars disagree on shorter edge: {edges}")

    @property
    def count(self) -> int:
        return len(self.images)

    @property
    def crop_size(self) -> int:
        return min(self.images[0].shape[:2])


def _resize_shorter_edge(img: np.ndarray, target: int) -> np.ndarray:
    h, w = img.shape[:2]
    short = min(h, w)
    if short == target:
        return img.astype(np.float32)
    scale = target / short
    nh, nw = max(target, round(h * scale)), max(target, round(w * scale))
    if img.ndim == 2:
        pil = Image.fromarray(img.astype(np.float32), mode="F")
        return np.asarray(pil.resize((nw, nh), Image.BILINEAR), dtype=np.float32)
    chans = [Image.fromarray(img[..., c].astype(np.float32), mode="F")
             .resize((nw, nh), Image.BILINEAR) for c in range(img.shape[-1])]
    return np.stack([np.asarray(c, dtype=np.float32) for c in chans], axis=-1)


def prepare_exemplars(images, masks, target_size: int = 64,
                      prompt: str = DEFAULT_PROMPT,
                      cameras=None) -> ExemplarSet:
    """White-composite each image over its mask and resize the shorter edge.

    Mirrors ingest for casually captured photos: background pixels become
    exactly (1, 1, 1); the shorter edge lands on ``target_size`` (a stand-in
    for the published pipeline's 512) and square crops are drawn later,
    during fine-tuning.
    """
    if target_size < 16 or target_size % 4:
        raise ValueError("target_size must be >= 16 and a multiple of 4")
    if len(images) != len(masks):
        raise ValueError("images and masks disagree in count")
    out_imgs, out_masks = [], []
    for i, (img, mask) in enumerate(zip(images, masks)):
        img = np.asarray(img, dtype=np.float32)
        mask = np.asarray(mask, dtype=bool)
        if img.ndim != 3 or img.shape[-1] != 3:
            raise ValueError(f"exemplar {i}: expected (H, W, 3) image")
        if mask.shape != img.shape[:2]:
            raise ValueError(f"exemplar {i}: mask shape mismatch")
        if not mask.any():
            raise ValueError(f"exemplar {i}: empty foreground")
        comp = np.where(mask[..., None], img, np.float32(1.0))
        comp = _resize_shorter_edge(comp, target_size)
        m = _resize_shorter_edge(mask.astype(np.float32), target_size) > 0.5
        comp = np.where(m[..., None], comp, np.float32(1.0))
        out_imgs.append(np.clip(comp, 0.0, 1.0))
        out_masks.append(m)
    toks = encode_prompt(prompt)
    cams = [tuple(float(v) for v in c) for c in cameras] if cameras else None
    return ExemplarSet(out_imgs, out_masks, toks, cams)


# --- desk-scale exemplar source ----------------------------------------------


def render_reference_views(texture: str, shape: str, palette, count: int = 4,
                           resolution: int = 64, rng=None, roughness: float = 0.6,
                           metallic: float = 0.0, lighting: str = "three-point",
                           light_intensity: float = 2.5):
    """Render a ground-truth-textured object from spread viewpoints.

    Returns (images, masks, cameras) ready for ``prepare_exemplars``; the
    azimuths are evenly spaced with jitter so the set covers the object.
    """
    from .corpus import COLOR_RGB, procedural_albedo

    rng = rng or np.random.default_rng(0)
    mesh = make_shape(shape)
    light = environment_preset(lighting, rng=np.random.default_rng(0),
                               intensity=light_intensity)
    view = ViewConfig(resolution=(resolution, resolution))
    color_a, color_b = (COLOR_RGB[c] if isinstance(c, str) else c for c in palette)
    images, masks, cameras = [], [], []
    for i in range(count):
        az = (360.0 * i / count + rng.uniform(-15.0, 15.0)) % 360.0
        el = rng.uniform(*view.elevation_range)
        radius = rng.uniform(*view.radius_range)
        cam = camera_from_spherical(az, el, radius, view.fov_y_deg,
                                    view.resolution)
        gbuf = rasterize(mesh, cam)
        pts = gbuf.position[gbuf.mask]
        albedo = procedural_albedo(texture, pts, color_a, color_b)
        n = len(pts)
        sample = BrdfSample(torch.from_numpy(albedo),
                            torch.full((n,), roughness),
                            torch.full((n,), metallic))
        img = shade(gbuf, sample, light, cam.position)
        images.append(img.numpy_rgb())
        masks.append(gbuf.mask.copy())
        cameras.append((az, el, radius))
    return images, masks, cameras


# --- directory convention ----------------------------------------------------


def save_exemplar_dir(exemplars: ExemplarSet, out_dir) -> None:
    """Image files, same-stem masks, camera metadata and the prompt text."""
    from .imageio import write_png

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, (img, mask) in enumerate(zip(exemplars.images, exemplars.masks)):
        stem = f"exemplar{i:02d}"
        write_png(out / f"{stem}.png", img)
        write_png(out / f"{stem}.mask.png", mask.astype(np.float64))
    (out / "prompt.txt").write_text(" ".join(exemplars.prompt.words()) + "\n")
    if exemplars.cameras is not None:
        lines = [f"exemplar{i:02d} {az:.6f} {el:.6f} {r:.6f}"
                 for i, (az, el, r) in enumerate(exemplars.cameras)]
        (out / "cameras.txt").write_text("\n".join(lines) + "\n")


def load_exemplar_dir(in_dir, target_size: int = 64) -> ExemplarSet:
    from .imageio import read_png

    src = Path(in_dir)
    stems = sorted(p.stem for p in src.glob("*.png")
                   if not p.name.endswith(".mask.png"))
    if not stems:
        raise FileNotFoundError(f"no exemplar images in {src}")
    images, masks = [], []
    for stem in stems:
        img = read_png(src / f"{stem}.png").astype(np.float32)
        mask_path = src / f"{stem}.mask.png"
        if mask_path.exists():
            mask = read_png(mask_path) > 0.5
        else:
            mask = np.ones(img.shape[:2], dtype=bool)
        images.append(img[..., :3])
        masks.append(mask)
    prompt = DEFAULT_PROMPT
    if (src / "prompt.txt").exists():
        prompt = (src / "prompt.txt").read_text().strip()
    cameras = None
    if (src / "cameras.txt").exists():
        by_stem = {}
        for line in (src / "cameras.txt").read_text().splitlines():
            parts = line.split()
            if len(parts) == 4:
                by_stem[parts[0]] = tuple(float(v) for v in parts[1:])
        cameras = [by_stem[stem] for stem in stems if stem in by_stem]
        if len(cameras) != len(stems):
            raise ValueError("cameras.txt does not cover every exemplar")
    return prepare_exemplars(images, masks, target_size=target_size,
                             prompt=prompt, cameras=cameras)


# --- fine-tuning -------------------------------------------------------------


def _per_image_tokens(exemplars: ExemplarSet) -> np.ndarray:
    """Prompt ids per exemplar; a view word is appended when poses are known."""
    base_words = exemplars.prompt.words()
    ids = []
    for i in range(exemplars.count):
        words = list(base_words)
        if exemplars.cameras is not None:
            az, el, _ = exemplars.cameras[i]
            words.append(view_direction(az, el))
        ids.append(encode_prompt(words).ids)
    return np.stack(ids)


def _crop_batch(exemplars: ExemplarSet, ids: np.ndarray,
                rng: np.random.Generator, batch_size: int):
    size = exemplars.crop_size
    imgs = np.empty((batch_size, size, size, 3), dtype=np.float32)
    which = rng.integers(0, exemplars.count, size=batch_size)
    for b, k in enumerate(which):
        img = exemplars.images[k]
        h, w = img.shape[:2]
        top = int(rng.integers(0, h - size + 1))
        left = int(rng.integers(0, w - size + 1))
        imgs[b] = img[top:top + size, left:left + size]
    x = torch.from_numpy(imgs.transpose(0, 3, 1, 2).copy())
    return x, torch.from_numpy(ids[which])


def fine_tune(base: Denoiser, exemplars: ExemplarSet, steps: int = 400,
              lr: float = 1e-4, rng: np.random.Generator | None = None,
              schedule: NoiseSchedule | None = None, batch_size: int = 8,
              divergence_factor: float = 10.0, divergence_patience: int = 500,
              callback=None) -> Denoiser:
    """Return a personalized copy of ``base`` bound to the exemplar prompt.

    The base model object is never mutated.  All weights including the
    subject-token embedding train; the control branch stays frozen.  The
    step count and learning rate have no published reference values and are
    deliberate config knobs.
    """
    rng = rng or np.random.default_rng(0)
    schedule = schedule or build_schedule()
    psi = copy.deepcopy(base)
    psi.train()
    for p in psi.control_parameters():
        p.requires_grad_(False)
    params = [p for p in psi.base_parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=lr)
    detector = _DivergenceDetector(divergence_factor, divergence_patience)
    ids = _per_image_tokens(exemplars)
    size = exemplars.crop_size
    if size % 4:
        raise ValueError("exemplar crop size must be a multiple of 4")
    for step in range(steps):
        x0, tok = _crop_batch(exemplars, ids, rng, batch_size)
        t = rng.integers(0, schedule.T, size=batch_size)
        eps = torch.from_numpy(rng.standard_normal(
            (batch_size, 3, size, size)).astype(np.float32))
        x_t = add_noise(schedule, x0, t, eps)
        pred = psi(x_t, tok, torch.from_numpy(np.asarray(t, dtype=np.int64)))
        loss = ((pred - eps) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        value = float(loss.detach())
        detector.update(value, step)
        if callback is not None:
            callback(step, value)
        if step % 100 == 0:
            log.info("fine-tune step %d loss %.4f", step, value)
    psi.eval()
    return psi


def exemplar_loss(model: Denoiser, exemplars: ExemplarSet,
                  rng: np.random.Generator,
                  schedule: NoiseSchedule | None = None,
                  rounds: int = 16, batch_size: int = 8) -> float:
    """Mean denoising MSE of ``model`` on exemplar crops (fresh t and noise)."""
    schedule = schedule or build_schedule()
    ids = _per_image_tokens(exemplars)
    size = exemplars.crop_size
    total = 0.0
    model.eval()
    with torch.no_grad():
        for _ in range(rounds):
            x0, tok = _crop_batch(exemplars, ids, rng, batch_size)
            t = rng.integers(0, schedule.T, size=batch_size)
            eps = torch.from_numpy(rng.standard_normal(
                (batch_size, 3, size, size)).astype(np.float32))
            x_t = add_noise(schedule, x0, t, eps)
            pred = model(x_t, tok, torch.from_numpy(np.asarray(t, np.int64)))
            total += float(((pred - eps) ** 2).mean())
    return total / rounds
