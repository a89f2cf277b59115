"""End-to-end orchestration: corpus → pretrain → personalize → distill → bake.

Each stage reads and writes artifacts on disk so a run can resume at module
boundaries: an existing personalized checkpoint or field checkpoint in the
output directory is picked up instead of recomputed.  All stage RNGs are
derived from (seed, stage-id) pairs, so rerunning a stage in isolation
reproduces it bitwise.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, save_config
from .corpus import ToyCorpusSpec, generate_corpus, load_corpus, save_corpus, split_corpus
from .diffusion import (Denoiser, NoiseSchedule, PretrainConfig, build_schedule,
                        heldout_loss, load_denoiser, pretrain, save_denoiser)
from .distill import DistillMode, attach_camera_encoder, distill, make_state
from .evaluate import (CANONICAL_AZIMUTHS, EvalReport, canonical_views, derive_mask,
                       eval_similarity, normal_alignment)
from .evaluate import diversity as diversity_score
from .field import (BakedTextures, HashGridConfig, TextureField, bake, init_field,
                    load_baked, load_field, query, sample_baked, save_baked, save_field)
from .imageio import read_png, write_png
from .meshes import TriangleMesh, ViewConfig, load_mesh, rasterize, render_condition
from .personalize import ExemplarSet, fine_tune, load_exemplar_dir
from .shading import EnvironmentLight, environment_preset, shade

log = logging.getLogger(__name__)

LIGHTING_PRESETS = ("three-point", "uniform", "single-light")


class ArtifactError(FileNotFoundError):
    """A required input artifact (checkpoint, mesh, exemplars) is missing."""


def _stage_rng(seed: int, stage: int) -> np.random.Generator:
    return np.random.default_rng([seed, stage])


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ArtifactError(f"missing {what}: {p}")
    return p


def view_config(cfg: RunConfig) -> ViewConfig:
    g = cfg.geometry
    return ViewConfig(azimuth_range=(0.0, 360.0),
                      elevation_range=(g.elevation_min, g.elevation_max),
                      radius_range=(g.radius_min, g.radius_max),
                      fov_y_deg=g.fov_y_deg,
                      resolution=(g.resolution, g.resolution))


def grid_config(cfg: RunConfig) -> HashGridConfig:
    f = cfg.field_
    return HashGridConfig(levels=f.levels, base_resolution=f.base_resolution,
                          per_level_scale=f.per_level_scale,
                          features_per_level=f.features_per_level,
                          table_size_log2=f.table_size_log2)


def distill_mode(cfg: RunConfig) -> DistillMode:
    d = cfg.distill
    mode = DistillMode(kind=d.mode, use_control=d.use_control,
                       cfg_weight=d.cfg_weight, phi_source=d.phi_source,
                       lora_removed=d.lora_removed,
                       train_camera_encoder=d.train_camera_encoder)
    mode.validate()
    return mode


def make_environment(cfg: RunConfig, seed: int = 0) -> EnvironmentLight:
    return environment_preset(cfg.lighting.preset, rng=np.random.default_rng(seed),
                              intensity=cfg.lighting.intensity)


# ---------------------------------------------------------------- corpus


def run_corpus(cfg: RunConfig, out_dir, seed: int = 0):
    """Generate the toy captioned corpus and write it under ``out_dir``."""
    spec = ToyCorpusSpec(count=cfg.diffusion.corpus_count,
                         resolution=cfg.diffusion.corpus_resolution,
                         lighting=cfg.lighting.preset,
                         light_intensity=cfg.lighting.intensity)
    data = generate_corpus(spec, _stage_rng(seed, 1))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(data, out)
    log.info("corpus: %d samples at %d px -> %s", data.count, spec.resolution, out)
    return data


# --------------------------------------------------------------- pretrain


def _write_curve(path, rows: list[str]) -> None:
    with open(path, "a") as fh:
        for row in rows:
            fh.write(row + "\n")


def run_pretrain(cfg: RunConfig, corpus_dir, out_dir, seed: int = 0,
                 resume: bool = True, callback=None) -> tuple[Denoiser, float]:
    """Train the normal-conditioned base model on the corpus.

    Returns (model, held-out loss).  With ``resume`` and an existing
    checkpoint the remaining step budget (if any) is run and the step
    counters in the checkpoint metadata continue from where they stopped.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_corpus(_require(corpus_dir, "corpus directory"))
    train, held = split_corpus(data, cfg.diffusion.heldout_fraction,
                               _stage_rng(seed, 2))
    schedule = build_schedule(cfg.diffusion.timesteps, cfg.diffusion.beta_start,
                              cfg.diffusion.beta_end)
    ckpt = out / "pretrained.pgsd"
    done_base = done_control = 0
    if resume and ckpt.exists():
        model, meta = load_denoiser(ckpt)
        done_base = int(meta.get("base_steps", 0))
        done_control = int(meta.get("control_steps", 0))
        log.info("pretrain: resuming from %s (base %d, control %d)",
                 ckpt, done_base, done_control)
    else:
        torch.manual_seed(seed)
        model = Denoiser(widths=tuple(cfg.diffusion.widths),
                         embed_dim=cfg.diffusion.embed_dim, with_control=True)

    pc = PretrainConfig(steps=max(0, cfg.diffusion.pretrain_steps - done_base),
                        control_steps=max(0, cfg.diffusion.control_steps - done_control),
                        batch_size=cfg.diffusion.batch_size,
                        lr=cfg.diffusion.lr, control_lr=cfg.diffusion.lr)
    curves = pretrain(model, train.images, train.token_ids, train.conditions(),
                      pc, _stage_rng(seed, 3), schedule, callback)

    rows = []
    for phase, key, offset in (("base", "loss", done_base),
                               ("control", "control_loss", done_control)):
        vals = curves[key]
        for i in range(0, len(vals), pc.log_every):
            rows.append(f"phase {phase} step {offset + i} loss {vals[i]:.6f}")
        if vals:
            rows.append(f"phase {phase} step {offset + len(vals) - 1} "
                        f"loss {vals[-1]:.6f}")
    _write_curve(out / "pretrain_log.txt", rows)

    hl = heldout_loss(model, held.images, held.token_ids, _stage_rng(seed, 4),
                      schedule, conditions=held.conditions()["normal"],
                      batch_size=cfg.diffusion.batch_size)
    save_denoiser(ckpt, model, meta={
        "base_steps": done_base + pc.steps,
        "control_steps": done_control + pc.control_steps,
        "heldout_loss": hl, "seed": seed,
        "schedule": {"timesteps": cfg.diffusion.timesteps,
                     "beta_start": cfg.diffusion.beta_start,
                     "beta_end": cfg.diffusion.beta_end}})
    log.info("pretrain: held-out loss %.4f -> %s", hl, ckpt)
    return model, hl


# ------------------------------------------------------------ personalize


def _load_exemplars(exemplar_dir, cfg: RunConfig) -> ExemplarSet:
    return load_exemplar_dir(_require(exemplar_dir, "exemplar directory"),
                             target_size=cfg.personalize.exemplar_size)


def _schedule_for(cfg: RunConfig) -> NoiseSchedule:
    return build_schedule(cfg.diffusion.timesteps, cfg.diffusion.beta_start,
                          cfg.diffusion.beta_end)


def run_personalize(cfg: RunConfig, base_path, exemplar_dir, out_dir,
                    seed: int = 0, callback=None) -> Denoiser:
    """Fine-tune the pretrained model on an exemplar set; write a checkpoint."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base, _ = load_denoiser(_require(base_path, "pretrained checkpoint"))
    exemplars = _load_exemplars(exemplar_dir, cfg)
    psi = fine_tune(base, exemplars, steps=cfg.personalize.steps,
                    lr=cfg.personalize.lr, rng=_stage_rng(seed, 10),
                    schedule=_schedule_for(cfg),
                    batch_size=cfg.personalize.batch_size, callback=callback)
    save_denoiser(out / "personalized.pgsd", psi,
                  meta={"finetune_steps": cfg.personalize.steps,
                        "prompt": " ".join(exemplars.prompt.words()),
                        "seed": seed})
    return psi


# --------------------------------------------------------------- transfer


def render_views(field: TextureField, mesh: TriangleMesh, env: EnvironmentLight,
                 cams) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Render the field from each camera; also return per-view normal images."""
    renders, normal_images = [], []
    for cam in cams:
        gbuf = rasterize(mesh, cam)
        h, w = cam.resolution[1], cam.resolution[0]
        if gbuf.mask.any():
            pts = torch.as_tensor(gbuf.position[gbuf.mask], dtype=torch.float32)
            with torch.no_grad():
                sample = query(field, pts)
            img = shade(gbuf, sample, env, cam.position).numpy_rgb()
        else:
            img = np.ones((h, w, 3), dtype=np.float32)
        renders.append(img)
        normal_images.append(render_condition(gbuf, cam, "normal").pixels)
    return renders, normal_images


def evaluate_transfer(exemplars: ExemplarSet, renders, normal_images) -> EvalReport:
    """Score renders against the exemplar set (appearance + geometry-awareness)."""
    ex_images = [exemplars.images[i] for i in range(exemplars.count)]
    ex_masks = [exemplars.masks[i] for i in range(exemplars.count)]
    sim = eval_similarity(ex_images, renders, masks_a=ex_masks)
    align = float(np.mean([normal_alignment(r, n)
                           for r, n in zip(renders, normal_images)]))
    per_view = {}
    for az, render in zip(CANONICAL_AZIMUTHS, renders):
        per_view[f"az{int(az):03d}_similarity"] = eval_similarity(
            ex_images, [render], masks_a=ex_masks)
    report = EvalReport(appearance_similarity=sim, normal_alignment=align,
                        diversity=None, per_view=per_view)
    report.validate()
    return report


@dataclass
class TransferResult:
    field: TextureField
    psi: Denoiser
    baked: BakedTextures | None
    renders: list
    report: EvalReport
    out_dir: Path


def run_transfer(cfg: RunConfig, base_path, exemplar_dir, mesh_path, out_dir,
                 seed: int = 0, resume: bool = True, mesh: TriangleMesh | None = None,
                 callback=None) -> TransferResult:
    """Full texture transfer: personalize, distill, bake, render, evaluate.

    ``mesh`` may be passed directly (tests, built-in shapes); otherwise
    ``mesh_path`` is loaded.  Existing stage outputs under ``out_dir`` are
    reused when ``resume`` is set.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "run_config.ini")

    base, _ = load_denoiser(_require(base_path, "pretrained checkpoint"))
    if mesh is None:
        mesh = load_mesh(_require(mesh_path, "mesh"))
    exemplars = _load_exemplars(exemplar_dir, cfg)
    schedule = _schedule_for(cfg)
    mode = distill_mode(cfg)

    per_path = out / "personalized.pgsd"
    prompt_words = exemplars.prompt.words()
    if mode.kind == "vsd":
        # plain variational distillation: generic teacher, no subject binding
        psi = base
        prompt_words = [w for w in prompt_words if w != "[V]"]
    elif resume and per_path.exists():
        log.info("transfer: reusing personalized checkpoint %s", per_path)
        psi, _ = load_denoiser(per_path)
    else:
        psi = fine_tune(base, exemplars, steps=cfg.personalize.steps,
                        lr=cfg.personalize.lr, rng=_stage_rng(seed, 10),
                        schedule=schedule, batch_size=cfg.personalize.batch_size)
        save_denoiser(per_path, psi,
                      meta={"finetune_steps": cfg.personalize.steps,
                            "prompt": " ".join(exemplars.prompt.words()),
                            "seed": seed})

    env = make_environment(cfg, seed)
    field_path = out / "field.pgsd"
    if resume and field_path.exists():
        log.info("transfer: reusing field checkpoint %s", field_path)
        field, _ = load_field(field_path)
    else:
        field = init_field(grid_config(cfg), _stage_rng(seed, 20),
                           hidden_width=cfg.field_.hidden_width,
                           hidden_layers=cfg.field_.hidden_layers)
        phi = None
        if mode.uses_phi and mode.phi_source == "generic_pretrained":
            phi = attach_camera_encoder(base)
        state = make_state(field, psi, mesh, env, prompt_words,
                           mode=mode,
                           phi=phi, schedule=schedule, rng=_stage_rng(seed, 21),
                           encoding_lr=cfg.distill.encoding_lr,
                           mlp_lr=cfg.distill.mlp_lr,
                           camera_lr=cfg.distill.camera_lr)
        distill(state, cfg.distill.steps, view=view_config(cfg),
                t_range=(cfg.distill.t_min, cfg.distill.t_max),
                snapshot_every=cfg.distill.snapshot_every,
                out_dir=out / "snapshots", callback=callback)
        save_field(field_path, field, meta={"steps": cfg.distill.steps,
                                            "mode": mode.kind, "seed": seed})
        (out / "metrics.txt").write_text("\n".join(state.metrics) + "\n")

    baked = None
    if mesh.has_uvs:
        baked = bake(field, mesh, resolution=cfg.field_.bake_resolution)
        save_baked(baked, out / "baked")
    else:
        log.warning("transfer: mesh has no UV atlas; bake skipped "
                    "(field checkpoint saved at %s)", field_path)

    cams = canonical_views(resolution=(cfg.eval.resolution, cfg.eval.resolution),
                           radius=cfg.eval.radius, fov_y_deg=cfg.geometry.fov_y_deg)
    renders, normal_images = render_views(field, mesh, env, cams)
    render_dir = out / "renders"
    render_dir.mkdir(exist_ok=True)
    for az, img in zip(CANONICAL_AZIMUTHS, renders):
        write_png(render_dir / f"view_az{int(az):03d}.png", img)

    report = evaluate_transfer(exemplars, renders, normal_images)
    (out / "eval.txt").write_text(report.to_lines())
    return TransferResult(field=field, psi=psi, baked=baked, renders=renders,
                          report=report, out_dir=out)


# ------------------------------------------------------------------ bake


def run_bake(cfg: RunConfig, field_path, mesh_path, out_dir,
             mesh: TriangleMesh | None = None) -> BakedTextures:
    field, _ = load_field(_require(field_path, "field checkpoint"))
    if mesh is None:
        mesh = load_mesh(_require(mesh_path, "mesh"))
    mesh.require_uvs()
    baked = bake(field, mesh, resolution=cfg.field_.bake_resolution)
    save_baked(baked, Path(out_dir) / "baked")
    return baked


# --------------------------------------------------------------- relight


def _novel_presets(original: str) -> list[str]:
    if original not in LIGHTING_PRESETS:
        raise ValueError(f"unknown lighting preset {original!r}; "
                         f"expected one of {LIGHTING_PRESETS}")
    return [p for p in LIGHTING_PRESETS if p != original]


def run_relight(cfg: RunConfig, source_path, mesh_path, out_dir, seed: int = 0,
                presets: list[str] | None = None,
                mesh: TriangleMesh | None = None) -> dict:
    """Re-render a finished texture under the original and novel lighting rigs.

    ``source_path`` is either a field checkpoint file or a baked-maps
    directory.  Writes one image per (preset, canonical view) plus an
    energy-split report with per-preset mean radiance and its
    diffuse/specular decomposition.
    """
    src = _require(source_path, "field checkpoint or baked-map directory")
    field = baked = None
    if src.is_dir():
        baked = load_baked(src)
    else:
        field, _ = load_field(src)
    if mesh is None:
        mesh = load_mesh(_require(mesh_path, "mesh"))
    if baked is not None:
        mesh.require_uvs()

    if presets is None:
        presets = [cfg.lighting.preset] + _novel_presets(cfg.lighting.preset)
    else:
        for p in presets:
            if p not in LIGHTING_PRESETS:
                raise ValueError(f"unknown lighting preset {p!r}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cams = canonical_views(resolution=(cfg.eval.resolution, cfg.eval.resolution),
                           radius=cfg.eval.radius, fov_y_deg=cfg.geometry.fov_y_deg)
    lines, images = [], {}
    for preset in presets:
        env = environment_preset(preset, rng=np.random.default_rng(seed),
                                 intensity=cfg.lighting.intensity)
        pdir = out / preset
        pdir.mkdir(exist_ok=True)
        totals = np.zeros(3)  # summed mean radiance / diffuse / specular
        per_preset = []
        for az, cam in zip(CANONICAL_AZIMUTHS, cams):
            gbuf = rasterize(mesh, cam)
            if not gbuf.mask.any():
                continue
            if field is not None:
                pts = torch.as_tensor(gbuf.position[gbuf.mask], dtype=torch.float32)
                with torch.no_grad():
                    sample = query(field, pts)
            else:
                sample = sample_baked(baked, gbuf.uv[gbuf.mask])
            img = shade(gbuf, sample, env, cam.position)
            totals += [float(img.linear.mean()), float(img.diffuse.mean()),
                       float(img.specular.mean())]
            rgb = img.numpy_rgb()
            per_preset.append(rgb)
            write_png(pdir / f"view_az{int(az):03d}.png", rgb)
        n = max(1, len(per_preset))
        images[preset] = per_preset
        lines.append(f"preset {preset} radiance {totals[0] / n:.6f} "
                     f"diffuse {totals[1] / n:.6f} specular {totals[2] / n:.6f}")
    (out / "energy_report.txt").write_text("\n".join(lines) + "\n")
    return {"presets": list(presets), "lines": lines, "images": images}


# ------------------------------------------------------------------ eval


def load_image_dir(path) -> list[np.ndarray]:
    p = _require(path, "image directory")
    files = sorted(f for f in p.glob("*.png") if not f.name.endswith(".mask.png"))
    if not files:
        raise ArtifactError(f"no PNG images in {p}")
    images = []
    for f in files:
        img = read_png(f)
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        images.append(img.astype(np.float32))
    return images


def run_eval(dir_a, dir_b, out_path=None) -> float:
    """Appearance similarity between two directories of rendered PNGs."""
    score = eval_similarity(load_image_dir(dir_a), load_image_dir(dir_b))
    line = f"appearance_similarity {score:.6f}"
    if out_path is not None:
        Path(out_path).write_text(line + "\n")
    return score


def run_diversity(render_dirs) -> float:
    """Mean pairwise dissimilarity across runs (e.g. different seeds)."""
    sets = [load_image_dir(d) for d in render_dirs]
    return diversity_score(sets)


# ---------------------------------------------------------------- ablate

ABLATION_MODES = {
    "pgsd": {},
    # score distillation inside the same framework, high guidance weight
    "sds": {"mode": "sds", "cfg_weight": 100.0, "use_control": "none"},
    # variational distillation with the generic (non-personalized) teacher
    "vsd": {"mode": "vsd"},
    "no-control": {"use_control": "none"},
    "depth-control": {"use_control": "depth"},
    "no-lora-removed": {"lora_removed": False},
    "frozen-camera": {"train_camera_encoder": False},
}


def run_ablate(cfg: RunConfig, base_path, exemplar_dir, mesh_path, out_dir,
               seed: int = 0, modes=("pgsd", "sds", "no-control"),
               mesh: TriangleMesh | None = None) -> dict[str, float]:
    """Run the transfer once per distillation variant; summarize similarity."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for name in modes:
        if name not in ABLATION_MODES:
            raise ValueError(f"unknown ablation {name!r}; "
                             f"expected one of {sorted(ABLATION_MODES)}")
        sub = copy.deepcopy(cfg)
        for key, value in ABLATION_MODES[name].items():
            setattr(sub.distill, key, value)
        result = run_transfer(sub, base_path, exemplar_dir, mesh_path,
                              out / name, seed=seed, mesh=mesh)
        results[name] = result.report.appearance_similarity
    lines = [f"mode {name} similarity {score:.6f}"
             for name, score in results.items()]
    (out / "ablate.txt").write_text("\n".join(lines) + "\n")
    return results
