"""Score-distillation engine: per-pixel SDS / VSD / PGSD gradients and the
alternating optimization of the texture field against the score estimator.

One step renders the current field from a random camera, perturbs the image
with forward-process noise, asks the teacher(s) for score residuals, and
chains the per-pixel gradient through the shading and field backward paths.
The teacher psi is never touched; the estimator phi trains only its camera
encoder by default (its base weights stay at the generic pretrained state),
alternating 1:1 with field updates.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field as dc_field

import numpy as np
import torch

from .diffusion import (Denoiser, NoiseSchedule, add_noise, build_schedule,
                        encode_prompt, guided_noise, predict_noise)
from .field import TextureField, query, query_backward
from .meshes import (TriangleMesh, ViewConfig, rasterize, render_condition,
                     sample_camera, view_direction)
from .shading import EnvironmentLight, shade, shade_backward

log = logging.getLogger(__name__)

MODE_KINDS = ("sds", "vsd", "pgsd")
CONTROL_KINDS = ("none", "normal", "depth")


@dataclass
class DistillMode:
    """Gradient rule plus the ablation switches around it.

    The default instance is the full method: normal-map control on both
    teachers, guidance weight 1 (a single conditional pass), phi started
    from the generic pretrained weights with only its camera encoder
    trainable.  Each flag maps to one ablation row.
    """

    kind: str = "pgsd"
    use_control: str = "normal"
    cfg_weight: float = 1.0
    phi_source: str = "generic_pretrained"  # or "personalized"
    lora_removed: bool = True
    train_camera_encoder: bool = True

    def validate(self) -> None:
        if self.kind not in MODE_KINDS:
            raise ValueError(f"unknown mode kind {self.kind!r}")
        if self.use_control not in CONTROL_KINDS:
            raise ValueError(f"unknown control kind {self.use_control!r}")
        if self.phi_source not in ("generic_pretrained", "personalized"):
            raise ValueError(f"unknown phi source {self.phi_source!r}")
        if not np.isfinite(self.cfg_weight):
            raise ValueError("cfg_weight must be finite")

    @property
    def uses_phi(self) -> bool:
        return self.kind in ("vsd", "pgsd")

    @staticmethod
    def sds(cfg_weight: float = 100.0, use_control: str = "none") -> "DistillMode":
        return DistillMode(kind="sds", use_control=use_control,
                           cfg_weight=cfg_weight)


def attach_camera_encoder(model: Denoiser) -> Denoiser:
    """Copy of ``model`` with a camera encoder whose output starts at zero,
    so the copy's predictions are bit-identical to the original until the
    encoder trains."""
    cfg = model.config()
    cfg["with_camera"] = True
    out = Denoiser.from_config(cfg)
    out.load_state_dict(model.state_dict(), strict=False)
    with torch.no_grad():
        out.camera_encoder[-1].weight.zero_()
        out.camera_encoder[-1].bias.zero_()
    out.eval()
    return out


def weights_digest(model: Denoiser) -> str:
    """Order-stable SHA-256 over every parameter and buffer."""
    h = hashlib.sha256()
    state = model.state_dict()
    for name in sorted(state):
        h.update(name.encode())
        h.update(state[name].detach().cpu().numpy().tobytes())
    return h.hexdigest()


@dataclass
class DistillState:
    field: TextureField
    psi: Denoiser
    phi: Denoiser | None
    mode: DistillMode
    schedule: NoiseSchedule
    env: EnvironmentLight
    mesh: TriangleMesh
    prompt_words: list[str]
    theta_opt: torch.optim.Optimizer
    rho_opt: torch.optim.Optimizer | None
    rng: np.random.Generator
    step: int = 0
    metrics: list[str] = dc_field(default_factory=list)


def make_state(field: TextureField, psi: Denoiser, mesh: TriangleMesh,
               env: EnvironmentLight, prompt: str | list[str],
               mode: DistillMode | None = None,
               phi: Denoiser | None = None,
               schedule: NoiseSchedule | None = None,
               rng: np.random.Generator | None = None,
               encoding_lr: float = 0.01, mlp_lr: float = 0.001,
               camera_lr: float = 1e-4) -> DistillState:
    """Wire up optimizers and teachers for a distillation run.

    ``phi`` defaults to a camera-encoder-equipped copy of ``psi`` under
    phi_source="personalized", and must be supplied (built from the generic
    checkpoint) otherwise.  Learning rates: hash tables 0.01, field MLP
    0.001, camera encoder 0.0001.
    """
    mode = mode or DistillMode()
    mode.validate()
    words = prompt.split() if isinstance(prompt, str) else list(prompt)
    encode_prompt(words)  # fail fast on out-of-vocabulary prompts
    groups = field.parameter_groups()
    theta_opt = torch.optim.Adam([
        {"params": groups["encoding"], "lr": encoding_lr},
        {"params": groups["mlp"], "lr": mlp_lr}])
    rho_opt = None
    if mode.uses_phi:
        if phi is None:
            if mode.phi_source != "personalized":
                raise ValueError(
                    "generic_pretrained phi requested but none supplied")
            phi = attach_camera_encoder(psi)
        if not phi.with_camera:
            phi = attach_camera_encoder(phi)
        trainable: list[torch.nn.Parameter] = []
        if mode.train_camera_encoder:
            trainable += list(phi.camera_encoder.parameters())
        if not mode.lora_removed:
            control = {id(p) for p in phi.control_parameters()}
            camera = {id(p) for p in phi.camera_encoder.parameters()}
            trainable += [p for p in phi.base_parameters()
                          if id(p) not in control and id(p) not in camera]
        if trainable:
            rho_opt = torch.optim.Adam(trainable, lr=camera_lr)
    else:
        phi = None
    if mode.use_control != "none" and not psi.with_control:
        raise ValueError("mode asks for control but psi has no control branch")
    return DistillState(field=field, psi=psi, phi=phi, mode=mode,
                        schedule=schedule or build_schedule(), env=env,
                        mesh=mesh, prompt_words=words, theta_opt=theta_opt,
                        rho_opt=rho_opt, rng=rng or np.random.default_rng(0))


def _check_control(mode: DistillMode, control: torch.Tensor | None) -> None:
    if mode.use_control == "none" and control is not None:
        raise ValueError("control image supplied but mode.use_control='none'")
    if mode.use_control != "none" and control is None:
        raise ValueError(f"mode.use_control={mode.use_control!r} needs a "
                         "control image")


def _image_to_batch(x: torch.Tensor) -> torch.Tensor:
    return x.permute(2, 0, 1).unsqueeze(0)


def sds_gradient(state: DistillState, x: torch.Tensor, tokens, t: int,
                 eps: torch.Tensor,
                 control: torch.Tensor | None = None) -> torch.Tensor:
    """Per-pixel w(t) * (eps_hat - eps), eps_hat treated as a constant.

    ``x`` is the rendered (H, W, 3) image in [0, 1]; ``eps`` matches it.
    The returned (H, W, 3) tensor is dLoss/dpixels for the downstream chain.
    """
    _check_control(state.mode, control)
    with torch.no_grad():
        x_t = add_noise(state.schedule, _image_to_batch(x), t,
                        _image_to_batch(eps))
        eps_hat = guided_noise(state.psi, x_t, tokens, t,
                               guidance_weight=state.mode.cfg_weight,
                               control=control)
        w = float(state.schedule.weight(t))
        residual = w * (eps_hat[0].permute(1, 2, 0) - eps)
    return residual


def pgsd_gradient(state: DistillState, x: torch.Tensor, tokens, t: int,
                  eps: torch.Tensor, control: torch.Tensor | None = None,
                  cam: np.ndarray | None = None) -> torch.Tensor:
    """Per-pixel w(t) * (eps_psi - eps_phi) on a shared noisy image.

    Both teachers see the same x_t, tokens, timestep and control image; only
    phi receives the camera extrinsic (through its encoder).  The VSD rule
    is the same computation with a non-personalized psi.
    """
    _check_control(state.mode, control)
    if state.phi is None:
        raise ValueError(f"mode {state.mode.kind!r} has no phi estimator")
    with torch.no_grad():
        x_t = add_noise(state.schedule, _image_to_batch(x), t,
                        _image_to_batch(eps))
        psi_hat = guided_noise(state.psi, x_t, tokens, t,
                               guidance_weight=state.mode.cfg_weight,
                               control=control)
        phi_hat = predict_noise(state.phi, x_t, tokens, t, control=control,
                                camera=cam)
        w = float(state.schedule.weight(t))
        residual = w * (psi_hat - phi_hat)[0].permute(1, 2, 0)
    return residual


def phi_update(state: DistillState, x_t: torch.Tensor, tokens, t: int,
               eps: torch.Tensor, control: torch.Tensor | None = None,
               cam: np.ndarray | None = None) -> float:
    """One denoising step for phi on the step's own noisy render.

    Returns the scalar loss; takes an optimizer step only when the mode
    leaves anything trainable (otherwise phi stays bitwise frozen).
    """
    if state.phi is None:
        raise ValueError("no phi estimator in this state")
    if state.rho_opt is None:
        with torch.no_grad():
            pred = predict_noise(state.phi, x_t, tokens, t, control=control,
                                 camera=cam)
            return float(((pred - eps) ** 2).mean())
    pred = predict_noise(state.phi, x_t, tokens, t, control=control,
                         camera=cam)
    loss = ((pred - eps) ** 2).mean()
    state.rho_opt.zero_grad()
    loss.backward()
    state.rho_opt.step()
    return float(loss.detach())


def _render_current(state: DistillState, cam):
    gbuf = rasterize(state.mesh, cam)
    if not gbuf.mask.any():
        return gbuf, None, None
    pts = torch.as_tensor(gbuf.position[gbuf.mask], dtype=torch.float32)
    with torch.no_grad():
        brdf = query(state.field, pts)
    img = shade(gbuf, brdf, state.env, cam.position)
    return gbuf, pts, img


def _apply_field_grads(state: DistillState, grads: dict[str, torch.Tensor]) -> None:
    state.theta_opt.zero_grad()
    for name, param in state.field.named_parameters():
        g = grads.get(name)
        if g is not None:
            param.grad = g
    state.theta_opt.step()


def distill(state: DistillState, steps: int, view: ViewConfig | None = None,
            t_range: tuple[float, float] = (0.02, 0.98),
            snapshot_every: int = 0, out_dir=None,
            callback=None) -> TextureField:
    """Run the alternating optimization for ``steps`` iterations.

    Appends one metrics line per step to ``state.metrics`` (step, mode,
    gradient proxy, phi loss) — wall time goes to the logger only, so the
    metrics log of a rerun is reproducible byte for byte.  ``snapshot_every``
    > 0 with an ``out_dir`` writes periodic PNG renders from a fixed pose.
    The teacher psi is digest-checked to be unchanged at the end of the run.
    """
    view = view or ViewConfig()
    if not 0.0 <= t_range[0] < t_range[1] <= 1.0:
        raise ValueError(f"bad timestep range {t_range}")
    t_lo = int(round(t_range[0] * state.schedule.T))
    t_hi = int(round(t_range[1] * state.schedule.T))
    psi_before = weights_digest(state.psi)
    state.psi.eval()
    if state.phi is not None:
        state.phi.eval()

    for _ in range(steps):
        t0 = time.perf_counter()
        cam = sample_camera(state.rng, view)
        gbuf, pts, img = _render_current(state, cam)
        if img is None:
            log.warning("step %d: camera saw no geometry, skipped", state.step)
            state.step += 1
            continue
        x = img.rgb.detach()
        h, w_px = x.shape[:2]

        tokens = encode_prompt(state.prompt_words
                               + [view_direction(cam.azimuth, cam.elevation)])
        control = None
        if state.mode.use_control != "none":
            cond = render_condition(gbuf, cam, state.mode.use_control)
            control = _image_to_batch(
                torch.as_tensor(cond.pixels, dtype=torch.float32))
        t = int(state.rng.integers(t_lo, t_hi))
        eps = torch.from_numpy(
            state.rng.standard_normal((h, w_px, 3)).astype(np.float32))

        if state.mode.kind == "sds":
            grad_pixels = sds_gradient(state, x, tokens, t, eps, control)
        else:
            grad_pixels = pgsd_gradient(state, x, tokens, t, eps, control,
                                        cam=cam.extrinsic)
        if not torch.isfinite(grad_pixels).all():
            raise FloatingPointError(
                f"non-finite pixel gradient at step {state.step} "
                f"(t={t}, camera az={cam.azimuth:.1f} el={cam.elevation:.1f})")

        brdf = query(state.field, pts)
        ga, gr, gm = shade_backward(gbuf, brdf, state.env, cam.position,
                                    grad_pixels)
        grads = query_backward(state.field, pts, ga, gr, gm)
        for name, g in grads.items():
            if not torch.isfinite(g).all():
                raise FloatingPointError(
                    f"non-finite field gradient in {name} at step {state.step}")
        _apply_field_grads(state, grads)

        phi_loss = float("nan")
        if state.mode.uses_phi:
            x_t = add_noise(state.schedule, _image_to_batch(x), t,
                            _image_to_batch(eps))
            phi_loss = phi_update(state, x_t, tokens, t,
                                  _image_to_batch(eps), control,
                                  cam=cam.extrinsic)
        proxy = float((grad_pixels ** 2).mean())
        state.metrics.append(
            f"step {state.step} mode {state.mode.kind} proxy {proxy:.6e} "
            f"phi_loss {phi_loss:.6f}")
        log.debug("step %d wall %.3fs", state.step, time.perf_counter() - t0)
        if callback is not None:
            callback(state)
        if snapshot_every and out_dir is not None \
                and (state.step + 1) % snapshot_every == 0:
            _write_snapshot(state, view, out_dir)
        state.step += 1

    if weights_digest(state.psi) != psi_before:
        raise RuntimeError("teacher weights changed during distillation")
    return state.field


def render_view(state: DistillState, cam) -> np.ndarray:
    """Render the current field from ``cam``; white where uncovered."""
    _, _, img = _render_current(state, cam)
    if img is None:
        h, w_px = cam.resolution
        return np.ones((h, w_px, 3), dtype=np.float32)
    return img.numpy_rgb()


def _write_snapshot(state: DistillState, view: ViewConfig, out_dir) -> None:
    from pathlib import Path

    from .imageio import write_png
    from .meshes import camera_from_spherical

    cam = camera_from_spherical(30.0, 20.0, 3.0, view.fov_y_deg,
                                view.resolution)
    path = Path(out_dir) / f"snapshot_{state.step + 1:06d}.png"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_png(path, render_view(state, cam))
