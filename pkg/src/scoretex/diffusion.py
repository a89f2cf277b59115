"""A small pixel-space denoising diffusion model with token, control-image
and camera conditioning.

This stands in for a large pretrained text-to-image model: a conv U-Net
predicting the noise added to [0,1] RGB images, conditioned on a mean-pooled
token embedding, optionally on a normal/depth condition image through a
zero-initialized fusion branch, and optionally on the camera extrinsic
through a two-layer encoder added to the time embedding.  All stochastic
choices (noise, timesteps, batch order) come from numpy generators so
training and sampling are reproducible bit-for-bit single-threaded.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

log = logging.getLogger(__name__)

# Fixed tiny vocabulary.  Id 0 is padding; "[V]" is the reserved subject
# token bound to an exemplar appearance during fine-tuning.
VOCABULARY = (
    "<pad>", "[V]", "a", "photo", "of", "object",
    "front", "side", "back", "overhead",
    "checker", "stripes", "dots", "gradient", "patches",
    "sphere", "cube", "torus", "capsule",
    "red", "green", "blue", "yellow", "purple", "orange",
    "teal", "magenta", "olive", "navy", "maroon",
)
PAD_ID = 0
SUBJECT_TOKEN = "[V]"
MAX_TOKENS = 16
VIEW_TOKENS = ("front", "side", "back", "overhead")

_WORD_TO_ID = {w: i for i, w in enumerate(VOCABULARY)}


@dataclass
class PromptTokens:
    ids: np.ndarray  # (MAX_TOKENS,) int64, zero-padded

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        if len(self.ids) > MAX_TOKENS:
            raise ValueError(f"prompt too long ({len(self.ids)} > {MAX_TOKENS})")
        if (self.ids < 0).any() or (self.ids >= len(VOCABULARY)).any():
            raise ValueError("token id out of vocabulary")
        if len(self.ids) < MAX_TOKENS:
            self.ids = np.pad(self.ids, (0, MAX_TOKENS - len(self.ids)))

    def words(self) -> list[str]:
        return [VOCABULARY[i] for i in self.ids if i != PAD_ID]


def encode_prompt(text: str | list[str]) -> PromptTokens:
    """Tokenize a caption; every word must be in the fixed vocabulary."""
    words = text.split() if isinstance(text, str) else list(text)
    try:
        ids = [_WORD_TO_ID[w] for w in words]
    except KeyError as e:
        raise KeyError(f"word {e.args[0]!r} not in vocabulary") from None
    return PromptTokens(np.array(ids, dtype=np.int64))


def null_prompt() -> PromptTokens:
    """The unconditional prompt: an all-padding sequence."""
    return PromptTokens(np.zeros(0, dtype=np.int64))


# --- noise schedule ----------------------------------------------------------


@dataclass
class NoiseSchedule:
    """Variance-preserving forward process x_t = alpha_t * x + sigma_t * eps."""

    betas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def alpha(self, t):
        return np.sqrt(self.alpha_bars[t])

    def sigma(self, t):
        return np.sqrt(1.0 - self.alpha_bars[t])

    def weight(self, t):
        """Per-step gradient weight w(t) = sigma_t^2."""
        return 1.0 - self.alpha_bars[t]


def build_schedule(T: int = 1000, beta_start: float = 1e-4,
                   beta_end: float = 2e-2) -> NoiseSchedule:
    if not (0.0 < beta_start < beta_end < 1.0):
        raise ValueError("need 0 < beta_start < beta_end < 1")
    if T < 1:
        raise ValueError("T must be positive")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bars = np.cumprod(1.0 - betas)
    return NoiseSchedule(betas=betas, alpha_bars=alpha_bars)


def add_noise(schedule: NoiseSchedule, x: torch.Tensor, t,
              eps: torch.Tensor) -> torch.Tensor:
    """Forward-process corruption of a clean batch at timestep(s) t."""
    t = np.asarray(t)
    if (t < 0).any() or (t >= schedule.T).any():
        raise IndexError(f"timestep out of range [0, {schedule.T})")
    shape = (-1,) + (1,) * (x.ndim - 1)
    a = torch.as_tensor(schedule.alpha(t), dtype=x.dtype).reshape(shape)
    s = torch.as_tensor(schedule.sigma(t), dtype=x.dtype).reshape(shape)
    return a * x + s * eps


# --- denoiser network --------------------------------------------------------


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Transformer-style frequency embedding of integer timesteps."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0)
                      * torch.arange(half, dtype=torch.float64) / max(half - 1, 1))
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    return emb.to(torch.float32)


class ResBlock(nn.Module):
    """GroupNorm conv block with the conditioning vector injected as a bias."""

    def __init__(self, in_ch: int, out_ch: int, emb_dim: int, groups: int = 8):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, out_ch)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()
        self.act = nn.SiLU()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(self.act(self.norm1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return h + self.skip(x)


class _Encoder(nn.Module):
    """Input conv plus per-level ResBlocks with strided downsampling.

    Returns the pre-downsample feature of every level above the bottom
    (the decoder's skip inputs) and the post-mid bottom feature.
    """

    def __init__(self, in_ch: int, widths: tuple[int, ...], emb_dim: int):
        super().__init__()
        self.conv_in = nn.Conv2d(in_ch, widths[0], 3, padding=1)
        self.blocks = nn.ModuleList([ResBlock(w, w, emb_dim) for w in widths])
        self.downs = nn.ModuleList(
            [nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1)
             for i in range(len(widths) - 1)])
        self.mid = ResBlock(widths[-1], widths[-1], emb_dim)

    def forward(self, x, emb, extra: torch.Tensor | None = None):
        h = self.conv_in(x)
        if extra is not None:
            h = h + extra
        skips = []
        for i, block in enumerate(self.blocks):
            h = block(h, emb)
            if i < len(self.downs):
                skips.append(h)
                h = self.downs[i](h)
        h = self.mid(h, emb)
        return skips, h


class Denoiser(nn.Module):
    """Conv U-Net epsilon-predictor with optional control and camera branches.

    The control branch is a trainable copy of the encoder fed the noisy image
    plus an embedded condition image; its per-level outputs pass through
    zero-initialized 1x1 convolutions added onto the decoder inputs, so an
    untrained branch leaves the output bit-identical.  The camera encoder is
    two dense layers mapping the flattened 4x4 extrinsic to the conditioning
    width (a full-scale model would use its 1280-dim embedding width here).
    The final output conv is zero-initialized so an untrained model predicts
    zero noise and starts at a denoising loss of ~1.0.
    """

    def __init__(self, widths: tuple[int, ...] = (32, 64, 128),
                 embed_dim: int = 128, in_channels: int = 3,
                 vocab_size: int = len(VOCABULARY),
                 with_control: bool = False, with_camera: bool = False):
        super().__init__()
        if len(widths) < 2:
            raise ValueError("need at least two resolution levels")
        self.widths = tuple(int(w) for w in widths)
        self.embed_dim = int(embed_dim)
        self.in_channels = int(in_channels)
        self.vocab_size = int(vocab_size)
        self.with_control = bool(with_control)
        self.with_camera = bool(with_camera)

        self.time_mlp = nn.Sequential(
            nn.Linear(embed_dim, embed_dim), nn.SiLU(),
            nn.Linear(embed_dim, embed_dim))
        self.token_table = nn.Embedding(vocab_size, embed_dim)
        if with_camera:
            self.camera_encoder = nn.Sequential(
                nn.Linear(16, embed_dim), nn.SiLU(),
                nn.Linear(embed_dim, embed_dim))

        self.encoder = _Encoder(in_channels, self.widths, embed_dim)
        ups, up_blocks = [], []
        for i in reversed(range(len(self.widths) - 1)):
            ups.append(nn.ConvTranspose2d(self.widths[i + 1], self.widths[i],
                                          4, stride=2, padding=1))
            up_blocks.append(ResBlock(self.widths[i] * 2, self.widths[i], embed_dim))
        self.ups = nn.ModuleList(ups)
        self.up_blocks = nn.ModuleList(up_blocks)
        self.out_norm = nn.GroupNorm(8, self.widths[0])
        self.out_act = nn.SiLU()
        self.out_conv = nn.Conv2d(self.widths[0], in_channels, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

        if with_control:
            self.control_encoder = _Encoder(in_channels, self.widths, embed_dim)
            self.control_hint = nn.Conv2d(in_channels, self.widths[0], 3, padding=1)
            fusions = [nn.Conv2d(w, w, 1) for w in self.widths[:-1]]
            fusions.append(nn.Conv2d(self.widths[-1], self.widths[-1], 1))
            self.control_fusion = nn.ModuleList(fusions)
            for conv in self.control_fusion:
                nn.init.zeros_(conv.weight)
                nn.init.zeros_(conv.bias)

    def config(self) -> dict:
        return {"widths": list(self.widths), "embed_dim": self.embed_dim,
                "in_channels": self.in_channels, "vocab_size": self.vocab_size,
                "with_control": self.with_control, "with_camera": self.with_camera}

    @staticmethod
    def from_config(cfg: dict) -> "Denoiser":
        return Denoiser(widths=tuple(cfg["widths"]), embed_dim=cfg["embed_dim"],
                        in_channels=cfg["in_channels"], vocab_size=cfg["vocab_size"],
                        with_control=cfg["with_control"],
                        with_camera=cfg["with_camera"])

    def sync_control_encoder(self) -> None:
        """Copy base encoder weights into the control branch (its start state)."""
        self.control_encoder.load_state_dict(self.encoder.state_dict())

    def control_parameters(self):
        if not self.with_control:
            return
        yield from self.control_encoder.parameters()
        yield from self.control_hint.parameters()
        yield from self.control_fusion.parameters()

    def base_parameters(self):
        control = {id(p) for p in self.control_parameters()}
        for p in self.parameters():
            if id(p) not in control:
                yield p

    def _conditioning(self, token_ids: torch.Tensor, t: torch.Tensor,
                      camera: torch.Tensor | None) -> torch.Tensor:
        emb = self.time_mlp(sinusoidal_embedding(t, self.embed_dim))
        tok = self.token_table(token_ids)                       # (B, L, D)
        keep = (token_ids != PAD_ID).to(tok.dtype)[:, :, None]
        count = keep.sum(dim=1)
        # mean over non-padding tokens; an all-padding prompt falls back to
        # the padding embedding itself (the learned "no text" vector)
        pooled = torch.where(count > 0,
                             (tok * keep).sum(dim=1) / count.clamp(min=1.0),
                             self.token_table.weight[PAD_ID][None, :])
        emb = emb + pooled
        if camera is not None:
            if not self.with_camera:
                raise ValueError("model was built without a camera encoder")
            emb = emb + self.camera_encoder(camera.reshape(-1, 16))
        return emb

    def forward(self, x: torch.Tensor, token_ids: torch.Tensor, t: torch.Tensor,
                control: torch.Tensor | None = None,
                camera: torch.Tensor | None = None) -> torch.Tensor:
        if control is not None and not self.with_control:
            raise ValueError("model was built without a control branch")
        emb = self._conditioning(token_ids, t, camera)
        skips, h = self.encoder(x, emb)
        if control is not None:
            hint = self.control_hint(control)
            c_skips, c_mid = self.control_encoder(x, emb, extra=hint)
            skips = [s + fuse(c) for s, fuse, c
                     in zip(skips, self.control_fusion[:-1], c_skips)]
            h = h + self.control_fusion[-1](c_mid)
        for j, (up, block) in enumerate(zip(self.ups, self.up_blocks)):
            h = up(h)
            h = block(torch.cat([h, skips[-1 - j]], dim=1), emb)
        return self.out_conv(self.out_act(self.out_norm(h)))


def _as_token_batch(tokens, batch: int) -> torch.Tensor:
    if isinstance(tokens, PromptTokens):
        ids = np.broadcast_to(tokens.ids, (batch, MAX_TOKENS))
    else:
        ids = np.asarray(tokens, dtype=np.int64)
        if ids.ndim == 1:
            ids = np.broadcast_to(ids, (batch, len(ids)))
    if ids.shape[0] != batch:
        raise ValueError(f"token batch {ids.shape[0]} != image batch {batch}")
    return torch.from_numpy(np.array(ids, copy=True))


def predict_noise(model: Denoiser, x_t: torch.Tensor, tokens, t,
                  control: torch.Tensor | None = None,
                  camera=None) -> torch.Tensor:
    """Run the denoiser on a (B,3,H,W) noisy batch at integer timestep(s) t."""
    if x_t.ndim != 4:
        raise ValueError(f"expected (B,C,H,W) noisy batch, got {tuple(x_t.shape)}")
    stride = 2 ** (len(model.widths) - 1)
    if x_t.shape[-1] % stride or x_t.shape[-2] % stride:
        raise ValueError(f"image size must be a multiple of {stride}")
    batch = x_t.shape[0]
    ids = _as_token_batch(tokens, batch)
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.int64), (batch,))
    t_t = torch.from_numpy(np.array(t_arr, copy=True))
    cam_t = None
    if camera is not None:
        cam = np.asarray(camera, dtype=np.float32)
        if cam.size == 16:
            cam = np.broadcast_to(cam.reshape(1, 16), (batch, 16))
        cam_t = torch.from_numpy(np.array(cam.reshape(batch, 16), copy=True))
    return model(x_t, ids, t_t, control=control, camera=cam_t)


def guided_noise(model: Denoiser, x_t: torch.Tensor, tokens, t,
                 guidance_weight: float = 1.0,
                 control: torch.Tensor | None = None,
                 camera=None) -> torch.Tensor:
    """Classifier-free guided prediction eps_null + w * (eps_cond - eps_null).

    w = 1 short-circuits to a single conditional pass (exactly equivalent)
    and w = 0 to a single unconditional pass.
    """
    if guidance_weight == 1.0:
        return predict_noise(model, x_t, tokens, t, control=control, camera=camera)
    null = predict_noise(model, x_t, null_prompt(), t, control=control,
                         camera=camera)
    if guidance_weight == 0.0:
        return null
    cond = predict_noise(model, x_t, tokens, t, control=control, camera=camera)
    return null + guidance_weight * (cond - null)


# --- pretraining -------------------------------------------------------------


@dataclass
class PretrainConfig:
    steps: int = 4000
    control_steps: int = 2000
    batch_size: int = 16
    lr: float = 2e-4
    control_lr: float = 2e-4
    divergence_factor: float = 10.0
    divergence_patience: int = 500
    log_every: int = 200


class DivergenceError(RuntimeError):
    """Raised when the training loss stays far above its starting value."""


class _DivergenceDetector:
    def __init__(self, factor: float, patience: int):
        self.factor = factor
        self.patience = patience
        self.initial: float | None = None
        self.streak = 0

    def update(self, loss: float, step: int) -> None:
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss {loss} at step {step}")
        if self.initial is None:
            self.initial = loss
            return
        if loss > self.factor * self.initial:
            self.streak += 1
            if self.streak >= self.patience:
                raise DivergenceError(
                    f"loss {loss:.3g} stayed above {self.factor:.0f}x the "
                    f"initial {self.initial:.3g} for {self.streak} steps "
                    f"(at step {step})")
        else:
            self.streak = 0


def _to_torch_images(images: np.ndarray) -> torch.Tensor:
    """(N,H,W,3) float array in [0,1] -> (N,3,H,W) float32 tensor."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected (N,H,W,3) images, got {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def _denoising_loss(model, schedule, images_t, ids_t, t, eps,
                    control=None) -> torch.Tensor:
    x_t = add_noise(schedule, images_t, t, eps)
    pred = model(x_t, ids_t, torch.from_numpy(np.asarray(t, dtype=np.int64)),
                 control=control)
    return ((pred - eps) ** 2).mean()


def _draw_batch(rng, n, size):
    return rng.integers(0, n, size=size)


def pretrain(model: Denoiser, images: np.ndarray, token_ids: np.ndarray,
             conditions: dict[str, np.ndarray] | None,
             config: PretrainConfig, rng: np.random.Generator,
             schedule: NoiseSchedule | None = None,
             callback=None) -> dict[str, list[float]]:
    """Train the base denoiser, then (if present) its control branch.

    Phase one fits epsilon-prediction on captioned renders with the control
    branch untouched.  Phase two re-seeds the control branch from the
    converged encoder and trains only the branch and its fusion convs on
    (image, condition) pairs, so the base model's unconditional behaviour is
    preserved exactly.  Raises DivergenceError when the loss stays more than
    ``divergence_factor`` above its starting value for
    ``divergence_patience`` consecutive steps.
    """
    schedule = schedule or build_schedule()
    images_t = _to_torch_images(images)
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.shape[0] != images_t.shape[0]:
        raise ValueError("images and token_ids disagree on sample count")
    n = images_t.shape[0]
    if n == 0:
        raise ValueError("cannot pretrain on an empty corpus")

    curves: dict[str, list[float]] = {"loss": [], "control_loss": []}

    opt = torch.optim.Adam(model.base_parameters(), lr=config.lr)
    detector = _DivergenceDetector(config.divergence_factor,
                                   config.divergence_patience)
    model.train()
    for step in range(config.steps):
        idx = _draw_batch(rng, n, config.batch_size)
        t = rng.integers(0, schedule.T, size=config.batch_size)
        eps = torch.from_numpy(rng.standard_normal(
            (config.batch_size, 3) + images_t.shape[-2:]).astype(np.float32))
        # drop the caption for a tenth of samples so the null prompt trains too
        batch_ids = ids[idx].copy()
        drop = rng.random(config.batch_size) < 0.1
        batch_ids[drop] = PAD_ID
        loss = _denoising_loss(model, schedule, images_t[idx],
                               torch.from_numpy(batch_ids), t, eps)
        opt.zero_grad()
        loss.backward()
        opt.step()
        value = float(loss.detach())
        curves["loss"].append(value)
        detector.update(value, step)
        if callback is not None:
            callback("base", step, value)
        if step % config.log_every == 0:
            log.info("pretrain base step %d loss %.4f", step, value)

    if model.with_control and config.control_steps > 0:
        if not conditions:
            raise ValueError("control training requested but no condition maps")
        kinds = sorted(conditions)
        cond_t = {k: _to_torch_images(conditions[k]) for k in kinds}
        for k in kinds:
            if cond_t[k].shape != images_t.shape:
                raise ValueError(f"condition {k!r} shape mismatch")
        model.sync_control_encoder()
        ctrl_opt = torch.optim.Adam(model.control_parameters(),
                                    lr=config.control_lr)
        ctrl_detector = _DivergenceDetector(config.divergence_factor,
                                            config.divergence_patience)
        for step in range(config.control_steps):
            idx = _draw_batch(rng, n, config.batch_size)
            t = rng.integers(0, schedule.T, size=config.batch_size)
            eps = torch.from_numpy(rng.standard_normal(
                (config.batch_size, 3) + images_t.shape[-2:]).astype(np.float32))
            kind = kinds[int(rng.integers(0, len(kinds)))]
            loss = _denoising_loss(model, schedule, images_t[idx],
                                   torch.from_numpy(ids[idx]), t, eps,
                                   control=cond_t[kind][idx])
            ctrl_opt.zero_grad()
            loss.backward()
            ctrl_opt.step()
            value = float(loss.detach())
            curves["control_loss"].append(value)
            ctrl_detector.update(value, step)
            if callback is not None:
                callback("control", step, value)
            if step % config.log_every == 0:
                log.info("pretrain control step %d loss %.4f", step, value)

    model.eval()
    return curves


def heldout_loss(model: Denoiser, images: np.ndarray, token_ids: np.ndarray,
                 rng: np.random.Generator,
                 schedule: NoiseSchedule | None = None,
                 conditions: np.ndarray | None = None,
                 batch_size: int = 16, rounds: int = 16) -> float:
    """Mean denoising MSE over freshly drawn (t, eps) on held-out samples."""
    schedule = schedule or build_schedule()
    images_t = _to_torch_images(images)
    ids = np.asarray(token_ids, dtype=np.int64)
    cond_t = _to_torch_images(conditions) if conditions is not None else None
    n = images_t.shape[0]
    total = 0.0
    model.eval()
    with torch.no_grad():
        for _ in range(rounds):
            idx = _draw_batch(rng, n, batch_size)
            t = rng.integers(0, schedule.T, size=batch_size)
            eps = torch.from_numpy(rng.standard_normal(
                (batch_size, 3) + images_t.shape[-2:]).astype(np.float32))
            ctrl = cond_t[idx] if cond_t is not None else None
            loss = _denoising_loss(model, schedule, images_t[idx],
                                   torch.from_numpy(ids[idx]), t, eps,
                                   control=ctrl)
            total += float(loss)
    return total / rounds


# --- sampling ----------------------------------------------------------------


def sample(model: Denoiser, schedule: NoiseSchedule, tokens,
           rng: np.random.Generator, resolution: int = 32, steps: int = 50,
           guidance_weight: float = 1.0, control: torch.Tensor | None = None,
           camera=None, eta: float = 1.0) -> np.ndarray:
    """Ancestral sampling on a strided timestep ladder; returns (H,W,3) in [0,1].

    Uses the eta-parameterized update (eta=1 recovers stochastic ancestral
    sampling, eta=0 the deterministic limit) with the clean estimate clamped
    to the [0,1] pixel range at every step.
    """
    if steps < 1:
        raise ValueError("need at least one sampling step")
    ts = np.unique(np.linspace(0, schedule.T - 1, steps).round().astype(int))[::-1]
    x = torch.from_numpy(
        rng.standard_normal((1, 3, resolution, resolution)).astype(np.float32))
    model.eval()
    with torch.no_grad():
        for i, t in enumerate(ts):
            eps_hat = guided_noise(model, x, tokens, int(t),
                                   guidance_weight=guidance_weight,
                                   control=control, camera=camera)
            ab_t = schedule.alpha_bars[t]
            ab_prev = schedule.alpha_bars[ts[i + 1]] if i + 1 < len(ts) else 1.0
            x0 = (x - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
            x0 = x0.clamp(0.0, 1.0)
            var = (eta ** 2) * (1.0 - ab_prev) / (1.0 - ab_t) \
                * (1.0 - ab_t / ab_prev)
            var = max(float(var), 0.0)
            direction = math.sqrt(max(1.0 - ab_prev - var, 0.0)) * eps_hat
            x = math.sqrt(ab_prev) * x0 + direction
            if var > 0.0 and i + 1 < len(ts):
                z = torch.from_numpy(rng.standard_normal(
                    x.shape).astype(np.float32))
                x = x + math.sqrt(var) * z
    out = x[0].clamp(0.0, 1.0).permute(1, 2, 0).contiguous().numpy()
    return out.astype(np.float32)


# --- checkpointing -----------------------------------------------------------


def save_denoiser(path, model: Denoiser, meta: dict | None = None) -> None:
    """Persist weights plus the architecture config needed to rebuild them."""
    from .weights_io import save_weights

    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    full_meta = {"config": model.config()}
    if meta:
        full_meta.update(meta)
    save_weights(path, kind="denoiser", arrays=arrays, meta=full_meta)


def load_denoiser(path) -> tuple[Denoiser, dict]:
    from .weights_io import WeightsFileError, load_weights

    kind, arrays, meta = load_weights(path)
    if kind != "denoiser":
        raise WeightsFileError(f"{path}: expected a denoiser file, got {kind!r}")
    model = Denoiser.from_config(meta["config"])
    state = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in arrays.items()}
    model.load_state_dict(state)
    model.eval()
    return model, meta
