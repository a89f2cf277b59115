"""Dependency-free appearance metrics for texture transfer runs.

The similarity score is a histogram statistic, not a learned embedding, so
absolute values are only comparable within this codebase; orderings between
runs are what the evaluation claims.  All metrics operate on white-background
renders with explicit or derivable foreground masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .meshes import CameraPose, camera_from_spherical

HIST_BINS = 16
CANONICAL_AZIMUTHS = (45.0, 135.0, 225.0, 315.0)
CANONICAL_ELEVATION = 15.0


def derive_mask(image: np.ndarray) -> np.ndarray:
    """Foreground = anything not exactly the white background."""
    return ~(np.asarray(image) == 1.0).all(axis=-1)


def _check_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {arr.shape}")
    return arr


def rgb_histogram(image, mask=None, bins: int = HIST_BINS) -> np.ndarray:
    """Concatenated per-channel histograms over the foreground, sum = 1."""
    img = _check_image(image)
    mask = derive_mask(img) if mask is None else np.asarray(mask, bool)
    fg = img[mask]
    if len(fg) == 0:
        raise ValueError("empty foreground")
    hists = [np.histogram(fg[:, c], bins=bins, range=(0.0, 1.0))[0]
             for c in range(3)]
    h = np.concatenate(hists).astype(np.float64)
    return h / h.sum()


def _gray(image: np.ndarray) -> np.ndarray:
    return np.asarray(image, dtype=np.float64).mean(axis=-1)


def _gradients(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gy, gx = np.gradient(gray)
    return gx, gy


def gradient_histogram(image, mask=None, bins: int = HIST_BINS) -> np.ndarray:
    """Histogram of gradient magnitudes over the foreground, sum = 1."""
    img = _check_image(image)
    mask = derive_mask(img) if mask is None else np.asarray(mask, bool)
    gx, gy = _gradients(_gray(img))
    mag = np.hypot(gx, gy)[mask]
    if len(mag) == 0:
        raise ValueError("empty foreground")
    h = np.histogram(np.clip(mag, 0.0, 1.0), bins=bins,
                     range=(0.0, 1.0))[0].astype(np.float64)
    return h / h.sum()


def chi_square_distance(p: np.ndarray, q: np.ndarray) -> float:
    """0.5 * sum((p-q)^2 / (p+q)) over bins; 0 for equal, 1 for disjoint."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    denom = p + q
    safe = denom > 0
    return float(0.5 * ((p[safe] - q[safe]) ** 2 / denom[safe]).sum())


def pair_similarity(image_a, image_b, mask_a=None, mask_b=None) -> float:
    """1 - (chi-square color term + halved L1 gradient term) / 2, in [0, 1]."""
    color = chi_square_distance(rgb_histogram(image_a, mask_a),
                                rgb_histogram(image_b, mask_b))
    grad = 0.5 * float(np.abs(gradient_histogram(image_a, mask_a)
                              - gradient_histogram(image_b, mask_b)).sum())
    return 1.0 - 0.5 * (color + grad)


def eval_similarity(set_a, set_b, masks_a=None, masks_b=None) -> float:
    """Mean pairwise similarity between every image of A and every image of B."""
    set_a, set_b = list(set_a), list(set_b)
    if not set_a or not set_b:
        raise ValueError("both image sets must be non-empty")
    masks_a = masks_a if masks_a is not None else [None] * len(set_a)
    masks_b = masks_b if masks_b is not None else [None] * len(set_b)
    total = 0.0
    for a, ma in zip(set_a, masks_a):
        for b, mb in zip(set_b, masks_b):
            total += pair_similarity(a, b, ma, mb)
    return total / (len(set_a) * len(set_b))


def _erode(mask: np.ndarray, iterations: int = 2) -> np.ndarray:
    out = mask.copy()
    for _ in range(iterations):
        shrunk = out.copy()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                shrunk &= np.roll(np.roll(out, dy, axis=0), dx, axis=1)
        out = shrunk
    return out


def normal_alignment(rendered, normal_image, mask=None) -> float:
    """Orientation coherence between texture edges and geometry feature edges.

    Both images are reduced to gray gradients; per-pixel orientations are
    compared with cos(2*delta) (gradients are axial) and averaged with
    magnitude-product weights over an eroded foreground, so the shared
    silhouette does not dominate.  1 means texture edges follow geometry
    edges, 0 is uncorrelated, -1 anti-aligned.
    """
    img = _check_image(rendered)
    nrm = _check_image(normal_image)
    mask = derive_mask(img) if mask is None else np.asarray(mask, bool)
    inner = _erode(mask, iterations=2)
    gx_t, gy_t = _gradients(_gray(img))
    gx_g, gy_g = _gradients(_gray(nrm))
    mag_t = np.hypot(gx_t, gy_t)
    mag_g = np.hypot(gx_g, gy_g)
    theta_t = np.arctan2(gy_t, gx_t)
    theta_g = np.arctan2(gy_g, gx_g)
    w = (mag_t * mag_g)[inner]
    if w.sum() <= 1e-12:
        return 0.0
    cos2 = np.cos(2.0 * (theta_t - theta_g))[inner]
    return float((w * cos2).sum() / w.sum())


def diversity(sets, mask_sets=None) -> float:
    """Mean pairwise dissimilarity (1 - similarity) across seed runs."""
    sets = list(sets)
    if len(sets) < 2:
        raise ValueError("need at least two runs to measure diversity")
    mask_sets = mask_sets if mask_sets is not None else [None] * len(sets)
    total, pairs = 0.0, 0
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            total += 1.0 - eval_similarity(sets[i], sets[j],
                                           mask_sets[i], mask_sets[j])
            pairs += 1
    return total / pairs


def psnr(a, b, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def canonical_views(resolution=(64, 64), radius: float = 3.0,
                    fov_y_deg: float = 45.0) -> list[CameraPose]:
    """The four diagonal evaluation viewpoints at a fixed mild elevation."""
    return [camera_from_spherical(az, CANONICAL_ELEVATION, radius,
                                  fov_y_deg, resolution)
            for az in CANONICAL_AZIMUTHS]


@dataclass
class EvalReport:
    appearance_similarity: float
    normal_alignment: float
    diversity: float | None = None
    per_view: dict[str, float] = field(default_factory=dict)

    def validate(self) -> None:
        values = [self.appearance_similarity, self.normal_alignment,
                  *([] if self.diversity is None else [self.diversity]),
                  *self.per_view.values()]
        if not np.isfinite(values).all():
            raise ValueError("non-finite metric value in report")
        if not 0.0 <= self.appearance_similarity <= 1.0:
            raise ValueError("similarity out of [0, 1]")

    def to_lines(self) -> str:
        lines = [f"appearance_similarity {self.appearance_similarity:.6f}",
                 f"normal_alignment {self.normal_alignment:.6f}"]
        if self.diversity is not None:
            lines.append(f"diversity {self.diversity:.6f}")
        for key in sorted(self.per_view):
            lines.append(f"view_{key} {self.per_view[key]:.6f}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_lines(text) -> "EvalReport":
        if not isinstance(text, str):
            text = "\n".join(text)
        values: dict[str, float] = {}
        per_view: dict[str, float] = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, val = line.split()
            if key.startswith("view_"):
                per_view[key[len("view_"):]] = float(val)
            else:
                values[key] = float(val)
        return EvalReport(
            appearance_similarity=values["appearance_similarity"],
            normal_alignment=values["normal_alignment"],
            diversity=values.get("diversity"), per_view=per_view)
