"""Relightable texture transfer from a few exemplar images.

A target mesh is textured by optimizing a neural BRDF field so that its
renders — under a physically based microfacet shading model — look right to
a personalized, geometry-conditioned diffusion model.  The optimized field
bakes to ordinary albedo/roughness/metallic maps that relight under novel
environments.
"""

from .config import ConfigError, RunConfig, default_config, load_config, save_config
from .corpus import ToyCorpusSpec, generate_corpus, load_corpus, save_corpus
from .diffusion import (Denoiser, DivergenceError, NoiseSchedule, build_schedule,
                        encode_prompt, pretrain, sample)
from .distill import DistillMode, attach_camera_encoder, make_state
from .evaluate import EvalReport, eval_similarity, normal_alignment
from .field import (HashGridConfig, TextureField, bake, init_field, load_field,
                    query, save_field)
from .meshes import TriangleMesh, ViewConfig, load_mesh, rasterize, save_obj
from .personalize import ExemplarSet, fine_tune, load_exemplar_dir, prepare_exemplars
from .pipeline import (ArtifactError, run_ablate, run_corpus, run_personalize,
                       run_pretrain, run_relight, run_transfer)
from .primitives import make_shape
from .shading import environment_preset, shade

__version__ = "0.1.0"

__all__ = [
    "ArtifactError", "ConfigError", "Denoiser", "DistillMode", "DivergenceError",
    "EvalReport", "ExemplarSet", "HashGridConfig", "NoiseSchedule", "RunConfig",
    "TextureField", "ToyCorpusSpec", "TriangleMesh", "ViewConfig",
    "attach_camera_encoder", "bake", "build_schedule", "default_config",
    "encode_prompt", "environment_preset", "eval_similarity",
    "fine_tune", "generate_corpus", "init_field", "load_config", "load_corpus",
    "load_exemplar_dir", "load_field", "load_mesh", "make_shape", "make_state",
    "normal_alignment", "prepare_exemplars", "pretrain", "query", "rasterize",
    "run_ablate", "run_corpus", "run_personalize", "run_pretrain", "run_relight",
    "run_transfer", "sample", "save_config", "save_corpus", "save_field",
    "save_obj", "shade",
]
