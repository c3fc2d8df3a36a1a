"""Context-aware diffusion motion planning for desk-scale 2-D robots.

Thin Python facade over the C++ core: procedural environments, an RRT +
shortcut expert, a context-conditioned denoising diffusion model, guided
sampling, and batch evaluation metrics.
"""

from ._campd import (
    Environment,
    __version__,
    batch_metrics,
    config_in_collision,
    dataset_info,
    evaluate,
    gaussian_smooth,
    generate_dataset,
    is_feasible,
    plan_expert,
    render_env_svg,
    sample,
    sample_environment,
    sample_problem,
    segment_in_collision,
    smoothness,
    train,
    version,
)

__all__ = [
    "Environment",
    "__version__",
    "batch_metrics",
    "config_in_collision",
    "dataset_info",
    "evaluate",
    "gaussian_smooth",
    "generate_dataset",
    "is_feasible",
    "plan_expert",
    "render_env_svg",
    "sample",
    "sample_environment",
    "sample_problem",
    "segment_in_collision",
    "smoothness",
    "train",
    "version",
]
