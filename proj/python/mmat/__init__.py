"""Moderate-margin adversarial training."""

from ._core import (
    Dataset,
    MmatError,
    Network,
    deepfool_margin,
    fgsm,
    gen_gaussians,
    gen_rings,
    grade_by_margin,
    grade_by_zmax,
    load_checkpoint,
    natural_accuracy,
    pgd,
    robust_accuracy,
    run_cli,
    save_checkpoint,
    train,
    version,
)

__all__ = [
    "Dataset",
    "MmatError",
    "Network",
    "deepfool_margin",
    "fgsm",
    "gen_gaussians",
    "gen_rings",
    "grade_by_margin",
    "grade_by_zmax",
    "load_checkpoint",
    "natural_accuracy",
    "pgd",
    "robust_accuracy",
    "run_cli",
    "save_checkpoint",
    "train",
    "version",
]
