"""Decorrelated backpropagation for masked-autoencoder pre-training.

Thin wrapper over the compiled extension; see `dbpmae._core` for the full
docstrings.
"""

from dbpmae._core import (
    DbpError,
    decorrelate,
    decorrelation_loss,
    default_config,
    fuse_weights,
    generate_synthetic,
    load_dataset,
    lr_at,
    make_mask,
    off_diagonal_covariance,
    patchify,
    run_training,
    save_dataset,
    subsample_rows,
    unpatchify,
    update_decorrelation,
    welch_p_value,
)

__all__ = [
    "DbpError",
    "decorrelate",
    "decorrelation_loss",
    "default_config",
    "fuse_weights",
    "generate_synthetic",
    "load_dataset",
    "lr_at",
    "make_mask",
    "off_diagonal_covariance",
    "patchify",
    "run_training",
    "save_dataset",
    "subsample_rows",
    "unpatchify",
    "update_decorrelation",
    "welch_p_value",
]
