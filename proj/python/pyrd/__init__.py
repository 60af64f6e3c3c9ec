"""Adaptive-fusion image-pyramid crowd counting."""

from ._core import (  # noqa: F401
    Model,
    backbone_parameters,
    bilinear_resize,
    builtin_configs,
    conv2d,
    generate_adaptive,
    generate_fixed,
    knn_distances,
    leaky_relu,
    mae,
    maxpool2x2,
    mse,
    mse_loss,
    read_pgm,
    receptive_field,
    relu,
    rmse,
    set_num_threads,
    softmax_across_scales,
    sum_pool_4,
    synthetic_dataset,
    write_pgm,
)

__all__ = [
    "Model", "backbone_parameters", "bilinear_resize", "builtin_configs", "conv2d",
    "generate_adaptive", "generate_fixed", "knn_distances", "leaky_relu", "mae",
    "maxpool2x2", "mse", "mse_loss", "read_pgm", "receptive_field", "relu", "rmse",
    "set_num_threads", "softmax_across_scales", "sum_pool_4", "synthetic_dataset",
    "write_pgm",
]
