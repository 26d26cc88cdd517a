"""Categorized (sitting / standing) crowd counting with density maps."""

from ._core import (
    Config,
    ConfigError,
    Error,
    FormatError,
    InvalidArgument,
    InvariantError,
    IoError,
    LearningRateController,
    MissingArtifactError,
    ShapeError,
    conv2d,
    count,
    directory_checksum,
    evaluate,
    generate_corpus,
    generate_scene,
    infer,
    maxpool2,
    render_category_maps,
    render_density,
    saddle_monitor,
    sample_weight,
    train_phase,
    weighted_mse,
)

__all__ = [name for name in dir() if not name.startswith("_")]
