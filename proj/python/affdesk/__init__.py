"""Desk-scale visual affordance pipeline (C++ core bindings)."""

from ._core import (  # noqa: F401
    ConfigError,
    IoError,
    SchemaError,
    apply_homography,
    default_config,
    detect_contact_time,
    estimate_homography,
    extract,
    fit_gmm,
    gen_data,
    normalize_config,
    paradigm,
    predict,
    render_scene,
    report,
    savgol_smooth,
    spatial_softmax,
    train,
)

__all__ = [
    "ConfigError",
    "IoError",
    "SchemaError",
    "apply_homography",
    "default_config",
    "detect_contact_time",
    "estimate_homography",
    "extract",
    "fit_gmm",
    "gen_data",
    "normalize_config",
    "paradigm",
    "predict",
    "render_scene",
    "report",
    "savgol_smooth",
    "spatial_softmax",
    "train",
]
