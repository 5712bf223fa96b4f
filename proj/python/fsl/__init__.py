"""Federated learning poisoning-defense lab: Python bindings over the C++ core."""

from ._core import (  # noqa: F401
    ConfigError,
    InputError,
    IoError,
    NumericError,
    ParseError,
    cli,
    config_reference,
    coordinate_median,
    cosine_similarity_matrix,
    engineered_features,
    feature_report,
    foolsgold,
    format_number,
    multi_krum,
    pca2,
    quantile_type7,
    run_config,
    trimmed_mean,
    trust_from_history,
)
