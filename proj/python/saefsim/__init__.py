"""Python bindings for the saef simulator."""

from ._core import (
    ConfigError,
    appendix_error_bounds,
    compress,
    corollary1_gap,
    guaranteed_delta,
    known_config_keys,
    lemma1_bound,
    lemma1_constant,
    run_config,
    theorem_bound,
    topk_count,
    trajectory_csv,
    two_gaussians,
)

CSV_COLUMNS = (
    "t",
    "eta",
    "train_loss",
    "aux_loss",
    "grad_norm_sq",
    "eps_hat",
    "proxy_ef",
    "proxy_saef",
    "uplink_bytes",
    "downlink_bytes",
    "averaging_bytes",
)

__all__ = [
    "CSV_COLUMNS",
    "ConfigError",
    "appendix_error_bounds",
    "compress",
    "corollary1_gap",
    "guaranteed_delta",
    "known_config_keys",
    "lemma1_bound",
    "lemma1_constant",
    "run_config",
    "theorem_bound",
    "topk_count",
    "trajectory_csv",
    "two_gaussians",
]
