"""Variational flow graphical models: training, imputation and sampling."""

from ._vfg import (
    DataError,
    Model,
    NumericError,
    UsageError,
    elbo,
    encode,
    gen_scm,
    gen_sine,
    impute,
    init_model,
    load_checkpoint,
    nll_estimate,
    run_cli,
    sample,
    save_checkpoint,
    train,
)

__all__ = [
    "DataError",
    "Model",
    "NumericError",
    "UsageError",
    "elbo",
    "encode",
    "gen_scm",
    "gen_sine",
    "impute",
    "init_model",
    "load_checkpoint",
    "nll_estimate",
    "run_cli",
    "sample",
    "save_checkpoint",
    "train",
]
