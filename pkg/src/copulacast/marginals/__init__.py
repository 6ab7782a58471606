"""Marginal predictive distributions: linear quantile models and Beta fits."""

from .beta import BetaParams, betainc, betaincinv, fit_beta_grid, fit_beta_mle, method_of_moments
from .cdf import BetaCdf, QuantileCdf, cdf_eval, cdf_inverse, quantiles_to_cdf
from .quantile import (
    DEFAULT_LEVELS,
    LinearQuantileModel,
    QuantileSet,
    dlinear_decompose,
    fit_linear_quantile,
    model_from_json,
    model_to_json,
    nlinear_postprocess,
    nlinear_preprocess,
    predict_quantiles,
    quantile_loss,
)

__all__ = [
    "BetaCdf", "BetaParams", "DEFAULT_LEVELS", "LinearQuantileModel", "QuantileCdf", "QuantileSet",
    "betainc", "betaincinv", "cdf_eval", "cdf_inverse", "dlinear_decompose", "fit_beta_grid",
    "fit_beta_mle", "fit_linear_quantile", "method_of_moments", "model_from_json", "model_to_json",
    "nlinear_postprocess", "nlinear_preprocess", "predict_quantiles", "quantile_loss", "quantiles_to_cdf",
]
