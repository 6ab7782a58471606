"""Probabilistic forecasting and spatio-temporal scenario generation.

Linear quantile forecasters give per-cell marginal distributions; a Gaussian
copula over the ``D x H`` forecast grid couples them into joint scenarios.
"""

from .copula import (
    GaussianCopula,
    ScenarioSet,
    estimate_correlation,
    generate_scenarios,
    make_copula,
    pit_transform,
    sample_mvn,
)
from .data import (
    CapacityVector,
    CovariatePanel,
    SeriesPanel,
    WindowSpec,
    build_windows,
    load_panel_csv,
)
from .errors import CopulacastError

__version__ = "0.1.0"

__all__ = [
    "CapacityVector", "CopulacastError", "CovariatePanel", "GaussianCopula", "ScenarioSet", "SeriesPanel",
    "WindowSpec", "build_windows", "estimate_correlation", "generate_scenarios", "load_panel_csv",
    "make_copula", "pit_transform", "sample_mvn",
]
