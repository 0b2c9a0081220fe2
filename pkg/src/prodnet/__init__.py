"""Common-mode cleaning of firm growth panels and reconstruction of the
production network behind them."""

from .errors import (
    CalibrationError,
    ContractError,
    DataError,
    DomainError,
    NumericalError,
    ProdnetError,
    ProdnetWarning,
    ReconstructionError,
)
from .netstats import BlockScheme, Network
from .panel import GrowthPanel, SalesPanel, growth_rates, load_sales_csv, rescale_loo
from .pipeline import ReconstructionPlan, calibrate_alpha, reconstruct_network
from .sgl import SolverConfig, SpectralTarget, solve_sgl
from .spectral import CorrMatrix, SpectrumReport, clean_market_mode, corr_matrix, eigendecompose

__version__ = "0.1.0"

__all__ = [
    "BlockScheme",
    "CalibrationError",
    "ContractError",
    "CorrMatrix",
    "DataError",
    "DomainError",
    "GrowthPanel",
    "Network",
    "NumericalError",
    "ProdnetError",
    "ProdnetWarning",
    "ReconstructionError",
    "ReconstructionPlan",
    "SalesPanel",
    "SolverConfig",
    "SpectralTarget",
    "SpectrumReport",
    "calibrate_alpha",
    "clean_market_mode",
    "corr_matrix",
    "eigendecompose",
    "growth_rates",
    "load_sales_csv",
    "reconstruct_network",
    "rescale_loo",
    "solve_sgl",
]
