"""Numerical normal forms for time-dependent Schrödinger operators on flat tori."""

from nftorus.geometry import LatticeBasis, MetricTensor, identity_metric, inner, jap_bracket, metric_from_basis, norm
from nftorus.symbols import SymbolSpec, SymbolTerm, TimeProfile, estimate_seminorm, time_derivative
from nftorus.weyl import (
    HermitianEigensystem,
    ModeSet,
    OperatorMatrix,
    commutator,
    conjugate_exact,
    dequantize,
    laplacian_matrix,
    lie_series,
    quantize,
    sobolev_opnorm,
)
from nftorus.resonance import NFParams, decompose, is_normal_form, normal_form_defect, validate_params
from nftorus.homological import solve_homological
from nftorus.normal_form import NFOptions, NFResult, TimeGrid, order_report, run_normal_form, smooth_share
from nftorus.clusters import Partition, partition, verify_partition
from nftorus.dynamics import StateVector, evolve, evolve_blocks, fit_growth, sobolev_norm
from nftorus.config import ExperimentConfig, config_from_dict, parse_config, symbol_from_dict, symbol_to_dict
from nftorus.presets import DEFAULT_PRESET, ExperimentPreset, get_preset, preset_options
from nftorus.errors import (
    NFTorusConfigError,
    NFTorusError,
    NFTorusNumericalError,
    NFTorusValidationError,
)
from nftorus.policies import NumericalPolicy

__version__ = "0.1.0"
__all__ = [
    "LatticeBasis",
    "MetricTensor",
    "ModeSet",
    "OperatorMatrix",
    "HermitianEigensystem",
    "SymbolSpec",
    "SymbolTerm",
    "TimeProfile",
    "NFParams",
    "NFOptions",
    "NFResult",
    "TimeGrid",
    "Partition",
    "StateVector",
    "ExperimentConfig",
    "ExperimentPreset",
    "NumericalPolicy",
    "NFTorusError",
    "NFTorusConfigError",
    "NFTorusNumericalError",
    "NFTorusValidationError",
    "DEFAULT_PRESET",
    "commutator",
    "config_from_dict",
    "conjugate_exact",
    "decompose",
    "dequantize",
    "estimate_seminorm",
    "evolve",
    "evolve_blocks",
    "fit_growth",
    "get_preset",
    "identity_metric",
    "inner",
    "is_normal_form",
    "jap_bracket",
    "laplacian_matrix",
    "lie_series",
    "metric_from_basis",
    "norm",
    "normal_form_defect",
    "order_report",
    "parse_config",
    "partition",
    "preset_options",
    "quantize",
    "run_normal_form",
    "smooth_share",
    "sobolev_norm",
    "sobolev_opnorm",
    "symbol_from_dict",
    "symbol_to_dict",
    "solve_homological",
    "time_derivative",
    "validate_params",
    "verify_partition",
]
