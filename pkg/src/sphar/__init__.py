"""Spherical functional autoregressions: simulation, estimation, diagnostics."""

__version__ = "0.1.0"

from .analysis import (
    CLTReport,
    MSEReport,
    compute_vn,
    l2_error_decomposition,
    limit_covariance,
    run_clt_experiment,
    run_mse_experiment,
    score_statistic_samples,
    standardized_samples,
    sup_error,
    wasserstein_w1_normal,
)
from .estimate import (
    KernelEstimate,
    KernelRegressor,
    TruncationPolicy,
    estimate_kernel,
    eval_estimate,
    fit_multipole,
    plugin_bandwidth,
)
from .harmonics import gauss_nodes, legendre_all, ln_weight, real_sph_harmonics
from .model import (
    ModelError,
    ParametricFamily,
    SpharModel,
    autocovariances,
    build_parametric,
    check_stationarity,
    correlation_spectral_density,
    kernel_eval,
    power_law_model,
    second_order,
    space_time_covariance,
)
from .simulate import (
    CoefficientPanel,
    SimulationPlan,
    simulate_multipole,
    simulate_panel,
    substream_seed,
    synthesize_field,
)

__all__ = [
    "__version__",
    "CLTReport",
    "MSEReport",
    "compute_vn",
    "l2_error_decomposition",
    "limit_covariance",
    "run_clt_experiment",
    "run_mse_experiment",
    "score_statistic_samples",
    "standardized_samples",
    "sup_error",
    "wasserstein_w1_normal",
    "KernelEstimate",
    "KernelRegressor",
    "TruncationPolicy",
    "estimate_kernel",
    "eval_estimate",
    "fit_multipole",
    "plugin_bandwidth",
    "gauss_nodes",
    "legendre_all",
    "ln_weight",
    "real_sph_harmonics",
    "ModelError",
    "ParametricFamily",
    "SpharModel",
    "autocovariances",
    "build_parametric",
    "check_stationarity",
    "correlation_spectral_density",
    "kernel_eval",
    "power_law_model",
    "second_order",
    "space_time_covariance",
    "CoefficientPanel",
    "SimulationPlan",
    "simulate_multipole",
    "simulate_panel",
    "substream_seed",
    "synthesize_field",
]
