"""Probabilistic subnational TFR projection.

Regional total fertility rates are projected by scaling a national
trajectory ensemble with region-specific scale factors, either fixed at
their last observed value or evolving as a mean-one AR(1) process.  The
package also calibrates that process from historical data, estimates
between-region error correlations, and scores methods out of sample with
MAE, bias, CRPS and interval coverage.
"""

__version__ = "0.1.0"

from .data_model import (
    Country,
    PeriodIndex,
    ScaleAr1Params,
    TfrSeries,
    TrajectorySet,
    load_params,
    load_series,
    load_trajectories,
    load_trajectory_map,
    save_params,
    save_series,
    save_trajectories,
)
from .errors import DataError, NumericError, SubtfrError
from .ar1_calibration import (
    AlphaPanel,
    LoessFit,
    build_alpha_panel,
    calibrate,
    derive_phi_sigma,
    derive_sigma_c,
    find_asymptotic_moments,
    fit_loess,
    initial_alpha,
)
from .scale_projector import (
    ProjectionConfig,
    project,
    project_persistence,
    project_scale,
    project_scale_ar1,
)
from .error_correlation import (
    CorrelationEstimate,
    NormalizedErrorPanel,
    empirical_corr,
    estimate_A,
    normalize_errors,
    repair_pd,
    sample_correlated_errors,
    split_by_tfr,
)
from .validation import (
    HoldoutSpec,
    MetricBlock,
    ValidationReport,
    country_average_ensemble,
    coverage,
    crps,
    mae_bias,
    run_holdout,
)

__all__ = [
    "AlphaPanel",
    "CorrelationEstimate",
    "Country",
    "DataError",
    "HoldoutSpec",
    "LoessFit",
    "MetricBlock",
    "NormalizedErrorPanel",
    "NumericError",
    "PeriodIndex",
    "ProjectionConfig",
    "ScaleAr1Params",
    "SubtfrError",
    "TfrSeries",
    "TrajectorySet",
    "ValidationReport",
    "build_alpha_panel",
    "calibrate",
    "country_average_ensemble",
    "coverage",
    "crps",
    "derive_phi_sigma",
    "derive_sigma_c",
    "empirical_corr",
    "estimate_A",
    "find_asymptotic_moments",
    "fit_loess",
    "initial_alpha",
    "load_params",
    "load_series",
    "load_trajectories",
    "load_trajectory_map",
    "mae_bias",
    "normalize_errors",
    "project",
    "project_persistence",
    "project_scale",
    "project_scale_ar1",
    "repair_pd",
    "run_holdout",
    "sample_correlated_errors",
    "save_params",
    "save_series",
    "save_trajectories",
    "split_by_tfr",
]
