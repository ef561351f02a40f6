"""tailtilt: tail-aware reweighting of sample clouds and lattice distributions.

Core pieces: weighted risk functionals (VaR / upper and lower CVaR and their
dual forms), one-dimensional threshold optimization for the tilt dual
objectives, exponential tilting toward tail-shaped targets, a prior-anchored
iterative tilt operator on 2D lattices, and divergence / sensitivity
diagnostics. A small batch CLI (``tailtilt``) reproduces the desk-scale
experiments and writes machine-readable CSV/JSON outputs.
"""

from .distributions import (
    DegenerateDistributionError,
    GaussianPrior,
    GridDistribution,
    RewardField,
    SampleSet,
    grid_from_density,
    kde_pdf_1d,
    reweight,
    sample_prior,
)
from .risk import (
    RiskReport,
    dual_right_cvar,
    inverse_cdf,
    left_cvar,
    right_cvar,
    summarize,
    var_beta,
)
from .threshold import (
    ThresholdProblem,
    ThresholdResult,
    estimator_bias_variance_study,
    gradient,
    objective,
    solve_biased_sgd,
    solve_golden_section,
    solve_pgd,
)
from .tilt import (
    ImportanceDegeneracyWarning,
    TiltSpec,
    grid_stationary_threshold,
    pseudo_reward,
    tilt_grid,
    tilt_samples,
    verify_quantile_consistency,
)
from .fdc import EtaSchedule, FdcState, fdc_step, grid_var_beta, run_fdc
from .diagnostics import (
    SensitivityPoint,
    finite_difference,
    js_grid,
    kl_grid,
    sensitivity_sweep,
    tv_grid,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateDistributionError",
    "EtaSchedule",
    "FdcState",
    "GaussianPrior",
    "GridDistribution",
    "ImportanceDegeneracyWarning",
    "RewardField",
    "RiskReport",
    "SampleSet",
    "SensitivityPoint",
    "ThresholdProblem",
    "ThresholdResult",
    "TiltSpec",
    "dual_right_cvar",
    "estimator_bias_variance_study",
    "fdc_step",
    "finite_difference",
    "gradient",
    "grid_from_density",
    "grid_stationary_threshold",
    "grid_var_beta",
    "inverse_cdf",
    "js_grid",
    "kde_pdf_1d",
    "kl_grid",
    "left_cvar",
    "objective",
    "pseudo_reward",
    "reweight",
    "right_cvar",
    "run_fdc",
    "sample_prior",
    "sensitivity_sweep",
    "solve_biased_sgd",
    "solve_golden_section",
    "solve_pgd",
    "summarize",
    "tilt_grid",
    "tilt_samples",
    "tv_grid",
    "var_beta",
    "verify_quantile_consistency",
]
