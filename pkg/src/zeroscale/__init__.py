"""Treatment effects for non-negative outcomes with a mass point at zero."""

__version__ = "0.1.0"

from .bounds import (BoundsResult, ComplierCdfs, complier_cdfs, iv_complier_ate_pct, iv_lee_bounds,
                     iv_lee_bounds_data, lee_bounds, selection_point_estimate)
from .dataset import ColumnSpec, Dataset, load_csv, rescale_outcome, write_csv
from .errors import EstimationError, InputError, ZeroScaleError
from .identification import (DiscreteJoint, DiscreteMarginals, GFunction, coupling_range,
                             scale_invariance_test, separability_test, trilemma_report,
                             two_part_decomposition)
from .inference import BootstrapSpec, cluster_bootstrap, delta_exp_minus_one
from .poisson import PoissonFit, att_pct_did, ate_pct_poisson, poisson_event_study, poisson_fit
from .regression import FitResult, ols_fit, tsls_fit
from .results import EstimateResult, PropEffect
from .sensitivity import (SensitivityCurve, extensive_margin, find_scale_for_target,
                          sensitivity_curve, theta_at, tstat_table)
from .target_params import (ThresholdProfile, ate_pct_means, calibrated_ate, median_pct,
                            normalized_outcome_ate, rank_ate, threshold_profile)
from .transforms import Transform, apply, parse_transform, transform_column
