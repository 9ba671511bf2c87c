"""Volumetric radar-echo motion estimation and extrapolation nowcasting."""

from .advect import ExtrapolationConfig, advect_once, extrapolate
from .analysis import (
    cell_split_diagnostic,
    coverage_vs_corr_histogram,
    monthwise_boxstats,
    motion_corr_matrix,
    rainy_ratio,
    rank_outliers,
    reflectivity_corr_matrix,
)
from .denoise import denoise_volume, morphological_clean, polarimetric_filter
from .errors import DivergedError, FormatError, NoOverlapError
from .flow import (
    Criterion,
    LossConfig,
    divergence,
    gradient_check,
    loss_divergence,
    loss_multiscale,
    loss_sequence,
    loss_single,
    loss_total,
    loss_total_with_grad,
)
from .grid import (
    MotionField,
    OobPolicy,
    RadarVolume,
    RainField,
    Space,
    avg_pool2d,
    bilinear_sample,
    cmax,
    max_pool_vertical,
)
from .lucas_kanade import estimate_lucas_kanade
from .synth import GaussianCell, SyntheticScenario, generate, preset
from .transform import dbr_to_rain, dbz_to_rain, rain_to_dbr
from .variational import (
    OptimizerConfig,
    VariationalResult,
    estimate_variational,
    mean_endpoint_error,
)
from .verify import (
    ContingencyTable,
    VerificationReport,
    contingency,
    continuous_metrics,
    precision_recall_ets,
    verify_nowcast,
)

__version__ = "0.1.0"
