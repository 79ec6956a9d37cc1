"""Bayesian calibration of multi-fidelity computer models.

Combines field observations with deterministic simulator runs at one or
more fidelity levels: the lowest-fidelity code is emulated with a Gaussian
process, GP discrepancies link each level to the next and the best
simulator to reality, and MCMC over the calibration and statistical
parameters feeds posterior prediction of the physical process.
"""

from .data import (
    FieldObservations,
    MultiFidelityDataSet,
    SimulatorRuns,
    StandardizationTransform,
    load_dataset,
    scale_inputs,
    unscale_inputs,
)
from .design import DesignMatrix, lhs
from .errors import (
    BoundsError,
    CalibrationError,
    ConfigError,
    DegenerateDataError,
    DimensionError,
    InvalidInitError,
    NumericalSingularityError,
    OutOfRangeError,
)
from .inference import (
    Chain,
    TuningResult,
    default_initial_state,
    fit,
    hastings_step_precision,
    log_likelihood,
    log_posterior,
    log_prior,
    metropolis_step,
    run_chain,
    tune_widths,
)
from .kernels import (
    CovarianceAssembly,
    correlation,
    correlation_matrix,
    emulator_covariance,
    extend_for_prediction,
    field_delta_covariance,
    joint_covariance,
    level_delta_covariance,
)
from .params import (
    CalibrationParams,
    CorrelationParams,
    ParameterLayout,
    ParameterState,
    PrecisionParams,
    PriorConfig,
)
from .predict import (
    LooResult,
    PredictiveSummary,
    conditional_mvn,
    loo,
    posterior_mean,
    posterior_predictive,
    rmspe,
)
from .toy import (
    TOY_TRUTH,
    StudyConfig,
    StudyResult,
    ToyTruth,
    generate_toy_data,
    run_sim_study,
)

__version__ = "0.1.0"
