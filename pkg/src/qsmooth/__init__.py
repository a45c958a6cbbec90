"""Estimation of classical Markov waveforms coupled to a continuously
monitored quantum system: forward hybrid filtering, backward effect
propagation, two-filter smoothing, and the linear-Gaussian reduction.
"""

from .backward import BackwardFilter, EffectField, init_effect, run_backward
from .classical import (
    ClassicalGrid,
    ClassicalModel,
    euler_maruyama_step,
    linear_model,
    transition_kernel_matrix,
)
from .errors import (
    ConfigError,
    DegenerateRecordError,
    DegenerateSmoothingError,
    DegenerateUpdateError,
    InvalidGridError,
    NumericalInstabilityError,
    NumericalOverflowError,
    ScenarioMismatchError,
    TooLargeError,
    UnsupportedScenarioError,
)
from .forward import (
    FilterEstimate,
    ForwardFilter,
    HybridDensityField,
    init_field,
    run_filter,
)
from .kalman import (
    BackwardInfo,
    KalmanRun,
    LinearGaussianModel,
    derive_lg_model,
    kalman_bucy_backward,
    kalman_bucy_forward,
    mfp_combine,
    mfp_series,
)
from .operators import (
    MeasurementModel,
    QuantumModel,
    build_fock_operators,
    lindblad_adjoint_apply,
    lindblad_apply,
    measurement_kraus,
)
from .oracle import (
    DiscreteScenario,
    enumerate_effect,
    enumerate_forward,
    oracle_smooth,
)
from .scenario import TOOL_VERSION, Scenario, build_scenario, load_scenario, scenario_hash
from .smoothing import SmoothingDensity, combine, retrodict, smooth_series
from .truth import TrajectoryRecord, read_record, replay_check, simulate_truth, write_record

__version__ = TOOL_VERSION
