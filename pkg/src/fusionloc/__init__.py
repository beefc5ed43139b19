"""EKF localization for differential-drive robots with online wheel-radius
and gyro-bias estimation, multi-rate sensor fusion and dropout handling."""

from fusionloc.state_model import (
    BIAS,
    OMEGA_L,
    OMEGA_R,
    PSI,
    RADIUS_L,
    RADIUS_R,
    STATE_DIM,
    X,
    Y,
    ModelConfig,
    StateVector,
    predict_state,
    state_jacobian,
    wrap_angle,
)
from fusionloc.measurement_models import (
    GnssAntennaOffset,
    MeasurementPrediction,
    SensorKind,
    stack_predictions,
)
from fusionloc.fusion_filter import (
    AvailabilityPolicy,
    FilterConfig,
    FilterState,
    LocalizationFilter,
    Measurement,
    MeasurementQueue,
    NoiseConfig,
    NumericalFailure,
    correct_step,
    filter_step,
    observability_rank,
    predict_step,
)
from fusionloc.frame_alignment import RigidTransform2D, TimedPath, associate, horn_align

__version__ = "0.1.0"
