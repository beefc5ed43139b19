"""Predicted measurements and their Jacobians for the four sensor kinds."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

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
    _as_state,
)


class SensorKind(enum.Enum):
    IMU_YAW_RATE = "imu"
    ENCODER = "encoder"
    GNSS_POSITION = "gnss"
    ABSOLUTE_POSE = "pose"

    # members are singletons; identity hashing keeps dict lookups cheap
    __hash__ = object.__hash__

    size: int
    is_absolute: bool


for _kind, _size in zip(SensorKind, (1, 2, 2, 3)):
    _kind.size = _size
    _kind.is_absolute = _kind in (SensorKind.GNSS_POSITION, SensorKind.ABSOLUTE_POSE)

# Row order used whenever blocks are stacked.
CANONICAL_ORDER = (
    SensorKind.IMU_YAW_RATE,
    SensorKind.ENCODER,
    SensorKind.GNSS_POSITION,
    SensorKind.ABSOLUTE_POSE,
)


@dataclass(frozen=True)
class GnssAntennaOffset:
    """Antenna position relative to the centre of mass, in polar form."""

    d: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        if not self.d >= 0:
            raise ValueError(f"antenna offset d must be >= 0, got {self.d}")


@dataclass(frozen=True)
class MeasurementPrediction:
    values: np.ndarray
    jacobian: np.ndarray
    kinds: tuple[SensorKind, ...]

    @property
    def heading_rows(self) -> list[int]:
        """Row indices holding a heading, which need angle wrapping."""
        rows, row = [], 0
        for kind in self.kinds:
            if kind is SensorKind.ABSOLUTE_POSE:
                rows.append(row + 2)
            row += kind.size
        return rows


def predict_encoder(x) -> np.ndarray:
    x = _as_state(x)
    return np.array([x[OMEGA_R], x[OMEGA_L]])


def predict_pose(x) -> np.ndarray:
    x = _as_state(x)
    return np.array([x[X], x[Y], x[PSI]])


def predict_gnss(x, offset: GnssAntennaOffset) -> np.ndarray:
    x = _as_state(x)
    a = x[PSI] + offset.alpha
    return np.array([x[X] + offset.d * math.cos(a), x[Y] + offset.d * math.sin(a)])


def predict_imu_yaw_rate(x, cfg: ModelConfig) -> float:
    x = _as_state(x)
    return (x[OMEGA_R] * x[RADIUS_R] - x[OMEGA_L] * x[RADIUS_L]) / cfg.track_width + x[BIAS]


def encoder_jacobian(x) -> np.ndarray:
    H = np.zeros((2, STATE_DIM))
    H[0, OMEGA_R] = 1.0
    H[1, OMEGA_L] = 1.0
    return H


def pose_jacobian(x) -> np.ndarray:
    H = np.zeros((3, STATE_DIM))
    H[0, X] = H[1, Y] = H[2, PSI] = 1.0
    return H


def gnss_jacobian(x, offset: GnssAntennaOffset) -> np.ndarray:
    x = _as_state(x)
    a = x[PSI] + offset.alpha
    H = np.zeros((2, STATE_DIM))
    H[0, X] = 1.0
    H[1, Y] = 1.0
    H[0, PSI] = -offset.d * math.sin(a)
    H[1, PSI] = offset.d * math.cos(a)
    return H


def imu_jacobian(x, cfg: ModelConfig) -> np.ndarray:
    x = _as_state(x)
    T = cfg.track_width
    H = np.zeros((1, STATE_DIM))
    H[0, OMEGA_R] = x[RADIUS_R] / T
    H[0, OMEGA_L] = -x[RADIUS_L] / T
    H[0, RADIUS_R] = x[OMEGA_R] / T
    # d/dR_L of -omega_l * R_L / T
    H[0, RADIUS_L] = -x[OMEGA_L] / T
    H[0, BIAS] = 1.0
    return H


def stack_predictions(
    x,
    available,
    cfg: ModelConfig,
    offset: GnssAntennaOffset = GnssAntennaOffset(),
) -> MeasurementPrediction:
    """Stack predictions and Jacobians for the available sensor kinds.

    Blocks appear in ``CANONICAL_ORDER`` regardless of the iteration order of
    ``available``.
    """
    kinds = tuple(k for k in CANONICAL_ORDER if k in available)
    if not kinds:
        raise ValueError("cannot stack predictions for an empty sensor set")
    X_, Y_, psi, wr, wl, rr, rl, b = _as_state(x).tolist()
    n = sum(k.size for k in kinds)
    values = np.empty(n)
    H = np.zeros((n, STATE_DIM))
    r = 0
    for kind in kinds:
        if kind is SensorKind.IMU_YAW_RATE:
            T = cfg.track_width
            values[r] = (wr * rr - wl * rl) / T + b
            H[r, OMEGA_R] = rr / T
            H[r, OMEGA_L] = -rl / T
            H[r, RADIUS_R] = wr / T
            H[r, RADIUS_L] = -wl / T
            H[r, BIAS] = 1.0
        elif kind is SensorKind.ENCODER:
            values[r] = wr
            values[r + 1] = wl
            H[r, OMEGA_R] = 1.0
            H[r + 1, OMEGA_L] = 1.0
        elif kind is SensorKind.GNSS_POSITION:
            a = psi + offset.alpha
            c, s = math.cos(a), math.sin(a)
            values[r] = X_ + offset.d * c
            values[r + 1] = Y_ + offset.d * s
            H[r, X] = 1.0
            H[r + 1, Y] = 1.0
            H[r, PSI] = -offset.d * s
            H[r + 1, PSI] = offset.d * c
        else:
            values[r : r + 3] = X_, Y_, psi
            H[r, X] = H[r + 1, Y] = H[r + 2, PSI] = 1.0
        r += kind.size
    return MeasurementPrediction(values, H, kinds)
