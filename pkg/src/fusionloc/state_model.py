"""Uncertain differential-drive kinematics.

The state is an 8-vector ``[X, Y, psi, omega_r, omega_l, radius_r, radius_l, bias]``.
Pose is advanced with explicit Euler on the mid-wheel speed; the wheel speeds,
radii and gyro bias evolve statically. Heading is stored unwrapped.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass

import numpy as np

X, Y, PSI, OMEGA_R, OMEGA_L, RADIUS_R, RADIUS_L, BIAS = range(8)
STATE_DIM = 8
_EYE = np.eye(8)
STATE_NAMES = ("X", "Y", "psi", "omega_r", "omega_l", "radius_r", "radius_l", "bias")


def wrap_angle(a):
    """Wrap an angle (scalar or array) to (-pi, pi]."""
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


@dataclass(frozen=True)
class ModelConfig:
    track_width: float
    sample_time: float

    def __post_init__(self):
        if not self.track_width > 0:
            raise ValueError(f"track_width must be > 0, got {self.track_width}")
        if not self.sample_time > 0:
            raise ValueError(f"sample_time must be > 0, got {self.sample_time}")


@dataclass(frozen=True)
class StateVector:
    """Named view of the filter state; the numerical code works on arrays."""

    X: float = 0.0
    Y: float = 0.0
    psi: float = 0.0
    omega_r: float = 0.0
    omega_l: float = 0.0
    radius_r: float = 0.1
    radius_l: float = 0.1
    bias: float = 0.0

    def __post_init__(self):
        validate_state(self.to_array())

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, x) -> "StateVector":
        return cls(*(float(v) for v in np.asarray(x, dtype=float)))


def validate_state(x: np.ndarray) -> None:
    if x.shape != (STATE_DIM,):
        raise ValueError(f"state must have shape (8,), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("state contains non-finite values")
    if not (x[RADIUS_R] > 0 and x[RADIUS_L] > 0):
        raise ValueError("wheel radii must be positive")


def _as_state(x) -> np.ndarray:
    if isinstance(x, StateVector):
        return x.to_array()
    return np.asarray(x, dtype=float)


def predict_state(x, cfg: ModelConfig) -> np.ndarray:
    """One step of the state transition; returns a new array."""
    X_, Y_, psi, wr, wl, rr, rl, b = _as_state(x).tolist()
    ts = cfg.sample_time
    v = (wr * rr + wl * rl) / 2.0
    yaw_rate = (wr * rr - wl * rl) / cfg.track_width
    return np.array(
        [
            X_ + v * math.cos(psi) * ts,
            Y_ + v * math.sin(psi) * ts,
            psi + yaw_rate * ts,
            wr,
            wl,
            rr,
            rl,
            b,
        ]
    )


def state_jacobian(x, cfg: ModelConfig) -> np.ndarray:
    """Analytic d(predict_state)/dx evaluated at ``x``."""
    _, _, psi, wr, wl, rr, rl, _ = _as_state(x).tolist()
    ts = cfg.sample_time
    c = math.cos(psi) * ts
    s = math.sin(psi) * ts
    v = (wr * rr + wl * rl) / 2.0
    k = ts / cfg.track_width

    A = _EYE.copy()
    A[X, PSI] = -v * s
    A[X, OMEGA_R] = rr / 2.0 * c
    A[X, OMEGA_L] = rl / 2.0 * c
    A[X, RADIUS_R] = wr / 2.0 * c
    A[X, RADIUS_L] = wl / 2.0 * c

    A[Y, PSI] = v * c
    A[Y, OMEGA_R] = rr / 2.0 * s
    A[Y, OMEGA_L] = rl / 2.0 * s
    A[Y, RADIUS_R] = wr / 2.0 * s
    A[Y, RADIUS_L] = wl / 2.0 * s

    A[PSI, OMEGA_R] = rr * k
    A[PSI, OMEGA_L] = -rl * k
    A[PSI, RADIUS_R] = wr * k
    A[PSI, RADIUS_L] = -wl * k
    return A
