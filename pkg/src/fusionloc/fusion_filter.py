"""Multi-rate EKF with observability-gated correction.

The filter runs on a fixed grid of period ``Ts``. Every iteration predicts
the full state and covariance, then corrects with whichever sensors delivered
a fresh sample. Without an absolute position source only the wheel speeds
are corrected; pose, radii and bias evolve open loop.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

from fusionloc.frame_alignment import RigidTransform2D, apply_transform
from fusionloc.measurement_models import (
    CANONICAL_ORDER,
    GnssAntennaOffset,
    MeasurementPrediction,
    SensorKind,
    stack_predictions,
)
from fusionloc.state_model import (
    BIAS,
    OMEGA_L,
    OMEGA_R,
    RADIUS_L,
    RADIUS_R,
    STATE_DIM,
    ModelConfig,
    predict_state,
    state_jacobian,
    validate_state,
    wrap_angle,
)

# Slack when comparing sensor timestamps against the filter clock, which is
# accumulated by repeated addition of Ts.
TIME_EPS = 1e-9
MAX_CONDITION = 1e12
PARAMETER_STATES = (RADIUS_R, RADIUS_L, BIAS)
_EYE = np.eye(STATE_DIM)
_EYE.setflags(write=False)

DEFAULT_Q_DIAG = (1e-6, 1e-6, 1e-7, 1e-2, 1e-2, 1e-10, 1e-10, 1e-10)
DEFAULT_P0_DIAG = (1e2, 1e2, 1.0, 1.0, 1.0, 1e-4, 1e-4, 1e-4)
DEFAULT_RATES = {
    SensorKind.ENCODER: 100.0,
    SensorKind.IMU_YAW_RATE: 100.0,
    SensorKind.GNSS_POSITION: 10.0,
    SensorKind.ABSOLUTE_POSE: 20.0,
}


class NumericalFailure(RuntimeError):
    """The filter cannot produce a trustworthy update."""


@dataclass(frozen=True)
class Measurement:
    kind: SensorKind
    t: float
    values: np.ndarray
    frame: str | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size != self.kind.size:
            raise ValueError(
                f"{self.kind.value} measurement needs {self.kind.size} values, got {values.size}"
            )
        if not (np.isfinite(values).all() and math.isfinite(self.t)):
            raise ValueError(f"non-finite {self.kind.value} measurement at t={self.t}")
        if self.frame is not None and not self.kind.is_absolute:
            raise ValueError(f"{self.kind.value} measurements carry no reference frame")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "t", float(self.t))

    @classmethod
    def unchecked(cls, kind: SensorKind, t: float, values: np.ndarray, frame: str | None = None):
        """Build without validation, for samples generated internally."""
        m = object.__new__(cls)
        object.__setattr__(m, "kind", kind)
        object.__setattr__(m, "t", t)
        object.__setattr__(m, "values", values)
        object.__setattr__(m, "frame", frame)
        return m


def _diag(values) -> np.ndarray:
    return np.diag(np.asarray(values, dtype=float))


@dataclass
class NoiseConfig:
    Q: np.ndarray = field(default_factory=lambda: _diag(DEFAULT_Q_DIAG))
    R_imu: np.ndarray = field(default_factory=lambda: _diag([1e-5]))
    R_enc: np.ndarray = field(default_factory=lambda: _diag([1e-4, 1e-4]))
    R_gnss: np.ndarray = field(default_factory=lambda: _diag([1e-2, 1e-2]))
    R_pose: np.ndarray = field(default_factory=lambda: _diag([1e-2, 1e-2, 1e-4]))
    # True only for the internal copy used when parameter estimation is off
    parameters_locked: bool = False

    def __post_init__(self):
        for name, n in (("Q", 8), ("R_imu", 1), ("R_enc", 2), ("R_gnss", 2), ("R_pose", 3)):
            m = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if m.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}, got {m.shape}")
            if not np.allclose(m, m.T, rtol=0, atol=1e-15 * max(1.0, np.abs(m).max())):
                raise ValueError(f"{name} is not symmetric")
            if np.linalg.eigvalsh(m).min() < -1e-12 * max(1.0, np.trace(m)):
                raise ValueError(f"{name} is not positive semi-definite")
            setattr(self, name, m)
        idx = list(PARAMETER_STATES)
        if self.parameters_locked:
            if self.Q[idx].any():
                raise ValueError("a locked Q must have zero rows for radii and bias")
        elif not np.all(np.diag(self.Q)[idx] > 0):
            raise ValueError("Q diagonal for radii and bias must be > 0 so they can be estimated")
        self._R_cache: dict[tuple, np.ndarray] = {}
        self._blocks = {
            SensorKind.IMU_YAW_RATE: self.R_imu,
            SensorKind.ENCODER: self.R_enc,
            SensorKind.GNSS_POSITION: self.R_gnss,
            SensorKind.ABSOLUTE_POSE: self.R_pose,
        }

    def R(self, kinds: Iterable[SensorKind]) -> np.ndarray:
        """Block-diagonal measurement covariance for stacked ``kinds``."""
        kinds = tuple(kinds)
        cached = self._R_cache.get(kinds)
        if cached is not None:
            return cached
        blocks = [self._blocks[k] for k in kinds]
        n = sum(b.shape[0] for b in blocks)
        out = np.zeros((n, n))
        i = 0
        for b in blocks:
            j = i + b.shape[0]
            out[i:j, i:j] = b
            i = j
        out.setflags(write=False)
        self._R_cache[kinds] = out
        return out

    def locked(self) -> "NoiseConfig":
        """Copy with no process noise on the radii and bias."""
        Q = self.Q.copy()
        idx = list(PARAMETER_STATES)
        Q[idx, :] = 0.0
        Q[:, idx] = 0.0
        return NoiseConfig(Q, self.R_imu, self.R_enc, self.R_gnss, self.R_pose, parameters_locked=True)


@dataclass(frozen=True)
class AvailabilityPolicy:
    staleness_factor: float = 1.5
    nominal_period: Mapping[SensorKind, float] = field(
        default_factory=lambda: {k: 1.0 / r for k, r in DEFAULT_RATES.items()}
    )

    def __post_init__(self):
        if not self.staleness_factor >= 1:
            raise ValueError("staleness_factor must be >= 1")
        missing = set(SensorKind) - set(self.nominal_period)
        if missing:
            raise ValueError(f"no nominal period for {sorted(k.value for k in missing)}")

    def max_age(self, kind: SensorKind) -> float:
        return self.staleness_factor * self.nominal_period[kind]


@dataclass(frozen=True)
class FilterState:
    x: np.ndarray
    P: np.ndarray
    t: float
    # sensor kinds fused in the iteration that produced this state
    fused: frozenset = frozenset()

    def copy(self) -> "FilterState":
        return replace(self, x=self.x.copy(), P=self.P.copy())


@dataclass
class FilterConfig:
    model: ModelConfig
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    offset: GnssAntennaOffset = field(default_factory=GnssAntennaOffset)
    policy: AvailabilityPolicy = field(default_factory=AvailabilityPolicy)
    estimate_uncertainties: bool = True

    @cached_property
    def process_noise(self) -> NoiseConfig:
        return self.noise if self.estimate_uncertainties else self.noise.locked()


def covariance_ok(P: np.ndarray) -> bool:
    """Symmetric to 1e-12 relative and PSD to -1e-10 * trace."""
    P = np.asarray(P, dtype=float)
    scale = max(np.abs(P).max(), np.finfo(float).tiny)
    if np.abs(P - P.T).max() > 1e-12 * scale:
        return False
    return bool(np.linalg.eigvalsh(P).min() >= -1e-10 * np.trace(P))


def initial_covariance(diag=DEFAULT_P0_DIAG, estimate_uncertainties: bool = True) -> np.ndarray:
    P = _diag(diag)
    if not estimate_uncertainties:
        idx = list(PARAMETER_STATES)
        P[idx, :] = 0.0
        P[:, idx] = 0.0
    return P


class MeasurementQueue:
    """Latest-wins holding area between sensor producers and the filter.

    Safe for concurrent ``ingest`` calls. Absolute measurements tagged with a
    frame label are mapped into the filter frame on arrival.
    """

    def __init__(self, frames: Mapping[str, RigidTransform2D] | None = None):
        self.frames = dict(frames) if frames is not None else {"map": RigidTransform2D()}
        self._pending: dict[SensorKind, Measurement] = {}
        self._last_fused: dict[SensorKind, float] = {}
        self._lock = threading.Lock()

    def ingest(self, m: Measurement) -> bool:
        """Queue ``m``; returns False when it was discarded as stale."""
        if m.frame is not None:
            if m.frame not in self.frames:
                raise ValueError(f"unknown reference frame {m.frame!r}")
            tf = self.frames[m.frame]
            if not tf.is_identity:
                m = replace(m, values=apply_transform(tf, m.values))
        with self._lock:
            last = self._last_fused.get(m.kind)
            if last is not None and m.t <= last:
                return False
            pending = self._pending.get(m.kind)
            if pending is not None and m.t < pending.t:
                return False
            self._pending[m.kind] = m
            return True

    def latest_of(self, kind: SensorKind) -> Measurement | None:
        with self._lock:
            return self._pending.get(kind)

    def availability(self, now: float, policy: AvailabilityPolicy) -> frozenset:
        with self._lock:
            return frozenset(
                kind
                for kind, m in self._pending.items()
                if m.t <= now + TIME_EPS and now - m.t <= policy.max_age(kind) + TIME_EPS
            )

    def take(self, kinds: Iterable[SensorKind]) -> dict[SensorKind, Measurement]:
        """Remove and return the pending samples of ``kinds``, marking them fused."""
        out = {}
        with self._lock:
            for kind in kinds:
                m = self._pending.pop(kind)
                self._last_fused[kind] = m.t
                out[kind] = m
        return out


def correction_mask(available: Iterable[SensorKind], estimate_uncertainties: bool = True) -> np.ndarray:
    """Boolean per-state flags of which states a correction may touch."""
    available = frozenset(available)
    key = (available, estimate_uncertainties)
    mask = _MASKS.get(key)
    if mask is None:
        mask = _MASKS[key] = _build_mask(available, estimate_uncertainties)
    return mask


_MASKS: dict[tuple, np.ndarray] = {}


def _build_mask(available: frozenset, estimate_uncertainties: bool) -> np.ndarray:
    if any(k.is_absolute for k in available):
        mask = np.ones(STATE_DIM, dtype=bool)
        if not estimate_uncertainties:
            mask[list(PARAMETER_STATES)] = False
        mask.setflags(write=False)
        return mask
    mask = np.zeros(STATE_DIM, dtype=bool)
    if available:
        mask[[OMEGA_R, OMEGA_L]] = True
    mask.setflags(write=False)
    return mask


def predict_step(fs: FilterState, cfg: ModelConfig, noise: NoiseConfig) -> FilterState:
    A = state_jacobian(fs.x, cfg)
    P = A @ fs.P @ A.T + noise.Q
    P = 0.5 * (P + P.T)
    return FilterState(predict_state(fs.x, cfg), P, fs.t + cfg.sample_time)


def correct_step(
    fs: FilterState,
    pred: MeasurementPrediction,
    z,
    noise: NoiseConfig,
    mask: np.ndarray,
) -> FilterState:
    """Kalman correction with gain rows zeroed where ``mask`` is False.

    The Joseph form keeps P symmetric PSD for any (including masked) gain.
    """
    z = np.asarray(z, dtype=float)
    C = pred.jacobian
    if z.shape != pred.values.shape:
        raise ValueError(f"measurement has {z.size} rows, prediction has {pred.values.size}")
    R = noise.R(pred.kinds)
    nu = z - pred.values
    for row in pred.heading_rows:
        nu[row] = wrap_angle(nu[row])

    P = fs.P
    PCt = P @ C.T
    S = C @ PCt + R
    S = 0.5 * (S + S.T)
    # one symmetric eigendecomposition gives both the condition number and S^-1
    lam, V = np.linalg.eigh(S)
    lo, hi = float(lam[0]), float(lam[-1])
    if not (lo > 0 and math.isfinite(hi) and hi <= MAX_CONDITION * lo):
        raise NumericalFailure(f"innovation covariance is singular at t={fs.t:.6f}")
    K = (PCt @ (V / lam)) @ V.T
    K[~np.asarray(mask, dtype=bool)] = 0.0

    x = fs.x + K @ nu
    I_KC = _EYE - K @ C
    P = I_KC @ P @ I_KC.T + K @ R @ K.T
    P = 0.5 * (P + P.T)
    return FilterState(x, P, fs.t, fs.fused)


def filter_step(fs: FilterState, queue: MeasurementQueue, config: FilterConfig) -> FilterState:
    """One iteration: predict, then correct with whatever is available."""
    fs = predict_step(fs, config.model, config.process_noise)
    available = queue.availability(fs.t, config.policy)
    if not available:
        return fs
    samples = queue.take(available)
    pred = stack_predictions(fs.x, available, config.model, config.offset)
    z = np.concatenate([samples[k].values for k in pred.kinds])
    mask = correction_mask(available, config.estimate_uncertainties)
    fs = correct_step(fs, pred, z, config.noise, mask)
    return FilterState(fs.x, fs.P, fs.t, available)


def observability_rank(x, available: Iterable[SensorKind], config: FilterConfig) -> int:
    """Numerical rank of [C; CA; ...; CA^7] linearized at ``x``."""
    available = set(available)
    if not available:
        return 0
    C = stack_predictions(x, available, config.model, config.offset).jacobian
    A = state_jacobian(x, config.model)
    blocks = [C]
    for _ in range(STATE_DIM - 1):
        blocks.append(blocks[-1] @ A)
    s = np.linalg.svd(np.vstack(blocks), compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > 1e-10 * s[0]))


class LocalizationFilter:
    """Stateful wrapper: one stepper, many producers, consistent snapshots."""

    def __init__(self, config: FilterConfig, x0, P0, t0: float = 0.0, queue: MeasurementQueue | None = None):
        x0 = np.asarray(x0, dtype=float).copy()
        validate_state(x0)
        self.config = config
        self.queue = queue if queue is not None else MeasurementQueue()
        self._state = FilterState(x0, np.array(P0, dtype=float), float(t0))
        self._lock = threading.Lock()

    def ingest(self, m: Measurement) -> bool:
        return self.queue.ingest(m)

    def step(self) -> FilterState:
        with self._lock:
            self._state = filter_step(self._state, self.queue, self.config)
            return self._state.copy()

    def estimate(self) -> FilterState:
        with self._lock:
            return self._state.copy()


@dataclass
class FilterHistory:
    """Per-iteration record of a run; row 0 is the initial state."""

    t: np.ndarray
    x: np.ndarray
    P_diag: np.ndarray
    rows: np.ndarray  # measurement rows fused per iteration

    def __len__(self):
        return len(self.t)


def sort_measurements(measurements: Iterable[Measurement]) -> list[Measurement]:
    """Stable sort by timestamp; ties keep their input order."""
    return sorted(measurements, key=lambda m: m.t)


def run_filter(
    measurements: list[Measurement],
    x0,
    P0,
    config: FilterConfig,
    n_steps: int,
    t0: float = 0.0,
    on_step=None,
    frames: Mapping[str, RigidTransform2D] | None = None,
) -> FilterHistory:
    """Drive the filter over time-sorted ``measurements`` for ``n_steps``.

    Samples are released to the queue once the filter clock reaches them.
    ``on_step(k, state)`` is called after every iteration if given. ``frames``
    maps frame labels to filter-frame transforms, as for the queue.
    """
    x0 = np.asarray(x0, dtype=float).copy()
    validate_state(x0)
    fs = FilterState(x0, np.array(P0, dtype=float), float(t0))
    queue = MeasurementQueue(frames)
    ts = config.model.sample_time
    t = np.empty(n_steps + 1)
    xs = np.empty((n_steps + 1, STATE_DIM))
    pd = np.empty((n_steps + 1, STATE_DIM))
    rows = np.zeros(n_steps + 1, dtype=int)
    t[0], xs[0], pd[0] = fs.t, fs.x, fs.P.diagonal()

    i, n = 0, len(measurements)
    for k in range(1, n_steps + 1):
        now = fs.t + ts
        while i < n and measurements[i].t <= now + TIME_EPS:
            queue.ingest(measurements[i])
            i += 1
        fs = filter_step(fs, queue, config)
        t[k], xs[k], pd[k] = fs.t, fs.x, fs.P.diagonal()
        rows[k] = sum(kind.size for kind in fs.fused)
        if on_step is not None:
            on_step(k, fs)
    return FilterHistory(t, xs, pd, rows)


__all__ = [
    "AvailabilityPolicy",
    "CANONICAL_ORDER",
    "FilterConfig",
    "FilterHistory",
    "FilterState",
    "LocalizationFilter",
    "Measurement",
    "MeasurementQueue",
    "NoiseConfig",
    "NumericalFailure",
    "correct_step",
    "covariance_ok",
    "correction_mask",
    "filter_step",
    "initial_covariance",
    "observability_rank",
    "predict_step",
    "run_filter",
    "sort_measurements",
]
