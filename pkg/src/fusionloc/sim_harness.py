"""Simulated runs: ground truth, emulated sensor streams, filter runs and
error metrics against truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from fusionloc.fusion_filter import (
    DEFAULT_P0_DIAG,
    DEFAULT_Q_DIAG,
    AvailabilityPolicy,
    FilterConfig,
    FilterHistory,
    Measurement,
    NoiseConfig,
    initial_covariance,
    run_filter,
    sort_measurements,
)
from fusionloc.measurement_models import CANONICAL_ORDER, GnssAntennaOffset, SensorKind
from fusionloc.state_model import (
    BIAS,
    OMEGA_L,
    OMEGA_R,
    PSI,
    RADIUS_L,
    RADIUS_R,
    STATE_DIM,
    ModelConfig,
    wrap_angle,
)


@dataclass(frozen=True)
class Segment:
    duration: float
    v: float
    yaw_rate: float = 0.0


@dataclass(frozen=True)
class TrueParams:
    radius_r: float
    radius_l: float
    track_width: float
    bias: float = 0.0


@dataclass(frozen=True)
class NominalParams:
    """Parameter values the filter starts from (and keeps, if locked)."""

    radius_r: float
    radius_l: float
    bias: float = 0.0


@dataclass(frozen=True)
class SensorRates:
    encoder: float = 100.0
    imu: float = 100.0
    gnss: float = 10.0
    pose: float = 20.0

    def of(self, kind: SensorKind) -> float:
        return getattr(self, _FIELD[kind])


@dataclass(frozen=True)
class SensorNoise:
    """Standard deviations of the emulated sensor noise."""

    encoder: float = 0.0
    imu: float = 0.0
    gnss: float = 0.0
    pose_xy: float = 0.0
    pose_psi: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) >= 0:
                raise ValueError(f"{f.name} noise sigma must be >= 0")


@dataclass(frozen=True)
class Dropout:
    kind: SensorKind
    start: float
    end: float

    def covers(self, t):
        return (t >= self.start) & (t <= self.end)


@dataclass(frozen=True)
class FilterTuning:
    """Filter-side noise model; diagonal entries only."""

    q_diag: tuple = DEFAULT_Q_DIAG
    p0_diag: tuple = DEFAULT_P0_DIAG
    r_imu: tuple = (1e-5,)
    r_encoder: tuple = (1e-4, 1e-4)
    r_gnss: tuple = (1e-2, 1e-2)
    r_pose: tuple = (1e-2, 1e-2, 1e-4)
    staleness_factor: float = 1.5

    def __post_init__(self):
        for name, n in (("q_diag", 8), ("p0_diag", 8), ("r_imu", 1), ("r_encoder", 2), ("r_gnss", 2), ("r_pose", 3)):
            v = getattr(self, name)
            if len(v) != n:
                raise ValueError(f"{name} needs {n} entries, got {len(v)}")
            if any(not (e >= 0 and np.isfinite(e)) for e in v):
                raise ValueError(f"{name} entries must be finite and >= 0")
        if not self.staleness_factor >= 1:
            raise ValueError("staleness_factor must be >= 1")

    def noise_config(self) -> NoiseConfig:
        d = np.diag
        return NoiseConfig(
            Q=d(self.q_diag),
            R_imu=d(self.r_imu),
            R_enc=d(self.r_encoder),
            R_gnss=d(self.r_gnss),
            R_pose=d(self.r_pose),
        )


_FIELD = {
    SensorKind.ENCODER: "encoder",
    SensorKind.IMU_YAW_RATE: "imu",
    SensorKind.GNSS_POSITION: "gnss",
    SensorKind.ABSOLUTE_POSE: "pose",
}


@dataclass(frozen=True)
class Scenario:
    duration: float
    segments: tuple[Segment, ...]
    true_params: TrueParams
    nominal_params: NominalParams
    rates: SensorRates = field(default_factory=SensorRates)
    noise: SensorNoise = field(default_factory=SensorNoise)
    dropouts: tuple[Dropout, ...] = ()
    antenna: GnssAntennaOffset = field(default_factory=GnssAntennaOffset)
    seed: int = 0
    filter_rate: float = 60.0
    initial_pose: tuple[float, float, float] = (0.0, 0.0, 0.0)
    tuning: FilterTuning = field(default_factory=FilterTuning)

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be > 0")
        if not self.filter_rate > 0:
            raise ValueError("filter_rate must be > 0")
        for kind in SensorKind:
            if not self.rates.of(kind) > 0:
                raise ValueError(f"{_FIELD[kind]} rate must be > 0")
        for d in self.dropouts:
            if not (0 <= d.start <= d.end <= self.duration):
                raise ValueError(f"dropout window [{d.start}, {d.end}] is outside the run")
        if not self.true_params.track_width > 0:
            raise ValueError("track_width must be > 0")
        if self.true_params.radius_r <= 0 or self.true_params.radius_l <= 0:
            raise ValueError("true radii must be positive")
        if self.nominal_params.radius_r <= 0 or self.nominal_params.radius_l <= 0:
            raise ValueError("nominal radii must be positive")

    @property
    def sample_time(self) -> float:
        return 1.0 / self.filter_rate

    @property
    def n_steps(self) -> int:
        return int(round(self.duration * self.filter_rate))

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.true_params.track_width, self.sample_time)


@dataclass
class GroundTruth:
    t: np.ndarray
    pose: np.ndarray  # (n+1, 3): X, Y, psi
    wheel_speeds: np.ndarray  # (n+1, 2): omega_r, omega_l
    yaw_rate: np.ndarray  # (n+1,) true body yaw rate


def wheel_speeds_from_body(v: float, yaw_rate: float, radius_r: float, radius_l: float, track: float):
    """Inverse differential-drive kinematics."""
    if radius_r <= 0 or radius_l <= 0:
        raise ValueError("radii must be positive")
    return (v + yaw_rate * track / 2.0) / radius_r, (v - yaw_rate * track / 2.0) / radius_l


def _profile(segments, t: np.ndarray):
    ends = np.cumsum([seg.duration for seg in segments])
    idx = np.minimum(np.searchsorted(ends, t, side="right"), len(segments) - 1)
    v = np.array([seg.v for seg in segments])[idx]
    w = np.array([seg.yaw_rate for seg in segments])[idx]
    return v, w


def generate_truth(s: Scenario) -> GroundTruth:
    """Integrate the speed profile with the true parameters at filter rate."""
    n, ts = s.n_steps, s.sample_time
    p = s.true_params
    t = np.arange(n + 1) * ts
    if s.segments:
        v, w = _profile(s.segments, t)
    else:
        v = w = np.zeros(n + 1)
    wr, wl = wheel_speeds_from_body(v, w, p.radius_r, p.radius_l, p.track_width)
    wr = np.asarray(wr, dtype=float) + np.zeros(n + 1)
    wl = np.asarray(wl, dtype=float) + np.zeros(n + 1)
    yaw_rate = (wr * p.radius_r - wl * p.radius_l) / p.track_width

    pose = np.empty((n + 1, 3))
    X, Y, psi = (float(c) for c in s.initial_pose)
    pose[0] = X, Y, psi
    rr, rl, T = p.radius_r, p.radius_l, p.track_width
    for k in range(n):
        a, b = float(wr[k]), float(wl[k])
        vk = (a * rr + b * rl) / 2.0
        X += vk * math.cos(psi) * ts
        Y += vk * math.sin(psi) * ts
        psi += (a * rr - b * rl) / T * ts
        pose[k + 1] = X, Y, psi
    return GroundTruth(t, pose, np.column_stack([wr, wl]), yaw_rate)


def sample_times(s: Scenario, kind: SensorKind) -> np.ndarray:
    rate = s.rates.of(kind)
    count = int(math.floor(s.duration * rate + 1e-9))
    return np.arange(count + 1) / rate


def emulate_streams(truth: GroundTruth, s: Scenario) -> dict[SensorKind, list[Measurement]]:
    """Noisy sensor samples derived from ``truth``.

    Noise is drawn for every nominal sample before dropout windows remove
    any, so a dropout never changes the noise of the surviving samples.
    """
    rng = np.random.default_rng(s.seed)
    n = len(truth.t) - 1
    p = s.true_params
    sig = s.noise
    streams = {}
    for kind in CANONICAL_ORDER:
        t = sample_times(s, kind)
        pos = t * s.filter_rate
        j = np.minimum(np.floor(pos + 1e-9).astype(int), n)
        frac = np.clip(pos - j, 0.0, None)
        j1 = np.minimum(j + 1, n)
        pose = truth.pose[j] + frac[:, None] * (truth.pose[j1] - truth.pose[j])
        pose[frac <= 1e-9] = truth.pose[j[frac <= 1e-9]]

        if kind is SensorKind.IMU_YAW_RATE:
            vals = (truth.yaw_rate[j] + p.bias)[:, None]
            noise = sig.imu * rng.standard_normal(vals.shape)
        elif kind is SensorKind.ENCODER:
            vals = truth.wheel_speeds[j]
            noise = sig.encoder * rng.standard_normal(vals.shape)
        elif kind is SensorKind.GNSS_POSITION:
            a = pose[:, 2] + s.antenna.alpha
            vals = np.column_stack(
                [pose[:, 0] + s.antenna.d * np.cos(a), pose[:, 1] + s.antenna.d * np.sin(a)]
            )
            noise = sig.gnss * rng.standard_normal(vals.shape)
        else:
            vals = pose
            noise = rng.standard_normal(vals.shape) * np.array([sig.pose_xy, sig.pose_xy, sig.pose_psi])
        vals = vals + noise

        keep = np.ones(len(t), dtype=bool)
        for d in s.dropouts:
            if d.kind is kind:
                keep &= ~d.covers(t)
        streams[kind] = [
            Measurement.unchecked(kind, ti, vi) for ti, vi in zip(t[keep].tolist(), vals[keep])
        ]
    return streams


def merge_streams(streams: dict[SensorKind, list[Measurement]]) -> list[Measurement]:
    return sort_measurements(m for kind in CANONICAL_ORDER for m in streams.get(kind, ()))


@dataclass
class RunMetrics:
    t: np.ndarray
    pos_err: np.ndarray
    yaw_err: np.ndarray
    s_pose: np.ndarray
    s_vel: np.ndarray
    cum_yaw_vel: np.ndarray

    @property
    def final_pos_err(self) -> float:
        return float(self.pos_err[-1])

    @property
    def final_yaw_err(self) -> float:
        return float(self.yaw_err[-1])

    @property
    def median_pos_err(self) -> float:
        return float(np.median(self.pos_err))

    def table(self) -> np.ndarray:
        return np.column_stack([self.t, self.pos_err, self.yaw_err, self.s_pose, self.s_vel, self.cum_yaw_vel])


@dataclass
class RunResult:
    scenario: Scenario
    truth: GroundTruth
    history: FilterHistory
    metrics: RunMetrics
    measurements: list[Measurement]
    config: FilterConfig
    x0: np.ndarray
    P0: np.ndarray


def compute_metrics(truth: GroundTruth, history: FilterHistory, cfg: ModelConfig) -> RunMetrics:
    """Errors against truth plus the cumulative pose/velocity quantities.

    Velocity integrals use the estimate at step k-1 for the interval ending
    at step k, i.e. the speeds that drove that prediction.
    """
    x = history.x
    d = x[:, :2] - truth.pose[:, :2]
    pos_err = np.hypot(d[:, 0], d[:, 1])
    yaw_err = np.abs(wrap_angle(x[:, PSI] - truth.pose[:, 2]))
    step = np.hypot(np.diff(x[:, 0]), np.diff(x[:, 1]))
    s_pose = np.concatenate([[0.0], np.cumsum(step)])
    v = (x[:, OMEGA_R] * x[:, RADIUS_R] + x[:, OMEGA_L] * x[:, RADIUS_L]) / 2.0
    w = (x[:, OMEGA_R] * x[:, RADIUS_R] - x[:, OMEGA_L] * x[:, RADIUS_L]) / cfg.track_width
    ts = cfg.sample_time
    s_vel = np.concatenate([[0.0], np.cumsum(np.abs(v[:-1]) * ts)])
    cum_yaw = np.concatenate([[0.0], np.cumsum(w[:-1] * ts)])
    return RunMetrics(history.t.copy(), pos_err, yaw_err, s_pose, s_vel, cum_yaw)


def coherence_metrics(result: RunResult) -> tuple[np.ndarray, np.ndarray]:
    """Distance divergence ``s_pose - s_vel`` and yaw divergence
    ``(psi - psi_0) - integrated yaw rate`` over the run."""
    m = result.metrics
    psi = result.history.x[:, PSI]
    return m.s_pose - m.s_vel, (psi - psi[0]) - m.cum_yaw_vel


def initial_estimate(s: Scenario, streams: dict[SensorKind, list[Measurement]]) -> np.ndarray:
    """Truth start pose, wheel speeds from the first encoder sample at t=0,
    nominal radii and bias."""
    x0 = np.zeros(STATE_DIM)
    x0[:3] = s.initial_pose
    enc = streams.get(SensorKind.ENCODER) or []
    if enc and enc[0].t <= 0.0:
        x0[OMEGA_R], x0[OMEGA_L] = enc[0].values
    x0[RADIUS_R] = s.nominal_params.radius_r
    x0[RADIUS_L] = s.nominal_params.radius_l
    x0[BIAS] = s.nominal_params.bias
    return x0


def filter_config(s: Scenario, estimate_uncertainties: bool = True) -> FilterConfig:
    policy = AvailabilityPolicy(
        staleness_factor=s.tuning.staleness_factor,
        nominal_period={k: 1.0 / s.rates.of(k) for k in SensorKind},
    )
    return FilterConfig(
        model=s.model_config(),
        noise=s.tuning.noise_config(),
        offset=s.antenna,
        policy=policy,
        estimate_uncertainties=estimate_uncertainties,
    )


def run_scenario(s: Scenario, estimate_uncertainties: bool = True) -> RunResult:
    """Simulate ``s`` end to end. With ``estimate_uncertainties`` off the
    radii and bias are locked at their nominal values."""
    truth = generate_truth(s)
    streams = emulate_streams(truth, s)
    measurements = merge_streams(streams)
    config = filter_config(s, estimate_uncertainties)
    x0 = initial_estimate(s, streams)
    P0 = initial_covariance(s.tuning.p0_diag, estimate_uncertainties)
    history = run_filter(measurements, x0, P0, config, s.n_steps)
    metrics = compute_metrics(truth, history, config.model)
    return RunResult(s, truth, history, metrics, measurements, config, x0, P0)


def dead_reckoning(s: Scenario, **nominal) -> Scenario:
    """Variant of ``s`` with absolute sources removed for the whole run and
    the given nominal parameters overridden."""
    drops = tuple(d for d in s.dropouts if not d.kind.is_absolute) + (
        Dropout(SensorKind.GNSS_POSITION, 0.0, s.duration),
        Dropout(SensorKind.ABSOLUTE_POSE, 0.0, s.duration),
    )
    return replace(s, dropouts=drops, nominal_params=replace(s.nominal_params, **nominal))


def _preset_segments(duration: float) -> tuple[Segment, ...]:
    # 50 s block of straights and arcs both ways, 0.57 m/s mean speed
    pattern = (
        Segment(12.0, 0.6, 0.0),
        Segment(8.0, 0.55, 0.2),
        Segment(10.0, 0.65, 0.0),
        Segment(10.0, 0.5, -0.15),
        Segment(6.0, 0.65, 0.0),
        Segment(4.0, 0.4, 0.3),
    )
    out, total = [], 0.0
    while total < duration:
        for seg in pattern:
            out.append(seg)
            total += seg.duration
    return tuple(out)


# Centimetre-level absolute sources; filter R matches the emulated noise and
# pose process noise is small because the simulated vehicle does not slip.
PRESET_NOISE = SensorNoise(encoder=0.01, imu=0.003, gnss=0.02, pose_xy=0.03, pose_psi=0.01)
PRESET_TUNING = FilterTuning(
    q_diag=(1e-8, 1e-8, 1e-9, 1e-2, 1e-2, 1e-10, 1e-10, 1e-10),
    r_imu=(0.003**2,),
    r_encoder=(0.01**2, 0.01**2),
    r_gnss=(0.02**2, 0.02**2),
    r_pose=(0.03**2, 0.03**2, 0.01**2),
)


def dropout_preset(seed: int = 0) -> Scenario:
    """350 s run; GNSS and map pose are both lost from t=220 s to the end.

    The nominal model has the wheel radii off by +1.5 % (right) and -1 %
    (left) and no knowledge of the 0.01 rad/s gyro bias.
    """
    duration = 350.0
    true = TrueParams(radius_r=0.1, radius_l=0.1, track_width=0.5, bias=0.01)
    return Scenario(
        duration=duration,
        segments=_preset_segments(duration),
        true_params=true,
        nominal_params=NominalParams(radius_r=0.1 * 1.015, radius_l=0.1 * 0.99, bias=0.0),
        rates=SensorRates(),
        noise=PRESET_NOISE,
        dropouts=(
            Dropout(SensorKind.GNSS_POSITION, 220.0, duration),
            Dropout(SensorKind.ABSOLUTE_POSE, 220.0, duration),
        ),
        antenna=GnssAntennaOffset(d=0.3, alpha=0.0),
        seed=seed,
        tuning=PRESET_TUNING,
    )


def coherence_preset(seed: int = 0) -> Scenario:
    """The dropout preset with every absolute source available throughout."""
    return replace(dropout_preset(seed), dropouts=())


def straight_line(duration: float = 100.0, v: float = 1.0, seed: int = 0) -> Scenario:
    """Noiseless straight run with exact parameters and no bias."""
    return Scenario(
        duration=duration,
        segments=(Segment(duration, v, 0.0),),
        true_params=TrueParams(radius_r=0.1, radius_l=0.1, track_width=0.5, bias=0.0),
        nominal_params=NominalParams(radius_r=0.1, radius_l=0.1, bias=0.0),
        seed=seed,
    )


PRESETS = {
    "dropout": dropout_preset,
    "coherence": coherence_preset,
    "straight": straight_line,
}
