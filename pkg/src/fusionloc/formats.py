"""File formats: scenario and filter-parameter TOML, trajectory and metric
CSVs, and line-delimited JSON sensor logs."""

from __future__ import annotations

import dataclasses
import json
import math
import typing
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from fusionloc.frame_alignment import RigidTransform2D, TimedPath
from fusionloc.fusion_filter import AvailabilityPolicy, FilterConfig, Measurement, NoiseConfig
from fusionloc.measurement_models import GnssAntennaOffset, SensorKind
from fusionloc.sim_harness import (
    Dropout,
    FilterTuning,
    NominalParams,
    Scenario,
    Segment,
    SensorNoise,
    SensorRates,
    TrueParams,
)
from fusionloc.state_model import STATE_NAMES, ModelConfig

ESTIMATE_COLUMNS = ("t",) + STATE_NAMES + tuple(f"p{i}{i}" for i in range(1, 9))
TRUTH_COLUMNS = ("t", "X", "Y", "psi", "omega_r", "omega_l")
METRICS_COLUMNS = ("t", "pos_err", "yaw_err", "s_pose", "s_vel", "cum_yaw_vel")
SUMMARY_COLUMNS = ("index", "value", "final_pos_err", "final_yaw_err")


class ConfigError(ValueError):
    """Invalid configuration document; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


class LogFormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


# -- scenario files ---------------------------------------------------------

# TOML key -> Scenario field, where they differ
_SCENARIO_KEYS = {"filter": "tuning"}


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _convert(hint, value, key: str):
    origin = typing.get_origin(hint)
    if hint is float:
        if not _is_number(value):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if hint is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if hint is SensorKind:
        try:
            return SensorKind(value)
        except ValueError:
            names = ", ".join(k.value for k in SensorKind)
            raise ConfigError(key, f"unknown sensor kind {value!r} (expected one of {names})") from None
    if dataclasses.is_dataclass(hint):
        return _from_dict(hint, value, key)
    if hint is tuple or origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(key, f"expected an array, got {value!r}")
        args = typing.get_args(hint)
        item = args[0] if args else float
        if args and args[-1] is not Ellipsis and len(args) != len(value):
            raise ConfigError(key, f"expected {len(args)} entries, got {len(value)}")
        return tuple(_convert(item, v, f"{key}[{i}]") for i, v in enumerate(value))
    raise TypeError(f"unsupported field type {hint!r}")


def _from_dict(cls, data, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a table, got {data!r}")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    keymap = _SCENARIO_KEYS if cls is Scenario else {}
    kwargs = {}
    for key, value in data.items():
        name = keymap.get(key, key)
        full = f"{path}.{key}" if path else key
        # field names that are spelled differently in the file are not keys
        renamed = key in keymap.values() and key not in keymap
        if name not in fields or renamed:
            raise ConfigError(full, "unknown key")
        kwargs[name] = _convert(hints[name], value, full)
    for name, f in fields.items():
        if name not in kwargs and f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            key = next((k for k, v in keymap.items() if v == name), name)
            raise ConfigError(f"{path}.{key}" if path else key, "missing required key")
    try:
        return cls(**kwargs)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        # validators start their message with the field name when they can
        first = str(exc).split(" ", 1)[0]
        key = f"{path}.{first}" if path and first in fields else first if first in fields else path
        raise ConfigError(key or "scenario", str(exc)) from None


def _to_plain(value):
    if isinstance(value, SensorKind):
        return value.value
    if dataclasses.is_dataclass(value):
        return {f.name: _to_plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (tuple, list)):
        return [_to_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def scenario_to_dict(s: Scenario) -> dict:
    d = _to_plain(s)
    inverse = {v: k for k, v in _SCENARIO_KEYS.items()}
    return {inverse.get(k, k): v for k, v in d.items()}


def scenario_from_dict(data: dict) -> Scenario:
    return _from_dict(Scenario, data)


def dumps_scenario(s: Scenario) -> str:
    return tomli_w.dumps(scenario_to_dict(s))


def loads_scenario(text: str) -> Scenario:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"TOML syntax error: {exc}") from None
    return scenario_from_dict(data)


def load_scenario(path) -> Scenario:
    return loads_scenario(Path(path).read_text())


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(dumps_scenario(s))


# -- filter parameter files (replay) ----------------------------------------

_PARAM_KEYS = {
    "track_width", "sample_time", "n_steps", "t0", "estimate_uncertainties",
    "x0", "P0", "noise", "antenna", "policy", "frames",
}


def _matrix(m) -> list:
    return np.asarray(m, dtype=float).tolist()


def params_to_dict(config: FilterConfig, x0, P0, n_steps: int, t0: float = 0.0, frames=None) -> dict:
    n = config.noise
    frames = {"map": RigidTransform2D()} if frames is None else frames
    return {
        "track_width": config.model.track_width,
        "sample_time": config.model.sample_time,
        "n_steps": int(n_steps),
        "t0": float(t0),
        "estimate_uncertainties": bool(config.estimate_uncertainties),
        "x0": _matrix(x0),
        "P0": _matrix(P0),
        "noise": {
            "Q": _matrix(n.Q),
            "R_imu": _matrix(n.R_imu),
            "R_enc": _matrix(n.R_enc),
            "R_gnss": _matrix(n.R_gnss),
            "R_pose": _matrix(n.R_pose),
        },
        "antenna": {"d": config.offset.d, "alpha": config.offset.alpha},
        "policy": {
            "staleness_factor": config.policy.staleness_factor,
            "nominal_period": {k.value: float(v) for k, v in config.policy.nominal_period.items()},
        },
        "frames": {label: {"theta": tf.theta, "tx": tf.tx, "ty": tf.ty} for label, tf in frames.items()},
    }


def params_from_dict(data: dict):
    """Returns ``(config, x0, P0, n_steps, t0, frames)``."""
    for key in data:
        if key not in _PARAM_KEYS:
            raise ConfigError(key, "unknown key")
    for key in ("track_width", "sample_time", "n_steps", "x0", "P0"):
        if key not in data:
            raise ConfigError(key, "missing required key")
    try:
        model = ModelConfig(float(data["track_width"]), float(data["sample_time"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError("sample_time" if "sample_time" in str(exc) else "track_width", str(exc)) from None
    noise_data = data.get("noise", {})
    for key in noise_data:
        if key not in ("Q", "R_imu", "R_enc", "R_gnss", "R_pose"):
            raise ConfigError(f"noise.{key}", "unknown key")
    try:
        noise = NoiseConfig(**{k: np.array(v, dtype=float) for k, v in noise_data.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError("noise", str(exc)) from None
    try:
        offset = GnssAntennaOffset(**data.get("antenna", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError("antenna", str(exc)) from None
    pol = data.get("policy", {})
    try:
        periods = {SensorKind(k): float(v) for k, v in pol.get("nominal_period", {}).items()}
        policy = AvailabilityPolicy(pol.get("staleness_factor", 1.5), periods or AvailabilityPolicy().nominal_period)
    except (TypeError, ValueError) as exc:
        raise ConfigError("policy", str(exc)) from None
    x0 = np.array(data["x0"], dtype=float)
    P0 = np.array(data["P0"], dtype=float)
    if x0.shape != (8,):
        raise ConfigError("x0", "expected 8 entries")
    if P0.shape != (8, 8):
        raise ConfigError("P0", "expected an 8x8 matrix")
    n_steps = data["n_steps"]
    if not isinstance(n_steps, int) or n_steps < 0:
        raise ConfigError("n_steps", "expected a non-negative integer")
    frames = {}
    for label, tf in data.get("frames", {"map": {}}).items():
        try:
            frames[label] = RigidTransform2D(**tf)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"frames.{label}", str(exc)) from None
    config = FilterConfig(model, noise, offset, policy, bool(data.get("estimate_uncertainties", True)))
    return config, x0, P0, n_steps, float(data.get("t0", 0.0)), frames


def save_params(path, config: FilterConfig, x0, P0, n_steps: int, t0: float = 0.0, frames=None) -> None:
    Path(path).write_text(tomli_w.dumps(params_to_dict(config, x0, P0, n_steps, t0, frames)))


def load_params(path):
    try:
        data = tomllib.loads(Path(path).read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"TOML syntax error: {exc}") from None
    return params_from_dict(data)


# -- CSV --------------------------------------------------------------------

def write_csv(path, columns, table) -> None:
    """Header row plus one line per row; floats written in round-trip form."""
    table = np.asarray(table, dtype=float)
    if table.ndim != 2 or table.shape[1] != len(columns):
        raise ValueError(f"table shape {table.shape} does not match {len(columns)} columns")
    lines = [",".join(columns)]
    lines.extend(",".join(map(repr, row)) for row in table.tolist())
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> tuple[list[str], np.ndarray]:
    text = Path(path).read_text().splitlines()
    if not text:
        raise ConfigError(str(path), "empty CSV file")
    header = [c.strip() for c in text[0].split(",")]
    rows = []
    for i, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        try:
            row = [float(v) for v in line.split(",")]
        except ValueError:
            raise ConfigError(f"{path}:{i}", "non-numeric value") from None
        if len(row) != len(header):
            raise ConfigError(f"{path}:{i}", f"expected {len(header)} fields, got {len(row)}")
        rows.append(row)
    return header, np.array(rows, dtype=float).reshape(-1, len(header))


def read_trajectory(path) -> TimedPath:
    """Trajectory CSV with at least ``t``, ``X`` and ``Y`` columns."""
    header, table = read_csv(path)
    try:
        cols = [header.index(c) for c in ("t", "X", "Y")]
    except ValueError:
        raise ConfigError(str(path), "trajectory CSV needs t, X and Y columns") from None
    try:
        return TimedPath(table[:, cols[0]], table[:, cols[1:]])
    except ValueError as exc:
        raise ConfigError(str(path), str(exc)) from None


def estimate_table(history) -> np.ndarray:
    return np.column_stack([history.t, history.x, history.P_diag])


def truth_table(truth) -> np.ndarray:
    return np.column_stack([truth.t, truth.pose, truth.wheel_speeds])


# -- sensor logs ------------------------------------------------------------

def measurement_to_record(m: Measurement) -> dict:
    rec = {"t": m.t, "kind": m.kind.value, "values": m.values.tolist()}
    if m.frame is not None:
        rec["frame"] = m.frame
    return rec


def write_sensor_log(path, measurements) -> None:
    with open(path, "w") as fh:
        for m in measurements:
            fh.write(json.dumps(measurement_to_record(m)) + "\n")


def parse_sensor_log(lines) -> list[Measurement]:
    """Parse JSONL records; within each kind timestamps must not decrease."""
    out, last = [], {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogFormatError(lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise LogFormatError(lineno, "record must be a JSON object")
        extra = set(rec) - {"t", "kind", "values", "frame"}
        if extra:
            raise LogFormatError(lineno, f"unknown field(s) {sorted(extra)}")
        try:
            kind = SensorKind(rec.get("kind"))
        except ValueError:
            raise LogFormatError(lineno, f"unknown sensor kind {rec.get('kind')!r}") from None
        t, values = rec.get("t"), rec.get("values")
        if not _is_number(t) or not math.isfinite(t):
            raise LogFormatError(lineno, "t must be a finite number")
        if not isinstance(values, list) or not all(_is_number(v) for v in values):
            raise LogFormatError(lineno, "values must be an array of numbers")
        frame = rec.get("frame")
        if frame is not None and not isinstance(frame, str):
            raise LogFormatError(lineno, "frame must be a string")
        try:
            m = Measurement(kind, float(t), values, frame)
        except ValueError as exc:
            raise LogFormatError(lineno, str(exc)) from None
        if kind in last and m.t < last[kind]:
            raise LogFormatError(lineno, f"{kind.value} timestamp {m.t} goes backwards (previous {last[kind]})")
        last[kind] = m.t
        out.append(m)
    return out


def read_sensor_log(path) -> list[Measurement]:
    with open(path) as fh:
        return parse_sensor_log(fh)
