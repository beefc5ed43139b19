from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusionloc.measurement_models import CANONICAL_ORDER, GnssAntennaOffset, SensorKind, predict_gnss
from fusionloc.sim_harness import (
    Dropout,
    FilterTuning,
    NominalParams,
    Scenario,
    Segment,
    SensorNoise,
    TrueParams,
    coherence_metrics,
    coherence_preset,
    dead_reckoning,
    dropout_preset,
    emulate_streams,
    generate_truth,
    run_scenario,
    straight_line,
    wheel_speeds_from_body,
)
from fusionloc.state_model import ModelConfig, predict_state

IMU, ENC, GNSS, POSE = CANONICAL_ORDER
TRUE = TrueParams(radius_r=0.1, radius_l=0.1, track_width=0.5)


def scenario(segments, duration, **kw):
    kw.setdefault("nominal_params", NominalParams(0.1, 0.1))
    kw.setdefault("true_params", TRUE)
    return Scenario(duration=duration, segments=segments, **kw)


@pytest.mark.parametrize(
    "v, w, expected", [(0.0, 0.0, (0.0, 0.0)), (1.0, 0.0, (10.0, 10.0)), (0.0, 4.0, (10.0, -10.0))]
)
def test_wheel_speeds_from_body(v, w, expected):
    assert wheel_speeds_from_body(v, w, 0.1, 0.1, 0.5) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-3, 3), st.floats(-2, 2), st.floats(0.05, 0.3), st.floats(0.05, 0.3), st.floats(0.2, 1.0))
def test_wheel_speeds_invert_kinematics(v, w, rr, rl, track):
    wr, wl = wheel_speeds_from_body(v, w, rr, rl, track)
    assert (wr * rr + wl * rl) / 2 == pytest.approx(v, abs=1e-12)
    assert (wr * rr - wl * rl) / track == pytest.approx(w, abs=1e-12)


def test_straight_truth():
    truth = generate_truth(scenario((Segment(10.0, 1.0),), 10.0))
    assert truth.pose[-1] == pytest.approx([10.0, 0.0, 0.0], abs=1e-9)


def test_circle_closes():
    # a sample time that divides the revolution makes the Euler polygon close
    n = 3770
    s = scenario((Segment(20 * np.pi, 1.0, 0.1),), 20 * np.pi, filter_rate=n / (20 * np.pi))
    assert s.n_steps == n
    truth = generate_truth(s)
    assert np.hypot(*truth.pose[-1, :2]) < 1e-6
    radius = np.hypot(truth.pose[:, 0], truth.pose[:, 1] - 10.0)
    assert radius == pytest.approx(10.0, abs=0.01)


def test_stationary_truth():
    truth = generate_truth(scenario((Segment(5.0, 0.0),), 5.0))
    assert not truth.pose.any() and not truth.wheel_speeds.any()


def test_truth_is_kinematically_consistent():
    s = coherence_preset()
    s = replace(s, duration=60.0)
    truth = generate_truth(s)
    cfg = s.model_config()
    p = s.true_params
    for k in range(0, s.n_steps, 97):
        x = np.concatenate([truth.pose[k], truth.wheel_speeds[k], [p.radius_r, p.radius_l, 0.0]])
        assert predict_state(x, cfg)[:3] == pytest.approx(truth.pose[k + 1], abs=1e-12)


def test_noiseless_streams_match_truth():
    s = scenario((Segment(10.0, 0.5, 0.1),), 10.0, antenna=GnssAntennaOffset(0.3, 0.2), filter_rate=100.0)
    truth = generate_truth(s)
    streams = emulate_streams(truth, s)
    for m in streams[ENC]:
        k = int(round(m.t * 100))
        assert np.array_equal(m.values, truth.wheel_speeds[k])
    for m in streams[POSE]:
        assert np.array_equal(m.values, truth.pose[int(round(m.t * 100))])
    for m in streams[GNSS]:
        k = int(round(m.t * 100))
        x = np.concatenate([truth.pose[k], [0, 0, 0.1, 0.1, 0]])
        assert m.values == pytest.approx(predict_gnss(x, s.antenna), abs=1e-12)
    for m in streams[IMU]:
        assert m.values[0] == pytest.approx(0.1, abs=1e-12)


def test_dropout_removes_samples():
    s = dropout_preset()
    streams = emulate_streams(generate_truth(s), s)
    for kind in (GNSS, POSE):
        ts = np.array([m.t for m in streams[kind]])
        assert not np.any((ts >= 220) & (ts <= 350))
        assert ts.max() < 220
    assert max(m.t for m in streams[ENC]) == pytest.approx(350.0)


def test_dropout_does_not_change_other_noise():
    s = dropout_preset(seed=4)
    full = emulate_streams(generate_truth(s), replace(s, dropouts=()))
    cut = emulate_streams(generate_truth(s), s)
    assert all(np.array_equal(a.values, b.values) for a, b in zip(full[GNSS], cut[GNSS]))
    assert all(np.array_equal(a.values, b.values) for a, b in zip(full[ENC], cut[ENC]))


def test_encoder_sample_count():
    s = scenario((Segment(10.0, 1.0),), 10.0)
    n = len(emulate_streams(generate_truth(s), s)[ENC])
    assert abs(n - 1000) <= 1


def _noiseless_curvy(duration=30.0):
    segs = (Segment(6.0, 0.6), Segment(8.0, 0.5, 0.2), Segment(8.0, 0.7, -0.15), Segment(8.0, 0.4))
    return scenario(segs, duration, true_params=replace(TRUE, bias=0.01), nominal_params=NominalParams(0.1, 0.1, 0.01), antenna=GnssAntennaOffset(0.3, 0.0))


def test_noiseless_run_converges_to_truth():
    result = run_scenario(_noiseless_curvy())
    m = result.metrics
    assert m.pos_err[m.t >= 5.0].max() < 1e-3
    assert m.final_pos_err < 1e-3


def test_one_percent_radius_error_gives_metre_scale_drift():
    s = dead_reckoning(straight_line(100.0), radius_r=0.101, radius_l=0.101)
    err = run_scenario(s, estimate_uncertainties=False).metrics.final_pos_err
    assert 0.5 < err < 2.0


def test_estimation_reduces_dropout_error():
    s = dropout_preset(seed=0)
    on = run_scenario(s, True).metrics.final_pos_err
    off = run_scenario(s, False).metrics.final_pos_err
    assert on < off


def _sweep(param, offsets, duration=30.0):
    base = straight_line(duration)
    nominal = {"radius_r": 0.1, "radius_l": 0.1, "bias": 0.0}
    out = []
    for d in offsets:
        s = dead_reckoning(base, **{param: nominal[param] + d})
        out.append(run_scenario(s, estimate_uncertainties=False).metrics.final_pos_err)
    return np.array(out)


@pytest.mark.parametrize("param, grid", [("radius_r", 1e-3), ("radius_l", 1e-3), ("bias", 5e-3)])
def test_sensitivity_is_monotone(param, grid):
    for sign in (1, -1):
        errs = _sweep(param, sign * grid * np.arange(5))
        assert errs[0] < 1e-9
        assert np.all(np.diff(errs) >= 0)


def test_stationary_coherence_is_zero():
    s = scenario((Segment(20.0, 0.0),), 20.0)
    dd, dyaw = coherence_metrics(run_scenario(s))
    assert not dd.any() and not dyaw.any()


def test_divergence_grows_without_estimation():
    s = replace(coherence_preset(), duration=200.0)
    result = run_scenario(s, estimate_uncertainties=False)
    dd, dyaw = coherence_metrics(result)
    t = result.metrics.t
    # sample once per 50 s lap of the route so turn-dependent wobble cancels
    idx = [np.searchsorted(t, c) for c in range(50, 201, 50)]
    assert np.all(np.diff(np.abs(dd[idx])) > 0)
    assert np.all(np.diff(np.abs(dyaw[idx])) > 0)


def test_metrics_invariants():
    result = run_scenario(replace(dropout_preset(), duration=40.0, dropouts=()))
    m = result.metrics
    assert np.all(m.pos_err >= 0) and np.all(m.yaw_err >= 0) and np.all(m.yaw_err <= np.pi)
    assert np.all(np.diff(m.s_pose) >= 0)


def test_runs_are_deterministic():
    s = replace(dropout_preset(seed=11), duration=20.0, dropouts=())
    a, b = run_scenario(s).metrics, run_scenario(s).metrics
    for name in ("pos_err", "yaw_err", "s_pose", "s_vel", "cum_yaw_vel"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    c = run_scenario(replace(s, seed=12)).metrics
    assert not np.array_equal(a.pos_err, c.pos_err)


def test_preset_matches_description():
    s = dropout_preset()
    truth = generate_truth(s)
    t = truth.t
    seg = np.diff(truth.pose[:, :2], axis=0)
    travelled = np.hypot(seg[:, 0], seg[:, 1])[t[:-1] >= 220].sum()
    assert 60 < travelled < 80
    assert s.nominal_params.radius_r / s.true_params.radius_r == pytest.approx(1.015)
    assert s.nominal_params.radius_l / s.true_params.radius_l == pytest.approx(0.99)
    assert s.true_params.bias == 0.01


@pytest.mark.parametrize(
    "kw",
    [
        {"duration": 0.0},
        {"filter_rate": -1.0},
        {"dropouts": (Dropout(GNSS, 5.0, 50.0),)},
        {"nominal_params": NominalParams(0.0, 0.1)},
        {"true_params": TrueParams(0.1, 0.1, 0.0)},
    ],
)
def test_invalid_scenario_rejected(kw):
    base = {"duration": 10.0, "segments": (Segment(10.0, 1.0),), "true_params": TRUE, "nominal_params": NominalParams(0.1, 0.1)}
    base.update(kw)
    with pytest.raises(ValueError):
        Scenario(**base)


@pytest.mark.parametrize("kw", [{"q_diag": (1e-6,) * 7}, {"r_pose": (1.0, -1.0, 1.0)}, {"staleness_factor": 0.9}])
def test_invalid_tuning_rejected(kw):
    with pytest.raises(ValueError):
        FilterTuning(**kw)


def test_negative_noise_rejected():
    with pytest.raises(ValueError):
        SensorNoise(gnss=-0.1)
