import numpy as np
import pytest

from fusionloc.state_model import STATE_DIM, ModelConfig

CFG = ModelConfig(track_width=0.5, sample_time=1 / 60)


def random_states(rng, n, speed=20.0):
    """States with heading up to a few turns and positive radii."""
    x = np.empty((n, STATE_DIM))
    x[:, 0:2] = rng.uniform(-50, 50, (n, 2))
    x[:, 2] = rng.uniform(-10, 10, n)
    x[:, 3:5] = rng.uniform(-speed, speed, (n, 2))
    x[:, 5:7] = rng.uniform(0.05, 0.3, (n, 2))
    x[:, 7] = rng.uniform(-0.1, 0.1, n)
    return x


def central_difference(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(len(x)):
        step = h * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        cols.append((np.atleast_1d(f(xp)) - np.atleast_1d(f(xm))) / (2 * step))
    return np.column_stack(cols)


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric).max() / max(1.0, np.abs(analytic).max())


def grid_oracle_best_mse(pa, pb, step=1e-3):
    """Smallest MSE over a rotation grid, translation re-derived per angle."""
    theta = np.arange(-np.pi, np.pi, step)
    c, s = np.cos(theta)[:, None], np.sin(theta)[:, None]
    ca, cb = pa.mean(axis=0), pb.mean(axis=0)
    qa, qb = pa - ca, pb - cb
    # with the centroid-matching translation the residual is qa - R qb
    dx = qa[:, 0] - (c * qb[:, 0] - s * qb[:, 1])
    dy = qa[:, 1] - (s * qb[:, 0] + c * qb[:, 1])
    return float(np.min(np.mean(dx * dx + dy * dy, axis=1)))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def cfg():
    return CFG


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
