"""Planar rigid alignment between absolute-pose reference frames."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fusionloc.state_model import wrap_angle


class AlignmentError(ValueError):
    """Paths cannot be associated or aligned."""


@dataclass(frozen=True)
class RigidTransform2D:
    """Rotation by ``theta`` followed by translation ``(tx, ty)``."""

    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", float(wrap_angle(float(self.theta))))

    @property
    def is_identity(self) -> bool:
        return self.theta == 0.0 and self.tx == 0.0 and self.ty == 0.0

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def inverse(self) -> "RigidTransform2D":
        c, s = math.cos(self.theta), math.sin(self.theta)
        # -R^T t
        return RigidTransform2D(-self.theta, -(c * self.tx + s * self.ty), s * self.tx - c * self.ty)


def apply_transform(tf: RigidTransform2D, p) -> np.ndarray:
    """Map points ``(..., 2)`` or poses ``(..., 3)`` through ``tf``.

    Pose headings are rotated by ``theta`` and re-wrapped; the identity
    returns an unchanged copy.
    """
    p = np.asarray(p, dtype=float)
    if p.shape[-1] not in (2, 3):
        raise ValueError(f"expected points (...,2) or poses (...,3), got shape {p.shape}")
    out = p.copy()
    if tf.is_identity:
        return out
    c, s = math.cos(tf.theta), math.sin(tf.theta)
    x, y = p[..., 0], p[..., 1]
    out[..., 0] = c * x - s * y + tf.tx
    out[..., 1] = s * x + c * y + tf.ty
    if p.shape[-1] == 3:
        out[..., 2] = wrap_angle(p[..., 2] + tf.theta)
    return out


@dataclass(frozen=True)
class TimedPath:
    t: np.ndarray
    xy: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        if len(t) != len(xy):
            raise ValueError("timestamps and positions differ in length")
        if len(t) < 2:
            raise ValueError("a path needs at least 2 samples")
        if np.any(np.diff(t) <= 0):
            raise ValueError("path timestamps must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "xy", xy)

    def shifted(self, dt: float) -> "TimedPath":
        return TimedPath(self.t + dt, self.xy)


def associate(
    a: TimedPath,
    b: TimedPath,
    window: tuple[float, float] | None = None,
    min_pairs: int = 2,
) -> tuple[np.ndarray, np.ndarray]:
    """Pair every sample of ``a`` in the common time span with ``b``
    linearly interpolated at the same instant.

    Returns ``(points_a, points_b)``, both ``(N, 2)``.
    """
    lo = max(a.t[0], b.t[0])
    hi = min(a.t[-1], b.t[-1])
    if window is not None:
        lo, hi = max(lo, window[0]), min(hi, window[1])
    if lo > hi:
        raise AlignmentError("no temporal overlap between the paths")
    sel = (a.t >= lo) & (a.t <= hi)
    if sel.sum() < min_pairs:
        raise AlignmentError(f"only {int(sel.sum())} paired samples in the overlap, need {min_pairs}")
    ts = a.t[sel]
    pb = np.column_stack([np.interp(ts, b.t, b.xy[:, 0]), np.interp(ts, b.t, b.xy[:, 1])])
    return a.xy[sel].copy(), pb


def horn_align(points_a, points_b) -> RigidTransform2D:
    """Least-squares rigid transform taking ``points_b`` onto ``points_a``.

    Closed form: subtract centroids, the rotation angle follows from the
    summed cross and dot products of the centred pairs, and the translation
    maps the rotated b-centroid onto the a-centroid.
    """
    pa = np.asarray(points_a, dtype=float).reshape(-1, 2)
    pb = np.asarray(points_b, dtype=float).reshape(-1, 2)
    if len(pa) != len(pb):
        raise AlignmentError("point sets differ in size")
    if len(pa) < 2:
        raise AlignmentError("alignment needs at least 2 point pairs")
    ca, cb = pa.mean(axis=0), pb.mean(axis=0)
    qa, qb = pa - ca, pb - cb
    tol = 1e-12 * max(1.0, np.abs(pa).max(), np.abs(pb).max())
    if np.abs(qa).max() <= tol or np.abs(qb).max() <= tol:
        raise AlignmentError("points are coincident; rotation is undefined")
    cross = np.sum(qb[:, 0] * qa[:, 1] - qb[:, 1] * qa[:, 0])
    dot = np.sum(qb[:, 0] * qa[:, 0] + qb[:, 1] * qa[:, 1])
    theta = math.atan2(cross, dot)
    c, s = math.cos(theta), math.sin(theta)
    tx = ca[0] - (c * cb[0] - s * cb[1])
    ty = ca[1] - (s * cb[0] + c * cb[1])
    return RigidTransform2D(theta, float(tx), float(ty))


def alignment_mse(tf: RigidTransform2D, points_a, points_b) -> float:
    """Mean squared point distance after mapping ``points_b`` through ``tf``."""
    d = np.asarray(points_a, dtype=float) - apply_transform(tf, points_b)
    return float(np.mean(np.sum(d * d, axis=1)))
