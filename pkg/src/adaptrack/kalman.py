"""Constant-velocity Kalman filter over (cx, cy, aspect, height) boxes.

State layout: [cx, cy, a, h, vcx, vcy, va, vh] where a = w / h. Process
and measurement noise scale with the box height, the usual heuristic for
pedestrian-scale motion. The aspect channel gets small fixed noise since
shape changes slowly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .mot_data import BBox

STD_WEIGHT_POSITION = 1.0 / 20.0
STD_WEIGHT_VELOCITY = 1.0 / 160.0

_F = np.eye(8)
_F[:4, 4:] = np.eye(4)
_H = np.eye(4, 8)


@dataclass
class KalmanState:
    """Gaussian belief: mean (8,) and covariance (8, 8)."""

    mean: np.ndarray
    covariance: np.ndarray

    def bbox(self) -> BBox:
        cx, cy, a, h = self.mean[:4]
        w = a * h
        return BBox(cx - w / 2.0, cy - h / 2.0, w, h)


def _measurement(bbox: BBox) -> np.ndarray:
    return np.array([bbox.cx, bbox.cy, bbox.w / bbox.h, bbox.h], dtype=np.float64)


def _check_finite(state: KalmanState) -> None:
    if not (np.isfinite(state.mean).all() and np.isfinite(state.covariance).all()):
        raise NumericalError("Kalman state is not finite")


def kalman_init(
    bbox: BBox,
    std_weight_position: float = STD_WEIGHT_POSITION,
    std_weight_velocity: float = STD_WEIGHT_VELOCITY,
) -> KalmanState:
    """Start a track belief at the measurement with zero velocity."""
    z = _measurement(bbox)
    mean = np.zeros(8, dtype=np.float64)
    mean[:4] = z
    h = bbox.h
    std = np.array(
        [
            2 * std_weight_position * h,
            2 * std_weight_position * h,
            1e-2,
            2 * std_weight_position * h,
            10 * std_weight_velocity * h,
            10 * std_weight_velocity * h,
            1e-5,
            10 * std_weight_velocity * h,
        ]
    )
    return KalmanState(mean, np.diag(std**2))


def kalman_predict(
    state: KalmanState,
    std_weight_position: float = STD_WEIGHT_POSITION,
    std_weight_velocity: float = STD_WEIGHT_VELOCITY,
) -> KalmanState:
    """Advance the belief one frame under the constant-velocity model."""
    _check_finite(state)
    h = state.mean[3]
    std = np.array(
        [
            std_weight_position * h,
            std_weight_position * h,
            1e-2,
            std_weight_position * h,
            std_weight_velocity * h,
            std_weight_velocity * h,
            1e-5,
            std_weight_velocity * h,
        ]
    )
    q = np.diag(std**2)
    mean = _F @ state.mean
    cov = _F @ state.covariance @ _F.T + q
    cov = (cov + cov.T) / 2.0
    return KalmanState(mean, cov)


def kalman_update(
    state: KalmanState,
    bbox: BBox,
    std_weight_position: float = STD_WEIGHT_POSITION,
) -> KalmanState:
    """Condition the belief on a measured box (Joseph-form update)."""
    _check_finite(state)
    z = _measurement(bbox)
    h = state.mean[3]
    std = np.array(
        [
            std_weight_position * h,
            std_weight_position * h,
            1e-1,
            std_weight_position * h,
        ]
    )
    r = np.diag(std**2)
    projected = _H @ state.covariance @ _H.T + r
    try:
        gain = np.linalg.solve(projected, _H @ state.covariance).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"innovation covariance is singular: {exc}") from None
    innovation = z - _H @ state.mean
    mean = state.mean + gain @ innovation
    ikh = np.eye(8) - gain @ _H
    cov = ikh @ state.covariance @ ikh.T + gain @ r @ gain.T
    cov = (cov + cov.T) / 2.0
    out = KalmanState(mean, cov)
    _check_finite(out)
    return out
