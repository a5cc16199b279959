"""Constant-velocity Kalman filter over ``(cx, cy, aspect, height)``.

State is ``(cx, cy, a, h, vcx, vcy, va, vh)`` with ``a = w / h``. Noise
standard deviations scale with the current height: positions use
``STD_WEIGHT_POSITION * h`` and velocities ``STD_WEIGHT_VELOCITY * h``;
the aspect ratio gets small fixed values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box

STD_WEIGHT_POSITION = 1.0 / 20
STD_WEIGHT_VELOCITY = 1.0 / 160

_NDIM = 4
_F = np.eye(2 * _NDIM)
_F[:_NDIM, _NDIM:] = np.eye(_NDIM)
_H = np.eye(_NDIM, 2 * _NDIM)


@dataclass(frozen=True, eq=False)
class KalmanState:
    mean: np.ndarray
    covariance: np.ndarray

    def copy(self) -> KalmanState:
        return KalmanState(self.mean.copy(), self.covariance.copy())


def box_to_measurement(b: Box) -> np.ndarray:
    if b.width <= 0 or b.height <= 0:
        raise ValueError(f"degenerate box {b.as_xyxy()}")
    cx, cy = b.center
    return np.array([cx, cy, b.width / b.height, b.height])


def state_to_box(s: KalmanState | np.ndarray, score: float = 1.0, class_id: int = 0) -> Box:
    mean = s.mean if isinstance(s, KalmanState) else np.asarray(s)
    cx, cy, a, h = (float(v) for v in mean[:4])
    if a <= 0 or h <= 0:
        raise ValueError(f"non-positive aspect {a} or height {h}")
    w = a * h
    return Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, score, class_id)


def kf_init(b: Box) -> KalmanState:
    z = box_to_measurement(b)
    h = z[3]
    mean = np.concatenate([z, np.zeros(_NDIM)])
    std = np.array(
        [
            2 * STD_WEIGHT_POSITION * h,
            2 * STD_WEIGHT_POSITION * h,
            1e-2,
            2 * STD_WEIGHT_POSITION * h,
            10 * STD_WEIGHT_VELOCITY * h,
            10 * STD_WEIGHT_VELOCITY * h,
            1e-5,
            10 * STD_WEIGHT_VELOCITY * h,
        ]
    )
    return KalmanState(mean, np.diag(std**2))


def process_noise(h: float) -> np.ndarray:
    std = np.array(
        [
            STD_WEIGHT_POSITION * h,
            STD_WEIGHT_POSITION * h,
            1e-2,
            STD_WEIGHT_POSITION * h,
            STD_WEIGHT_VELOCITY * h,
            STD_WEIGHT_VELOCITY * h,
            1e-5,
            STD_WEIGHT_VELOCITY * h,
        ]
    )
    return np.diag(std**2)


def measurement_noise(h: float, scale: float = 1.0) -> np.ndarray:
    std = scale * np.array([STD_WEIGHT_POSITION * h, STD_WEIGHT_POSITION * h, 1e-1, STD_WEIGHT_POSITION * h])
    return np.diag(std**2)


def kf_predict(s: KalmanState) -> KalmanState:
    mean = _F @ s.mean
    cov = _F @ s.covariance @ _F.T + process_noise(s.mean[3])
    return KalmanState(mean, 0.5 * (cov + cov.T))


def kf_update(s: KalmanState, observation: Box, noise_scale: float = 1.0) -> KalmanState:
    """Kalman correction; ``noise_scale`` multiplies the measurement std (0 < scale)."""
    z = box_to_measurement(observation)
    projected_mean = _H @ s.mean
    innovation_cov = _H @ s.covariance @ _H.T + measurement_noise(s.mean[3], noise_scale)
    try:
        chol = np.linalg.cholesky(innovation_cov)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("innovation covariance is numerically singular") from exc
    # K = P H^T S^-1, solved via the Cholesky factor of S
    pht = s.covariance @ _H.T
    gain = np.linalg.solve(chol.T, np.linalg.solve(chol, pht.T)).T
    mean = s.mean + gain @ (z - projected_mean)
    # Joseph form keeps the covariance symmetric PSD
    ikh = np.eye(2 * _NDIM) - gain @ _H
    cov = ikh @ s.covariance @ ikh.T + gain @ measurement_noise(s.mean[3], noise_scale) @ gain.T
    return KalmanState(mean, 0.5 * (cov + cov.T))
