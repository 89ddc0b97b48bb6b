"""Constant-velocity Kalman filter over the translations of a pose stream; rotations pass through."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from filterpy.common import Q_discrete_white_noise
from filterpy.kalman import KalmanFilter

from .geometry import CameraPose

DEFAULT_PROCESS_NOISE = 0.1
RESIDUAL_FRAMES = 10
MIN_VARIANCE = 1e-6


class NonFiniteInputError(ValueError):
    """A pose of the stream holds a non-finite translation or rotation."""


@dataclass
class KalmanState:
    """Filter state after the update of one frame."""
    position: np.ndarray
    velocity: np.ndarray
    covariance: np.ndarray


def residualVariance(translations: np.ndarray, frames: int = RESIDUAL_FRAMES) -> float:
    """Variance of the residuals of a per-axis linear fit over the first frames, floored at MIN_VARIANCE."""
    head = translations[:frames]
    dof = len(head) - 2
    if dof <= 0:
        return MIN_VARIANCE
    design = np.column_stack([np.ones(len(head)), np.arange(len(head), dtype=float)])
    coefficients, _, _, _ = np.linalg.lstsq(design, head, rcond=None)
    residual = head - design @ coefficients
    return max(float(np.sum(residual**2) / (dof * head.shape[1])), MIN_VARIANCE)


def _buildFilter(translations: np.ndarray, dt: float, processNoise: float, measurementNoise: float) -> KalmanFilter:
    count = len(translations)
    kf = KalmanFilter(dim_x=6, dim_z=3)
    kf.F = np.block([[np.eye(3), dt * np.eye(3)], [np.zeros((3, 3)), np.eye(3)]])
    kf.H = np.hstack([np.eye(3), np.zeros((3, 3))])
    kf.R = np.eye(3) * measurementNoise
    kf.Q = Q_discrete_white_noise(dim=2, dt=dt, var=processNoise, block_size=3, order_by_dim=False)
    span = (count - 1) * dt
    velocity = (translations[-1] - translations[0]) / span
    kf.x = np.concatenate([translations[0], velocity]).reshape(6, 1)
    velocityVariance = max(2.0 * measurementNoise / span**2, MIN_VARIANCE)
    kf.P = np.diag([measurementNoise] * 3 + [velocityVariance] * 3)
    return kf


def kalmanStates(stream: Sequence[CameraPose], dt: float, processNoise: float = DEFAULT_PROCESS_NOISE,
                 measurementNoise: Optional[float] = None, smooth: bool = False) -> list[KalmanState]:
    """Run the filter and return the state of every frame.

    The initial velocity is the averaged speed (t_last - t_first) / ((n - 1) dt).

    Args:
        stream (list): poses at uniform time steps, at least 2
        dt (float): time step in seconds
        processNoise (float): white-noise acceleration variance q_p
        measurementNoise (float): position variance r_m in m^2; default the residual variance of the
            first frames around a straight line
        smooth (bool): apply a Rauch-Tung-Striebel backward pass after filtering

    Returns:
        list: KalmanState per frame
    """
    if len(stream) < 2:
        raise ValueError(f'Kalman smoothing needs at least 2 poses, got {len(stream)}')
    if not dt > 0:
        raise ValueError(f'dt must be positive, got {dt}')
    translations = np.array([pose.t for pose in stream])
    quaternions = np.array([pose.q for pose in stream])
    if not (np.all(np.isfinite(translations)) and np.all(np.isfinite(quaternions))):
        raise NonFiniteInputError('Pose stream holds non-finite values')
    if measurementNoise is None:
        measurementNoise = residualVariance(translations)
    if not (processNoise >= 0 and measurementNoise > 0):
        raise ValueError(f'Invalid noise levels q={processNoise}, r={measurementNoise}')
    logging.debug('Kalman filter: dt=%g, q=%g, r=%g', dt, processNoise, measurementNoise)
    kf = _buildFilter(translations, dt, processNoise, measurementNoise)
    means, covariances = [], []
    for index, translation in enumerate(translations):
        if index:
            kf.predict()
        kf.update(translation.reshape(3, 1))
        kf.P = 0.5 * (kf.P + kf.P.T)
        means.append(kf.x.copy())
        covariances.append(kf.P.copy())
    xs, ps = np.array(means), np.array(covariances)
    if smooth:
        xs, ps, _, _ = kf.rts_smoother(xs, ps)
        ps = 0.5 * (ps + np.transpose(ps, (0, 2, 1)))
    return [KalmanState(x[:3, 0].copy(), x[3:, 0].copy(), p) for x, p in zip(xs, ps)]


def kalmanSmooth(stream: Sequence[CameraPose], dt: float, processNoise: float = DEFAULT_PROCESS_NOISE,
                 measurementNoise: Optional[float] = None, smooth: bool = False) -> list[CameraPose]:
    """Filtered pose stream: positions from the filter, rotations unchanged."""
    states = kalmanStates(stream, dt, processNoise, measurementNoise, smooth)
    return [CameraPose(pose.q, state.position) for pose, state in zip(stream, states)]
