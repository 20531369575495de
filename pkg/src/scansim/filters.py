"""State estimation: shared motion/measurement models and EKF, UKF, H-infinity.

All three filters estimate the same 3-state vector [x, y, theta] from
odometry increments and per-cluster ultrasound observations.  Each filter is
implemented as a generic core operating on arrays and model callables, plus a
pose-level wrapper that handles the domain types.  The generic cores are the
single code path for both the robot problem and the linear cross-validation
fixtures in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import FilterError
from .scenario import Mode, Pose, UlpsDescriptor, wrap_angles

if TYPE_CHECKING:  # pragma: no cover - type hints only, avoids an import cycle
    from .simulator import OdometryIncrement, UsObservation

STATE_DIM = 3
THETA_INDEX = 2

#: Smallest measurement noise the filters will model.  A zero-noise scenario
#: would otherwise produce a singular innovation covariance.
SIGMA_US_FLOOR = 1e-6


# ---------------------------------------------------------------------------
# Noise models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProcessNoise:
    """Diagonal per-epoch process noise (x, y in meters, theta in radians)."""

    sigma_x: float = 0.01
    sigma_y: float = 0.01
    sigma_theta: float = 0.01

    def matrix(self) -> np.ndarray:
        return np.diag(
            [self.sigma_x**2, self.sigma_y**2, self.sigma_theta**2]
        )


@dataclass(frozen=True)
class MeasurementNoise:
    """Ultrasound measurement covariance for one cluster.

    Spherical observations are independent: R = sigma^2 * I.  Hyperbolic
    observations are differences against a shared reference beacon, so every
    pair of them shares the reference's noise: sigma^2 on the diagonal and
    0.5 * sigma^2 off it.  That matrix is positive definite for any dimension.
    """

    mode: Mode
    sigma_us: float
    dimension: int

    def __post_init__(self):
        if not self.sigma_us > 0:
            raise FilterError("measurement noise sigma must be > 0")
        if self.dimension < 1:
            raise FilterError("measurement dimension must be >= 1")

    @classmethod
    def for_cluster(cls, mode: Mode, sigma_us: float, beacon_count: int) -> "MeasurementNoise":
        """Noise model matching the simulator for a per-distance std ``sigma_us``.

        Hyperbolic observations are differences of two distance measurements,
        so one difference carries sqrt(2) times the per-distance noise.
        """
        mode = Mode(mode)
        if mode is Mode.SPHERICAL:
            dim, sigma = beacon_count, float(sigma_us)
        else:
            dim, sigma = beacon_count - 1, math.sqrt(2.0) * float(sigma_us)
        return cls(mode, max(sigma, SIGMA_US_FLOOR), dim)

    def matrix(self) -> np.ndarray:
        var = self.sigma_us**2
        if Mode(self.mode) is Mode.SPHERICAL:
            return var * np.eye(self.dimension)
        return 0.5 * var * (np.eye(self.dimension) + np.ones((self.dimension, self.dimension)))


@dataclass(frozen=True)
class UkfParams:
    """Sigma-point spread parameters; lambda = alpha^2 (L + kappa) - L."""

    alpha: float = 0.001
    beta: float = 2.0
    kappa: float = 0.0

    def lam(self, state_dim: int = STATE_DIM) -> float:
        if not 0 < self.alpha <= 1:
            raise FilterError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0 <= self.kappa <= max(0.0, 3.0 - state_dim) + 1e-12:
            raise FilterError(
                f"kappa must be in [0, 3 - L] = [0, {3 - state_dim}], got {self.kappa}"
            )
        return self.alpha**2 * (state_dim + self.kappa) - state_dim


@dataclass(frozen=True)
class HinfParams:
    """Attenuation level for the minimax filter; larger is more aggressive."""

    gamma: float = 0.2

    def __post_init__(self):
        if not self.gamma > 0:
            raise FilterError("gamma must be > 0")


@dataclass
class FilterState:
    """State estimate and covariance for one reference frame."""

    pose: Pose
    P: np.ndarray

    def __post_init__(self):
        self.P = np.array(self.P, dtype=float).reshape(STATE_DIM, STATE_DIM)

    @property
    def frame(self) -> str:
        return self.pose.frame


# ---------------------------------------------------------------------------
# Motion and measurement models
# ---------------------------------------------------------------------------

def process_model(x: Pose, odo: OdometryIncrement) -> Pose:
    """Propagate a pose by one odometry increment.

    The heading increment is applied before the translation:

        theta' = theta + dtheta
        x'     = x + dd * cos(theta')
        y'     = y + dd * sin(theta')
    """
    theta = x.theta + odo.delta_theta
    return Pose(
        x.x + odo.delta_d * math.cos(theta),
        x.y + odo.delta_d * math.sin(theta),
        theta,
        frame=x.frame,
    )


def process_model_array(state: np.ndarray, odo: OdometryIncrement) -> np.ndarray:
    """Array form of ``process_model`` for (3,) or (m, 3) inputs."""
    state = np.asarray(state, dtype=float)
    theta = state[..., 2] + odo.delta_theta
    out = np.empty_like(state)
    out[..., 0] = state[..., 0] + odo.delta_d * np.cos(theta)
    out[..., 1] = state[..., 1] + odo.delta_d * np.sin(theta)
    out[..., 2] = wrap_angles(theta)
    return out


def process_jacobian(x: Pose, odo: OdometryIncrement) -> np.ndarray:
    """Derivative of the propagated state w.r.t. the previous state."""
    theta = x.theta + odo.delta_theta
    return np.array(
        [
            [1.0, 0.0, -odo.delta_d * math.sin(theta)],
            [0.0, 1.0, odo.delta_d * math.cos(theta)],
            [0.0, 0.0, 1.0],
        ]
    )


def predict_ranges(xy, beacons: np.ndarray, z_mr: float, mode: Mode) -> np.ndarray:
    """Predicted observations at floor position ``xy`` for one cluster.

    Spherical: 3D emitter-receiver distance per beacon.  Hyperbolic: those
    distances minus the distance to beacon 1, for beacons 2..I.  Works on a
    single position (2,) or a batch (m, 2).
    """
    xy = np.asarray(xy, dtype=float)
    delta = xy[..., None, :] - beacons[:, :2]
    dz = z_mr - beacons[:, 2]
    dists = np.sqrt(np.sum(delta**2, axis=-1) + dz**2)
    if Mode(mode) is Mode.SPHERICAL:
        return dists
    return dists[..., 1:] - dists[..., :1]


def measurement_model(x: Pose, u: UlpsDescriptor, z_mr: float, mode: Mode) -> np.ndarray:
    """Predicted observation vector for a pose, using the descriptor's beacons.

    The beacons must be expressed in the same frame as the pose; ranges do
    not depend on the heading.
    """
    return predict_ranges(x.xy, u.beacon_array(), z_mr, mode)


def measurement_jacobian(
    x: Pose, u: UlpsDescriptor, z_mr: float, mode: Mode
) -> np.ndarray:
    """Analytic partials of the observation vector w.r.t. (x, y, theta).

    The theta column is identically zero.  Raises if the pose sits at zero
    3D distance from a beacon (cannot happen for ceiling-mounted beacons and
    a receiver below them).
    """
    beacons = u.beacon_array()
    delta = x.xy[None, :] - beacons[:, :2]
    dz = z_mr - beacons[:, 2]
    dists = np.sqrt(np.sum(delta**2, axis=1) + dz**2)
    if np.any(dists <= 0.0):
        raise FilterError("zero emitter-receiver distance: Jacobian undefined")
    rows = np.zeros((len(beacons), STATE_DIM))
    rows[:, 0] = delta[:, 0] / dists
    rows[:, 1] = delta[:, 1] / dists
    if Mode(mode) is Mode.SPHERICAL:
        return rows
    return rows[1:] - rows[:1]


# ---------------------------------------------------------------------------
# Generic filter cores
# ---------------------------------------------------------------------------

def _symmetrize(P: np.ndarray) -> np.ndarray:
    return (P + P.T) / 2.0


def _wrap_component(x: np.ndarray, angle_idx) -> np.ndarray:
    if angle_idx is not None:
        x = x.copy()
        x[..., angle_idx] = wrap_angles(x[..., angle_idx])
    return x


def ekf_step_core(x, P, f, F, z, h, H, Q, R, angle_idx=None):
    """One extended-Kalman step; ``z`` may be None for prediction only."""
    x = np.asarray(x, dtype=float)
    x_prior = _wrap_component(np.asarray(f(x), dtype=float), angle_idx)
    P_prior = _symmetrize(F @ P @ F.T + Q)
    if z is None:
        return x_prior, P_prior
    jac = np.asarray(H(x_prior), dtype=float)
    innovation = np.asarray(z, dtype=float) - np.asarray(h(x_prior), dtype=float)
    S = jac @ P_prior @ jac.T + R
    try:
        gain = np.linalg.solve(S, jac @ P_prior).T
    except np.linalg.LinAlgError as exc:
        raise FilterError(f"innovation covariance not invertible: {exc}") from exc
    x_post = _wrap_component(x_prior + gain @ innovation, angle_idx)
    P_post = _symmetrize((np.eye(len(x)) - gain @ jac) @ P_prior)
    return x_post, P_post


def ukf_weights(params: UkfParams, state_dim: int = STATE_DIM):
    """Mean and covariance weights for the 2L+1 sigma points."""
    lam = params.lam(state_dim)
    denom = state_dim + lam
    w_mean = np.full(2 * state_dim + 1, 1.0 / (2.0 * denom))
    w_cov = w_mean.copy()
    w_mean[0] = lam / denom
    w_cov[0] = lam / denom + 1.0 - params.alpha**2 + params.beta
    return w_mean, w_cov, lam


def sigma_points(x: np.ndarray, P: np.ndarray, lam: float) -> np.ndarray:
    """Sigma points x, x +- columns of chol((L + lambda) P), as rows.

    A failed Cholesky factorization is retried once with 1e-12 jitter on the
    diagonal before giving up.
    """
    x = np.asarray(x, dtype=float)
    L = len(x)
    scaled = (L + lam) * np.asarray(P, dtype=float)
    try:
        root = np.linalg.cholesky(scaled)
    except np.linalg.LinAlgError:
        try:
            root = np.linalg.cholesky(scaled + 1e-12 * np.eye(L))
        except np.linalg.LinAlgError as exc:
            raise FilterError(
                f"covariance is not positive definite (Cholesky failed): {exc}"
            ) from exc
    pts = np.empty((2 * L + 1, L))
    pts[0] = x
    pts[1 : L + 1] = x + root.T
    pts[L + 1 :] = x - root.T
    return pts


def _ut_mean(points: np.ndarray, w_mean: np.ndarray, angle_idx) -> np.ndarray:
    """Weighted sigma-point mean; angle components via weighted sin/cos sums."""
    mean = w_mean @ points
    if angle_idx is not None:
        angles = points[:, angle_idx]
        mean[angle_idx] = math.atan2(
            float(w_mean @ np.sin(angles)), float(w_mean @ np.cos(angles))
        )
    return mean


def _ut_residuals(points: np.ndarray, mean: np.ndarray, angle_idx) -> np.ndarray:
    res = points - mean
    if angle_idx is not None:
        res[:, angle_idx] = wrap_angles(res[:, angle_idx])
    return res


def ukf_step_core(x, P, f_points, z, h_points, Q, R, params: UkfParams, angle_idx=None):
    """One unscented step with additive noise.

    ``f_points`` and ``h_points`` map an (m, n) array of sigma points to
    their propagated states / predicted observations.  Q is added to the
    prior covariance after the unscented prediction; the update then redraws
    sigma points from the Q-inflated prior (the standard additive-noise
    form — it is what makes the filter reduce exactly to a Kalman filter on
    linear models) and R is added to the innovation covariance.  ``z`` may be
    None for prediction only.
    """
    x = np.asarray(x, dtype=float)
    w_mean, w_cov, lam = ukf_weights(params, len(x))
    points = sigma_points(x, P, lam)
    propagated = np.asarray(f_points(points), dtype=float)
    x_prior = _ut_mean(propagated, w_mean, angle_idx)
    res_x = _ut_residuals(propagated, x_prior, angle_idx)
    P_prior = _symmetrize((res_x * w_cov[:, None]).T @ res_x + Q)
    x_prior = _wrap_component(x_prior, angle_idx)
    if z is None:
        return x_prior, P_prior

    update_points = sigma_points(x_prior, P_prior, lam)
    res_x = _ut_residuals(update_points, x_prior, angle_idx)
    predicted = np.asarray(h_points(update_points), dtype=float)
    z_hat = w_mean @ predicted
    res_z = predicted - z_hat
    P_zz = (res_z * w_cov[:, None]).T @ res_z + R
    P_xz = (res_x * w_cov[:, None]).T @ res_z
    try:
        gain = np.linalg.solve(P_zz.T, P_xz.T).T
    except np.linalg.LinAlgError as exc:
        raise FilterError(f"innovation covariance not invertible: {exc}") from exc
    x_post = _wrap_component(x_prior + gain @ (np.asarray(z, dtype=float) - z_hat), angle_idx)
    P_post = _symmetrize(P_prior - gain @ P_zz @ gain.T)
    return x_post, P_post


def hinf_step_core(x, P, f, A, z, h, H, Q, R, gamma: float, angle_idx=None):
    """One H-infinity step in information form.

    With M = P^-1 - gamma*I + H^T R^-1 H (whose positive definiteness is the
    filter's existence condition), the gain is K = A M^-1 H^T R^-1 and the
    updated covariance is A M^-1 A^T + Q.  Without an observation the step
    degrades to covariance propagation A P A^T + Q.
    """
    x = np.asarray(x, dtype=float)
    x_prior = _wrap_component(np.asarray(f(x), dtype=float), angle_idx)
    if z is None:
        return x_prior, _symmetrize(A @ P @ A.T + Q)
    jac = np.asarray(H(x_prior), dtype=float)
    R_inv = np.linalg.inv(R)
    try:
        P_inv = np.linalg.inv(P)
    except np.linalg.LinAlgError as exc:
        raise FilterError(f"state covariance not invertible: {exc}") from exc
    M = P_inv - gamma * np.eye(len(x)) + jac.T @ R_inv @ jac
    try:
        np.linalg.cholesky(_symmetrize(M))
    except np.linalg.LinAlgError as exc:
        raise FilterError(
            f"gamma={gamma} too aggressive: existence condition violated"
        ) from exc
    M_inv = np.linalg.inv(M)
    gain = A @ M_inv @ jac.T @ R_inv
    innovation = np.asarray(z, dtype=float) - np.asarray(h(x_prior), dtype=float)
    x_post = _wrap_component(x_prior + gain @ innovation, angle_idx)
    P_post = _symmetrize(A @ M_inv @ A.T + Q)
    return x_post, P_post


# ---------------------------------------------------------------------------
# Pose-level filter steps
# ---------------------------------------------------------------------------

def _obs_vector(obs: UsObservation | None, noise: MeasurementNoise | None):
    if obs is None:
        return None
    if noise is None:
        raise FilterError("measurement noise required when an observation is present")
    z = np.asarray(obs.values, dtype=float)
    if len(z) != noise.dimension:
        raise FilterError(
            f"observation dimension {len(z)} != noise dimension {noise.dimension}"
        )
    return z


def ekf_step(
    state: FilterState,
    odo: OdometryIncrement,
    obs: UsObservation | None,
    u: UlpsDescriptor | None,
    z_mr: float,
    mode: Mode,
    process_noise: ProcessNoise,
    meas_noise: MeasurementNoise | None = None,
) -> FilterState:
    """Extended Kalman filter step; prediction only when ``obs`` is None."""
    z = _obs_vector(obs, meas_noise)
    beacons = u.beacon_array() if u is not None else None
    x, P = ekf_step_core(
        state.pose.as_array(),
        state.P,
        f=lambda s: process_model_array(s, odo),
        F=process_jacobian(state.pose, odo),
        z=z,
        h=lambda s: predict_ranges(s[:2], beacons, z_mr, mode),
        H=lambda s: measurement_jacobian(
            Pose(s[0], s[1], s[2], frame=state.frame), u, z_mr, mode
        ),
        Q=process_noise.matrix(),
        R=meas_noise.matrix() if z is not None else None,
        angle_idx=THETA_INDEX,
    )
    return FilterState(Pose(x[0], x[1], x[2], frame=state.frame), P)


def ukf_step(
    state: FilterState,
    odo: OdometryIncrement,
    obs: UsObservation | None,
    u: UlpsDescriptor | None,
    z_mr: float,
    mode: Mode,
    process_noise: ProcessNoise,
    meas_noise: MeasurementNoise | None = None,
    params: UkfParams = UkfParams(),
) -> FilterState:
    """Unscented Kalman filter step; prediction only when ``obs`` is None."""
    z = _obs_vector(obs, meas_noise)
    beacons = u.beacon_array() if u is not None else None
    x, P = ukf_step_core(
        state.pose.as_array(),
        state.P,
        f_points=lambda pts: process_model_array(pts, odo),
        z=z,
        h_points=lambda pts: predict_ranges(pts[:, :2], beacons, z_mr, mode),
        Q=process_noise.matrix(),
        R=meas_noise.matrix() if z is not None else None,
        params=params,
        angle_idx=THETA_INDEX,
    )
    return FilterState(Pose(x[0], x[1], x[2], frame=state.frame), P)


def hinf_step(
    state: FilterState,
    odo: OdometryIncrement,
    obs: UsObservation | None,
    u: UlpsDescriptor | None,
    z_mr: float,
    mode: Mode,
    process_noise: ProcessNoise,
    meas_noise: MeasurementNoise | None = None,
    params: HinfParams = HinfParams(),
) -> FilterState:
    """H-infinity filter step; prediction only when ``obs`` is None."""
    z = _obs_vector(obs, meas_noise)
    beacons = u.beacon_array() if u is not None else None
    x, P = hinf_step_core(
        state.pose.as_array(),
        state.P,
        f=lambda s: process_model_array(s, odo),
        A=process_jacobian(state.pose, odo),
        z=z,
        h=lambda s: predict_ranges(s[:2], beacons, z_mr, mode),
        H=lambda s: measurement_jacobian(
            Pose(s[0], s[1], s[2], frame=state.frame), u, z_mr, mode
        ),
        Q=process_noise.matrix(),
        R=meas_noise.matrix() if z is not None else None,
        gamma=params.gamma,
        angle_idx=THETA_INDEX,
    )
    return FilterState(Pose(x[0], x[1], x[2], frame=state.frame), P)


FILTER_STEPS = {"ekf": ekf_step, "ukf": ukf_step, "hinf": hinf_step}
