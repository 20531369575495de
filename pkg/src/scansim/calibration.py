"""Local-to-global transform estimation and beacon calibration.

A locally referenced cluster is calibrated by estimating the 4-component
similarity transform (rotation/scale pair t1, t2 plus translation t3, t4)
that maps its local frame onto the map frame:

    x' = x*t1 - y*t2 + t3
    y' = y*t1 + x*t2 + t4

The transform is solved from corresponding points of the robot's local and
global trajectories collected while both estimates are valid, either
analytically from point pairs or numerically by minimizing the mean
point-to-point distance after transformation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .errors import CalibrationError
from .scenario import Beacon, UlpsDescriptor, UlpsKind


@dataclass(frozen=True)
class TransformVector:
    """Local-to-global similarity transform (t1, t2 rotation/scale; t3, t4 shift)."""

    t1: float
    t2: float
    t3: float
    t4: float

    @property
    def scale(self) -> float:
        """Implied scale factor; 1.0 for a rigid scene (diagnostic only)."""
        return float(np.hypot(self.t1, self.t2))

    def as_array(self) -> np.ndarray:
        return np.array([self.t1, self.t2, self.t3, self.t4])

    @classmethod
    def from_array(cls, values) -> "TransformVector":
        t1, t2, t3, t4 = (float(v) for v in values)
        return cls(t1, t2, t3, t4)

    @classmethod
    def identity(cls) -> "TransformVector":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_rotation(cls, angle: float, tx: float, ty: float) -> "TransformVector":
        return cls(float(np.cos(angle)), float(np.sin(angle)), float(tx), float(ty))


@dataclass
class CorrespondenceLog:
    """Paired (local, global, epoch) trajectory points for one cluster.

    Both members of a pair come from the same epoch; pairs are appended in
    epoch order by the orchestrator.
    """

    cluster_id: str
    local_points: list = field(default_factory=list)
    global_points: list = field(default_factory=list)
    epochs: list = field(default_factory=list)

    def append(self, local_xy, global_xy, epoch: int) -> None:
        self.local_points.append((float(local_xy[0]), float(local_xy[1])))
        self.global_points.append((float(global_xy[0]), float(global_xy[1])))
        self.epochs.append(int(epoch))

    def __len__(self) -> int:
        return len(self.epochs)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.array(self.local_points, dtype=float).reshape(-1, 2),
            np.array(self.global_points, dtype=float).reshape(-1, 2),
        )


def transform_point(p, t: TransformVector) -> np.ndarray:
    """Map a local-frame point (or an (n, 2) array of points) to the map frame."""
    p = np.asarray(p, dtype=float)
    x, y = p[..., 0], p[..., 1]
    return np.stack(
        [x * t.t1 - y * t.t2 + t.t3, y * t.t1 + x * t.t2 + t.t4], axis=-1
    )


def analytical_tc(pair_a, pair_b) -> TransformVector:
    """Solve the transform exactly from two (local, global) point pairs.

    Each pair is ``(local_xy, global_xy)``.  The 4x4 system is singular iff
    the two local points coincide.
    """
    (la, ga), (lb, gb) = pair_a, pair_b
    la = np.asarray(la, dtype=float)
    lb = np.asarray(lb, dtype=float)
    if np.allclose(la, lb, rtol=0.0, atol=1e-12):
        raise CalibrationError("coincident local points: transform is underdetermined")
    t_a = np.array(
        [
            [la[0], -la[1], 1.0, 0.0],
            [la[1], la[0], 0.0, 1.0],
            [lb[0], -lb[1], 1.0, 0.0],
            [lb[1], lb[0], 0.0, 1.0],
        ]
    )
    t_b = np.array([ga[0], ga[1], gb[0], gb[1]], dtype=float)
    try:
        solution = np.linalg.solve(t_a, t_b)
    except np.linalg.LinAlgError as exc:
        raise CalibrationError(f"singular correspondence system: {exc}") from exc
    return TransformVector.from_array(solution)


def accumulate_analytical(log: CorrespondenceLog, d_min: float) -> TransformVector:
    """Averaged analytical transform over the whole correspondence log.

    At each epoch whose local point is at least ``d_min`` away from some
    earlier logged local point, a transform is solved from the newest point
    and the most recent such earlier point; the result is the component-wise
    mean of all per-epoch transforms.
    """
    local_pts, global_pts = log.arrays()
    estimates = []
    for k in range(1, len(local_pts)):
        newest = local_pts[k]
        dists = np.hypot(*(local_pts[:k] - newest).T)
        qualifying = np.nonzero(dists >= d_min)[0]
        if qualifying.size == 0:
            continue
        j = int(qualifying[-1])
        estimates.append(
            analytical_tc(
                (local_pts[j], global_pts[j]), (local_pts[k], global_pts[k])
            ).as_array()
        )
    if not estimates:
        raise CalibrationError(
            f"cluster '{log.cluster_id}': no point pair separated by d_min={d_min}"
        )
    return TransformVector.from_array(np.mean(estimates, axis=0))


def mean_distance_error(t: TransformVector, local_pts, global_pts) -> float:
    """Mean Euclidean distance between transformed local points and global ones."""
    local_pts = np.asarray(local_pts, dtype=float)
    global_pts = np.asarray(global_pts, dtype=float)
    diff = transform_point(local_pts, t) - global_pts
    return float(np.mean(np.hypot(diff[:, 0], diff[:, 1])))


def select_spread_points(
    log: CorrespondenceLog, d_min: float, max_points: int
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy point selection in epoch order with pairwise local separation >= d_min."""
    local_pts, global_pts = log.arrays()
    chosen: list[int] = []
    for k in range(len(local_pts)):
        if len(chosen) >= max_points:
            break
        if all(
            np.hypot(*(local_pts[k] - local_pts[j])) >= d_min for j in chosen
        ):
            chosen.append(k)
    return local_pts[chosen], global_pts[chosen]


def numerical_tc(
    log: CorrespondenceLog,
    d_min: float,
    max_points: int,
    init: TransformVector,
) -> TransformVector:
    """Minimize the mean distance error over the 4 transform components.

    Points are selected greedily in epoch order subject to pairwise local
    separation >= ``d_min``, up to ``max_points``.  The optimizer is a
    derivative-free simplex search started at ``init``; if it fails to
    improve on the initial value, ``init`` is returned with a warning.
    """
    local_sel, global_sel = select_spread_points(log, d_min, max_points)
    if len(local_sel) < 2:
        raise CalibrationError(
            f"cluster '{log.cluster_id}': fewer than 2 points separated by "
            f"d_min={d_min}"
        )

    def objective(params):
        return mean_distance_error(TransformVector.from_array(params), local_sel, global_sel)

    x0 = init.as_array()
    result = optimize.minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options={"maxfev": 500, "fatol": 1e-9, "xatol": 1e-12},
    )
    if objective(result.x) <= objective(x0):
        return TransformVector.from_array(result.x)
    warnings.warn(
        f"cluster '{log.cluster_id}': numerical refinement did not improve on "
        "its initial transform; returning the initial one",
        stacklevel=2,
    )
    return init


def calibrate_beacons(u: UlpsDescriptor, t: TransformVector) -> tuple[Beacon, ...]:
    """Map a locally referenced cluster's beacons into the map frame.

    Heights are kept as-is: the cluster structure fixes them and only the
    floor-plane placement is unknown.
    """
    if u.kind is not UlpsKind.LOCALLY_REFERENCED:
        raise CalibrationError(f"cluster '{u.id}' is already globally referenced")
    mapped = transform_point(np.array([[b.x, b.y] for b in u.beacons]), t)
    return tuple(
        Beacon(float(x), float(y), b.z) for (x, y), b in zip(mapped, u.beacons)
    )


def per_beacon_errors(estimated, truth) -> np.ndarray:
    """Floor-plane distance between each estimated beacon and its true twin."""
    if len(estimated) != len(truth):
        raise ValueError(
            f"beacon count mismatch: {len(estimated)} estimated vs {len(truth)} true"
        )
    est = np.array([[b.x, b.y] for b in estimated])
    tru = np.array([[b.x, b.y] for b in truth])
    diff = est - tru
    return np.hypot(diff[:, 0], diff[:, 1])


def beacon_error(estimated, truth) -> float:
    """Mean floor-plane beacon position error for one cluster."""
    return float(np.mean(per_beacon_errors(estimated, truth)))


def inverse_trajectory_pass(
    frames, forward_result, config, filter_kind, method, **estimator_kwargs
):
    """Re-run the pipeline on the reversed measurement stream and merge.

    The recorded odometry is dead-reckoned, the implied pose sequence is
    differenced in reverse (headings flipped by pi) to produce reversed
    increments with no fresh noise, and the full pipeline runs again from the
    final position.  The calibrations of the last ``inverse_correct_count``
    clusters calibrated in the forward pass are replaced by their reverse-pass
    counterparts, which see those clusters first and therefore with the least
    accumulated drift.  Extra keyword arguments (estimator tuning) are passed
    through to the reverse run so both passes use identical settings.

    Skipped with a warning when the forward pass did not end inside the
    coverage of a globally referenced cluster.
    """
    from .orchestrator import merge_inverse_result, run_scan
    from .simulator import reverse_frames

    count = config.inverse_correct_count
    if count == 0 or not forward_result.calibrations:
        return forward_result

    gr_ids = {u.id for u in config.global_clusters}
    last_obs_ids = {o.ulps_id for o in frames[-1].observations}
    if not (gr_ids & last_obs_ids):
        warnings.warn(
            "inverse trajectory pass skipped: the run did not end inside a "
            "globally referenced cluster's coverage",
            stacklevel=2,
        )
        return forward_result

    reversed_stream = reverse_frames(frames)
    reverse_result = run_scan(
        reversed_stream, config, filter_kind, method, inverse=False,
        **estimator_kwargs,
    )
    return merge_inverse_result(forward_result, reverse_result, count)
