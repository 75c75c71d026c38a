"""Error statistics and Monte-Carlo experiment drivers.

* :func:`subset_sweep` - pose error against the number of markers used,
  over every subset of the visible markers;
* :func:`estimate_variance_table` - measured position variance per
  detection count, the input of the adaptive Kalman filter;
* :func:`compare_variance_models` - tracking a rectangular lap with several
  measurement variance models on one shared detection stream.

Errors are reported in centimeters and degrees. All randomness is derived
from the caller's seed, and work is reduced in a fixed order, so results do
not depend on the number of worker threads.
"""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence, TypeVar

import numpy as np

from .errors import (DegenerateGeometry, InsufficientVisibility, LengthMismatch,
                     NonPositiveDepth, NumericalFailure)
from .geometry import CameraIntrinsics, EulerPose, RigidTransform, rotation_to_euler
from .kalman import (FilterState, Measurement, ProcessModel, VarianceModel, track)
from .pnp import PnPConfig, solve_pnp
from .scene_sim import (DetectionNoiseModel, Scene, TrajectorySample, cap_detections,
                        frame_correspondences, simulate_frame, visible_markers)
from .seeding import derive_rng

M_TO_CM = 100.0
SOLVER_ERRORS = (DegenerateGeometry, NumericalFailure, NonPositiveDepth)

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """``map`` that may use threads but always returns results in input order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def wrap_degrees(a: float | np.ndarray) -> float | np.ndarray:
    """Wrap to (-180, 180]."""
    w = np.mod(np.asarray(a, dtype=float) + 180.0, 360.0) - 180.0
    w = np.where(w == -180.0, 180.0, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class ErrorStats:
    rmse_x: float
    rmse_y: float
    rmse_theta: float
    mean_x: float
    mean_y: float
    mean_theta: float
    n_samples: int
    max_abs_x: float
    max_abs_y: float

    @classmethod
    def from_errors(cls, err_x_cm, err_y_cm, err_theta_deg) -> "ErrorStats":
        ex = np.asarray(err_x_cm, dtype=float)
        ey = np.asarray(err_y_cm, dtype=float)
        et = np.asarray(err_theta_deg, dtype=float)
        if not (len(ex) == len(ey) == len(et)):
            raise LengthMismatch("error arrays differ in length")
        if len(ex) == 0:
            raise ValueError("need at least one sample")

        def rms(a):
            return float(np.sqrt(np.mean(a * a)))

        return cls(rms(ex), rms(ey), rms(et),
                   float(np.mean(ex)), float(np.mean(ey)), float(np.mean(et)),
                   len(ex), float(np.max(np.abs(ex))), float(np.max(np.abs(ey))))

    @property
    def rmse_xy(self) -> float:
        """Planar position RMSE in cm."""
        return math.hypot(self.rmse_x, self.rmse_y)


def pose_error(estimate: EulerPose, truth: EulerPose) -> tuple[float, float, float]:
    """(x cm, y cm, heading deg) error, heading wrapped to (-180, 180]."""
    return ((estimate.x - truth.x) * M_TO_CM,
            (estimate.y - truth.y) * M_TO_CM,
            wrap_degrees(math.degrees(estimate.yaw - truth.yaw)))


def error_stats(estimates: Sequence[EulerPose], truths: Sequence[EulerPose]) -> ErrorStats:
    if len(estimates) != len(truths):
        raise LengthMismatch(f"{len(estimates)} estimates vs {len(truths)} truths")
    if not estimates:
        raise ValueError("need at least one pose pair")
    errs = np.array([pose_error(e, t) for e, t in zip(estimates, truths)])
    return ErrorStats.from_errors(errs[:, 0], errs[:, 1], errs[:, 2])


@dataclass(frozen=True)
class Ellipse:
    center: tuple[float, float]
    semi_axes: tuple[float, float]  # major, minor
    angle: float  # radians, major axis w.r.t. the x axis
    area: float


def confidence_ellipse(err_x, err_y, n_std: float = 1.0) -> Ellipse:
    """Covariance ellipse of 2D errors; semi-axes are n_std * sqrt(eigenvalues)."""
    pts = np.column_stack([np.asarray(err_x, float), np.asarray(err_y, float)])
    cov = np.cov(pts, rowvar=False)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    major, minor = n_std * np.sqrt(evals[::-1])
    v = evecs[:, 1]
    return Ellipse(tuple(pts.mean(axis=0)), (float(major), float(minor)),
                   float(math.atan2(v[1], v[0])), float(math.pi * major * minor))


# -- marker-count sweep -------------------------------------------------------------

@dataclass(frozen=True)
class SweepRecord:
    k: int
    subset_id: int
    trial: int
    marker_ids: tuple[int, ...]
    err_x_cm: float
    err_y_cm: float
    err_theta_deg: float


@dataclass(frozen=True, eq=False)
class SubsetSweepResult:
    stats: dict[int, ErrorStats]
    subset_counts: dict[int, int]
    records: list[SweepRecord]
    failures: dict[int, int] = field(default_factory=dict)
    visible_ids: tuple[int, ...] = ()


def sweep_trial_rng(rng_seed: int, trial: int) -> np.random.Generator:
    """Noise stream of one sweep trial; shared by every subset in that trial."""
    return derive_rng(rng_seed, "sweep", trial)


def _subsets(ids: Sequence[int], max_k: int) -> list[tuple[int, tuple[int, ...]]]:
    return [(k, combo) for k in range(1, max_k + 1) for combo in itertools.combinations(ids, k)]


def subset_sweep(scene: Scene, K: CameraIntrinsics, camera_pose: RigidTransform,
                 noise: DetectionNoiseModel, trials: int, max_k: int, rng_seed: int,
                 config: PnPConfig = PnPConfig(), workers: int = 1) -> SubsetSweepResult:
    """Pose errors for every size-k subset (k = 1..max_k) of the visible markers.

    Each trial draws one noisy frame of the whole scene; every subset is
    solved on its own markers' corners from that frame. Failed solves are
    counted per k and left out of the statistics.
    """
    if trials < 1 or max_k < 1:
        raise ValueError("trials and max_k must be positive")
    ids = visible_markers(scene, K, camera_pose, noise)
    if len(ids) < max_k:
        raise InsufficientVisibility(f"{len(ids)} markers visible, need {max_k}")
    subsets = _subsets(ids, max_k)
    truth = EulerPose.from_transform(camera_pose)

    def run_trial(trial: int) -> list[tuple[int, int, tuple | None]]:
        frame = simulate_frame(scene, K, camera_pose, noise, sweep_trial_rng(rng_seed, trial))
        out = []
        for sid, (k, combo) in enumerate(subsets):
            corr = frame_correspondences(scene, frame, combo)
            err = None
            if len(corr) >= 4:
                try:
                    est = solve_pnp(K, corr, config).camera_pose
                    err = pose_error(EulerPose.from_transform(est), truth)
                except SOLVER_ERRORS:
                    err = None
            out.append((sid, trial, err))
        return out

    per_trial = ordered_map(run_trial, range(trials), workers)
    # reduce in (subset, trial) order
    grid = [[None] * trials for _ in subsets]
    for rows in per_trial:
        for sid, trial, err in rows:
            grid[sid][trial] = err

    records = []
    failures = {k: 0 for k in range(1, max_k + 1)}
    counts = {k: 0 for k in range(1, max_k + 1)}
    per_k: dict[int, list] = {k: [] for k in range(1, max_k + 1)}
    subset_index_in_k = {k: 0 for k in range(1, max_k + 1)}
    for sid, (k, combo) in enumerate(subsets):
        local_id = subset_index_in_k[k]
        subset_index_in_k[k] += 1
        counts[k] += 1
        for trial in range(trials):
            err = grid[sid][trial]
            if err is None:
                failures[k] += 1
                continue
            per_k[k].append(err)
            records.append(SweepRecord(k, local_id, trial, combo, *err))
    stats = {}
    for k, errs in per_k.items():
        if errs:
            e = np.array(errs)
            stats[k] = ErrorStats.from_errors(e[:, 0], e[:, 1], e[:, 2])
    return SubsetSweepResult(stats, counts, records, failures, tuple(ids))


# -- variance table --------------------------------------------------------------

def estimate_variance_table(scene: Scene, K: CameraIntrinsics,
                            camera_poses: Sequence[RigidTransform],
                            noise: DetectionNoiseModel, trials: int, rng_seed: int,
                            max_n: int = 7, config: PnPConfig = PnPConfig(),
                            workers: int = 1) -> dict[int, tuple[float, float]]:
    """Per-axis position variance (cm^2) of PnP fixes from exactly n markers.

    For every pose and trial one noisy frame is drawn and the visible
    markers are put in random order; the fix for n markers uses the first n
    of that order. Nesting the subsets this way means all n share the same
    corner noise, which keeps the comparison across n tight. Errors are
    pooled over poses and trials.
    """
    if trials < 100:
        raise ValueError(f"insufficient trials: need at least 100 per detection count, got {trials}")
    if not camera_poses:
        raise ValueError("need at least one camera pose")
    for i, pose in enumerate(camera_poses):
        vis = visible_markers(scene, K, pose, noise)
        if len(vis) < max_n:
            raise InsufficientVisibility(f"pose {i}: {len(vis)} markers visible, need {max_n}")

    jobs = [(i, t) for i in range(len(camera_poses)) for t in range(trials)]

    def run(job):
        i, t = job
        pose = camera_poses[i]
        rng = derive_rng(rng_seed, "variances", i, t)
        frame = simulate_frame(scene, K, pose, noise, rng)
        ids = frame.marker_ids
        order = [ids[j] for j in rng.permutation(len(ids))]
        C = pose.translation
        out = []
        for n in range(1, max_n + 1):
            if n > len(order):
                out.append(None)
                continue
            corr = frame_correspondences(scene, frame, order[:n])
            try:
                est = solve_pnp(K, corr, config).camera_pose.translation
            except SOLVER_ERRORS:
                out.append(None)
                continue
            out.append(((est[0] - C[0]) * M_TO_CM, (est[1] - C[1]) * M_TO_CM))
        return out

    results = ordered_map(run, jobs, workers)
    table = {}
    for n in range(1, max_n + 1):
        errs = np.array([r[n - 1] for r in results if r[n - 1] is not None])
        if len(errs) < 2:
            raise InsufficientVisibility(f"not enough successful fixes with {n} markers")
        var = errs.var(axis=0, ddof=1)
        table[n] = (float(var[0]), float(var[1]))
    return table


# -- tracking comparison -----------------------------------------------------------

@dataclass(frozen=True)
class TrackingRecord:
    t: float
    model: str
    x_est: float
    y_est: float
    x_true: float
    y_true: float
    n_detections: int
    edge: int


@dataclass(frozen=True, eq=False)
class TrackingComparison:
    stats: dict[str, ErrorStats]
    edge_stats: dict[str, dict[int, ErrorStats]]
    records: list[TrackingRecord]
    measurements: list[Measurement]
    stream_checksum: str


def measurement_stream(scene: Scene, K: CameraIntrinsics,
                       trajectory: Sequence[TrajectorySample], noise: DetectionNoiseModel,
                       rng_seed: int, config: PnPConfig = PnPConfig(),
                       workers: int = 1) -> tuple[list[Measurement], list[float]]:
    """PnP position fixes along a trajectory, honouring each sample's marker cap.

    Frames with no usable detections (or a failed solve) give ``n_detections = 0``.
    Returns the measurements and the PnP heading (radians, NaN when absent).
    """

    def run(i: int):
        s = trajectory[i]
        frame = simulate_frame(scene, K, s.pose, noise, derive_rng(rng_seed, "track", i), s.time)
        frame = cap_detections(K, frame, s.cap)
        corr = frame_correspondences(scene, frame)
        if len(corr) >= 4:
            try:
                pose = solve_pnp(K, corr, config).camera_pose
                yaw = rotation_to_euler(pose.rotation).yaw
                return Measurement(float(pose.translation[0]), float(pose.translation[1]),
                                   len(frame.detections)), yaw
            except SOLVER_ERRORS:
                pass
        return Measurement(0.0, 0.0, 0), math.nan

    out = ordered_map(run, range(len(trajectory)), workers)
    return [m for m, _ in out], [y for _, y in out]


def stream_checksum(measurements: Sequence[Measurement]) -> str:
    arr = np.array([(m.x_m, m.y_m, float(m.n_detections)) for m in measurements], dtype="<f8")
    return hashlib.sha256(arr.tobytes()).hexdigest()


def compare_variance_models(scene: Scene, K: CameraIntrinsics,
                            trajectory: Sequence[TrajectorySample],
                            noise: DetectionNoiseModel, models: Sequence[VarianceModel],
                            rng_seed: int, process: ProcessModel | None = None,
                            config: PnPConfig = PnPConfig(),
                            workers: int = 1) -> TrackingComparison:
    """Track one shared measurement stream with every variance model.

    Heading is not part of the filter state; the heading error reported is
    that of the most recent PnP fix.
    """
    if not models:
        raise ValueError("need at least one variance model")
    if len(trajectory) < 1:
        raise ValueError("empty trajectory")
    if process is None:
        dt = trajectory[1].time - trajectory[0].time if len(trajectory) > 1 else 1.0 / 30.0
        process = ProcessModel(dt=dt)
    measurements, yaws = measurement_stream(scene, K, trajectory, noise, rng_seed, config, workers)
    checksum = stream_checksum(measurements)

    truth_xy = np.array([s.pose.translation[:2] for s in trajectory])
    truth_yaw = np.array([rotation_to_euler(s.pose.rotation).yaw for s in trajectory])
    held = np.array(yaws)
    for i in range(1, len(held)):
        if math.isnan(held[i]):
            held[i] = held[i - 1]
    held = np.where(np.isnan(held), truth_yaw, held)
    err_theta = wrap_degrees(np.degrees(held - truth_yaw))
    edges = np.array([s.edge for s in trajectory])

    stats, edge_stats, records = {}, {}, []
    for model in models:
        states: list[FilterState] = track(measurements, process, model)
        est = np.array([s.position for s in states])
        err = (est - truth_xy) * M_TO_CM
        stats[model.name] = ErrorStats.from_errors(err[:, 0], err[:, 1], err_theta)
        edge_stats[model.name] = {
            int(e): ErrorStats.from_errors(err[edges == e, 0], err[edges == e, 1],
                                           err_theta[edges == e])
            for e in np.unique(edges)}
        for s, m, xy, txy in zip(trajectory, measurements, est, truth_xy):
            records.append(TrackingRecord(s.time, model.name, float(xy[0]), float(xy[1]),
                                          float(txy[0]), float(txy[1]), m.n_detections, s.edge))
    return TrackingComparison(stats, edge_stats, records, measurements, checksum)


# -- CSV output ---------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def _writer(header_comment: str | None):
    buf = io.StringIO(newline="")
    if header_comment:
        buf.write(f"# {header_comment}\n")
    return buf, csv.writer(buf, lineterminator="\n")


def sweep_csv(result: SubsetSweepResult, header_comment: str | None = None) -> str:
    buf, w = _writer(header_comment)
    w.writerow(["k", "subset_id", "trial", "err_x_cm", "err_y_cm", "err_theta_deg"])
    for r in result.records:
        w.writerow([r.k, r.subset_id, r.trial, _fmt(r.err_x_cm), _fmt(r.err_y_cm),
                    _fmt(r.err_theta_deg)])
    return buf.getvalue()


def sweep_summary_csv(result: SubsetSweepResult, header_comment: str | None = None) -> str:
    buf, w = _writer(header_comment)
    w.writerow(["k", "subsets", "samples", "failures", "rmse_x_cm", "rmse_y_cm",
                "rmse_theta_deg", "mean_x_cm", "mean_y_cm", "mean_theta_deg",
                "max_abs_x_cm", "max_abs_y_cm"])
    for k in sorted(result.subset_counts):
        s = result.stats.get(k)
        vals = ([s.rmse_x, s.rmse_y, s.rmse_theta, s.mean_x, s.mean_y, s.mean_theta,
                 s.max_abs_x, s.max_abs_y] if s else [math.nan] * 8)
        w.writerow([k, result.subset_counts[k], s.n_samples if s else 0,
                    result.failures.get(k, 0), *(_fmt(v) for v in vals)])
    return buf.getvalue()


def variance_csv(table: Mapping[int, tuple[float, float]],
                 header_comment: str | None = None) -> str:
    buf, w = _writer(header_comment)
    w.writerow(["n", "var_x_cm2", "var_y_cm2"])
    for n in sorted(table):
        w.writerow([n, _fmt(table[n][0]), _fmt(table[n][1])])
    return buf.getvalue()


def tracking_csv(result: TrackingComparison, header_comment: str | None = None) -> str:
    """Per-frame rows grouped in one block per model; positions in cm."""
    buf, w = _writer(header_comment)
    w.writerow(["t", "model", "x_est", "y_est", "x_true", "y_true", "n_detections"])
    for r in result.records:
        w.writerow([_fmt(r.t), r.model, _fmt(r.x_est * M_TO_CM), _fmt(r.y_est * M_TO_CM),
                    _fmt(r.x_true * M_TO_CM), _fmt(r.y_true * M_TO_CM), r.n_detections])
    return buf.getvalue()


def tracking_summary_csv(result: TrackingComparison, header_comment: str | None = None) -> str:
    """Per-model error statistics, overall (edge ``all``) and per trajectory edge."""
    buf, w = _writer(header_comment)
    w.writerow(["model", "edge", "samples", "rmse_x_cm", "rmse_y_cm", "rmse_xy_cm",
                "max_abs_x_cm", "max_abs_y_cm"])
    for name, s in result.stats.items():
        rows = [("all", s)] + [(str(e), es) for e, es in result.edge_stats[name].items()]
        for edge, st in rows:
            w.writerow([name, edge, st.n_samples, _fmt(st.rmse_x), _fmt(st.rmse_y),
                        _fmt(st.rmse_xy), _fmt(st.max_abs_x), _fmt(st.max_abs_y)])
    return buf.getvalue()
