"""Constant-velocity Kalman filter for planar camera/robot position.

State ``[x, vx, y, vy]`` in meters and m/s. Process noise follows the
discrete white noise acceleration model. The measurement covariance is
looked up from a table of measured position variances indexed by the
number of detected markers, scaled by a constant factor (1/4 by default).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import NoMeasurement

CM2_TO_M2 = 1e-4

# Measured (x, y) position variances in cm^2 against the number of detected markers.
MEASURED_VARIANCE_TABLE: dict[int, tuple[float, float]] = {
    1: (1944.56, 914.43),
    2: (603.46, 464.10),
    3: (68.88, 64.47),
    4: (19.35, 16.77),
    5: (7.62, 6.64),
    6: (4.46, 3.49),
    7: (3.04, 2.09),
}

H = np.array([[1.0, 0.0, 0.0, 0.0],
              [0.0, 0.0, 1.0, 0.0]])

VARIANCE_KINDS = ("adaptive", "max", "min", "mean", "median")


@dataclass(frozen=True, eq=False)
class FilterState:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        m = np.array(self.mean, dtype=float).reshape(4)
        P = np.array(self.covariance, dtype=float).reshape(4, 4)
        m.flags.writeable = False
        P.flags.writeable = False
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "covariance", P)

    @property
    def position(self) -> np.ndarray:
        return self.mean[[0, 2]]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[[1, 3]]


@dataclass(frozen=True)
class ProcessModel:
    dt: float = 1.0 / 30.0
    sigma_ax2: float = 1e-4  # (m/s^2)^2, i.e. 1 (cm/s^2)^2
    sigma_ay2: float = 1e-4

    def __post_init__(self):
        if self.dt < 0:
            raise ValueError("dt must be non-negative")
        if self.sigma_ax2 < 0 or self.sigma_ay2 < 0:
            raise ValueError("acceleration variances must be non-negative")

    @property
    def F(self) -> np.ndarray:
        dt = self.dt
        return np.array([[1.0, dt, 0.0, 0.0],
                         [0.0, 1.0, 0.0, 0.0],
                         [0.0, 0.0, 1.0, dt],
                         [0.0, 0.0, 0.0, 1.0]])

    @property
    def Q(self) -> np.ndarray:
        dt = self.dt
        block = np.array([[dt ** 4 / 4, dt ** 3 / 2],
                          [dt ** 3 / 2, dt ** 2]])
        Q = np.zeros((4, 4))
        Q[:2, :2] = block * self.sigma_ax2
        Q[2:, 2:] = block * self.sigma_ay2
        return Q


@dataclass(frozen=True)
class VarianceModel:
    """How the measurement covariance is chosen.

    ``adaptive`` looks up the row for the current detection count (clamped
    to the table range); the static kinds use one column statistic of the
    table for every frame. ``table`` holds variances in cm^2.
    """

    kind: str = "adaptive"
    table: Mapping[int, tuple[float, float]] = field(
        default_factory=lambda: dict(MEASURED_VARIANCE_TABLE))
    factor: float = 0.25

    def __post_init__(self):
        if self.kind not in VARIANCE_KINDS:
            raise ValueError(f"unknown variance model kind {self.kind!r}")
        if not self.table:
            raise ValueError("variance table is empty")
        table = {int(n): (float(v[0]), float(v[1])) for n, v in sorted(self.table.items())}
        if min(table) < 1:
            raise ValueError("detection counts start at 1")
        if any(not (vx > 0 and vy > 0) for vx, vy in table.values()):
            raise ValueError("table variances must be positive")
        if not self.factor > 0:
            raise ValueError("factor must be positive")
        object.__setattr__(self, "table", table)

    @property
    def name(self) -> str:
        return "adaptive" if self.kind == "adaptive" else f"static-{self.kind}"

    def raw_variances(self, n: int) -> tuple[float, float]:
        """Unscaled (x, y) variances in cm^2 used for detection count ``n``."""
        if self.kind == "adaptive":
            if n < 1:
                raise NoMeasurement("adaptive variances need at least one detection")
            lo, hi = min(self.table), max(self.table)
            return self.table[min(max(n, lo), hi)]
        cols = np.array(list(self.table.values()))
        stat = {"max": np.max, "min": np.min, "mean": np.mean, "median": np.median}[self.kind]
        return float(stat(cols[:, 0])), float(stat(cols[:, 1]))


def adaptive_covariance(n: int, model: VarianceModel) -> np.ndarray:
    """Measurement covariance R^m in m^2 for ``n`` detected markers."""
    vx, vy = model.raw_variances(n)
    return np.diag([vx, vy]) * (model.factor * CM2_TO_M2)


@dataclass(frozen=True)
class Measurement:
    x_m: float
    y_m: float
    n_detections: int

    def __post_init__(self):
        if self.n_detections < 0:
            raise ValueError("n_detections must be non-negative")
        if not (math.isfinite(self.x_m) and math.isfinite(self.y_m)):
            raise ValueError("measurement must be finite")


def init_state(first: Measurement, model: VarianceModel) -> FilterState:
    if first.n_detections < 1:
        raise NoMeasurement("cannot initialise from a frame without detections")
    vx, vy = model.raw_variances(first.n_detections)
    return FilterState(np.array([first.x_m, 0.0, first.y_m, 0.0]),
                       np.diag([vx * CM2_TO_M2, 0.0, vy * CM2_TO_M2, 0.0]))


def predict(s: FilterState, p: ProcessModel) -> FilterState:
    F = p.F
    P = F @ s.covariance @ F.T + p.Q
    return FilterState(F @ s.mean, 0.5 * (P + P.T))


def update(s: FilterState, y: Measurement, model: VarianceModel) -> FilterState:
    """Measurement update; frames without detections leave the state untouched."""
    if y.n_detections == 0:
        return s
    Rm = adaptive_covariance(y.n_detections, model)
    P = s.covariance
    S = H @ P @ H.T + Rm
    gain = np.linalg.solve(S, H @ P).T  # P H^T S^-1, S symmetric
    innovation = np.array([y.x_m, y.y_m]) - H @ s.mean
    mean = s.mean + gain @ innovation
    P_new = (np.eye(4) - gain @ H) @ P
    return FilterState(mean, 0.5 * (P_new + P_new.T))


def track(measurements: Sequence[Measurement], p: ProcessModel,
          model: VarianceModel) -> list[FilterState]:
    """One posterior per frame: initialise on the first, then predict + update."""
    if not measurements:
        return []
    state = init_state(measurements[0], model)
    out = [state]
    for y in measurements[1:]:
        state = update(predict(state, p), y, model)
        out.append(state)
    return out
