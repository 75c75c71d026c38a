"""Synthetic marker scenes, camera trajectories and noisy corner detections.

Stands in for the real-image pipeline: a marker is "detected" when its four
corners project in front of the camera and inside the image, it is large
enough on the sensor and not viewed too obliquely. Detected corners get
i.i.d. Gaussian pixel noise.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateRectangle, DegenerateSpeed
from .geometry import (DEPTH_EPS, CameraIntrinsics, RigidTransform,
                       camera_pose_to_extrinsics, rot_x, rot_y, rot_z,
                       rotation_to_euler)
from .pnp import Correspondences

MARKER_SIDE = 0.15
CONFIG_I_HEIGHTS = (1.334, 2.991)
# The lab camera: 1080p, 78 degree diagonal field of view.
DEFAULT_INTRINSICS = CameraIntrinsics.from_dfov(1920, 1080, 78.0)

# Rotation classes of the two-circle layout, keyed by in-plane angle.
ROTATION_CLASSES = {
    90.0: (0, 8, 2, 12, 4, 16, 6, 20),
    45.0: (1, 10, 3, 14, 5, 18, 7, 22),
    22.5: (9, 11, 13, 15, 17, 19, 21, 23),
}


@dataclass(frozen=True)
class Marker:
    id: int
    center: tuple[float, float, float]
    normal: tuple[float, float, float] = (0.0, 0.0, 1.0)
    rotation: float = 0.0
    side: float = MARKER_SIDE

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError("marker side must be positive")
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-9:
            raise ValueError("marker normal must be a unit vector")


@dataclass(frozen=True)
class Scene:
    markers: tuple[Marker, ...]
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "markers", tuple(self.markers))
        ids = [m.id for m in self.markers]
        if len(set(ids)) != len(ids):
            raise ValueError("marker ids must be unique")

    def __len__(self):
        return len(self.markers)

    @property
    def ids(self) -> list[int]:
        return [m.id for m in self.markers]

    def marker(self, marker_id: int) -> Marker:
        for m in self.markers:
            if m.id == marker_id:
                return m
        raise KeyError(marker_id)

    def select(self, ids: Iterable[int]) -> "Scene":
        keep = set(ids)
        missing = keep - set(self.ids)
        if missing:
            raise KeyError(f"unknown marker ids {sorted(missing)}")
        return Scene(tuple(m for m in self.markers if m.id in keep),
                     f"{self.description} subset {sorted(keep)}".strip())


@dataclass(frozen=True)
class DetectionNoiseModel:
    pixel_sigma: float = 0.5
    detection_dropout_prob: float = 0.0
    min_projected_side: float = 10.0
    max_view_angle: float = math.radians(80.0)

    def __post_init__(self):
        if self.pixel_sigma < 0:
            raise ValueError("pixel_sigma must be non-negative")
        if not 0.0 <= self.detection_dropout_prob <= 1.0:
            raise ValueError("detection_dropout_prob must be in [0, 1]")
        if self.min_projected_side < 0:
            raise ValueError("min_projected_side must be non-negative")
        if not 0.0 <= self.max_view_angle <= math.pi:
            raise ValueError("max_view_angle must be in [0, pi]")


NOISELESS = DetectionNoiseModel(pixel_sigma=0.0)


@dataclass(frozen=True, eq=False)
class Detection:
    marker_id: int
    corners: np.ndarray  # (4, 2) pixels in canonical corner order


@dataclass(frozen=True, eq=False)
class Frame:
    true_camera_pose: RigidTransform
    detections: tuple[Detection, ...]
    timestamp: float = 0.0

    @property
    def marker_ids(self) -> list[int]:
        return [d.marker_id for d in self.detections]

    def restrict(self, ids: Iterable[int]) -> "Frame":
        keep = set(ids)
        return Frame(self.true_camera_pose,
                     tuple(d for d in self.detections if d.marker_id in keep),
                     self.timestamp)


def _plane_axes(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reference in-plane axes (right, up) with right x up = normal."""
    ref = np.array([1.0, 0.0, 0.0])
    if abs(normal @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    right = ref - (ref @ normal) * normal
    right /= np.linalg.norm(right)
    up = np.cross(normal, right)
    return right, up


# top-left, bottom-left, bottom-right, top-right: counter-clockwise seen from the normal side
_CORNER_SIGNS = np.array([[-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [1.0, 1.0]])


def marker_corners_world(m: Marker) -> np.ndarray:
    """The four (4, 3) corner coordinates in canonical order."""
    n = np.asarray(m.normal, dtype=float)
    right, up = _plane_axes(n)
    c, s = math.cos(m.rotation), math.sin(m.rotation)
    r = c * right + s * up
    u = -s * right + c * up
    h = m.side / 2
    return (np.asarray(m.center, dtype=float)
            + h * (_CORNER_SIGNS[:, :1] * r + _CORNER_SIGNS[:, 1:] * u))


def frame_rng(base_seed: int, frame_index: int) -> np.random.Generator:
    """Independent stream per frame, so frames can be generated in any order."""
    return np.random.default_rng([int(base_seed), int(frame_index)])


def visible_markers(scene: Scene, K: CameraIntrinsics, pose: RigidTransform,
                    noise: DetectionNoiseModel = NOISELESS) -> list[int]:
    """Ids that pass every geometric detection gate (dropout ignored)."""
    return [m.id for m, uv in zip(scene.markers, _exact_projections(scene, K, pose, noise))
            if uv is not None]


def _exact_projections(scene, K, pose, noise):
    extr = camera_pose_to_extrinsics(pose)
    C = pose.translation
    cos_max = math.cos(noise.max_view_angle)
    out = []
    for m in scene.markers:
        corners = marker_corners_world(m)
        pc = extr.apply(corners)
        if np.any(pc[:, 2] <= DEPTH_EPS):
            out.append(None)
            continue
        uv = np.stack([K.fx * pc[:, 0] / pc[:, 2] + K.px,
                       K.fy * pc[:, 1] / pc[:, 2] + K.py], axis=1)
        if not np.all(K.contains(uv)):
            out.append(None)
            continue
        sides = np.linalg.norm(uv - np.roll(uv, -1, axis=0), axis=1)
        if sides.min() < noise.min_projected_side:
            out.append(None)
            continue
        ray = C - np.asarray(m.center, dtype=float)
        cos_view = float(np.asarray(m.normal) @ ray) / np.linalg.norm(ray)
        if cos_view < cos_max - 1e-15:
            out.append(None)
            continue
        out.append(uv)
    return out


def simulate_frame(scene: Scene, K: CameraIntrinsics, true_pose: RigidTransform,
                   noise: DetectionNoiseModel = DetectionNoiseModel(),
                   rng_seed: int | np.random.Generator = 0,
                   timestamp: float = 0.0) -> Frame:
    """Detect every marker passing the gates and perturb its corners.

    Noise and dropout draws are made for every scene marker in scene order,
    visible or not, so a marker's noise depends only on the seed and its
    position in the scene.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    m = len(scene.markers)
    pixel_noise = rng.standard_normal((m, 4, 2)) * noise.pixel_sigma
    dropout = rng.random(m)
    detections = []
    for i, (mk, uv) in enumerate(zip(scene.markers, _exact_projections(scene, K, true_pose, noise))):
        if uv is None or dropout[i] < noise.detection_dropout_prob:
            continue
        corners = uv + pixel_noise[i] if noise.pixel_sigma > 0 else uv
        corners.flags.writeable = False
        detections.append(Detection(mk.id, corners))
    return Frame(true_pose, tuple(detections), timestamp)


def frame_correspondences(scene: Scene, frame: Frame,
                          ids: Iterable[int] | None = None) -> Correspondences:
    """Stack the detected corners (optionally a subset of markers) for PnP."""
    keep = None if ids is None else set(ids)
    dets = [d for d in frame.detections if keep is None or d.marker_id in keep]
    if not dets:
        return Correspondences(np.zeros((0, 3)), np.zeros((0, 2)))
    world = np.vstack([marker_corners_world(scene.marker(d.marker_id)) for d in dets])
    image = np.vstack([d.corners for d in dets])
    ids_arr = np.repeat([d.marker_id for d in dets], 4)
    corner_idx = np.tile(np.arange(4), len(dets))
    return Correspondences(world, image, ids_arr, corner_idx)


def rank_by_image_center(K: CameraIntrinsics, frame: Frame) -> list[int]:
    """Detected ids sorted by distance of the marker centroid to the image center."""
    center = np.array([K.width / 2, K.height / 2])
    dist = [(float(np.linalg.norm(d.corners.mean(axis=0) - center)), d.marker_id)
            for d in frame.detections]
    return [mid for _, mid in sorted(dist)]


def cap_detections(K: CameraIntrinsics, frame: Frame, cap: int | None) -> Frame:
    """Keep at most ``cap`` detections, those closest to the image center."""
    if cap is None or len(frame.detections) <= cap:
        return frame
    return frame.restrict(rank_by_image_center(K, frame)[:cap])


def circular_placement(inner_radius: float = 0.4, outer_radius: float = 0.8,
                       z: float = 0.0, normal: Sequence[float] = (0.0, 0.0, 1.0),
                       side: float = MARKER_SIDE) -> Scene:
    """Two concentric rings: ids 0-7 on the inner, ids 8-23 on the outer circle.

    Inner marker i sits at angle 45*i degrees, outer marker 8+j at 22.5*j
    degrees. Each marker's in-plane rotation is its rotation class.
    """
    if not (inner_radius > 0 and outer_radius > 0):
        raise ValueError("radii must be positive")
    angle_of = {mid: cls for cls, ids in ROTATION_CLASSES.items() for mid in ids}
    markers = []
    for i in range(8):
        a = math.radians(45.0 * i)
        markers.append(Marker(i, (inner_radius * math.cos(a), inner_radius * math.sin(a), z),
                              tuple(normal), math.radians(angle_of[i]), side))
    for j in range(16):
        a = math.radians(22.5 * j)
        mid = 8 + j
        markers.append(Marker(mid, (outer_radius * math.cos(a), outer_radius * math.sin(a), z),
                              tuple(normal), math.radians(angle_of[mid]), side))
    return Scene(tuple(markers), "two-circle floor layout")


def rotation_class(marker_id: int) -> float:
    for cls, ids in ROTATION_CLASSES.items():
        if marker_id in ids:
            return cls
    raise KeyError(marker_id)


def ceiling_grid(nx: int = 3, ny: int = 3, spacing_x: float = 0.6, spacing_y: float = 0.6,
                 z: float = 2.991, side: float = MARKER_SIDE) -> Scene:
    """Regular grid of downward-facing markers on a ceiling at height ``z``."""
    markers = []
    mid = 0
    for j in range(ny):
        for i in range(nx):
            x = (i - (nx - 1) / 2) * spacing_x
            y = (j - (ny - 1) / 2) * spacing_y
            markers.append(Marker(mid, (x, y, z), (0.0, 0.0, -1.0), 0.0, side))
            mid += 1
    return Scene(tuple(markers), "ceiling grid")


def camera_looking_down(x: float, y: float, height: float, yaw: float = 0.0,
                        tilt: tuple[float, float] = (0.0, 0.0)) -> RigidTransform:
    """Camera pose above a floor scene with its optical axis along -z."""
    R = rot_z(yaw) @ rot_x(math.pi)
    if tilt != (0.0, 0.0):
        R = R @ rot_x(tilt[0]) @ rot_y(tilt[1])
    return RigidTransform(R, np.array([x, y, height]))


def camera_looking_up(x: float, y: float, z: float = 0.0, yaw: float = 0.0) -> RigidTransform:
    """Camera pose on the floor with its optical axis along +z (towards the ceiling)."""
    return RigidTransform(rot_z(yaw), np.array([x, y, z]))


@dataclass(frozen=True, eq=False)
class TrajectorySample:
    time: float
    pose: RigidTransform
    edge: int
    cap: int | None


DEFAULT_CAPS = (1, 3, 5, None)


def rectangular_trajectory(corners: Sequence[Sequence[float]], speed: float, dt: float,
                           caps: Sequence[int | None] = DEFAULT_CAPS,
                           yaw: float = 0.0) -> list[TrajectorySample]:
    """Constant-speed lap around a rectangle, camera facing the ceiling.

    Samples are taken every ``dt`` seconds from the first corner; the closing
    sample at the start point is included when the perimeter is an exact
    multiple of ``speed * dt``. A sample on a corner belongs to the edge that
    starts there; edge ``k`` runs from ``corners[k]`` to ``corners[k + 1]``
    and carries ``caps[k]`` (``None`` = all visible markers).
    """
    if not speed > 0:
        raise DegenerateSpeed("speed must be positive")
    if not dt > 0:
        raise ValueError("dt must be positive")
    P = np.asarray(corners, dtype=float)
    if P.shape != (4, 3):
        raise DegenerateRectangle("need four 3D corners")
    if len(caps) != 4:
        raise ValueError("need one cap per edge")
    edges = np.roll(P, -1, axis=0) - P
    lengths = np.linalg.norm(edges, axis=1)
    scale = lengths.max()
    if scale == 0 or lengths.min() <= 1e-12 * scale:
        raise DegenerateRectangle("rectangle has a zero-length edge")
    cross = np.cross(edges[0], edges[1])
    if np.linalg.norm(cross) <= 1e-9 * scale ** 2:
        raise DegenerateRectangle("corners are collinear")
    for k in range(4):
        if abs(edges[k] @ edges[(k + 1) % 4]) > 1e-9 * scale ** 2:
            raise DegenerateRectangle("corners do not form a rectangle")
    if np.ptp(P[:, 2]) > 1e-9 * scale:
        raise DegenerateRectangle("rectangle must lie in a horizontal plane")

    perimeter = float(lengths.sum())
    step = speed * dt
    count = int(math.floor(perimeter / step + 1e-9))
    bounds = np.concatenate([[0.0], np.cumsum(lengths)])
    samples = []
    for i in range(count + 1):
        s = min(i * step, perimeter)
        k = min(int(np.searchsorted(bounds, s, side="right")) - 1, 3)
        frac = (s - bounds[k]) / lengths[k]
        if frac >= 1.0:
            pos = P[(k + 1) % 4].copy()
        else:
            pos = P[k] + frac * edges[k]
        samples.append(TrajectorySample(i * dt, camera_looking_up(pos[0], pos[1], pos[2], yaw),
                                        k, caps[k]))
    return samples


# -- file formats ---------------------------------------------------------------

SCENE_COLUMNS = ("id", "cx", "cy", "cz", "nx", "ny", "nz", "rotation_deg", "side")
TRAJECTORY_COLUMNS = ("time", "x", "y", "z", "yaw")


def save_scene(scene: Scene, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# {scene.description}\n")
        w = csv.writer(f)
        w.writerow(SCENE_COLUMNS)
        for m in scene.markers:
            w.writerow([m.id, *(repr(float(v)) for v in m.center),
                        *(repr(float(v)) for v in m.normal),
                        repr(math.degrees(m.rotation)), repr(float(m.side))])


def load_scene(path: str | Path) -> Scene:
    """Read a scene file: comment lines start with '#', then a header row."""
    path = Path(path)
    description = ""
    rows = []
    with open(path, newline="") as f:
        lines = []
        for line in f:
            if line.startswith("#"):
                description = description or line[1:].strip()
            elif line.strip():
                lines.append(line)
    reader = csv.DictReader(lines)
    missing = set(SCENE_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    for row in reader:
        n = np.array([float(row["nx"]), float(row["ny"]), float(row["nz"])])
        rows.append(Marker(int(row["id"]),
                           (float(row["cx"]), float(row["cy"]), float(row["cz"])),
                           tuple(n / np.linalg.norm(n)),
                           math.radians(float(row["rotation_deg"])),
                           float(row["side"])))
    return Scene(tuple(rows), description or path.stem)


def save_trajectory(samples: Sequence[TrajectorySample], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRAJECTORY_COLUMNS + ("cap",))
        for s in samples:
            x, y, z = s.pose.translation
            yaw = rotation_to_euler(s.pose.rotation).yaw
            w.writerow([repr(s.time), repr(float(x)), repr(float(y)), repr(float(z)),
                        repr(yaw), "all" if s.cap is None else s.cap])


def load_trajectory(path: str | Path) -> list[TrajectorySample]:
    """Read ``time,x,y,z,yaw`` rows; an optional ``cap`` column tags each sample.

    Poses face the ceiling. Edge indices are not stored, so consecutive runs
    of equal caps are numbered as edges.
    """
    samples = []
    with open(path, newline="") as f:
        reader = csv.DictReader(line for line in f if not line.startswith("#"))
        missing = set(TRAJECTORY_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        edge = -1
        prev = object()
        for row in reader:
            raw = (row.get("cap") or "all").strip().lower()
            cap = None if raw in ("", "all", "none") else int(raw)
            if cap != prev:
                edge += 1
                prev = cap
            samples.append(TrajectorySample(
                float(row["time"]),
                camera_looking_up(float(row["x"]), float(row["y"]), float(row["z"]),
                                  float(row["yaw"])),
                edge, cap))
    return samples
