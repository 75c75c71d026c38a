"""Command-line front end.

Each subcommand reads an INI-style experiment file, runs one experiment and
writes CSV files into ``--out``::

    markerloc sweep     --config exp.ini --seed 7 --out results/
    markerloc variances --config exp.ini --seed 7 --out results/
    markerloc track     --config exp.ini --seed 7 --out results/ --threads 4

Every CSV starts with a ``#`` line holding the tool version, the SHA-256 of
the config file and the seed. Outputs depend only on (config bytes, seed).

Exit codes: 0 success, 2 configuration or I/O problem, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__
from .errors import ConfigError, MarkerLocError
from .geometry import CameraIntrinsics, RigidTransform
from .kalman import MEASURED_VARIANCE_TABLE, VARIANCE_KINDS, ProcessModel, VarianceModel
from .evaluation import (compare_variance_models, estimate_variance_table, subset_sweep,
                         sweep_csv, sweep_summary_csv, tracking_csv, variance_csv,
                         tracking_summary_csv)
from .scene_sim import (CONFIG_I_HEIGHTS, DetectionNoiseModel, Scene,
                        TrajectorySample, camera_looking_down, camera_looking_up,
                        ceiling_grid, circular_placement, load_scene, load_trajectory,
                        rectangular_trajectory)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
MIN_VARIANCE_TRIALS = 100

DEFAULT_CORNERS = ((0.6, -0.4, 0.0), (0.6, 0.4, 0.0), (-0.6, 0.4, 0.0), (-0.6, -0.4, 0.0))
DEFAULT_TRACK_CAPS = (None, 1, 3, 5)


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Everything an experiment needs besides the seed."""

    scene: Scene
    intrinsics: CameraIntrinsics
    noise: DetectionNoiseModel
    camera_pose: RigidTransform
    variance_poses: tuple[RigidTransform, ...]
    sweep_trials: int = 200
    sweep_max_k: int = 7
    variance_trials: int = 200
    trajectory: tuple[TrajectorySample, ...] = ()
    models: tuple[str, ...] = ("adaptive", "max", "min")
    variance_table: str = "measured"
    variance_floor_cm2: float = 1e-12
    process: ProcessModel = field(default_factory=ProcessModel)
    source_sha256: str = ""


# -- config parsing ----------------------------------------------------------------

def _floats(text: str, n: int | None = None, what: str = "value") -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{what}: expected numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"{what}: expected {n} numbers, got {len(vals)}")
    return vals


def _points(text: str, what: str) -> list[tuple[float, ...]]:
    """Semicolon-separated groups of comma/space separated numbers."""
    return [_floats(g, what=what) for g in text.split(";") if g.strip()]


def _get(cp, section, key, kind=str, default=None):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def _resolve(base: Path, p: str) -> Path:
    path = Path(p).expanduser()
    return path if path.is_absolute() else base / path


def _parse_scene(cp, base: Path) -> Scene:
    layout = _get(cp, "scene", "layout", default="circular").strip().lower()
    if layout == "circular":
        scene = circular_placement(_get(cp, "scene", "inner_radius", float, 0.4),
                                   _get(cp, "scene", "outer_radius", float, 0.8),
                                   _get(cp, "scene", "z", float, 0.0))
    elif layout == "ceiling_grid":
        scene = ceiling_grid(_get(cp, "scene", "nx", int, 3), _get(cp, "scene", "ny", int, 3),
                             _get(cp, "scene", "spacing_x", float, 0.6),
                             _get(cp, "scene", "spacing_y", float, 0.6),
                             _get(cp, "scene", "z", float, CONFIG_I_HEIGHTS[1]))
    elif layout == "file":
        raw = _get(cp, "scene", "file")
        if not raw:
            raise ConfigError("[scene] layout = file needs a 'file' entry")
        path = _resolve(base, raw)
        if not path.is_file():
            raise ConfigError(f"scene file not found: {path}")
        try:
            scene = load_scene(path)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read scene file {path}: {exc}") from None
    else:
        raise ConfigError(f"[scene] unknown layout {layout!r}")
    ids = _get(cp, "scene", "marker_ids")
    if ids:
        try:
            scene = scene.select(int(v) for v in _floats(ids, what="[scene] marker_ids"))
        except KeyError as exc:
            raise ConfigError(f"[scene] marker_ids: unknown marker {exc}") from None
    return scene


def _parse_camera(cp) -> tuple[CameraIntrinsics, str, float]:
    try:
        if cp.has_option("camera", "fx"):
            K = CameraIntrinsics(*(float(cp.get("camera", k))
                                   for k in ("fx", "fy", "px", "py", "width", "height")))
        else:
            K = CameraIntrinsics.from_dfov(_get(cp, "camera", "width", int, 1920),
                                           _get(cp, "camera", "height", int, 1080),
                                           _get(cp, "camera", "dfov_deg", float, 78.0))
    except (ValueError, configparser.Error) as exc:
        raise ConfigError(f"[camera] {exc}") from None
    facing = _get(cp, "camera", "facing", default="down").strip().lower()
    if facing not in ("down", "up"):
        raise ConfigError(f"[camera] facing must be 'down' or 'up', got {facing!r}")
    return K, facing, _get(cp, "camera", "z", float, CONFIG_I_HEIGHTS[1])


def _pose(facing: str, x: float, y: float, z: float, yaw_deg: float) -> RigidTransform:
    yaw = math.radians(yaw_deg)
    if facing == "down":
        return camera_looking_down(x, y, z, yaw)
    return camera_looking_up(x, y, z, yaw)


def _parse_caps(text: str) -> tuple[int | None, ...]:
    caps = []
    for tok in text.replace(",", " ").split():
        if tok.lower() in ("all", "none"):
            caps.append(None)
        else:
            try:
                caps.append(int(tok))
            except ValueError:
                raise ConfigError(f"[track] caps: bad entry {tok!r}") from None
            if caps[-1] < 1:
                raise ConfigError("[track] caps must be positive or 'all'")
    if len(caps) != 4:
        raise ConfigError("[track] caps: need one entry per edge (4)")
    return tuple(caps)


def _parse_trajectory(cp, base: Path) -> tuple[TrajectorySample, ...]:
    if not cp.has_section("track"):
        return ()
    raw = _get(cp, "track", "trajectory_file")
    if raw:
        path = _resolve(base, raw)
        if not path.is_file():
            raise ConfigError(f"trajectory file not found: {path}")
        try:
            return tuple(load_trajectory(path))
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read trajectory file {path}: {exc}") from None
    corners = DEFAULT_CORNERS
    if cp.has_option("track", "corners"):
        corners = _points(cp.get("track", "corners"), "[track] corners")
        if len(corners) != 4 or any(len(c) != 3 for c in corners):
            raise ConfigError("[track] corners: need four x,y,z triples")
    caps = _parse_caps(cp.get("track", "caps")) if cp.has_option("track", "caps") \
        else DEFAULT_TRACK_CAPS
    try:
        return tuple(rectangular_trajectory(
            corners, _get(cp, "track", "speed", float, 0.03),
            _get(cp, "track", "dt", float, 1.0 / 30.0), caps,
            math.radians(_get(cp, "track", "yaw_deg", float, 0.0))))
    except ValueError as exc:
        raise ConfigError(f"[track] {exc}") from None


def parse_config(text: str, base_dir: str | Path = ".") -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from INI text.

    Relative file paths are resolved against ``base_dir``.
    """
    base = Path(base_dir)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    scene = _parse_scene(cp, base)
    K, facing, z = _parse_camera(cp)
    try:
        noise = DetectionNoiseModel(
            _get(cp, "noise", "pixel_sigma", float, 0.5),
            _get(cp, "noise", "dropout", float, 0.0),
            _get(cp, "noise", "min_projected_side", float, 10.0),
            math.radians(_get(cp, "noise", "max_view_angle_deg", float, 80.0)))
    except ValueError as exc:
        raise ConfigError(f"[noise] {exc}") from None

    pose = _pose(facing, _get(cp, "camera", "x", float, 0.0), _get(cp, "camera", "y", float, 0.0),
                 z, _get(cp, "camera", "yaw_deg", float, 0.0))
    var_poses = (pose,)
    if cp.has_option("variances", "poses"):
        groups = _points(cp.get("variances", "poses"), "[variances] poses")
        if not groups or any(len(g) != 3 for g in groups):
            raise ConfigError("[variances] poses: need x,y,yaw_deg triples")
        var_poses = tuple(_pose(facing, x, y, z, yaw) for x, y, yaw in groups)

    sweep_trials = _get(cp, "sweep", "trials", int, 200)
    max_k = _get(cp, "sweep", "max_k", int, 7)
    var_trials = _get(cp, "variances", "trials", int, 200)
    if sweep_trials < 1 or max_k < 1:
        raise ConfigError("[sweep] trials and max_k must be positive")
    if var_trials < MIN_VARIANCE_TRIALS:
        raise ConfigError(f"insufficient trials: [variances] trials = {var_trials}, "
                          f"need at least {MIN_VARIANCE_TRIALS}")

    models = ("adaptive", "max", "min")
    if cp.has_option("track", "models"):
        models = tuple(m.strip().lower().removeprefix("static-")
                       for m in cp.get("track", "models").replace(",", " ").split())
        if not models:
            raise ConfigError("[track] models: empty model list")
        bad = [m for m in models if m not in VARIANCE_KINDS]
        if bad:
            raise ConfigError(f"[track] models: unknown {bad}; choose from {VARIANCE_KINDS}")
        if len(set(models)) != len(models):
            raise ConfigError("[track] models: duplicate entries")

    table = _get(cp, "track", "variance_table", default="measured").strip()
    if table not in ("measured", "estimate"):
        path = _resolve(base, table)
        if not path.is_file():
            raise ConfigError(f"variance table file not found: {path}")
        table = str(path)
    floor = _get(cp, "track", "variance_floor_cm2", float, 1e-12)
    if not floor > 0:
        raise ConfigError("[track] variance_floor_cm2 must be positive")

    trajectory = _parse_trajectory(cp, base)
    dt = trajectory[1].time - trajectory[0].time if len(trajectory) > 1 else 1.0 / 30.0
    sa2 = _get(cp, "track", "sigma_a2", float, 1e-4)
    try:
        process = ProcessModel(dt, sa2, sa2)
    except ValueError as exc:
        raise ConfigError(f"[track] {exc}") from None

    return ExperimentConfig(scene, K, noise, pose, var_poses, sweep_trials, max_k, var_trials,
                            trajectory, models, table, floor, process,
                            hashlib.sha256(text.encode()).hexdigest())


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path.parent)


def _read_table_file(path: str) -> dict[int, tuple[float, float]]:
    try:
        with open(path, newline="") as f:
            rows = csv.DictReader(line for line in f if not line.startswith("#"))
            return {int(r["n"]): (float(r["var_x_cm2"]), float(r["var_y_cm2"])) for r in rows}
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read variance table {path}: {exc}") from None


# -- commands ----------------------------------------------------------------------

def header(cfg: ExperimentConfig, seed: int) -> str:
    return f"markerloc {__version__} config_sha256={cfg.source_sha256} seed={seed}"


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text, newline="")
    return path


def cmd_sweep(cfg: ExperimentConfig, seed: int, out: Path, threads: int = 1) -> list[Path]:
    res = subset_sweep(cfg.scene, cfg.intrinsics, cfg.camera_pose, cfg.noise, cfg.sweep_trials,
                       cfg.sweep_max_k, seed, workers=threads)
    h = header(cfg, seed)
    return [_write(out, "sweep.csv", sweep_csv(res, h)),
            _write(out, "sweep_summary.csv", sweep_summary_csv(res, h))]


def _estimate(cfg: ExperimentConfig, seed: int, threads: int) -> dict[int, tuple[float, float]]:
    return estimate_variance_table(cfg.scene, cfg.intrinsics, cfg.variance_poses, cfg.noise,
                                   cfg.variance_trials, seed, workers=threads)


def cmd_variances(cfg: ExperimentConfig, seed: int, out: Path, threads: int = 1) -> list[Path]:
    table = _estimate(cfg, seed, threads)
    return [_write(out, "variances.csv", variance_csv(table, header(cfg, seed)))]


def cmd_track(cfg: ExperimentConfig, seed: int, out: Path, threads: int = 1) -> list[Path]:
    if not cfg.trajectory:
        raise ConfigError("track needs a [track] section")
    if cfg.variance_table == "measured":
        table = dict(MEASURED_VARIANCE_TABLE)
    elif cfg.variance_table == "estimate":
        table = _estimate(cfg, seed, threads)
    else:
        table = _read_table_file(cfg.variance_table)
    # an estimated table can hold exact zeros when the detections are noiseless
    table = {n: (max(vx, cfg.variance_floor_cm2), max(vy, cfg.variance_floor_cm2))
             for n, (vx, vy) in table.items()}
    try:
        models = [VarianceModel(kind, table) for kind in cfg.models]
    except ValueError as exc:
        raise ConfigError(f"variance table: {exc}") from None
    res = compare_variance_models(cfg.scene, cfg.intrinsics, cfg.trajectory, cfg.noise, models,
                                  seed, cfg.process, workers=threads)
    h = header(cfg, seed)
    return [_write(out, "tracking.csv", tracking_csv(res, h)),
            _write(out, "tracking_summary.csv", tracking_summary_csv(res, h))]


COMMANDS = {"sweep": cmd_sweep, "variances": cmd_variances, "track": cmd_track}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="markerloc",
                                description="Fiducial-marker localization experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {"sweep": "pose error against the number of markers used",
             "variances": "estimate the position variance table",
             "track": "compare Kalman variance models on a rectangular lap"}
    for name, text in helps.items():
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True, help="experiment INI file")
        s.add_argument("--seed", type=int, default=0, help="base seed (unsigned 64-bit)")
        s.add_argument("--out", default=".", help="output directory")
        s.add_argument("--threads", type=int, default=1, help="worker threads")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if not 0 <= args.seed < 2 ** 64:
        print("markerloc: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("markerloc: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        paths = COMMANDS[args.command](cfg, args.seed, Path(args.out), args.threads)
    except ConfigError as exc:
        print(f"markerloc: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"markerloc: I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MarkerLocError, ValueError, ArithmeticError) as exc:
        print(f"markerloc: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
