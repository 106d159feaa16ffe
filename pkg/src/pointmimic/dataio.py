"""Demonstration file format, dataset assembly, and configuration loading.

A demonstration is stored as line-delimited JSON (UTF-8, "\n" line endings):
the first line is a header record, every following line one frame record.
The exact grammar is documented in docs/demo_format.md.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import (
    CorruptFile,
    EmptyDataset,
    FormatVersionMismatch,
    SchemaMismatchAcrossDemos,
    SchemaViolation,
)
from .geometry import CameraModel

FORMAT_VERSION = 1

ROLE_HAND = "hand"
ROLE_ROBOT = "robot"
ROLE_OBJECT = "object"
_ROLES = (ROLE_HAND, ROLE_ROBOT, ROLE_OBJECT)


@dataclass(frozen=True)
class KeypointSpec:
    name: str
    role: str

    def __post_init__(self):
        if self.role not in _ROLES:
            raise SchemaViolation(f"unknown keypoint role {self.role!r}")


@dataclass(frozen=True)
class DemoHeader:
    task: str
    schema: tuple
    cameras: tuple
    rate_hz: float
    version: int = FORMAT_VERSION
    extra: dict = field(default_factory=dict)

    def names(self, role=None) -> tuple:
        return tuple(s.name for s in self.schema if role is None or s.role == role)


@dataclass
class Frame:
    """One timestep: per-view pixels with occlusion flags and/or 3D points."""

    timestamp: float
    views: dict | None = None        # cam id -> {name: (2,) pixel array}
    occluded: dict | None = None     # cam id -> set of occluded names
    points3d: dict | None = None     # name -> (3,) array
    gripper_closed: bool | None = None
    gripper_distance: float | None = None


@dataclass
class Demonstration:
    header: DemoHeader
    frames: list

    def __len__(self) -> int:
        return len(self.frames)

    def validate(self) -> None:
        """Check monotone timestamps and a constant schema across frames."""
        if self.header.version != FORMAT_VERSION:
            raise FormatVersionMismatch(
                f"version {self.header.version} not supported (expected {FORMAT_VERSION})")
        names = set(self.header.names())
        if len(names) != len(self.header.schema):
            raise SchemaViolation("duplicate keypoint names in schema")
        previous = -np.inf
        for i, frame in enumerate(self.frames):
            if not np.isfinite(frame.timestamp) or frame.timestamp <= previous:
                raise SchemaViolation(f"timestamps not strictly increasing at frame {i}")
            previous = frame.timestamp
            if frame.views is not None:
                if set(frame.views) != set(self.header.cameras):
                    raise SchemaViolation(f"frame {i} views do not match header cameras")
                for cam, pixels in frame.views.items():
                    if set(pixels) != names:
                        raise SchemaViolation(f"frame {i} view {cam} missing keypoint columns")
            if frame.points3d is not None and set(frame.points3d) != names:
                raise SchemaViolation(f"frame {i} 3D points do not match schema")
            if frame.views is None and frame.points3d is None:
                raise SchemaViolation(f"frame {i} carries neither 2D views nor 3D points")

    def points3d_array(self, names) -> np.ndarray:
        """Stack 3D tracks for the given names into a (T, len(names), 3) array."""
        out = np.empty((len(self.frames), len(names), 3))
        for t, frame in enumerate(self.frames):
            if frame.points3d is None:
                raise SchemaViolation(f"frame {t} has no 3D points")
            for k, name in enumerate(names):
                out[t, k] = frame.points3d[name]
        return out

    def gripper_array(self) -> np.ndarray:
        out = np.empty(len(self.frames))
        for t, frame in enumerate(self.frames):
            if frame.gripper_closed is None:
                raise SchemaViolation(f"frame {t} has no gripper state")
            out[t] = 1.0 if frame.gripper_closed else 0.0
        return out


def _frame_record(frame: Frame) -> dict:
    record = {"kind": "frame", "t": frame.timestamp}
    if frame.views is not None:
        record["views"] = {
            cam: {name: [float(p[0]), float(p[1])] for name, p in sorted(pixels.items())}
            for cam, pixels in sorted(frame.views.items())
        }
        record["occluded"] = {
            cam: sorted(frame.occluded.get(cam, ())) if frame.occluded else []
            for cam in sorted(frame.views)
        }
    if frame.points3d is not None:
        record["points3d"] = {
            name: [float(v) for v in p] for name, p in sorted(frame.points3d.items())
        }
    if frame.gripper_closed is not None:
        record["gripper"] = {
            "closed": bool(frame.gripper_closed),
            "distance": None if frame.gripper_distance is None else float(frame.gripper_distance),
        }
    return record


def write_demo(demo: Demonstration, path) -> None:
    """Serialize a validated demonstration to line-delimited JSON."""
    demo.validate()
    header = {
        "kind": "header",
        "format": "pointmimic-demo",
        "version": demo.header.version,
        "task": demo.header.task,
        "schema": [{"name": s.name, "role": s.role} for s in demo.header.schema],
        "cameras": list(demo.header.cameras),
        "rate_hz": demo.header.rate_hz,
        "extra": demo.header.extra,
    }
    lines = [json.dumps(header, sort_keys=True)]
    lines.extend(json.dumps(_frame_record(f), sort_keys=True) for f in demo.frames)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_demo(path) -> Demonstration:
    """Parse and validate a demonstration file."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [line for line in text.split("\n") if line.strip()]
    if not lines:
        raise CorruptFile(f"{path}: empty file")
    try:
        header_rec = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path}: unparsable header: {exc}") from exc
    if not isinstance(header_rec, dict) or header_rec.get("kind") != "header":
        raise CorruptFile(f"{path}: first record is not a header")
    version = header_rec.get("version")
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"{path}: version {version!r} not supported")
    try:
        schema = tuple(KeypointSpec(s["name"], s["role"]) for s in header_rec["schema"])
        header = DemoHeader(
            task=header_rec["task"],
            schema=schema,
            cameras=tuple(header_rec["cameras"]),
            rate_hz=float(header_rec["rate_hz"]),
            version=version,
            extra=dict(header_rec.get("extra", {})),
        )
    except (KeyError, TypeError) as exc:
        raise CorruptFile(f"{path}: malformed header: {exc}") from exc

    frames = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptFile(f"{path}:{lineno}: unparsable frame: {exc}") from exc
        if rec.get("kind") != "frame":
            raise CorruptFile(f"{path}:{lineno}: expected a frame record")
        views = None
        occluded = None
        if "views" in rec:
            views = {
                cam: {name: np.asarray(p, dtype=np.float64) for name, p in pixels.items()}
                for cam, pixels in rec["views"].items()
            }
            occluded = {cam: set(names) for cam, names in rec.get("occluded", {}).items()}
        points3d = None
        if "points3d" in rec:
            points3d = {name: np.asarray(p, dtype=np.float64) for name, p in rec["points3d"].items()}
        gripper = rec.get("gripper")
        frames.append(Frame(
            timestamp=float(rec["t"]),
            views=views,
            occluded=occluded,
            points3d=points3d,
            gripper_closed=None if gripper is None else bool(gripper["closed"]),
            gripper_distance=None if gripper is None else gripper.get("distance"),
        ))
    demo = Demonstration(header, frames)
    demo.validate()
    return demo


def subsample(demo: Demonstration, stride: int) -> Demonstration:
    """Keep frames 0, stride, 2*stride, ... and always the final frame."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    indices = list(range(0, len(demo.frames), stride))
    if indices and indices[-1] != len(demo.frames) - 1:
        indices.append(len(demo.frames) - 1)
    header = replace(demo.header, rate_hz=demo.header.rate_hz / stride)
    return Demonstration(header, [demo.frames[i] for i in indices])


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    history: int = 10
    chunk: int = 20
    stride: int = 3
    val_fraction: float = 0.1
    split_seed: int = 0
    std_floor: float = 1e-6

    def __post_init__(self):
        if self.history < 1 or self.chunk < 1 or self.stride < 1:
            raise ValueError("history, chunk, and stride must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "DatasetConfig":
        return cls(**mapping)


@dataclass(frozen=True, eq=False)
class NormStats:
    """Per-axis mean/std over all 3D points of the training split."""

    mean: np.ndarray
    std: np.ndarray

    def normalize(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.std + self.mean


@dataclass
class DemoArrays:
    robot: np.ndarray      # (T, n_robot, 3)
    objects: np.ndarray    # (T, n_object, 3)
    gripper: np.ndarray    # (T,)


@dataclass
class Dataset:
    """Retargeted demonstrations indexed into (window, chunk) training samples."""

    robot_names: tuple
    object_names: tuple
    demos: list
    stats: NormStats
    config: DatasetConfig
    train_indices: list   # (demo_idx, frame_idx) pairs
    val_indices: list

    @property
    def sample_count(self) -> int:
        return len(self.train_indices)

    def gather(self, indices) -> dict:
        """Assemble raw-unit sample arrays for (demo, frame) index pairs.

        The observation window covers frames max(0, t-H+1)..t, front-padded by
        repeating the first frame; the target chunk covers t+1..t+L with the
        final frame repeated past the demo end.
        """
        h, l = self.config.history, self.config.chunk
        n = len(indices)
        robot = np.empty((n, len(self.robot_names), h, 3))
        objects = np.empty((n, len(self.object_names), h, 3))
        gripper = np.empty(n)
        target_tracks = np.empty((n, l, len(self.robot_names), 3))
        target_gripper = np.empty((n, l))
        for row, (demo_idx, t) in enumerate(indices):
            demo = self.demos[demo_idx]
            total = demo.robot.shape[0]
            past = np.clip(np.arange(t - h + 1, t + 1), 0, total - 1)
            future = np.clip(np.arange(t + 1, t + l + 1), 0, total - 1)
            robot[row] = demo.robot[past].transpose(1, 0, 2)
            objects[row] = demo.objects[past].transpose(1, 0, 2)
            gripper[row] = demo.gripper[t]
            target_tracks[row] = demo.robot[future]
            target_gripper[row] = demo.gripper[future]
        return {
            "robot": robot,
            "objects": objects,
            "gripper": gripper,
            "target_tracks": target_tracks,
            "target_gripper": target_gripper,
        }


def build_dataset(demos, config: DatasetConfig = DatasetConfig()) -> Dataset:
    """Validate, subsample, split, and index retargeted demonstrations.

    Normalization statistics are computed from the training split only.
    """
    demos = list(demos)
    if not demos:
        raise EmptyDataset("no demonstrations provided")
    reference = demos[0].header.schema
    robot_names = demos[0].header.names(ROLE_ROBOT)
    object_names = demos[0].header.names(ROLE_OBJECT)
    if not robot_names:
        raise SchemaViolation("dataset demos carry no robot keypoints")
    arrays = []
    for demo in demos:
        demo.validate()
        if demo.header.schema != reference:
            raise SchemaMismatchAcrossDemos(
                f"demo schema {demo.header.schema} != {reference}")
        sub = subsample(demo, config.stride)
        arrays.append(DemoArrays(
            robot=sub.points3d_array(robot_names),
            objects=sub.points3d_array(object_names),
            gripper=sub.gripper_array(),
        ))

    order = np.random.default_rng(config.split_seed).permutation(len(arrays))
    n_val = int(round(config.val_fraction * len(arrays)))
    if n_val >= len(arrays):
        n_val = len(arrays) - 1
    val_demos = set(order[:n_val].tolist())

    train_indices = []
    val_indices = []
    for demo_idx, demo in enumerate(arrays):
        target = val_indices if demo_idx in val_demos else train_indices
        target.extend((demo_idx, t) for t in range(demo.robot.shape[0]))

    train_points = [
        np.concatenate([arrays[d].robot[t], arrays[d].objects[t]], axis=0)
        for d, t in train_indices
    ]
    stacked = np.concatenate(train_points, axis=0)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), config.std_floor)
    return Dataset(
        robot_names=robot_names,
        object_names=object_names,
        demos=arrays,
        stats=NormStats(mean, std),
        config=config,
        train_indices=train_indices,
        val_indices=val_indices,
    )


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    """Load the shared YAML config; raises CorruptFile on parse errors."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CorruptFile(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise CorruptFile(f"unparsable config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise CorruptFile(f"config {path} must be a mapping")
    return data


def cameras_from_mapping(mapping: dict) -> dict:
    """Build named CameraModels from the config's `cameras` section."""
    return {name: CameraModel.from_mapping(entry, name=name)
            for name, entry in mapping.items()}
