"""Convert demonstrator hand keypoint tracks into robot poses and keypoint sets.

The hand schema uses four named landmarks (index_tip, thumb_tip,
index_knuckle, wrist_base): the smallest non-collinear set that pins down a
rigid motion between frames. Orientation change is the least-squares rigid
rotation between the first frame's hand points and the current frame's,
composed onto the known base orientation; position is the pinch midpoint.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dataio
from .errors import MissingKeypoint, SchemaViolation
from .geometry import (
    Pose,
    RigidTransform,
    estimate_rigid_transform,
    identity_quaternion,
    matrix_to_quat,
    quat_multiply,
    quat_to_matrix,
    triangulate_dlt,
)

HAND_KEYPOINTS = ("index_tip", "thumb_tip", "index_knuckle", "wrist_base")
DEFAULT_GRIPPER_THRESHOLD = 0.07
DEFAULT_BASE_ORIENTATION = identity_quaternion()


@dataclass
class HandFrame:
    """Named 3D hand landmarks (meters, robot base frame) at one timestamp."""

    points: dict
    timestamp: float = 0.0

    def __post_init__(self):
        if len(self.points) < 4:
            raise SchemaViolation(f"hand frame needs >= 4 points, got {len(self.points)}")
        for required in ("index_tip", "thumb_tip"):
            if required not in self.points:
                raise MissingKeypoint(f"hand frame missing {required!r}")
        self.points = {name: np.asarray(p, dtype=np.float64) for name, p in self.points.items()}
        for name, p in self.points.items():
            if p.shape != (3,) or not np.isfinite(p).all():
                raise SchemaViolation(f"hand point {name!r} must be a finite 3-vector")

    @property
    def index_tip(self) -> np.ndarray:
        return self.points["index_tip"]

    @property
    def thumb_tip(self) -> np.ndarray:
        return self.points["thumb_tip"]

    def array(self, names) -> np.ndarray:
        try:
            return np.stack([self.points[n] for n in names])
        except KeyError as exc:
            raise MissingKeypoint(f"hand frame missing {exc.args[0]!r}") from exc


@dataclass(frozen=True)
class GripperState:
    """Binary open/closed plus the finger distance it was derived from."""

    closed: bool
    distance: float


@dataclass(frozen=True)
class OffsetTable:
    """Fixed rigid offsets defining the robot keypoints around the end effector.

    The first entry is the wrist and must be the identity transform so the
    wrist keypoint coincides with the end-effector position.
    """

    names: tuple
    transforms: tuple

    def __post_init__(self):
        if len(self.names) != len(self.transforms):
            raise ValueError("names and transforms must have equal length")
        if len(self.names) != len(set(self.names)):
            raise ValueError("offset names must be unique")
        if len(self.names) < 3:
            raise ValueError("offset table needs at least 3 points")
        wrist = self.transforms[0]
        if not (np.allclose(wrist.rotation, np.eye(3), atol=1e-12)
                and np.allclose(wrist.translation, 0.0, atol=1e-12)):
            raise ValueError("first offset (wrist) must be the identity transform")
        spread = np.linalg.svd(self.translations() - self.translations().mean(axis=0),
                               compute_uv=False)
        if spread[1] < 1e-8 * spread[0]:
            raise ValueError("offset translations must not be collinear")

    def translations(self) -> np.ndarray:
        return np.stack([t.translation for t in self.transforms])

    def canonical_points(self, base_orientation) -> np.ndarray:
        """Keypoints of a pose at the origin with the given base orientation."""
        return self.translations() @ quat_to_matrix(base_orientation).T


def default_offset_table(scale: float = 0.04) -> OffsetTable:
    """Wrist at the origin plus +-scale along two gripper-frame axes."""
    names = ("wrist", "grip_x_pos", "grip_x_neg", "grip_y_pos", "grip_y_neg")
    offsets = [
        np.zeros(3),
        np.array([scale, 0.0, 0.0]),
        np.array([-scale, 0.0, 0.0]),
        np.array([0.0, scale, 0.0]),
        np.array([0.0, -scale, 0.0]),
    ]
    return OffsetTable(names, tuple(RigidTransform(np.eye(3), t) for t in offsets))


@dataclass(frozen=True, eq=False)
class RobotKeypointSet:
    """Named 3D keypoints rigidly attached to the end-effector frame."""

    names: tuple
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (len(self.names), 3):
            raise ValueError(f"points must be ({len(self.names)}, 3), got {pts.shape}")
        object.__setattr__(self, "points", pts)

    @property
    def wrist(self) -> np.ndarray:
        return self.points[0]

    def pairwise_distances(self) -> np.ndarray:
        diff = self.points[:, None, :] - self.points[None, :, :]
        return np.linalg.norm(diff, axis=-1)


def gripper_from_hand(frame: HandFrame,
                      threshold: float = DEFAULT_GRIPPER_THRESHOLD) -> GripperState:
    """Closed iff the index-tip to thumb-tip distance is strictly below threshold."""
    distance = float(np.linalg.norm(frame.index_tip - frame.thumb_tip))
    return GripperState(closed=distance < threshold, distance=distance)


def hand_to_pose(frame0: HandFrame, frame_t: HandFrame, base_orientation=None) -> Pose:
    """Map a hand frame to an end-effector pose.

    Position is the midpoint of index and thumb tips at time t; orientation is
    the rigid rotation registered from frame0's points to frame_t's, composed
    onto the base orientation.
    """
    if base_orientation is None:
        base_orientation = DEFAULT_BASE_ORIENTATION
    names = tuple(frame0.points)
    delta = estimate_rigid_transform(frame0.array(names), frame_t.array(names))
    orientation = quat_multiply(matrix_to_quat(delta.rotation), base_orientation)
    position = 0.5 * (frame_t.index_tip + frame_t.thumb_tip)
    return Pose(position, orientation)


def pose_to_keypoints(pose: Pose, offsets: OffsetTable) -> RobotKeypointSet:
    """Robot keypoints: the translation of pose composed with each offset."""
    transform = pose.as_transform()
    points = np.stack([transform.compose(t).translation for t in offsets.transforms])
    return RobotKeypointSet(offsets.names, points)


def lift_track(pixels, occluded, cameras) -> np.ndarray:
    """Triangulate a per-frame multi-view pixel track into 3D.

    pixels: (T, n_views, 2), occluded: (T, n_views) bool. Frames where any
    view is occluded hold the last valid 3D value; leading occluded frames
    are back-filled from the first valid one.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    occluded = np.asarray(occluded, dtype=bool)
    if pixels.ndim != 3 or pixels.shape[2] != 2 or pixels.shape[1] != len(cameras):
        raise ValueError(f"pixels must be (T, {len(cameras)}, 2), got {pixels.shape}")
    if occluded.shape != pixels.shape[:2]:
        raise ValueError(f"occluded must be {pixels.shape[:2]}, got {occluded.shape}")
    total = pixels.shape[0]
    if total == 0:
        return np.empty((0, 3))

    out = np.empty((total, 3))
    valid = ~occluded.any(axis=1)
    if not valid.any():
        raise MissingKeypoint("track is occluded in every frame")
    last = None
    for t in range(total):
        if valid[t]:
            out[t] = triangulate_dlt(list(zip(cameras, pixels[t])))
            last = out[t]
        elif last is not None:
            out[t] = last
    first_valid = int(np.argmax(valid))
    out[:first_valid] = out[first_valid]
    return out


def retarget_demo(demo: dataio.Demonstration,
                  cameras,
                  offsets: OffsetTable | None = None,
                  base_orientation=None,
                  gripper_threshold: float = DEFAULT_GRIPPER_THRESHOLD) -> dataio.Demonstration:
    """Lift a two-view hand demo to 3D and convert it to robot-frame training data.

    Per frame: triangulate all tracks, map the hand to a pose, synthesize the
    rigid robot keypoints, and derive the gripper state. Object tracks are
    lifted unchanged.
    """
    if offsets is None:
        offsets = default_offset_table()
    if base_orientation is None:
        base_orientation = DEFAULT_BASE_ORIENTATION
    demo.validate()
    if not demo.frames:
        raise SchemaViolation("cannot retarget an empty demonstration")
    cam_list = [cameras[c] for c in demo.header.cameras] if isinstance(cameras, dict) else list(cameras)
    if len(cam_list) != len(demo.header.cameras):
        raise ValueError("camera count does not match demo header")

    hand_names = demo.header.names(dataio.ROLE_HAND)
    object_names = demo.header.names(dataio.ROLE_OBJECT)
    if not hand_names:
        raise SchemaViolation("demo has no hand keypoints to retarget")

    lifted = {}
    for name in hand_names + object_names:
        pixels = np.stack([
            np.stack([frame.views[cam][name] for cam in demo.header.cameras])
            for frame in demo.frames
        ])
        occluded = np.array([
            [name in (frame.occluded or {}).get(cam, ()) for cam in demo.header.cameras]
            for frame in demo.frames
        ])
        lifted[name] = lift_track(pixels, occluded, cam_list)

    hand_frames = [
        HandFrame({name: lifted[name][t] for name in hand_names},
                  timestamp=frame.timestamp)
        for t, frame in enumerate(demo.frames)
    ]

    schema = tuple(
        [dataio.KeypointSpec(n, dataio.ROLE_ROBOT) for n in offsets.names]
        + [dataio.KeypointSpec(n, dataio.ROLE_OBJECT) for n in object_names]
    )
    header = dataio.DemoHeader(
        task=demo.header.task,
        schema=schema,
        cameras=demo.header.cameras,
        rate_hz=demo.header.rate_hz,
        extra={**demo.header.extra, "retargeted": True},
    )

    frames = []
    for t, source in enumerate(demo.frames):
        pose = hand_to_pose(hand_frames[0], hand_frames[t], base_orientation)
        keypoints = pose_to_keypoints(pose, offsets)
        gripper = gripper_from_hand(hand_frames[t], gripper_threshold)
        points3d = {name: keypoints.points[i] for i, name in enumerate(offsets.names)}
        points3d.update({name: lifted[name][t] for name in object_names})
        frames.append(dataio.Frame(
            timestamp=source.timestamp,
            points3d=points3d,
            gripper_closed=gripper.closed,
            gripper_distance=gripper.distance,
        ))
    return dataio.Demonstration(header, frames)
