"""Turn predicted point tracks into executable end-effector actions.

Overlapping action chunks are blended per timestep with exponentially
decaying weights by chunk age; the blended keypoints are mapped back to a
6-DOF pose by rigid registration against the canonical offset layout.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import dataio
from .errors import NoCoverage, NonUnitInput
from .geometry import estimate_rigid_transform, matrix_to_quat, quat_multiply
from .policy import ActionChunk, ObservationWindow, TrackPolicy
from .retarget import DEFAULT_BASE_ORIENTATION, OffsetTable

logger = logging.getLogger(__name__)

DEFAULT_ENSEMBLE_DECAY = 0.1
CONTROL_HZ = 6.0
CONTROL_DT = 1.0 / CONTROL_HZ


@dataclass(frozen=True, eq=False)
class Action:
    """One end-effector command: position, orientation, gripper."""

    position: np.ndarray
    orientation: np.ndarray
    gripper_closed: bool

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64)
        q = np.asarray(self.orientation, dtype=np.float64)
        if p.shape != (3,) or not np.isfinite(p).all():
            raise ValueError("action position must be a finite 3-vector")
        if q.shape != (4,) or abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise NonUnitInput("action orientation must be a unit quaternion")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)


def clamp_action(action: Action, bounds) -> Action:
    """Clamp the commanded position into workspace bounds, logging if it moved."""
    low, high = np.asarray(bounds[0], dtype=np.float64), np.asarray(bounds[1], dtype=np.float64)
    clamped = np.clip(action.position, low, high)
    if not np.array_equal(clamped, action.position):
        logger.warning("action position %s clamped to workspace %s", action.position, clamped)
        return Action(clamped, action.orientation, action.gripper_closed)
    return action


@dataclass
class ChunkBuffer:
    """Ring of recent action chunks keyed by the step they were emitted at.

    A chunk emitted after observing step e predicts steps e+1 .. e+L. For a
    query step s the age of that chunk's entry is s - e - 1 (newest = 0).
    """

    decay: float = DEFAULT_ENSEMBLE_DECAY
    entries: list = field(default_factory=list)

    def push(self, emission_step: int, chunk: ActionChunk) -> None:
        if self.entries and emission_step <= self.entries[-1][0]:
            raise ValueError("chunks must be pushed with increasing emission steps")
        self.entries.append((emission_step, chunk))

    def prune(self, step: int) -> None:
        """Drop chunks whose horizon ends before `step`."""
        self.entries = [(e, c) for e, c in self.entries if e + c.length >= step]

    def _covering(self, step: int) -> list:
        out = []
        for emitted, chunk in self.entries:
            index = step - emitted - 1
            if 0 <= index < chunk.length:
                out.append((step - emitted - 1, chunk, index))
        return out

    def weights_for(self, step: int) -> np.ndarray:
        """Normalized convex weights over the chunks covering `step`, newest first."""
        covering = self._covering(step)
        if not covering:
            raise NoCoverage(f"no buffered chunk covers step {step}")
        ages = np.array(sorted(age for age, _, _ in covering), dtype=np.float64)
        raw = np.exp(-self.decay * ages)
        return raw / raw.sum()

    def ensemble(self, step: int):
        """Blend all chunk entries targeting `step`.

        Returns (points (n_robot, 3), gripper probability). Weights are
        proportional to exp(-decay * age) and normalized to sum to one;
        gripper probabilities are averaged with the same weights.
        """
        self.prune(step)
        covering = sorted(self._covering(step), key=lambda item: item[0])
        if not covering:
            raise NoCoverage(f"no buffered chunk covers step {step}")
        ages = np.array([age for age, _, _ in covering], dtype=np.float64)
        raw = np.exp(-self.decay * ages)
        weights = raw / raw.sum()
        points = np.zeros_like(covering[0][1].points[0])
        probability = 0.0
        for weight, (_, chunk, index) in zip(weights, covering):
            points = points + weight * chunk.points[index]
            probability += weight * _sigmoid(chunk.gripper_logits[index])
        return points, float(probability)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def ensemble(buffer: ChunkBuffer, step: int):
    """Module-level alias for ChunkBuffer.ensemble."""
    return buffer.ensemble(step)


def backtrack_action(points,
                     offsets: OffsetTable,
                     base_orientation=None,
                     gripper_closed: bool = False) -> Action:
    """Recover a 6-DOF action from predicted robot keypoints.

    Position is the wrist keypoint; orientation is the rigid rotation
    registered from the canonical offset layout (at the known base
    orientation) to the predicted points, composed onto the base orientation.
    """
    if base_orientation is None:
        base_orientation = DEFAULT_BASE_ORIENTATION
    points = np.asarray(points, dtype=np.float64)
    if points.shape != (len(offsets.names), 3):
        raise ValueError(f"expected {(len(offsets.names), 3)} points, got {points.shape}")
    canonical = offsets.canonical_points(base_orientation)
    delta = estimate_rigid_transform(canonical, points)
    orientation = quat_multiply(matrix_to_quat(delta.rotation), base_orientation)
    return Action(points[0].copy(), orientation, gripper_closed)


@dataclass
class RolloutResult:
    success: bool
    steps: int
    positions: np.ndarray         # commanded positions, (steps, 3)
    weight_sums: np.ndarray       # ensemble weight totals per step
    trajectory: dataio.Demonstration | None

    def position_increment_variance(self) -> float:
        """Total variance (trace of covariance) of per-step position increments."""
        if len(self.positions) < 3:
            return 0.0
        increments = np.diff(self.positions, axis=0)
        return float(np.var(increments, axis=0).sum())


def rollout(policy: TrackPolicy,
            env,
            max_steps: int,
            offsets: OffsetTable,
            base_orientation=None,
            decay: float = DEFAULT_ENSEMBLE_DECAY,
            use_ensemble: bool = True,
            record_trajectory: bool = True) -> RolloutResult:
    """Closed-loop execution: observe, predict a chunk, blend, backtrack, step.

    The env must provide observe_points() -> (robot (n,3), objects (m,3),
    gripper_closed), step(Action), succeeded() -> bool, plus robot_names /
    object_names / task_id attributes. One step covers 1/6 s of simulated time.
    """
    if base_orientation is None:
        base_orientation = DEFAULT_BASE_ORIENTATION
    history_robot: list = []
    history_object: list = []
    buffer = ChunkBuffer(decay=decay)
    positions = []
    weight_sums = []
    records = []
    success = False
    steps_taken = 0

    for step in range(max_steps):
        robot_pts, object_pts, gripper_closed = env.observe_points()
        history_robot.append(robot_pts)
        history_object.append(object_pts)
        h = policy.config.history
        pad = h - len(history_robot)
        robot_hist = np.stack([history_robot[0]] * pad + history_robot[-h:]) if pad > 0 \
            else np.stack(history_robot[-h:])
        object_hist = np.stack([history_object[0]] * pad + history_object[-h:]) if pad > 0 \
            else np.stack(history_object[-h:])
        window = ObservationWindow(
            robot=robot_hist.transpose(1, 0, 2),
            objects=object_hist.transpose(1, 0, 2),
            gripper=1.0 if gripper_closed else 0.0,
        )
        chunk = policy.forward_window(window)
        if use_ensemble:
            buffer.push(step, chunk)
            points, probability = buffer.ensemble(step + 1)
            weight_sums.append(float(buffer.weights_for(step + 1).sum()))
        else:
            points, probability = chunk.points[0], _sigmoid(chunk.gripper_logits[0])
            weight_sums.append(1.0)
        action = backtrack_action(points, offsets, base_orientation,
                                  gripper_closed=probability >= 0.5)
        action = clamp_action(action, env.workspace_bounds)
        env.step(action)
        steps_taken = step + 1
        positions.append(action.position)
        if record_trajectory:
            achieved_robot, achieved_objects, achieved_grip = env.true_points()
            points3d = {name: achieved_robot[i] for i, name in enumerate(env.robot_names)}
            points3d.update({name: achieved_objects[i] for i, name in enumerate(env.object_names)})
            records.append(dataio.Frame(
                timestamp=steps_taken * CONTROL_DT,
                points3d=points3d,
                gripper_closed=achieved_grip,
            ))
        if env.succeeded():
            success = True
            break

    trajectory = None
    if record_trajectory and records:
        schema = tuple(
            [dataio.KeypointSpec(n, dataio.ROLE_ROBOT) for n in env.robot_names]
            + [dataio.KeypointSpec(n, dataio.ROLE_OBJECT) for n in env.object_names]
        )
        header = dataio.DemoHeader(
            task=env.task_id,
            schema=schema,
            cameras=tuple(env.camera_names),
            rate_hz=CONTROL_HZ,
            extra={"rollout": True},
        )
        trajectory = dataio.Demonstration(header, records)
    return RolloutResult(
        success=success,
        steps=steps_taken,
        positions=np.asarray(positions) if positions else np.empty((0, 3)),
        weight_sums=np.asarray(weight_sums) if weight_sums else np.empty(0),
        trajectory=trajectory,
    )
