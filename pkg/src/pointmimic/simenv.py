"""Kinematic point-space world: scripted demonstrations, virtual cameras, tasks.

The world is purely kinematic: the robot end effector follows position
commands exactly, and a grasped object (gripper closed within the grasp
radius of its grasp point) follows the end-effector frame rigidly until
released. Demonstrations are produced by a scripted "hand" whose four
landmarks move rigidly apart from a symmetric finger opening/closing, so the
rigid registration of any frame against the first recovers the hand's true
rotation exactly even mid-pinch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import control, dataio
from .errors import InvalidSpec, PlanningFailed
from .geometry import CameraModel, Pose, intrinsics_matrix, project
from .retarget import (
    DEFAULT_BASE_ORIENTATION,
    DEFAULT_GRIPPER_THRESHOLD,
    HAND_KEYPOINTS,
    HandFrame,
    OffsetTable,
    default_offset_table,
    gripper_from_hand,
    hand_to_pose,
    pose_to_keypoints,
)

DEMO_HZ = 20.0
WORKSPACE_LOW = np.array([0.25, -0.35, 0.0])
WORKSPACE_HIGH = np.array([0.75, 0.35, 0.45])
WORKSPACE_CENTER = np.array([0.5, 0.0, 0.15])

OPEN_GAP = 0.10
CLOSED_GAP = 0.04

TASK_IDS = ("reach", "push-block", "pick-place")

# hand landmark layout in the hand-local frame; the pinch midpoint is the origin
_HAND_FIXED = {
    "index_knuckle": np.array([-0.06, 0.05, 0.0]),
    "wrist_base": np.array([-0.12, 0.0, 0.03]),
}


def hand_points_local(gap: float) -> dict:
    """Hand landmarks for a given finger gap; tips close symmetrically along y."""
    return {
        "index_tip": np.array([0.0, gap / 2.0, 0.0]),
        "thumb_tip": np.array([0.0, -gap / 2.0, 0.0]),
        **{k: v.copy() for k, v in _HAND_FIXED.items()},
    }


def default_cameras(image_size=(640, 480), focal: float = 500.0) -> dict:
    """Two third-person views: +-30 degree yaw about the workspace center, 1 m out."""
    k = intrinsics_matrix(focal, focal, image_size[0] / 2.0, image_size[1] / 2.0)
    elevation = np.radians(25.0)
    cameras = {}
    for name, yaw in (("cam0", np.radians(30.0)), ("cam1", np.radians(-30.0))):
        offset = np.array([
            -np.cos(elevation) * np.cos(yaw),
            -np.cos(elevation) * np.sin(yaw),
            np.sin(elevation),
        ])
        cameras[name] = CameraModel.look_at(
            WORKSPACE_CENTER + offset, WORKSPACE_CENTER, k, name=name)
    return cameras


@dataclass(frozen=True)
class NoiseModel:
    """Observation corruption: pixel noise, sensor-depth bias/jitter, occlusion."""

    pixel_sigma: float = 0.0
    depth_bias: float = 0.0
    depth_jitter: float = 0.0
    occlusion_prob: float = 0.0

    def __post_init__(self):
        if min(self.pixel_sigma, self.depth_jitter, self.occlusion_prob) < 0:
            raise ValueError("noise parameters must be non-negative")
        if not 0.0 <= self.occlusion_prob <= 1.0:
            raise ValueError("occlusion_prob must lie in [0, 1]")

    @classmethod
    def zero(cls) -> "NoiseModel":
        return cls()


@dataclass(frozen=True)
class ObjectSpec:
    """One scene object: named keypoints at fixed offsets around a spawned anchor."""

    name: str
    keypoint_names: tuple
    keypoint_offsets: tuple      # offsets from the anchor, summing to ~zero
    spawn_low: tuple
    spawn_high: tuple
    graspable: bool = False

    def offsets_array(self) -> np.ndarray:
        return np.asarray(self.keypoint_offsets, dtype=np.float64)


@dataclass(frozen=True)
class TaskSpec:
    """Task family, object spawn ranges, and the success predicate parameters."""

    task_id: str
    objects: tuple
    episode_length: int
    start_position: tuple = (0.45, 0.0, 0.25)
    start_jitter: float = 0.02
    success_radius: float = 0.02
    grasp_radius: float = 0.03
    workspace_low: tuple = tuple(WORKSPACE_LOW)
    workspace_high: tuple = tuple(WORKSPACE_HIGH)

    def __post_init__(self):
        if self.task_id not in TASK_IDS:
            raise InvalidSpec(f"unknown task {self.task_id!r}; expected one of {TASK_IDS}")
        if self.episode_length < 0:
            raise InvalidSpec("episode_length must be non-negative")
        if self.success_radius <= 0 or self.grasp_radius <= 0:
            raise InvalidSpec("success_radius and grasp_radius must be positive")
        if self.start_jitter < 0:
            raise InvalidSpec("start_jitter must be non-negative")
        low, high = np.asarray(self.workspace_low), np.asarray(self.workspace_high)
        for obj in self.objects:
            slow, shigh = np.asarray(obj.spawn_low), np.asarray(obj.spawn_high)
            if np.any(slow > shigh):
                raise InvalidSpec(f"{obj.name}: spawn_low exceeds spawn_high")
            if np.any(slow < low) or np.any(shigh > high):
                raise InvalidSpec(f"{obj.name}: spawn range leaves the workspace")
        names = [n for obj in self.objects for n in obj.keypoint_names]
        if len(names) != len(set(names)):
            raise InvalidSpec("object keypoint names must be globally unique")

    @property
    def bounds(self):
        return (np.asarray(self.workspace_low), np.asarray(self.workspace_high))

    def keypoint_names(self) -> tuple:
        return tuple(n for obj in self.objects for n in obj.keypoint_names)

    def graspable_name(self) -> str | None:
        for obj in self.objects:
            if obj.graspable:
                return obj.name
        return None


def _block_offsets(prefix: str) -> tuple:
    names = (f"{prefix}_center", f"{prefix}_edge_a", f"{prefix}_edge_b")
    offsets = ((0.0, 0.0, 0.0), (0.03, -0.01, 0.005), (-0.03, 0.01, -0.005))
    return names, offsets


def make_task(task_id: str) -> TaskSpec:
    """Built-in task specs with in-range spatial variation of object spawns."""
    if task_id == "reach":
        goal = ObjectSpec(
            name="goal",
            keypoint_names=("goal_center",),
            keypoint_offsets=((0.0, 0.0, 0.0),),
            spawn_low=(0.40, -0.15, 0.10),
            spawn_high=(0.60, 0.15, 0.30),
        )
        return TaskSpec(task_id="reach", objects=(goal,), episode_length=40)
    if task_id == "push-block":
        names, offsets = _block_offsets("block")
        block = ObjectSpec(
            name="block", keypoint_names=names, keypoint_offsets=offsets,
            spawn_low=(0.42, -0.12, 0.02), spawn_high=(0.58, 0.08, 0.02),
            graspable=True,
        )
        target = ObjectSpec(
            name="target", keypoint_names=("target_center",),
            keypoint_offsets=((0.0, 0.0, 0.0),),
            spawn_low=(0.45, 0.16, 0.02), spawn_high=(0.55, 0.26, 0.02),
        )
        return TaskSpec(task_id="push-block", objects=(block, target), episode_length=60)
    if task_id == "pick-place":
        names, offsets = _block_offsets("item")
        item = ObjectSpec(
            name="item", keypoint_names=names, keypoint_offsets=offsets,
            spawn_low=(0.42, -0.18, 0.02), spawn_high=(0.58, -0.02, 0.02),
            graspable=True,
        )
        target = ObjectSpec(
            name="target", keypoint_names=("target_center",),
            keypoint_offsets=((0.0, 0.0, 0.0),),
            spawn_low=(0.44, 0.10, 0.02), spawn_high=(0.56, 0.22, 0.02),
        )
        return TaskSpec(task_id="pick-place", objects=(item, target), episode_length=70)
    raise InvalidSpec(f"unknown task {task_id!r}; expected one of {TASK_IDS}")


@dataclass
class ObjectState:
    name: str
    points: np.ndarray
    graspable: bool
    attached: bool = False


@dataclass
class Scene:
    """Mutable world state for a single trial."""

    spec: TaskSpec
    robot_pose: Pose
    gripper_closed: bool
    objects: dict
    offsets: OffsetTable
    rng: np.random.Generator
    hand: HandFrame | None = None
    hand0: HandFrame | None = None
    attach_offsets: dict = field(default_factory=dict)

    def robot_keypoints(self) -> np.ndarray:
        return pose_to_keypoints(self.robot_pose, self.offsets).points

    def object_points(self) -> np.ndarray:
        stacks = [state.points for state in self.objects.values()]
        return np.concatenate(stacks, axis=0) if stacks else np.empty((0, 3))


def reset(spec: TaskSpec, seed, offsets: OffsetTable | None = None) -> Scene:
    """Deterministic scene from a seed: object anchors sampled uniformly in their
    spawn ranges and the start pose jittered inside its own small box."""
    if offsets is None:
        offsets = default_offset_table()
    rng = np.random.default_rng(seed)
    objects = {}
    for obj in spec.objects:
        anchor = rng.uniform(np.asarray(obj.spawn_low), np.asarray(obj.spawn_high))
        objects[obj.name] = ObjectState(
            name=obj.name,
            points=anchor + obj.offsets_array(),
            graspable=obj.graspable,
        )
    start = np.asarray(spec.start_position, dtype=np.float64)
    if spec.start_jitter > 0:
        start = start + rng.uniform(-spec.start_jitter, spec.start_jitter, 3)
    return Scene(
        spec=spec,
        robot_pose=Pose(start, DEFAULT_BASE_ORIENTATION),
        gripper_closed=False,
        objects=objects,
        offsets=offsets,
        rng=rng,
    )


def _update_attachments(scene: Scene, agent_pose: Pose, closed: bool) -> None:
    transform = agent_pose.as_transform()
    if not closed:
        for state in scene.objects.values():
            state.attached = False
        scene.attach_offsets.clear()
        return
    for state in scene.objects.values():
        if state.graspable and not state.attached:
            grasp_point = state.points[0]
            if np.linalg.norm(grasp_point - agent_pose.position) < scene.spec.grasp_radius:
                state.attached = True
                scene.attach_offsets[state.name] = transform.inverse().apply(state.points)
    for state in scene.objects.values():
        if state.attached:
            state.points = transform.apply(scene.attach_offsets[state.name])


def step(scene: Scene, action: control.Action) -> Scene:
    """Position-control step: the pose snaps to the (clamped) command."""
    low, high = scene.spec.bounds
    position = np.clip(action.position, low, high)
    pose = Pose(position, action.orientation)
    scene.robot_pose = pose
    scene.gripper_closed = action.gripper_closed
    _update_attachments(scene, pose, action.gripper_closed)
    return scene


def step_hand(scene: Scene, frame: HandFrame,
              gripper_threshold: float = DEFAULT_GRIPPER_THRESHOLD) -> Scene:
    """Advance the scene with a demonstrator hand frame instead of a robot action."""
    if scene.hand0 is None:
        scene.hand0 = frame
    pose = hand_to_pose(scene.hand0, frame, DEFAULT_BASE_ORIENTATION)
    grip = gripper_from_hand(frame, gripper_threshold)
    scene.hand = frame
    scene.robot_pose = pose
    scene.gripper_closed = grip.closed
    _update_attachments(scene, pose, grip.closed)
    return scene


def success(spec: TaskSpec, scene: Scene) -> bool:
    """Task predicate, strict inequality at the success radius."""
    if spec.task_id == "reach":
        goal = scene.objects["goal"].points[0]
        return bool(np.linalg.norm(scene.robot_pose.position - goal) < spec.success_radius)
    carried = scene.objects[spec.graspable_name()]
    target = scene.objects["target"].points[0]
    centroid = carried.points.mean(axis=0)
    placed = np.linalg.norm(centroid - target) < spec.success_radius
    return bool(placed and not carried.attached)


# ---------------------------------------------------------------------------
# observation
# ---------------------------------------------------------------------------

@dataclass
class Observation:
    """Two-view pixel observations of every scene keypoint, plus sensor depth."""

    names: tuple
    pixels: np.ndarray     # (n_points, n_views, 2)
    occluded: np.ndarray   # (n_points, n_views) bool
    depths: np.ndarray     # (n_points, n_views) corrupted ray distance, meters


def observe(scene: Scene, cameras, noise: NoiseModel = NoiseModel.zero()) -> Observation:
    """Project agent and object keypoints into every view with additive noise.

    Agent keypoints are the hand landmarks while a hand demo is running,
    otherwise the robot's rigid keypoints. The depth channel carries the true
    camera-to-point ray distance plus bias and Gaussian jitter.
    """
    cam_list = list(cameras.values()) if isinstance(cameras, dict) else list(cameras)
    if scene.hand is not None:
        agent_names = HAND_KEYPOINTS
        agent_points = scene.hand.array(HAND_KEYPOINTS)
    else:
        agent_names = scene.offsets.names
        agent_points = scene.robot_keypoints()
    names = tuple(agent_names) + scene.spec.keypoint_names()
    points = np.concatenate([agent_points, scene.object_points()], axis=0)

    n, v = points.shape[0], len(cam_list)
    pixels = np.empty((n, v, 2))
    depths = np.empty((n, v))
    for j, cam in enumerate(cam_list):
        for i in range(n):
            pixels[i, j] = project(cam, points[i])
            depths[i, j] = np.linalg.norm(points[i] - cam.center)
    if noise.pixel_sigma > 0:
        pixels += scene.rng.normal(0.0, noise.pixel_sigma, pixels.shape)
    depths += noise.depth_bias
    if noise.depth_jitter > 0:
        depths += scene.rng.normal(0.0, noise.depth_jitter, depths.shape)
    occluded = (scene.rng.random((n, v)) < noise.occlusion_prob) \
        if noise.occlusion_prob > 0 else np.zeros((n, v), dtype=bool)
    return Observation(names=names, pixels=pixels, occluded=occluded, depths=depths)


def lift_with_sensor_depth(observation: Observation, cameras) -> np.ndarray:
    """Back-project the first view's pixels through the corrupted depth channel.

    This is the degraded single-view alternative to two-view triangulation:
    each point is placed along its pixel ray at the measured ray distance.
    """
    cam_list = list(cameras.values()) if isinstance(cameras, dict) else list(cameras)
    cam = cam_list[0]
    k_inv = np.linalg.inv(cam.intrinsics)
    rotation_wc = cam.extrinsics.rotation.T
    center = cam.center
    out = np.empty((observation.pixels.shape[0], 3))
    for i, (u, v) in enumerate(observation.pixels[:, 0]):
        ray_cam = k_inv @ np.array([u, v, 1.0])
        ray_world = rotation_wc @ (ray_cam / np.linalg.norm(ray_cam))
        out[i] = center + observation.depths[i, 0] * ray_world
    return out


# ---------------------------------------------------------------------------
# scripted expert
# ---------------------------------------------------------------------------

def _min_jerk(s: float) -> float:
    return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)


@dataclass(frozen=True)
class _Segment:
    duration: float
    position: np.ndarray
    gap: float


def _plan_waypoints(spec: TaskSpec, scene: Scene) -> list:
    if spec.task_id == "reach":
        goal = scene.objects["goal"].points[0]
        return [
            _Segment(3.0, goal, OPEN_GAP),
            _Segment(0.5, goal, OPEN_GAP),
        ]
    carried = scene.objects[spec.graspable_name()]
    grasp = carried.points[0].copy()
    target = scene.objects["target"].points[0].copy()
    if spec.task_id == "push-block":
        drag_end = np.array([target[0], target[1], grasp[2]])
        retreat = drag_end + np.array([0.0, 0.0, 0.15])
        return [
            _Segment(2.0, grasp, OPEN_GAP),
            _Segment(0.6, grasp, CLOSED_GAP),
            _Segment(2.2, drag_end, CLOSED_GAP),
            _Segment(0.6, drag_end, OPEN_GAP),
            _Segment(1.0, retreat, OPEN_GAP),
        ]
    # pick-place
    above_item = grasp + np.array([0.0, 0.0, 0.12])
    lifted = grasp + np.array([0.0, 0.0, 0.18])
    above_target = np.array([target[0], target[1], grasp[2] + 0.18])
    place = np.array([target[0], target[1], grasp[2]])
    retreat = place + np.array([0.0, 0.0, 0.15])
    return [
        _Segment(1.8, above_item, OPEN_GAP),
        _Segment(0.8, grasp, OPEN_GAP),
        _Segment(0.6, grasp, CLOSED_GAP),
        _Segment(0.8, lifted, CLOSED_GAP),
        _Segment(1.6, above_target, CLOSED_GAP),
        _Segment(0.9, place, CLOSED_GAP),
        _Segment(0.6, place, OPEN_GAP),
        _Segment(0.8, retreat, OPEN_GAP),
    ]


def scripted_expert(spec: TaskSpec, scene: Scene) -> list:
    """Smooth 20 Hz hand trajectory executing the task in the given scene.

    Positions follow minimum-jerk blends between waypoints; the finger gap
    closes monotonically below the gripper threshold once per grasp. Raises
    PlanningFailed when a waypoint leaves the workspace.
    """
    segments = _plan_waypoints(spec, scene)
    low, high = spec.bounds
    for seg in segments:
        if np.any(seg.position < low) or np.any(seg.position > high):
            raise PlanningFailed(
                f"waypoint {np.round(seg.position, 3)} outside workspace for {spec.task_id}")

    frames = []
    position = scene.robot_pose.position.copy()
    gap = OPEN_GAP
    time = 0.0

    def emit(pos, g, t):
        local = hand_points_local(g)
        frames.append(HandFrame({k: v + pos for k, v in local.items()}, timestamp=t))

    emit(position, gap, time)
    dt = 1.0 / DEMO_HZ
    for seg in segments:
        steps = max(1, int(round(seg.duration * DEMO_HZ)))
        start_pos, start_gap = position.copy(), gap
        for i in range(1, steps + 1):
            blend = _min_jerk(i / steps)
            pos = start_pos + blend * (seg.position - start_pos)
            g = start_gap + blend * (seg.gap - start_gap)
            time += dt
            emit(pos, g, time)
        position, gap = seg.position.copy(), seg.gap
    return frames


def simulate_hand_demo(spec: TaskSpec, seed, cameras,
                       noise: NoiseModel = NoiseModel.zero(),
                       offsets: OffsetTable | None = None) -> dataio.Demonstration:
    """Run the scripted expert in a fresh scene and record a two-view demo."""
    scene = reset(spec, seed, offsets)
    plan = scripted_expert(spec, scene)
    camera_names = tuple(cameras) if isinstance(cameras, dict) else \
        tuple(c.name for c in cameras)
    schema = tuple(
        [dataio.KeypointSpec(n, dataio.ROLE_HAND) for n in HAND_KEYPOINTS]
        + [dataio.KeypointSpec(n, dataio.ROLE_OBJECT) for n in spec.keypoint_names()]
    )
    header = dataio.DemoHeader(
        task=spec.task_id, schema=schema, cameras=camera_names,
        rate_hz=DEMO_HZ, extra={"scene_seed": int(seed)},
    )
    frames = []
    for hand_frame in plan:
        step_hand(scene, hand_frame)
        obs = observe(scene, cameras, noise)
        views = {
            cam: {name: obs.pixels[i, j] for i, name in enumerate(obs.names)}
            for j, cam in enumerate(camera_names)
        }
        occluded = {
            cam: {name for i, name in enumerate(obs.names) if obs.occluded[i, j]}
            for j, cam in enumerate(camera_names)
        }
        grip = gripper_from_hand(hand_frame)
        frames.append(dataio.Frame(
            timestamp=hand_frame.timestamp,
            views=views,
            occluded=occluded,
            gripper_closed=grip.closed,
            gripper_distance=grip.distance,
        ))
    return dataio.Demonstration(header, frames)


def replay_demo(demo: dataio.Demonstration, spec: TaskSpec,
                offsets: OffsetTable | None = None) -> bool:
    """Re-execute a retargeted demo through pose backtracking in its own scene."""
    if offsets is None:
        offsets = default_offset_table()
    seed = demo.header.extra.get("scene_seed")
    if seed is None:
        raise InvalidSpec("demo header lacks the scene_seed needed for replay")
    scene = reset(spec, seed, offsets)
    robot_points = demo.points3d_array(demo.header.names(dataio.ROLE_ROBOT))
    gripper = demo.gripper_array()
    for t in range(robot_points.shape[0]):
        action = control.backtrack_action(
            robot_points[t], offsets, DEFAULT_BASE_ORIENTATION,
            gripper_closed=bool(gripper[t]))
        step(scene, action)
    return success(spec, scene)


# ---------------------------------------------------------------------------
# rollout environment and evaluation
# ---------------------------------------------------------------------------

LIFTING_MODES = ("triangulated", "sensor")


class Env:
    """Closed-loop rollout environment driving one trial of one task."""

    def __init__(self, spec: TaskSpec, cameras, noise: NoiseModel = NoiseModel.zero(),
                 lifting: str = "triangulated", offsets: OffsetTable | None = None):
        if lifting not in LIFTING_MODES:
            raise InvalidSpec(f"unknown lifting mode {lifting!r}; expected {LIFTING_MODES}")
        self.spec = spec
        self.cameras = cameras
        self.camera_list = list(cameras.values()) if isinstance(cameras, dict) else list(cameras)
        self.noise = noise
        self.lifting = lifting
        self.offsets = offsets if offsets is not None else default_offset_table()
        self.scene: Scene | None = None
        self._last_lifted: np.ndarray | None = None

    @property
    def task_id(self) -> str:
        return self.spec.task_id

    @property
    def robot_names(self) -> tuple:
        return self.offsets.names

    @property
    def object_names(self) -> tuple:
        return self.spec.keypoint_names()

    @property
    def camera_names(self) -> tuple:
        return tuple(self.cameras) if isinstance(self.cameras, dict) else \
            tuple(c.name for c in self.cameras)

    @property
    def workspace_bounds(self):
        return self.spec.bounds

    def reset(self, seed) -> None:
        self.scene = reset(self.spec, seed, self.offsets)
        self._last_lifted = None

    def observe_points(self):
        """Lifted 3D keypoints (robot block then objects) plus gripper state.

        Points with an occluded view hold their last lifted value, mirroring
        how a tracker keeps reporting occluded points.
        """
        from .geometry import triangulate_dlt

        obs = observe(self.scene, self.cameras, self.noise)
        n = obs.pixels.shape[0]
        lifted = np.empty((n, 3))
        if self.lifting == "sensor":
            lifted = lift_with_sensor_depth(obs, self.camera_list)
        else:
            for i in range(n):
                lifted[i] = triangulate_dlt(
                    list(zip(self.camera_list, obs.pixels[i])))
        if self._last_lifted is not None:
            held = obs.occluded.any(axis=1)
            lifted[held] = self._last_lifted[held]
        self._last_lifted = lifted
        n_robot = len(self.robot_names)
        return lifted[:n_robot], lifted[n_robot:], self.scene.gripper_closed

    def true_points(self):
        """Ground-truth keypoints for trajectory recording."""
        return (self.scene.robot_keypoints(), self.scene.object_points(),
                self.scene.gripper_closed)

    def step(self, action: control.Action) -> None:
        step(self.scene, action)

    def succeeded(self) -> bool:
        return success(self.spec, self.scene)


class ScriptedPolicy:
    """Open-loop oracle policy serving the expert's retargeted track as chunks."""

    def __init__(self, spec: TaskSpec, scene: Scene, offsets: OffsetTable,
                 history: int = 10, chunk: int = 20):
        from types import SimpleNamespace

        plan = scripted_expert(spec, scene)
        poses = [hand_to_pose(plan[0], f, DEFAULT_BASE_ORIENTATION) for f in plan]
        self._points = np.stack([pose_to_keypoints(p, offsets).points for p in poses])
        self._closed = np.array([gripper_from_hand(f).closed for f in plan])
        self._step = 0
        self.config = SimpleNamespace(
            history=history, chunk=chunk,
            n_robot_points=len(offsets.names), n_object_points=None)

    def forward_window(self, window):
        from .policy import ActionChunk

        length = self.config.chunk
        total = self._points.shape[0]
        scale = DEMO_HZ * control.CONTROL_DT
        indices = [min(int(round((self._step + 1 + j) * scale)), total - 1)
                   for j in range(length)]
        self._step += 1
        return ActionChunk(
            points=self._points[indices],
            gripper_logits=np.where(self._closed[indices], 10.0, -10.0),
        )


@dataclass
class TrialRecord:
    index: int
    seed: tuple
    success: bool
    steps: int


@dataclass
class EvalResult:
    task_id: str
    records: list
    trajectories: list

    @property
    def successes(self) -> int:
        return sum(1 for r in self.records if r.success)

    @property
    def n_trials(self) -> int:
        return len(self.records)

    @property
    def rate(self) -> float:
        return self.successes / self.n_trials if self.records else 0.0


def evaluate(policy, spec: TaskSpec, n_trials: int,
             noise: NoiseModel = NoiseModel.zero(),
             lifting: str = "triangulated",
             cameras=None, seed: int = 0,
             decay: float = control.DEFAULT_ENSEMBLE_DECAY,
             use_ensemble: bool = True,
             offsets: OffsetTable | None = None,
             record_trajectories: bool = False) -> EvalResult:
    """Seeded independent trials of a policy (or the "expert" oracle) on a task."""
    if cameras is None:
        cameras = default_cameras()
    if offsets is None:
        offsets = default_offset_table()
    env = Env(spec, cameras, noise=noise, lifting=lifting, offsets=offsets)
    records = []
    trajectories = []
    for i in range(n_trials):
        trial_seed = (seed, i)
        env.reset(trial_seed)
        if policy == "expert":
            trial_policy = ScriptedPolicy(spec, env.scene, offsets)
        else:
            trial_policy = policy
        result = control.rollout(
            trial_policy, env, spec.episode_length, offsets,
            DEFAULT_BASE_ORIENTATION, decay=decay, use_ensemble=use_ensemble,
            record_trajectory=record_trajectories)
        records.append(TrialRecord(index=i, seed=trial_seed,
                                   success=result.success, steps=result.steps))
        if record_trajectories and result.trajectory is not None:
            trajectories.append(result.trajectory)
    return EvalResult(task_id=spec.task_id, records=records, trajectories=trajectories)
