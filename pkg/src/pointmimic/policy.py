"""Transformer track-prediction policy trained by behavior cloning.

Each keypoint's position history is flattened and MLP-encoded into one token;
a gripper token carries the current gripper state. A bidirectional (non-causal)
transformer trunk mixes the tokens, and deterministic MLP heads read a future
track chunk off every robot token plus gripper logits off the gripper token.
The regression loss covers robot point tracks and gripper logits only; object
tokens contribute as inputs and have no outputs.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import (
    CorruptFile,
    EmptyDataset,
    FormatVersionMismatch,
    SchemaMismatch,
    ShapeMismatch,
)

CHECKPOINT_MAGIC = b"PMCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PolicyConfig:
    """Architecture hyperparameters; hidden width 256 is the default trunk size."""

    n_robot_points: int
    n_object_points: int
    history: int = 10
    chunk: int = 20
    hidden: int = 256
    layers: int = 2
    heads: int = 4
    ff_dim: int = 512
    dropout: float = 0.1

    def __post_init__(self):
        for name in ("n_robot_points", "history", "chunk", "hidden", "layers", "heads", "ff_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_object_points < 0:
            raise ValueError("n_object_points must be non-negative")
        if self.hidden % self.heads != 0:
            raise ValueError("hidden must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def token_count(self) -> int:
        return self.n_robot_points + self.n_object_points + 1

    @classmethod
    def from_mapping(cls, mapping: dict) -> "PolicyConfig":
        return cls(**mapping)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    steps: int = 100_000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    gripper_weight: float = 0.1
    log_every: int = 200
    checkpoint_every: int = 5000

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.steps < 0:
            raise ValueError("learning_rate, batch_size must be positive; steps non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.eps > 0):
            raise ValueError("optimizer moments out of range")
        if self.gripper_weight < 0:
            raise ValueError("gripper_weight must be non-negative")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        return cls(**mapping)


@dataclass
class ObservationWindow:
    """Keypoint histories (meters) plus the current gripper state.

    robot: (n_robot, H, 3), objects: (n_object, H, 3), gripper in {0.0, 1.0}.
    """

    robot: np.ndarray
    objects: np.ndarray
    gripper: float

    def __post_init__(self):
        self.robot = np.asarray(self.robot, dtype=np.float64)
        self.objects = np.asarray(self.objects, dtype=np.float64)
        if self.robot.ndim != 3 or self.robot.shape[2] != 3:
            raise ShapeMismatch(f"robot history must be (n, H, 3), got {self.robot.shape}")
        if self.objects.ndim != 3 or self.objects.shape[2] != 3:
            raise ShapeMismatch(f"object history must be (n, H, 3), got {self.objects.shape}")
        if self.objects.shape[0] and self.objects.shape[1] != self.robot.shape[1]:
            raise ShapeMismatch("robot and object history lengths differ")
        if not (np.isfinite(self.robot).all() and np.isfinite(self.objects).all()):
            raise ShapeMismatch("observation window must be finite")


@dataclass
class ActionChunk:
    """L consecutive predictions: robot points (L, n_robot, 3) + gripper logits (L,)."""

    points: np.ndarray
    gripper_logits: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.gripper_logits = np.asarray(self.gripper_logits, dtype=np.float64)
        if self.points.ndim != 3 or self.points.shape[2] != 3:
            raise ShapeMismatch(f"chunk points must be (L, n, 3), got {self.points.shape}")
        if self.gripper_logits.shape != (self.points.shape[0],):
            raise ShapeMismatch("gripper logits must have one entry per chunk step")
        if not (np.isfinite(self.points).all() and np.isfinite(self.gripper_logits).all()):
            raise ShapeMismatch("action chunk must be finite")

    @property
    def length(self) -> int:
        return self.points.shape[0]


class _Block(nn.Module):
    """Pre-norm bidirectional attention block (full attention over all tokens)."""

    def __init__(self, hidden: int, heads: int, ff_dim: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(hidden)
        self.qkv = nn.Linear(hidden, 3 * hidden)
        self.proj = nn.Linear(hidden, hidden)
        self.norm2 = nn.LayerNorm(hidden)
        self.ff = nn.Sequential(nn.Linear(hidden, ff_dim), nn.GELU(),
                                nn.Linear(ff_dim, hidden))
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        b, t, d = x.shape
        q, k, v = self.qkv(self.norm1(x)).chunk(3, dim=-1)
        q = q.view(b, t, self.heads, d // self.heads).transpose(1, 2)
        k = k.view(b, t, self.heads, d // self.heads).transpose(1, 2)
        v = v.view(b, t, self.heads, d // self.heads).transpose(1, 2)
        attended = F.scaled_dot_product_attention(q, k, v)
        x = x + self.drop(self.proj(attended.transpose(1, 2).reshape(b, t, d)))
        return x + self.drop(self.ff(self.norm2(x)))


class TrackPolicy(nn.Module):
    """Keypoint-token transformer predicting chunked robot point tracks."""

    def __init__(self, config: PolicyConfig, stats_mean=None, stats_std=None,
                 robot_names=(), object_names=()):
        super().__init__()
        self.config = config
        self.robot_names = tuple(robot_names) or tuple(
            f"robot_{i}" for i in range(config.n_robot_points))
        self.object_names = tuple(object_names) or tuple(
            f"object_{i}" for i in range(config.n_object_points))
        if len(self.robot_names) != config.n_robot_points:
            raise SchemaMismatch("robot name count does not match config")
        if len(self.object_names) != config.n_object_points:
            raise SchemaMismatch("object name count does not match config")

        mean = np.zeros(3) if stats_mean is None else np.asarray(stats_mean, dtype=np.float64)
        std = np.ones(3) if stats_std is None else np.asarray(stats_std, dtype=np.float64)
        self.register_buffer("norm_mean", torch.tensor(mean, dtype=torch.float32))
        self.register_buffer("norm_std", torch.tensor(std, dtype=torch.float32))

        h = config.hidden
        self.point_encoder = nn.Sequential(
            nn.Linear(config.history * 3, h), nn.GELU(), nn.Linear(h, h))
        self.gripper_encoder = nn.Linear(1, h)
        self.token_embedding = nn.Parameter(torch.zeros(config.token_count, h))
        nn.init.normal_(self.token_embedding, std=0.02)
        self.blocks = nn.ModuleList(
            [_Block(h, config.heads, config.ff_dim, config.dropout)
             for _ in range(config.layers)])
        self.final_norm = nn.LayerNorm(h)
        self.track_head = nn.Sequential(nn.Linear(h, h), nn.GELU(),
                                        nn.Linear(h, config.chunk * 3))
        self.gripper_head = nn.Sequential(nn.Linear(h, h), nn.GELU(),
                                          nn.Linear(h, config.chunk))

    # --- normalization helpers (float64 math, stats from float32 buffers) ---

    def _stats(self):
        return (self.norm_mean.detach().cpu().numpy().astype(np.float64),
                self.norm_std.detach().cpu().numpy().astype(np.float64))

    def normalize(self, points) -> np.ndarray:
        mean, std = self._stats()
        return (np.asarray(points, dtype=np.float64) - mean) / std

    def denormalize(self, points) -> np.ndarray:
        mean, std = self._stats()
        return np.asarray(points, dtype=np.float64) * std + mean

    # --- forward paths ---

    def core(self, robot, objects, gripper):
        """Trunk forward on normalized tensors.

        robot: (B, n_robot, H, 3), objects: (B, n_object, H, 3), gripper: (B,).
        Returns (tracks (B, n_robot, L, 3) normalized, gripper logits (B, L)).
        """
        cfg = self.config
        b = robot.shape[0]
        histories = torch.cat([robot, objects], dim=1) if cfg.n_object_points else robot
        tokens = self.point_encoder(histories.reshape(b, -1, cfg.history * 3))
        grip_token = self.gripper_encoder(gripper.reshape(b, 1, 1))
        x = torch.cat([tokens, grip_token], dim=1) + self.token_embedding
        for block in self.blocks:
            x = block(x)
        x = self.final_norm(x)
        tracks = self.track_head(x[:, :cfg.n_robot_points])
        tracks = tracks.reshape(b, cfg.n_robot_points, cfg.chunk, 3)
        logits = self.gripper_head(x[:, -1])
        return tracks, logits

    def _inference(self):
        """Context manager: eval mode plus no_grad, restoring train mode after."""
        import contextlib

        @contextlib.contextmanager
        def ctx():
            was_training = self.training
            self.eval()
            try:
                with torch.no_grad():
                    yield
            finally:
                if was_training:
                    self.train()
        return ctx()

    def encode_token(self, history) -> np.ndarray:
        """Deterministic embedding of one keypoint's H x 3 position history."""
        history = np.asarray(history, dtype=np.float64)
        if history.shape != (self.config.history, 3):
            raise ShapeMismatch(
                f"history must be ({self.config.history}, 3), got {history.shape}")
        dtype = next(self.parameters()).dtype
        flat = torch.tensor(self.normalize(history).reshape(1, -1), dtype=dtype)
        with self._inference():
            return self.point_encoder(flat).squeeze(0).cpu().numpy()

    def forward_window(self, window: ObservationWindow) -> ActionChunk:
        """Predict one action chunk (meters) from a raw observation window."""
        cfg = self.config
        if window.robot.shape[0] != cfg.n_robot_points:
            raise SchemaMismatch(
                f"expected {cfg.n_robot_points} robot points, got {window.robot.shape[0]}")
        if window.objects.shape[0] != cfg.n_object_points:
            raise SchemaMismatch(
                f"expected {cfg.n_object_points} object points, got {window.objects.shape[0]}")
        if window.robot.shape[1] != cfg.history:
            raise SchemaMismatch(
                f"expected history {cfg.history}, got {window.robot.shape[1]}")
        dtype = next(self.parameters()).dtype
        robot = torch.tensor(self.normalize(window.robot)[None], dtype=dtype)
        objects = torch.tensor(self.normalize(window.objects)[None], dtype=dtype)
        gripper = torch.tensor([window.gripper], dtype=dtype)
        with self._inference():
            tracks, logits = self.core(robot, objects, gripper)
        points = self.denormalize(tracks.squeeze(0).permute(1, 0, 2).cpu().numpy())
        return ActionChunk(points=points, gripper_logits=logits.squeeze(0).cpu().numpy())

    def forward(self, robot, objects, gripper):
        return self.core(robot, objects, gripper)


def bc_loss(pred_tracks, pred_logits, target_tracks, target_gripper,
            gripper_weight: float = 0.1):
    """Behavior-cloning loss on torch tensors.

    Mean squared error over robot point track coordinates plus weighted binary
    cross-entropy over gripper logits. No term indexes object-point outputs
    (there are none). Returns (total, track_mse, gripper_bce).
    """
    if pred_tracks.shape != target_tracks.shape:
        raise ShapeMismatch(
            f"track shapes differ: {tuple(pred_tracks.shape)} vs {tuple(target_tracks.shape)}")
    if pred_logits.shape != target_gripper.shape:
        raise ShapeMismatch(
            f"gripper shapes differ: {tuple(pred_logits.shape)} vs {tuple(target_gripper.shape)}")
    track_mse = ((pred_tracks - target_tracks) ** 2).mean()
    gripper_bce = F.binary_cross_entropy_with_logits(pred_logits, target_gripper)
    return track_mse + gripper_weight * gripper_bce, track_mse, gripper_bce


@dataclass
class LossRecord:
    step: int
    total: float
    track_mse: float
    gripper_bce: float
    val_loss: float | None = None


@dataclass
class TrainResult:
    policy: TrackPolicy
    history: list = field(default_factory=list)


def _sample_tensors(dataset, indices, stats, dtype=torch.float32):
    batch = dataset.gather(indices)
    robot = stats.normalize(batch["robot"])
    objects = stats.normalize(batch["objects"])
    targets = stats.normalize(batch["target_tracks"]).transpose(0, 2, 1, 3)
    return {
        "robot": torch.tensor(robot, dtype=dtype),
        "objects": torch.tensor(objects, dtype=dtype),
        "gripper": torch.tensor(batch["gripper"], dtype=dtype),
        "target_tracks": torch.tensor(np.ascontiguousarray(targets), dtype=dtype),
        "target_gripper": torch.tensor(batch["target_gripper"], dtype=dtype),
    }


def train(dataset, config: TrainConfig, policy_config: PolicyConfig | None = None,
          out_dir=None) -> TrainResult:
    """Minibatch Adam on the behavior-cloning loss; bit-reproducible per seed."""
    if dataset.sample_count == 0:
        raise EmptyDataset("dataset has no training samples")
    if policy_config is None:
        policy_config = PolicyConfig(
            n_robot_points=len(dataset.robot_names),
            n_object_points=len(dataset.object_names),
            history=dataset.config.history,
            chunk=dataset.config.chunk,
        )
    if (policy_config.history != dataset.config.history
            or policy_config.chunk != dataset.config.chunk):
        raise SchemaMismatch("policy history/chunk do not match dataset config")
    if (policy_config.n_robot_points != len(dataset.robot_names)
            or policy_config.n_object_points != len(dataset.object_names)):
        raise SchemaMismatch("policy keypoint counts do not match dataset schema")

    torch.manual_seed(config.seed)
    policy = TrackPolicy(
        policy_config,
        stats_mean=dataset.stats.mean,
        stats_std=dataset.stats.std,
        robot_names=dataset.robot_names,
        object_names=dataset.object_names,
    )
    result = TrainResult(policy=policy)
    if config.steps == 0:
        policy.eval()
        return result

    full = _sample_tensors(dataset, dataset.train_indices, dataset.stats)
    val = _sample_tensors(dataset, dataset.val_indices, dataset.stats) \
        if dataset.val_indices else None

    optimizer = torch.optim.Adam(
        policy.parameters(), lr=config.learning_rate,
        betas=(config.beta1, config.beta2), eps=config.eps)
    rng = np.random.default_rng(config.seed)
    n = len(dataset.train_indices)

    policy.train()
    for step in range(1, config.steps + 1):
        idx = torch.from_numpy(rng.integers(0, n, size=config.batch_size))
        tracks, logits = policy.core(
            full["robot"][idx], full["objects"][idx], full["gripper"][idx])
        total, mse, bce = bc_loss(
            tracks, logits, full["target_tracks"][idx], full["target_gripper"][idx],
            gripper_weight=config.gripper_weight)
        optimizer.zero_grad()
        total.backward()
        optimizer.step()

        if step == 1 or step % config.log_every == 0 or step == config.steps:
            val_loss = None
            if val is not None:
                with torch.no_grad():
                    vt, vl = policy.core(val["robot"], val["objects"], val["gripper"])
                    val_total, _, _ = bc_loss(vt, vl, val["target_tracks"],
                                              val["target_gripper"], config.gripper_weight)
                val_loss = float(val_total)
            result.history.append(LossRecord(
                step=step, total=total.item(), track_mse=mse.item(),
                gripper_bce=bce.item(), val_loss=val_loss))
        if out_dir is not None and config.checkpoint_every and step % config.checkpoint_every == 0:
            save_policy(policy, Path(out_dir) / f"checkpoint_{step:07d}.pmck")

    policy.eval()
    return result


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, JSON header, named float32 tensors
# ---------------------------------------------------------------------------

def save_policy(policy: TrackPolicy, path) -> None:
    """Write a versioned checkpoint: header JSON plus named row-major float32 tensors."""
    state = policy.state_dict()
    names = sorted(state)
    manifest = []
    blobs = []
    for name in names:
        tensor = state[name].detach().cpu().to(torch.float32).contiguous()
        array = tensor.numpy()
        if array.dtype.byteorder == ">":
            array = array.astype("<f4")
        manifest.append({"name": name, "dtype": "float32", "shape": list(tensor.shape)})
        blobs.append(array.tobytes())
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(policy.config),
        "robot_names": list(policy.robot_names),
        "object_names": list(policy.object_names),
        "tensors": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_policy(path) -> TrackPolicy:
    """Read a checkpoint written by save_policy; bit-identical roundtrip."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != CHECKPOINT_MAGIC:
        raise CorruptFile(f"{path}: not a policy checkpoint")
    version, header_len = struct.unpack("<II", data[4:12])
    if version != CHECKPOINT_VERSION:
        raise FormatVersionMismatch(f"{path}: checkpoint version {version} not supported")
    if len(data) < 12 + header_len:
        raise CorruptFile(f"{path}: truncated header")
    try:
        header = json.loads(data[12:12 + header_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"{path}: unparsable header: {exc}") from exc

    config = PolicyConfig(**header["config"])
    policy = TrackPolicy(config, robot_names=header["robot_names"],
                         object_names=header["object_names"])
    offset = 12 + header_len
    state = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(data):
            raise CorruptFile(f"{path}: truncated tensor {entry['name']!r}")
        array = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
        state[entry["name"]] = torch.tensor(array.copy(), dtype=torch.float32)
        offset += nbytes
    if offset != len(data):
        raise CorruptFile(f"{path}: {len(data) - offset} trailing bytes")
    missing = set(policy.state_dict()) - set(state)
    if missing:
        raise CorruptFile(f"{path}: missing tensors {sorted(missing)}")
    policy.load_state_dict(state)
    policy.eval()
    return policy


def checkpoint_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
