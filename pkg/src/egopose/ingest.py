"""Motion sequences: binary I/O, synthetic generation, three-point tracks,
positional offsets and train/test splitting."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core_math import rot_x, rot_y, rot_z, snap_to_lattice
from .errors import FormatError, InvalidProfile, TooFewSequences, TooShort
from .skeleton import (
    NUM_BETAS,
    BodyPose,
    SkeletonModel,
    forward_kinematics,
    proxy_vertices,
)

SEQ_MAGIC = b"EPSQ"
SEQ_VERSION = 1
DEFAULT_FPS = 60.0
PROFILES = ("walk", "reach", "idle", "mixed")
_FLOATS_PER_FRAME = 3 + 9 + 21 * 9


@dataclass
class MotionSequence:
    fps: float
    root_position: np.ndarray     # (F, 3)
    root_orientation: np.ndarray  # (F, 3, 3)
    local_rotations: np.ndarray   # (F, 21, 3, 3)
    beta: np.ndarray              # (16,), constant over the sequence
    subject_id: str = ""
    sequence_id: str = ""

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if len(self.root_position) < 2:
            raise TooShort("a sequence needs at least 2 frames")

    @property
    def n_frames(self) -> int:
        return len(self.root_position)

    @property
    def pose(self) -> BodyPose:
        return BodyPose(self.root_position, self.root_orientation, self.local_rotations)

    def frame(self, i: int) -> tuple[BodyPose, np.ndarray]:
        return self.pose[i], self.beta


@dataclass
class ThreePointTrack:
    """Head, left hand, right hand (in that order) per frame."""
    fps: float
    positions: np.ndarray     # (F, 3, 3)
    orientations: np.ndarray  # (F, 3, 3, 3)
    visible: np.ndarray       # (F, 2) bool, left/right hand

    @property
    def n_frames(self) -> int:
        return len(self.positions)

    def __getitem__(self, idx) -> "ThreePointTrack":
        return ThreePointTrack(self.fps, self.positions[idx], self.orientations[idx], self.visible[idx])


# --- file I/O ----------------------------------------------------------------

def save_sequence(seq: MotionSequence, path: str | Path) -> None:
    header = json.dumps({
        "version": SEQ_VERSION,
        "fps": float(seq.fps),
        "n_frames": seq.n_frames,
        "n_local": 21,
        "n_beta": NUM_BETAS,
        "subject_id": seq.subject_id,
        "sequence_id": seq.sequence_id,
    }).encode()
    body = np.concatenate([
        seq.root_position.reshape(seq.n_frames, 3),
        seq.root_orientation.reshape(seq.n_frames, 9),
        seq.local_rotations.reshape(seq.n_frames, 21 * 9),
    ], axis=1)
    with open(path, "wb") as fh:
        fh.write(SEQ_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.asarray(seq.beta, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(body, dtype="<f8").tobytes())


def load_sequence(path: str | Path) -> MotionSequence:
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != SEQ_MAGIC:
        raise FormatError(f"{path}: not an EPSQ file")
    (hlen,) = struct.unpack_from("<I", data, 4)
    if len(data) < 8 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[8:8 + hlen])
    except ValueError as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    if header.get("version") != SEQ_VERSION:
        raise FormatError(f"{path}: unsupported sequence version {header.get('version')!r} (expected {SEQ_VERSION})")
    n = int(header["n_frames"])
    nb = int(header["n_beta"])
    expected = 8 + hlen + 8 * (nb + n * _FLOATS_PER_FRAME)
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)} (truncated?)")
    flat = np.frombuffer(data, dtype="<f8", offset=8 + hlen).astype(np.float64)
    beta, body = flat[:nb].copy(), flat[nb:].reshape(n, _FLOATS_PER_FRAME)
    return MotionSequence(
        fps=header["fps"],
        root_position=body[:, 0:3].copy(),
        root_orientation=body[:, 3:12].reshape(n, 3, 3).copy(),
        local_rotations=body[:, 12:].reshape(n, 21, 3, 3).copy(),
        beta=beta,
        subject_id=header.get("subject_id", ""),
        sequence_id=header.get("sequence_id", ""),
    )


def load_dataset(path: str | Path) -> list[MotionSequence]:
    """Load one .epsq file or every .epsq file in a directory (sorted by name)."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.epsq"))
    elif path.exists():
        files = [path]
    else:
        raise FileNotFoundError(path)
    return [load_sequence(f) for f in files]


# --- synthesis ---------------------------------------------------------------

def _smooth(rng: np.random.Generator, t: np.ndarray, fmin: float, fmax: float, n: int = 3) -> np.ndarray:
    """Band-limited random signal in [-1, 1]."""
    freqs = rng.uniform(fmin, fmax, n)
    phases = rng.uniform(0, 2 * np.pi, n)
    amps = rng.uniform(0.5, 1.0, n)
    s = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(0)
    return s / amps.sum()


def _to_range(s: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return lo + (hi - lo) * 0.5 * (s + 1.0)


def _arm(side: int, abduction, swing, flex):
    """Shoulder and elbow local rotations; side +1 left, -1 right."""
    shoulder = rot_y(swing) @ rot_x(side * (-np.pi / 2 + abduction))
    elbow = rot_z(-side * flex)
    return shoulder, elbow


def sample_shape(rng: np.random.Generator) -> np.ndarray:
    """Random subject shape using only the three blend-active coordinates."""
    beta = np.zeros(NUM_BETAS)
    beta[0] = rng.uniform(-3.0, 4.0)
    beta[1] = rng.uniform(-1.0, 1.0)
    beta[2] = rng.uniform(-1.0, 1.0)
    return beta


def synthesize_sequence(
    seed: int,
    profile: str,
    duration_s: float,
    fps: float,
    beta,
    model: SkeletonModel,
    subject_id: str = "",
    sequence_id: str = "",
) -> MotionSequence:
    """Deterministic synthetic motion for one subject.

    ``walk`` translates the root along a smoothly turning path with periodic
    arm/leg swing, ``reach`` keeps the feet planted while the arms and head
    sweep in and out of view, ``idle`` stands with small motions, ``mixed``
    blends walking and reaching over time. The root height is set each frame
    so the lowest proxy point touches z = 0.
    """
    if profile not in PROFILES:
        raise InvalidProfile(f"unknown profile {profile!r}; choose from {', '.join(PROFILES)}")
    n = int(math.floor(duration_s * fps + 1e-9))
    if n < 2:
        raise TooShort(f"duration {duration_s}s at {fps} fps gives {n} frame(s); need at least 2")
    beta = np.asarray(beta, dtype=np.float64)
    rng = np.random.default_rng([seed, PROFILES.index(profile)])
    t = np.arange(n) / fps
    zero = np.zeros(n)

    if profile == "mixed":
        walk_w = 0.5 * (1 + np.tanh(3 * _smooth(rng, t, 0.03, 0.08, 2)))
    elif profile == "walk":
        walk_w = np.ones(n)
    else:
        walk_w = zero.copy()
    reach_w = 1.0 - walk_w if profile in ("reach", "mixed") else zero.copy()

    # gait
    gait_f = rng.uniform(0.8, 1.0)
    phase = 2 * np.pi * gait_f * t + rng.uniform(0, 2 * np.pi)
    hip_amp = rng.uniform(0.3, 0.4)
    hip_l = -hip_amp * np.sin(phase) * walk_w
    hip_r = hip_amp * np.sin(phase) * walk_w
    knee_l = 0.3 * (1 + np.sin(phase + 0.5)) * walk_w
    knee_r = 0.3 * (1 - np.sin(phase + 0.5)) * walk_w
    ankle_l = -0.15 * np.sin(phase + 1.0) * walk_w
    ankle_r = 0.15 * np.sin(phase + 1.0) * walk_w

    # arms: walking swing blended with reaching
    idle_amp = 0.15 if profile == "idle" else 0.05
    sides = {}
    for side, sgn in (("l", 1), ("r", -1)):
        walk_swing = sgn * 0.3 * np.sin(phase)
        reach_swing = _to_range(_smooth(rng, t, 0.08, 0.4), -2.6, 0.4)
        reach_abd = _to_range(_smooth(rng, t, 0.08, 0.4), 0.0, 1.4)
        reach_flex = _to_range(_smooth(rng, t, 0.1, 0.5), 0.0, 1.8)
        rest_swing = idle_amp * _smooth(rng, t, 0.1, 0.4)
        swing = walk_w * walk_swing + reach_w * reach_swing + (1 - walk_w - reach_w) * rest_swing
        abd = walk_w * 0.15 + reach_w * reach_abd + (1 - walk_w - reach_w) * (0.1 + 0.5 * idle_amp * _smooth(rng, t, 0.1, 0.3))
        flex = walk_w * (0.35 + 0.1 * np.sin(phase)) + reach_w * reach_flex + (1 - walk_w - reach_w) * (0.2 + idle_amp * _smooth(rng, t, 0.1, 0.3))
        sides[side] = (swing, abd, flex)

    # head and torso
    head_yaw_amp = 0.9 * reach_w + 0.3 * walk_w + (0.6 if profile == "idle" else 0.0)
    head_yaw = head_yaw_amp * _smooth(rng, t, 0.05, 0.3)
    head_pitch = reach_w * _to_range(_smooth(rng, t, 0.05, 0.3), -0.3, 0.7) + (1 - reach_w) * (0.15 + 0.15 * _smooth(rng, t, 0.05, 0.2))
    spine_pitch = 0.05 * _smooth(rng, t, 0.05, 0.3) + 0.15 * reach_w * (0.5 + 0.5 * _smooth(rng, t, 0.05, 0.2))
    spine_yaw = 0.15 * _smooth(rng, t, 0.05, 0.3) + 0.08 * walk_w * np.sin(phase)

    # root heading and path
    heading0 = rng.uniform(-np.pi, np.pi)
    drift = 0.8 if profile in ("walk", "mixed") else 0.3
    heading = heading0 + drift * _smooth(rng, t, 0.02, 0.1)
    speed = rng.uniform(1.0, 1.4) * walk_w
    vel = np.stack([speed * np.cos(heading), speed * np.sin(heading)], axis=1) / fps
    xy = np.cumsum(vel, axis=0) - vel[0] + rng.uniform(-2.0, 2.0, 2)
    if profile == "idle":
        xy = xy + 0.02 * np.stack([_smooth(rng, t, 0.05, 0.2), _smooth(rng, t, 0.05, 0.2)], axis=1)

    local = np.broadcast_to(np.eye(3), (n, 21, 3, 3)).copy()
    J = lambda j: j - 1  # noqa: E731  local rotation slot of joint j
    local[:, J(1)] = rot_y(hip_l)
    local[:, J(2)] = rot_y(hip_r)
    local[:, J(4)] = rot_y(knee_l)
    local[:, J(5)] = rot_y(knee_r)
    local[:, J(7)] = rot_y(ankle_l)
    local[:, J(8)] = rot_y(ankle_r)
    local[:, J(3)] = rot_z(spine_yaw / 3) @ rot_y(spine_pitch / 3)
    local[:, J(6)] = rot_z(spine_yaw / 3) @ rot_y(spine_pitch / 3)
    local[:, J(9)] = rot_z(spine_yaw / 3) @ rot_y(spine_pitch / 3)
    local[:, J(12)] = rot_z(head_yaw / 2) @ rot_y(head_pitch / 2)
    local[:, J(15)] = rot_z(head_yaw / 2) @ rot_y(head_pitch / 2)
    for side, sgn, sh, el in (("l", 1, 16, 18), ("r", -1, 17, 19)):
        swing, abd, flex = sides[side]
        local[:, J(sh)], local[:, J(el)] = _arm(sgn, abd, swing, flex)

    root_rot = rot_z(heading)
    root_pos = np.concatenate([xy, np.zeros((n, 1))], axis=1)
    fk = forward_kinematics(model, BodyPose(root_pos, root_rot, local), beta)
    lowest = proxy_vertices(model, fk, beta)[..., 2].min(axis=-1)
    root_pos[:, 2] = -lowest
    return MotionSequence(
        fps=float(fps),
        root_position=snap_to_lattice(root_pos),
        root_orientation=root_rot,
        local_rotations=local,
        beta=beta.copy(),
        subject_id=subject_id,
        sequence_id=sequence_id or f"{profile}-{seed}",
    )


def synthesize_suite(
    seed: int,
    n_sequences: int,
    profile: str,
    duration_s: float,
    model: SkeletonModel,
    fps: float = DEFAULT_FPS,
    diverse_shapes: bool = True,
    betas=None,
) -> list[MotionSequence]:
    """A set of sequences, one subject each, with seeded shapes."""
    rng = np.random.default_rng([seed, 7919])
    seqs = []
    for i in range(n_sequences):
        if betas is not None:
            beta = np.asarray(betas[i], dtype=np.float64)
        elif diverse_shapes:
            beta = sample_shape(rng)
        else:
            beta = np.zeros(NUM_BETAS)
        prof = profile if profile != "cycle" else PROFILES[i % len(PROFILES)]
        seqs.append(synthesize_sequence(seed * 1000 + i, prof, duration_s, fps, beta, model,
                                        subject_id=f"s{seed}-{i}", sequence_id=f"{prof}-{seed}-{i}"))
    return seqs


# --- three-point tracks ------------------------------------------------------

def extract_three_point(seq: MotionSequence, model: SkeletonModel) -> ThreePointTrack:
    fk = forward_kinematics(model, seq.pose, seq.beta)
    idx = [model.head_joint, model.left_hand_joint, model.right_hand_joint]
    return ThreePointTrack(
        fps=seq.fps,
        positions=snap_to_lattice(fk.joint_position[:, idx]),
        orientations=fk.joint_orientation[:, idx].copy(),
        visible=np.ones((seq.n_frames, 2), dtype=bool),
    )


def apply_offset(obj, offset):
    """Shift every global position by ``offset``; orientations and visibility untouched.

    Offsets on the 2^-32 m lattice (any whole number of meters included) shift
    lattice positions exactly.
    """
    offset = np.asarray(offset, dtype=np.float64)
    if isinstance(obj, ThreePointTrack):
        return replace(obj, positions=obj.positions + offset)
    if isinstance(obj, MotionSequence):
        return replace(obj, root_position=obj.root_position + offset)
    raise TypeError(f"cannot offset {type(obj).__name__}")


def split_dataset(seqs: list, train_fraction: float = 0.9, seed: int = 0) -> tuple[list, list]:
    n = len(seqs)
    if n < 2:
        raise TooFewSequences(f"need at least 2 sequences to split, got {n}")
    n_train = min(math.ceil(train_fraction * n - 1e-9), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    train = [seqs[i] for i in sorted(order[:n_train])]
    test = [seqs[i] for i in sorted(order[n_train:])]
    return train, test
