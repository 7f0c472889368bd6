"""Position-invariant input features for the pose network.

Each frame has 59 values (layout version 1):

    [0, 18)   orientation 6D of head, left hand, right hand
    [18, 36)  angular velocity 6D (relative rotation to the previous frame)
    [36, 45)  linear velocity, m/s
    [45, 54)  positions relative to each joint's anchor in the window (TN)
    [54, 58)  left/right hand horizontal position relative to the head (SN)
    [58]      head height above the ground

Hand slots of a frame where that hand is not visible are zero. Positions are
snapped to the 2^-32 m lattice first so every difference is exact: shifting a
track horizontally by a lattice-aligned offset yields bit-identical features.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import IDENTITY_6D, matrix_to_rot6d, relative_rotation, snap_to_lattice
from .errors import WindowLengthMismatch
from .ingest import ThreePointTrack

LAYOUT_VERSION = 1
FEATURE_DIM = 59
DEFAULT_TAU = 80

HEAD, LEFT, RIGHT = 0, 1, 2
ORI = slice(0, 18)
ANG_VEL = slice(18, 36)
LIN_VEL = slice(36, 45)
TN = slice(45, 54)
SN = slice(54, 58)
HEAD_Z = 58


def _joint_slots(j: int) -> list[int]:
    slots = list(range(6 * j, 6 * j + 6))
    slots += list(range(18 + 6 * j, 18 + 6 * j + 6))
    slots += list(range(36 + 3 * j, 36 + 3 * j + 3))
    slots += list(range(45 + 3 * j, 45 + 3 * j + 3))
    if j != HEAD:
        slots += list(range(54 + 2 * (j - 1), 54 + 2 * (j - 1) + 2))
    return slots


HAND_SLOTS = {LEFT: np.array(_joint_slots(LEFT)), RIGHT: np.array(_joint_slots(RIGHT))}
FEATURE_MODES = ("decomposed", "global")


@dataclass
class FeatureWindow:
    features: np.ndarray  # (tau, 59) float64, oldest first
    start_frame: int = 0
    anchors: np.ndarray | None = None  # (3, 3) TN anchor positions, NaN if never visible

    @property
    def tau(self) -> int:
        return len(self.features)


def temporal_normalize(window_positions, anchor) -> np.ndarray:
    return np.asarray(window_positions, dtype=np.float64) - np.asarray(anchor, dtype=np.float64)


def spatial_normalize(head_position, hand_position) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal hand offset from the head, and the head's global height."""
    head = np.asarray(head_position, dtype=np.float64)
    hand = np.asarray(hand_position, dtype=np.float64)
    return hand[..., 0:2] - head[..., 0:2], head[..., 2]


def linear_velocity(positions, fps: float) -> np.ndarray:
    p = np.asarray(positions, dtype=np.float64)
    v = np.zeros_like(p)
    v[1:] = (p[1:] - p[:-1]) * fps
    return v


def angular_velocity(orientations) -> np.ndarray:
    R = np.asarray(orientations, dtype=np.float64)
    a = np.empty(R.shape[:-2] + (6,))
    a[0] = IDENTITY_6D
    a[1:] = matrix_to_rot6d(relative_rotation(R[:-1], R[1:]))
    return a


def build_window_features(
    track_window: ThreePointTrack,
    masks: np.ndarray | None,
    fps: float,
    tau: int = DEFAULT_TAU,
    mode: str = "decomposed",
    start_frame: int = 0,
) -> FeatureWindow:
    """Assemble the (tau, 59) feature window for one run of ``tau`` tracked frames.

    ``mode="global"`` is an ablation that feeds raw world positions in the
    TN slots and raw hand x/y in the SN slots.
    """
    if track_window.n_frames != tau:
        raise WindowLengthMismatch(f"window has {track_window.n_frames} frames, expected {tau}")
    if mode not in FEATURE_MODES:
        raise ValueError(f"unknown feature mode {mode!r}")
    vis = np.ones((tau, 2), dtype=bool) if masks is None else np.asarray(masks, dtype=bool)
    pos = snap_to_lattice(track_window.positions)
    ori = track_window.orientations
    out = np.zeros((tau, FEATURE_DIM))
    anchors = np.full((3, 3), np.nan)
    for j in (HEAD, LEFT, RIGHT):
        out[:, 6 * j:6 * j + 6] = matrix_to_rot6d(ori[:, j])
        out[:, 18 + 6 * j:24 + 6 * j] = angular_velocity(ori[:, j])
        out[:, 36 + 3 * j:39 + 3 * j] = linear_velocity(pos[:, j], fps)
        if mode == "global":
            out[:, 45 + 3 * j:48 + 3 * j] = pos[:, j]
            continue
        if j == HEAD:
            first = 0
        else:
            seen = np.flatnonzero(vis[:, j - 1])
            first = seen[0] if len(seen) else None
        if first is not None:
            anchors[j] = pos[first, j]
            out[:, 45 + 3 * j:48 + 3 * j] = temporal_normalize(pos[:, j], anchors[j])
    for h in (LEFT, RIGHT):
        if mode == "global":
            out[:, 54 + 2 * (h - 1):56 + 2 * (h - 1)] = pos[:, h, 0:2]
        else:
            out[:, 54 + 2 * (h - 1):56 + 2 * (h - 1)] = spatial_normalize(pos[:, HEAD], pos[:, h])[0]
    out[:, HEAD_Z] = pos[:, HEAD, 2]
    for h in (LEFT, RIGHT):
        hidden = ~vis[:, h - 1]
        out[np.ix_(hidden, HAND_SLOTS[h])] = 0.0
    return FeatureWindow(out, start_frame=start_frame, anchors=anchors)


def _assemble(ori6d, ang, lin, pos, vis, mode: str) -> np.ndarray:
    """Vectorized window assembly from per-frame ingredients.

    Shapes: ori6d/ang (B, tau, 18), lin (B, tau, 9), pos (B, tau, 3, 3),
    vis (B, tau, 2). ``ang``/``lin`` hold deltas to the previous tracked
    frame; the first frame of every window is reset here.
    """
    B, tau = pos.shape[:2]
    out = np.empty((B, tau, FEATURE_DIM))
    out[:, :, ORI] = ori6d
    out[:, :, ANG_VEL] = ang
    out[:, 0, ANG_VEL] = np.tile(IDENTITY_6D, 3)
    out[:, :, LIN_VEL] = lin
    out[:, 0, LIN_VEL] = 0.0
    if mode == "global":
        out[:, :, TN] = pos.reshape(B, tau, 9)
        out[:, :, SN] = pos[:, :, 1:3, 0:2].reshape(B, tau, 4)
    else:
        tn = np.zeros((B, tau, 3, 3))
        tn[:, :, HEAD] = pos[:, :, HEAD] - pos[:, 0:1, HEAD]
        rows = np.arange(B)
        for h in (LEFT, RIGHT):
            seen = vis[:, :, h - 1]
            first = np.argmax(seen, axis=1)
            ok = seen[rows, first]
            if np.any(ok):
                anchor = pos[rows[ok], first[ok], h]
                tn[ok, :, h] = pos[ok, :, h] - anchor[:, None, :]
        out[:, :, TN] = tn.reshape(B, tau, 9)
        out[:, :, SN] = (pos[:, :, 1:3, 0:2] - pos[:, :, HEAD:HEAD + 1, 0:2]).reshape(B, tau, 4)
    out[:, :, HEAD_Z] = pos[:, :, HEAD, 2]
    for h in (LEFT, RIGHT):
        hidden = ~vis[:, :, h - 1]
        if np.any(hidden):
            sub = out[:, :, HAND_SLOTS[h]]
            sub[hidden] = 0.0
            out[:, :, HAND_SLOTS[h]] = sub
    return out


class SequenceFeatures:
    """Per-frame feature ingredients of a whole track, for fast batched window extraction.

    ``windows(starts, tau)`` equals ``build_window_features`` on each window,
    bit for bit, vectorized over many windows.
    """

    def __init__(self, track: ThreePointTrack, masks: np.ndarray | None = None, mode: str = "decomposed"):
        if mode not in FEATURE_MODES:
            raise ValueError(f"unknown feature mode {mode!r}")
        n = track.n_frames
        self.n_frames = n
        self.fps = track.fps
        self.mode = mode
        self.vis = np.ones((n, 2), dtype=bool) if masks is None else np.asarray(masks, dtype=bool)
        pos = snap_to_lattice(track.positions)
        self.pos = pos
        ori = track.orientations
        self.ori6d = matrix_to_rot6d(ori).reshape(n, 18)
        ang = np.empty((n, 3, 6))
        ang[0] = IDENTITY_6D
        ang[1:] = matrix_to_rot6d(relative_rotation(ori[:-1], ori[1:]))
        self.ang = ang.reshape(n, 18)
        lin = np.zeros((n, 3, 3))
        lin[1:] = (pos[1:] - pos[:-1]) * self.fps
        self.lin = lin.reshape(n, 9)

    def windows(self, starts, tau: int, vis: np.ndarray | None = None) -> np.ndarray:
        """(B, tau, 59) features for windows beginning at ``starts``.

        ``vis`` (B, tau, 2) overrides the stored visibility per window, as
        used by random masking.
        """
        starts = np.asarray(starts, dtype=np.int64)
        if np.any(starts < 0) or np.any(starts + tau > self.n_frames):
            raise WindowLengthMismatch("window extends past the track")
        idx = starts[:, None] + np.arange(tau)[None, :]
        vis = self.vis[idx] if vis is None else np.asarray(vis, dtype=bool)
        return _assemble(self.ori6d[idx], self.ang[idx], self.lin[idx], self.pos[idx], vis, self.mode)


class StreamingFeatures:
    """Incremental window for live inference: push one tracked frame, read the window.

    Per-frame ingredients (6D orientation, deltas to the previous frame) are
    computed once on arrival into ring buffers; anchors and masking are
    redone per window. Until ``tau`` frames have arrived the window is padded
    by repeating the first frame.
    """

    def __init__(self, fps: float, tau: int = DEFAULT_TAU, mode: str = "decomposed"):
        if mode not in FEATURE_MODES:
            raise ValueError(f"unknown feature mode {mode!r}")
        self.fps, self.tau, self.mode = fps, tau, mode
        self._ori6d = np.zeros((2 * tau, 18))
        self._ang = np.zeros((2 * tau, 18))
        self._lin = np.zeros((2 * tau, 9))
        self._pos = np.zeros((2 * tau, 3, 3))
        self._vis = np.zeros((2 * tau, 2), dtype=bool)
        self._last_ori = None
        self._last_pos = None
        self._head = tau  # one past the newest slot
        self.count = 0

    def push(self, positions, orientations, visible=(True, True)) -> None:
        pos = snap_to_lattice(positions)
        ori = np.asarray(orientations, dtype=np.float64)
        o6 = matrix_to_rot6d(ori).reshape(18)
        if self.count == 0:
            ang = np.tile(IDENTITY_6D, 3)
            lin = np.zeros(9)
        else:
            ang = matrix_to_rot6d(relative_rotation(self._last_ori, ori)).reshape(18)
            lin = ((pos - self._last_pos) * self.fps).reshape(9)
        if self._head == 2 * self.tau:
            # compact: keep the newest tau - 1 frames at the front
            keep = slice(self.tau + 1, 2 * self.tau)
            for buf in (self._ori6d, self._ang, self._lin, self._pos, self._vis):
                buf[: self.tau - 1] = buf[keep]
            self._head = self.tau - 1
        if self.count == 0:
            for buf, v in ((self._ori6d, o6), (self._ang, ang), (self._lin, lin), (self._pos, pos), (self._vis, visible)):
                buf[: self.tau] = v
        else:
            i = self._head
            self._ori6d[i], self._ang[i], self._lin[i], self._pos[i], self._vis[i] = o6, ang, lin, pos, visible
            self._head += 1
        self._last_ori, self._last_pos = ori, pos
        self.count += 1

    def window(self) -> FeatureWindow:
        sl = slice(self._head - self.tau, self._head)
        feats = _assemble(self._ori6d[None, sl], self._ang[None, sl], self._lin[None, sl],
                          self._pos[None, sl], self._vis[None, sl], self.mode)
        return FeatureWindow(feats[0], start_frame=self.count - self.tau)
