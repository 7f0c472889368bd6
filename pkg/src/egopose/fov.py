"""Headset field-of-view simulation for hand tracking dropouts.

A hand is visible when its wrist lies inside a pyramidal frustum in the head
frame (x forward through the eyes, y left, z up). Both half-angle tests are
boundary-inclusive.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import ThreePointTrack


@dataclass(frozen=True)
class FovConfig:
    alpha_h: float  # degrees
    alpha_v: float  # degrees

    def __post_init__(self):
        if not 0 < self.alpha_h < 360:
            raise ValueError(f"alpha_h must be in (0, 360), got {self.alpha_h}")
        if not 0 < self.alpha_v < 180:
            raise ValueError(f"alpha_v must be in (0, 180), got {self.alpha_v}")

    @classmethod
    def symmetric(cls, alpha: float) -> "FovConfig":
        """Same angle both ways; vertical capped just below 180 degrees."""
        return cls(alpha, min(alpha, 179.9))


# Vertical defaults to the horizontal angle; 180 is capped to fit (0, 180).
PRESETS = {
    "fisheye180": FovConfig(180.0, 179.9),
    "quest2": FovConfig(120.0, 120.0),
    "hololens2": FovConfig(90.0, 90.0),
}


def to_head_frame(head_position, head_orientation, point) -> np.ndarray:
    """head_orientation^T (point - head_position), broadcast over leading dims."""
    d = np.asarray(point, dtype=np.float64) - np.asarray(head_position, dtype=np.float64)
    return np.einsum("...ba,...b->...a", np.asarray(head_orientation, dtype=np.float64), d)


def is_in_fov(cfg: FovConfig, hand_in_head_frame) -> np.ndarray | bool:
    p = np.asarray(hand_in_head_frame, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    half_h = np.deg2rad(cfg.alpha_h) / 2
    half_v = np.deg2rad(cfg.alpha_v) / 2
    inside = (x > 0) & (np.abs(np.arctan2(y, x)) <= half_h) & (np.abs(np.arctan2(z, x)) <= half_v)
    return bool(inside) if inside.ndim == 0 else inside


def visibility_mask(cfg: FovConfig, track: ThreePointTrack) -> np.ndarray:
    """(F, 2) bool visibility of the left and right hand."""
    head_p = track.positions[:, 0:1]
    head_R = track.orientations[:, 0:1]
    local = to_head_frame(head_p, head_R, track.positions[:, 1:3])
    return np.asarray(is_in_fov(cfg, local), dtype=bool).reshape(-1, 2)


def random_mask(p: float, seed: int, track: ThreePointTrack | int) -> np.ndarray:
    """Independent Bernoulli(p) dropout per frame and hand; True means visible."""
    n_frames = track if isinstance(track, (int, np.integer)) else track.n_frames
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    return rng.random((n_frames, 2)) >= p


def visible_fraction(mask: np.ndarray) -> float:
    return float(np.mean(mask))
