"""Rotation representations shared by every stage of the pipeline.

Rotation matrices are numpy arrays of shape ``(..., 3, 3)``; 6D rotations are
the first two matrix columns stacked column-major, shape ``(..., 6)``. All
functions broadcast over leading dimensions and work in float64.

The world frame is z-up with the ground at z = 0.
"""
from __future__ import annotations

import numpy as np

from .errors import DegenerateInput

# Positions are snapped to this lattice (2^-32 m) so that differences of
# lattice points, and shifts by lattice-aligned offsets, are exact in float64.
LATTICE = 2.0 ** -32
_INV_LATTICE = 2.0 ** 32

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def rot6d_to_matrix(r) -> np.ndarray:
    """Gram-Schmidt decode of a 6D rotation into a proper rotation matrix."""
    r = np.asarray(r, dtype=np.float64)
    a1, a2 = r[..., 0:3], r[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 <= 1e-9):
        raise DegenerateInput("first 6D column has (near) zero norm")
    b1 = a1 / n1
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    if np.any(n2 <= 1e-9):
        raise DegenerateInput("6D columns are parallel")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def compose(a, b) -> np.ndarray:
    return np.matmul(a, b)


def relative_rotation(prev, cur) -> np.ndarray:
    """Rotation taking ``prev`` to ``cur`` in the local frame: prev^T cur."""
    return np.matmul(np.swapaxes(prev, -1, -2), cur)


def axis_angle_to_matrix(axis, angle) -> np.ndarray:
    """Rodrigues formula; ``axis`` need not be normalized, ``angle`` in radians."""
    axis = np.asarray(axis, dtype=np.float64)
    angle = np.asarray(angle, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    R = np.empty(np.broadcast(x, c).shape + (3, 3))
    R[..., 0, 0] = c + x * x * C
    R[..., 0, 1] = x * y * C - z * s
    R[..., 0, 2] = x * z * C + y * s
    R[..., 1, 0] = y * x * C + z * s
    R[..., 1, 1] = c + y * y * C
    R[..., 1, 2] = y * z * C - x * s
    R[..., 2, 0] = z * x * C - y * s
    R[..., 2, 1] = z * y * C + x * s
    R[..., 2, 2] = c + z * z * C
    return R


def rot_x(angle) -> np.ndarray:
    return axis_angle_to_matrix([1.0, 0.0, 0.0], angle)


def rot_y(angle) -> np.ndarray:
    return axis_angle_to_matrix([0.0, 1.0, 0.0], angle)


def rot_z(angle) -> np.ndarray:
    return axis_angle_to_matrix([0.0, 0.0, 1.0], angle)


def rotation_angle(R) -> np.ndarray:
    """Rotation angle in radians from the trace."""
    tr = np.trace(np.asarray(R), axis1=-2, axis2=-1)
    return np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))


def is_rotation(R, tol: float = 1e-6) -> bool:
    R = np.asarray(R)
    eye = np.broadcast_to(np.eye(3), R.shape)
    ortho = np.max(np.abs(np.swapaxes(R, -1, -2) @ R - eye)) < tol
    return bool(ortho and np.max(np.abs(np.linalg.det(R) - 1.0)) < tol)


def snap_to_lattice(p) -> np.ndarray:
    """Round positions to the 2^-32 m lattice (exact for |p| < 2^21 m)."""
    return np.round(np.asarray(p, dtype=np.float64) * _INV_LATTICE) * LATTICE
