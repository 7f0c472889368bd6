"""Independent reference computations used to cross-check the package."""
import math

import numpy as np


def homogeneous(R, t):
    H = np.eye(4)
    H[:3, :3] = R
    H[:3, 3] = t
    return H


def fk_homogeneous(parents, offsets, root_position, root_orientation, local_rotations):
    """Joint positions by multiplying 4x4 transforms along each root-to-joint path."""
    n = len(parents)
    positions = np.empty((n, 3))
    orientations = np.empty((n, 3, 3))
    for j in range(n):
        path = []
        k = j
        while k != 0:
            path.append(k)
            k = parents[k]
        T = homogeneous(root_orientation, root_position)
        for k in reversed(path):
            T = T @ homogeneous(local_rotations[k - 1], offsets[k])
        positions[j] = T[:3, 3]
        orientations[j] = T[:3, :3]
    return positions, orientations


def gp_brute_force(vertices):
    """Ground penetration in cm by enumerating every (frame, vertex) pair."""
    depths = []
    for frame in vertices:
        for v in frame:
            if v[2] < 0:
                depths.append(-float(v[2]))
    if not depths:
        return 0.0
    return math.fsum(depths) / len(depths) * 100.0


def ff_brute_force(vertices):
    """Floating feet in cm: mean lowest z over frames with no vertex below ground."""
    lows = []
    for frame in vertices:
        low = None
        clean = True
        for v in frame:
            if v[2] < 0:
                clean = False
            if low is None or v[2] < low:
                low = v[2]
        if clean:
            lows.append(float(low))
    if not lows:
        return 0.0
    return math.fsum(lows) / len(lows) * 100.0


def random_rotations(rng, n):
    """Uniform rotations from normalized Gaussian quaternions."""
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
        np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
        np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
    ], -2)
