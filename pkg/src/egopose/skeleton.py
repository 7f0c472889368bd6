"""Parametric 22-joint body model: shape-blended bone offsets, forward
kinematics, proxy surface points, and head-anchored root recovery.

Joint order and parent topology follow the first 22 SMPL-H body joints. The
shipped ``default_skeleton.json`` replaces the SMPL-H shape space with a sparse
linear blend: beta[0] scales every bone, beta[1] the arm bones, beta[2] the leg
bones; the remaining 13 coordinates have no effect.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np
import torch

from .core_math import compose
from .errors import FormatError

NUM_JOINTS = 22
NUM_BETAS = 16
SKELETON_VERSION = 1


@dataclass(frozen=True)
class SkeletonModel:
    parents: np.ndarray        # (22,), root is -1, parent index < child index
    mean_offsets: np.ndarray   # (22, 3) bone vectors from parent in T-pose, m
    blend: np.ndarray          # (22, 3, 16) m per unit beta
    proxy_offsets: np.ndarray  # (V, 3) in the owning joint's local frame
    proxy_joint: np.ndarray    # (V,) owning joint
    joint_names: tuple
    head_joint: int = 15
    left_hand_joint: int = 20
    right_hand_joint: int = 21
    left_arm_chain: tuple = (18, 20)
    right_arm_chain: tuple = (19, 21)

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    @property
    def num_proxies(self) -> int:
        return len(self.proxy_joint)

    def scaled(self, factor: float) -> "SkeletonModel":
        """Uniformly scaled copy (bones, blend and proxies)."""
        return replace(
            self,
            mean_offsets=self.mean_offsets * factor,
            blend=self.blend * factor,
            proxy_offsets=self.proxy_offsets * factor,
        )


@dataclass
class BodyPose:
    """Batched body pose; leading dims are typically frames."""
    root_position: np.ndarray     # (..., 3)
    root_orientation: np.ndarray  # (..., 3, 3)
    local_rotations: np.ndarray   # (..., 21, 3, 3)

    def __len__(self):
        return len(self.root_position)

    def __getitem__(self, idx) -> "BodyPose":
        return BodyPose(self.root_position[idx], self.root_orientation[idx], self.local_rotations[idx])


@dataclass
class FkResult:
    joint_position: np.ndarray     # (..., 22, 3)
    joint_orientation: np.ndarray  # (..., 22, 3, 3)


def _validate(parents, offsets, blend, names, proxies, height):
    n = len(parents)
    if not (len(offsets) == len(blend) == len(names) == len(proxies) == n):
        raise FormatError("skeleton arrays have inconsistent joint counts")
    roots = [j for j, p in enumerate(parents) if p == -1]
    if roots != [0]:
        raise FormatError("skeleton must have exactly one root at index 0")
    for j, p in enumerate(parents[1:], start=1):
        if not 0 <= p < j:
            raise FormatError(f"joint {j} has parent {p}; parents must precede children")
    if any(len(p) < 2 for p in proxies):
        raise FormatError("every joint needs at least two proxy points")
    if not 1.4 <= height <= 2.1:
        raise FormatError(f"mean T-pose height {height:.3f} m outside [1.4, 2.1]")


def load_skeleton(path: str | Path | None = None) -> SkeletonModel:
    """Load a skeleton document; ``None`` loads the shipped default."""
    if path is None:
        text = resources.files("egopose").joinpath("data/default_skeleton.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    if doc.get("version") != SKELETON_VERSION:
        raise FormatError(f"unsupported skeleton version {doc.get('version')!r}")
    parents = np.asarray(doc["parents"], dtype=np.int64)
    offsets = np.asarray(doc["mean_offsets"], dtype=np.float64)
    blend = np.asarray(doc["blend"], dtype=np.float64)
    if blend.shape != (len(parents), 3, NUM_BETAS):
        raise FormatError(f"blend has shape {blend.shape}")
    proxies = doc["proxies"]
    proxy_offsets = np.asarray([p for plist in proxies for p in plist], dtype=np.float64)
    proxy_joint = np.asarray([j for j, plist in enumerate(proxies) for _ in plist], dtype=np.int64)
    model = SkeletonModel(
        parents=parents,
        mean_offsets=offsets,
        blend=blend,
        proxy_offsets=proxy_offsets,
        proxy_joint=proxy_joint,
        joint_names=tuple(doc["joint_names"]),
        head_joint=doc.get("head_joint", 15),
        left_hand_joint=doc.get("left_hand_joint", 20),
        right_hand_joint=doc.get("right_hand_joint", 21),
        left_arm_chain=tuple(doc.get("left_arm_chain", (18, 20))),
        right_arm_chain=tuple(doc.get("right_arm_chain", (19, 21))),
    )
    _validate(parents, offsets, blend, doc["joint_names"], proxies, t_pose_measurements(model, np.zeros(NUM_BETAS))[0])
    return model


def bone_offsets(model: SkeletonModel, beta) -> np.ndarray:
    """offset_j = mean_offset_j + blend_j @ beta, shape (..., 22, 3)."""
    beta = np.asarray(beta, dtype=np.float64)
    return model.mean_offsets + np.einsum("jab,...b->...ja", model.blend, beta)


def forward_kinematics(model: SkeletonModel, pose: BodyPose, beta) -> FkResult:
    offsets = bone_offsets(model, beta)
    local = np.asarray(pose.local_rotations, dtype=np.float64)
    root_rot = np.asarray(pose.root_orientation, dtype=np.float64)
    root_pos = np.asarray(pose.root_position, dtype=np.float64)
    lead = np.broadcast_shapes(root_pos.shape[:-1], root_rot.shape[:-2], local.shape[:-3], offsets.shape[:-2])
    n = model.num_joints
    pos = np.empty(lead + (n, 3))
    ori = np.empty(lead + (n, 3, 3))
    pos[..., 0, :] = root_pos
    ori[..., 0, :, :] = root_rot
    offsets = np.broadcast_to(offsets, lead + (n, 3))
    for j in range(1, n):
        p = model.parents[j]
        ori[..., j, :, :] = compose(ori[..., p, :, :], local[..., j - 1, :, :])
        pos[..., j, :] = pos[..., p, :] + np.einsum("...ab,...b->...a", ori[..., p, :, :], offsets[..., j, :])
    return FkResult(pos, ori)


def root_from_head(model: SkeletonModel, tracked_head_position, root_orientation, local_rotations, beta) -> np.ndarray:
    """Root position that puts the FK head joint exactly on the tracked head."""
    root_orientation = np.asarray(root_orientation, dtype=np.float64)
    at_origin = forward_kinematics(
        model, BodyPose(np.zeros(root_orientation.shape[:-2] + (3,)), root_orientation, local_rotations), beta
    )
    return np.asarray(tracked_head_position, dtype=np.float64) - at_origin.joint_position[..., model.head_joint, :]


def identity_pose(lead: tuple = ()) -> BodyPose:
    eye = np.broadcast_to(np.eye(3), lead + (3, 3)).copy()
    return BodyPose(np.zeros(lead + (3,)), eye, np.broadcast_to(np.eye(3), lead + (21, 3, 3)).copy())


def proxy_scale(model: SkeletonModel, beta) -> np.ndarray:
    """Per-joint length ratio |offset(beta)| / |mean_offset|; the root uses the mean of its children."""
    offsets = bone_offsets(model, beta)
    mean_len = np.linalg.norm(model.mean_offsets, axis=-1)
    ratio = np.ones(offsets.shape[:-1])
    nz = mean_len > 0
    ratio[..., nz] = np.linalg.norm(offsets[..., nz, :], axis=-1) / mean_len[nz]
    root_children = np.flatnonzero(model.parents == 0)
    ratio[..., 0] = ratio[..., root_children].mean(axis=-1)
    return ratio


def proxy_vertices(model: SkeletonModel, fk: FkResult, beta) -> np.ndarray:
    """World positions of all proxy points, shape (..., V, 3)."""
    scale = proxy_scale(model, beta)[..., model.proxy_joint]
    local = model.proxy_offsets * scale[..., None]
    R = fk.joint_orientation[..., model.proxy_joint, :, :]
    return fk.joint_position[..., model.proxy_joint, :] + np.einsum("...vab,...vb->...va", R, local)


def grounded_root_height(model: SkeletonModel, beta) -> float:
    """Root height that puts the lowest T-pose proxy on z = 0."""
    fk = forward_kinematics(model, identity_pose(), beta)
    return float(-proxy_vertices(model, fk, beta)[:, 2].min())


def t_pose_measurements(model: SkeletonModel, beta) -> tuple[float, float]:
    """(height, arm length) in meters for the T-pose of shape ``beta``."""
    fk = forward_kinematics(model, identity_pose(), beta)
    z = proxy_vertices(model, fk, beta)[:, 2]
    offsets = bone_offsets(model, beta)
    arm = float(np.linalg.norm(offsets[list(model.left_arm_chain)], axis=-1).sum())
    return float(z.max() - z.min()), arm


# --- differentiable (torch) path used by the training losses -----------------

def torch_rot6d_to_matrix(r: torch.Tensor) -> torch.Tensor:
    a1, a2 = r[..., 0:3], r[..., 3:6]
    b1 = a1 / a1.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    u2 = a2 - (b1 * a2).sum(-1, keepdim=True) * b1
    b2 = u2 / u2.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    b3 = torch.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


class TorchSkeleton:
    """Tensor copy of the model arrays for batched differentiable FK."""

    def __init__(self, model: SkeletonModel, dtype=torch.float32):
        self.model = model
        self.parents = [int(p) for p in model.parents]
        self.mean_offsets = torch.as_tensor(model.mean_offsets, dtype=dtype)
        self.blend = torch.as_tensor(model.blend, dtype=dtype)
        self.head_joint = model.head_joint

    def offsets(self, beta: torch.Tensor | None) -> torch.Tensor:
        if beta is None:
            return self.mean_offsets
        return self.mean_offsets + torch.einsum("jab,...b->...ja", self.blend, beta)

    def joint_positions(self, root_rot: torch.Tensor, local_rot: torch.Tensor, offsets: torch.Tensor) -> torch.Tensor:
        """FK with the root at the origin; returns (B, 22, 3)."""
        batch = root_rot.shape[:-2]
        offsets = offsets.expand(batch + offsets.shape[-2:])
        oris = [root_rot]
        pos = [torch.zeros(batch + (3,), dtype=root_rot.dtype)]
        for j in range(1, len(self.parents)):
            p = self.parents[j]
            pos.append(pos[p] + (oris[p] @ offsets[..., j, :, None])[..., 0])
            oris.append(oris[p] @ local_rot[..., j - 1, :, :])
        return torch.stack(pos, dim=-2)
