"""Losses, Adam, learning-rate schedule, the training loop, and the two
shape strategies (T-pose calibration and median shape over early frames)."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .core_math import matrix_to_rot6d, rot6d_to_matrix
from .errors import EmptyDataset, NonPositiveMeasurement, ShapeMismatch
from .features import SequenceFeatures
from .fov import FovConfig, visibility_mask
from .ingest import MotionSequence, extract_three_point
from .network import ModelConfig, PoseNet, PoseOutput, WeightSet, split_output
from .skeleton import (
    NUM_BETAS,
    BodyPose,
    SkeletonModel,
    TorchSkeleton,
    forward_kinematics,
    root_from_head,
    t_pose_measurements,
    torch_rot6d_to_matrix,
)

log = logging.getLogger(__name__)

MASK_STRATEGIES = ("none", "random", "fov")
SHAPE_MODES = ("estimate", "mean", "scale")


@dataclass(frozen=True)
class LossWeights:
    ori: float = 0.05
    rot: float = 1.0
    pos: float = 1.0
    beta: float = 0.01

    def __post_init__(self):
        if min(self.ori, self.rot, self.pos, self.beta) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class TrainConfig:
    batch_size: int = 256
    lr: float = 1e-4
    lr_decay: float = 0.5
    decay_every: int = 20000
    max_iters: int = 1000
    seed: int = 0
    window_stride: int = 1
    mask: str = "none"           # none | random | fov
    mask_p: float = 0.2
    fov_h: float = 120.0
    fov_v: float = 120.0
    shape_mode: str = "estimate"  # estimate | mean | scale
    checkpoint_every: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        if self.mask not in MASK_STRATEGIES:
            raise ValueError(f"unknown mask strategy {self.mask!r}")
        if self.shape_mode not in SHAPE_MODES:
            raise ValueError(f"unknown shape mode {self.shape_mode!r}")
        if self.batch_size <= 0 or self.lr <= 0 or self.decay_every <= 0 or self.window_stride <= 0:
            raise ValueError("batch_size, lr, decay_every and window_stride must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def fov(self) -> FovConfig:
        return FovConfig(self.fov_h, self.fov_v)


def lr_schedule(iteration: int, cfg: TrainConfig) -> float:
    return cfg.lr * cfg.lr_decay ** (iteration // cfg.decay_every)


# --- losses: 64-bit numpy reference ------------------------------------------

def loss_pos(pred: PoseOutput, gt_pose: BodyPose, gt_beta, model: SkeletonModel, tracked_head) -> float:
    """Mean absolute joint-position error; the predicted root hangs off the tracked head."""
    R_root = rot6d_to_matrix(pred.root_orientation)
    R_local = rot6d_to_matrix(pred.local_rotations)
    root = root_from_head(model, tracked_head, R_root, R_local, pred.beta)
    p = forward_kinematics(model, BodyPose(root, R_root, R_local), pred.beta).joint_position
    g = forward_kinematics(model, gt_pose, gt_beta).joint_position
    return float(np.mean(np.abs(p - g)))


def loss_total(pred: PoseOutput, gt_pose: BodyPose, gt_beta, model: SkeletonModel,
               weights: LossWeights = LossWeights(), tracked_head=None) -> tuple[float, dict]:
    """Weighted loss and its components (already multiplied by their weights)."""
    if tracked_head is None:
        tracked_head = forward_kinematics(model, gt_pose, gt_beta).joint_position[..., model.head_joint, :]
    parts = {
        "ori": weights.ori * float(np.mean(np.abs(pred.root_orientation - matrix_to_rot6d(gt_pose.root_orientation)))),
        "rot": weights.rot * float(np.mean(np.abs(pred.local_rotations - matrix_to_rot6d(gt_pose.local_rotations)))),
        "pos": weights.pos * loss_pos(pred, gt_pose, gt_beta, model, tracked_head),
        "beta": weights.beta * float(np.mean(np.sum(np.abs(pred.beta), axis=-1))),
    }
    return sum(parts.values()), parts


# --- losses: differentiable torch path ---------------------------------------

@dataclass
class Targets:
    root6: torch.Tensor   # (B, 6)
    local6: torch.Tensor  # (B, 21, 6)
    rel: torch.Tensor     # (B, 22, 3) gt joints minus tracked head
    scale: torch.Tensor   # (B,) calibration scale of the subject


def torch_loss(out: torch.Tensor, tgt: Targets, tskel: TorchSkeleton, weights: LossWeights,
               shape_mode: str = "estimate") -> tuple[torch.Tensor, dict]:
    root6, local6, beta = split_output(out)
    R_root = torch_rot6d_to_matrix(root6)
    R_local = torch_rot6d_to_matrix(local6)
    if shape_mode == "estimate":
        offsets = tskel.offsets(beta)
    elif shape_mode == "mean":
        offsets = tskel.mean_offsets
    else:
        offsets = tskel.mean_offsets * tgt.scale[:, None, None]
    joints = tskel.joint_positions(R_root, R_local, offsets)
    rel = joints - joints[:, tskel.head_joint:tskel.head_joint + 1]
    parts = {
        "ori": weights.ori * (root6 - tgt.root6).abs().mean(),
        "rot": weights.rot * (local6 - tgt.local6).abs().mean(),
        "pos": weights.pos * (rel - tgt.rel).abs().mean(),
        "beta": weights.beta * beta.abs().sum(-1).mean(),
    }
    return parts["ori"] + parts["rot"] + parts["pos"] + parts["beta"], parts


# --- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update; works on numpy arrays or torch tensors."""
    if set(params) != set(grads):
        raise ShapeMismatch("parameter and gradient names differ")
    t = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if tuple(np.shape(p)) != tuple(np.shape(g)):
            raise ShapeMismatch(f"{k}: parameter shape {tuple(np.shape(p))} vs gradient {tuple(np.shape(g))}")
        m = state.m.get(k, 0.0 * g)
        v = state.v.get(k, 0.0 * g)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_p[k] = p - lr * m_hat / (v_hat ** 0.5 + eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(t, new_m, new_v)


# --- shape strategies --------------------------------------------------------

def calibrate_scale(measured_height: float, measured_arm: float, model: SkeletonModel) -> float:
    """Mean of the height and arm-length ratios to the mean shape."""
    if measured_height <= 0 or measured_arm <= 0:
        raise NonPositiveMeasurement("measurements must be positive")
    mean_h, mean_a = t_pose_measurements(model, np.zeros(NUM_BETAS))
    return 0.5 * (measured_height / mean_h + measured_arm / mean_a)


def median_shape(betas) -> np.ndarray:
    """Coordinate-wise median over frames; an even count averages the middle two."""
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim == 1:
        betas = betas[None]
    if len(betas) < 1:
        raise ValueError("need at least one frame")
    return np.median(betas, axis=0)


# --- data --------------------------------------------------------------------

class WindowDataset:
    """All stride-``s`` windows of a set of sequences with last-frame targets."""

    def __init__(self, seqs: list[MotionSequence], model: SkeletonModel, tau: int, stride: int = 1,
                 mask: str = "none", fov: FovConfig | None = None, feature_mode: str = "decomposed"):
        self.seqs, self.tau, self.model = seqs, tau, model
        self.mask_key = (fov.alpha_h, fov.alpha_v) if mask == "fov" and fov is not None else None
        self.feats, self.targets, self.index = [], [], []
        for si, seq in enumerate(seqs):
            track = extract_three_point(seq, model)
            vis = visibility_mask(fov, track) if mask == "fov" else None
            self.feats.append(SequenceFeatures(track, vis, mode=feature_mode))
            fk = forward_kinematics(model, seq.pose, seq.beta)
            head = track.positions[:, 0:1, :]
            h, a = t_pose_measurements(model, seq.beta)
            self.targets.append({
                "root6": matrix_to_rot6d(seq.root_orientation),
                "local6": matrix_to_rot6d(seq.local_rotations),
                "rel": fk.joint_position - head,
                "scale": calibrate_scale(h, a, model),
            })
            for start in range(0, seq.n_frames - tau + 1, stride):
                self.index.append((si, start))
        if not self.index:
            raise EmptyDataset(f"no sequence is at least tau={tau} frames long")
        self.index = np.asarray(self.index, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.index)

    def batch(self, rows, random_p: float = 0.0, rng: np.random.Generator | None = None,
              dtype=torch.float32) -> tuple[torch.Tensor, Targets]:
        rows = np.asarray(rows)
        B, tau = len(rows), self.tau
        x = np.empty((B, tau, 59))
        root6 = np.empty((B, 6))
        local6 = np.empty((B, 21, 6))
        rel = np.empty((B, 22, 3))
        scale = np.empty(B)
        sel = self.index[rows]
        for si in np.unique(sel[:, 0]):
            which = np.flatnonzero(sel[:, 0] == si)
            starts = sel[which, 1]
            sf = self.feats[si]
            vis = None
            if random_p > 0:
                vis = rng.random((len(which), tau, 2)) >= random_p
            x[which] = sf.windows(starts, tau, vis=vis)
            last = starts + tau - 1
            t = self.targets[si]
            root6[which], local6[which], rel[which] = t["root6"][last], t["local6"][last], t["rel"][last]
            scale[which] = t["scale"]
        as_t = lambda a: torch.as_tensor(a, dtype=dtype)  # noqa: E731
        return as_t(x), Targets(as_t(root6), as_t(local6), as_t(rel), as_t(scale))


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, 1, epoch]).permutation(n)


def batch_rows(seed: int, iteration: int, batch_size: int, n: int) -> np.ndarray:
    """Rows for an iteration: consecutive slices of per-epoch shuffles, so any
    iteration can be reproduced without replaying earlier ones."""
    first = iteration * batch_size
    out = np.empty(batch_size, dtype=np.int64)
    filled, pos = 0, first
    while filled < batch_size:
        epoch, off = divmod(pos, n)
        take = min(batch_size - filled, n - off)
        out[filled:filled + take] = _epoch_order(seed, epoch, n)[off:off + take]
        filled += take
        pos += take
    return out


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: list[MotionSequence] | WindowDataset,
    skeleton: SkeletonModel,
    resume: WeightSet | None = None,
    checkpoint_path: str | Path | None = None,
    log_path: str | Path | None = None,
    stop_at: int | None = None,
) -> tuple[WeightSet, list[dict]]:
    """Train a pose network; fully deterministic given the seeds.

    ``resume`` continues from a checkpoint written by an earlier run with the
    same configs; ``stop_at`` ends early (used to create such checkpoints).
    """
    if not isinstance(dataset, WindowDataset):
        if not dataset:
            raise EmptyDataset("training needs at least one sequence")
        dataset = WindowDataset(dataset, skeleton, model_cfg.tau, train_cfg.window_stride,
                                train_cfg.mask, train_cfg.fov if train_cfg.mask == "fov" else None,
                                model_cfg.feature_mode)
    wanted = (train_cfg.fov_h, train_cfg.fov_v) if train_cfg.mask == "fov" else None
    if dataset.tau != model_cfg.tau:
        raise ValueError(f"dataset windows have tau={dataset.tau}, model expects {model_cfg.tau}")
    if dataset.mask_key != wanted:
        raise ValueError(f"dataset FoV masking {dataset.mask_key} does not match mask={train_cfg.mask!r}")
    if resume is not None:
        net = PoseNet.from_weight_set(resume)
        start = int(resume.meta["iteration"])
        names = [k for k, _ in net.named_parameters()]
        state = AdamState(
            int(resume.meta["adam_step"]),
            {k: torch.from_numpy(resume.extras[f"adam.m.{k}"].copy()) for k in names},
            {k: torch.from_numpy(resume.extras[f"adam.v.{k}"].copy()) for k in names},
        )
    else:
        net = PoseNet(model_cfg)
        start, state = 0, AdamState()
    tskel = TorchSkeleton(skeleton)
    weights = train_cfg.loss_weights
    random_p = train_cfg.mask_p if train_cfg.mask == "random" else 0.0
    history = []
    log_fh = open(log_path, "a" if resume is not None else "w") if log_path else None
    t0 = time.perf_counter()
    end = train_cfg.max_iters if stop_at is None else min(stop_at, train_cfg.max_iters)
    try:
        for it in range(start, end):
            rows = batch_rows(train_cfg.seed, it, train_cfg.batch_size, len(dataset))
            rng = np.random.default_rng([train_cfg.seed, 2, it])
            x, tgt = dataset.batch(rows, random_p, rng)
            net.zero_grad(set_to_none=True)
            loss, parts = torch_loss(net(x), tgt, tskel, weights, train_cfg.shape_mode)
            loss.backward()
            lr = lr_schedule(it, train_cfg)
            params = dict(net.named_parameters())
            with torch.no_grad():
                new, state = adam_step({k: p.data for k, p in params.items()},
                                       {k: p.grad for k, p in params.items()}, state, lr)
                for k, p in params.items():
                    p.copy_(new[k])
            rec = {"iteration": it + 1, "lr": lr, "loss": loss.item(),
                   **{k: v.item() for k, v in parts.items()},
                   "wall_time": time.perf_counter() - t0}
            history.append(rec)
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
            if (it + 1) % 100 == 0:
                log.info("iter %d loss %.5f lr %.2e", it + 1, rec["loss"], lr)
            if checkpoint_path and train_cfg.checkpoint_every and (it + 1) % train_cfg.checkpoint_every == 0:
                save_checkpoint(net, state, it + 1, train_cfg, checkpoint_path)
    finally:
        if log_fh:
            log_fh.close()
    ws = _with_state(net, state, end, train_cfg)
    return ws, history


def _with_state(net: PoseNet, state: AdamState, iteration: int, train_cfg: TrainConfig) -> WeightSet:
    ws = net.weight_set()
    ws.meta = {"iteration": iteration, "adam_step": state.step, "train_config": train_cfg.to_dict()}
    for k in state.m:
        ws.extras[f"adam.m.{k}"] = state.m[k].numpy().astype(np.float32)
        ws.extras[f"adam.v.{k}"] = state.v[k].numpy().astype(np.float32)
    return ws


def save_checkpoint(net, state, iteration, train_cfg, path) -> None:
    from .network import save_weights

    save_weights(_with_state(net, state, iteration, train_cfg), path)


def strip_training_state(ws: WeightSet) -> WeightSet:
    return WeightSet(ws.params, ws.config, ws.layout_version, {"iteration": ws.meta.get("iteration")}, {})
