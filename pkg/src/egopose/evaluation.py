"""Accuracy, smoothness, body-size and ground-contact metrics, plus the
offset-robustness, FoV-strategy and shape-strategy harnesses.

All reported values are centimeters (cm/s for MPJVE). Aggregates are
frame-weighted means of per-sequence values.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .core_math import rot6d_to_matrix
from .errors import MissingWeights, ShapeMismatch
from .features import SequenceFeatures
from .fov import PRESETS, FovConfig, visibility_mask
from .ingest import MotionSequence, apply_offset, extract_three_point
from .network import PoseNet, split_output
from .skeleton import (
    NUM_BETAS,
    BodyPose,
    SkeletonModel,
    forward_kinematics,
    proxy_vertices,
    root_from_head,
    t_pose_measurements,
)
from .training import calibrate_scale, median_shape

REPORT_VERSION = 1
METRICS = ("mpjpe", "mpjve", "mve", "height_err", "arm_err", "gp", "ff")
SHAPE_STRATEGIES = ("mean", "calib", "estimate")
MEDIAN_FRAMES = 60


def _check(pred, gt):
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    return pred, gt


def mpjpe(pred_joints, gt_joints) -> float:
    pred, gt = _check(pred_joints, gt_joints)
    return float(np.mean(np.linalg.norm(pred - gt, axis=-1)) * 100.0)


def mpjve(pred_joints, gt_joints, fps: float) -> float:
    pred, gt = _check(pred_joints, gt_joints)
    if len(pred) < 2:
        raise ShapeMismatch("velocity error needs at least 2 frames")
    dv = (np.diff(pred, axis=0) - np.diff(gt, axis=0)) * fps
    return float(np.mean(np.linalg.norm(dv, axis=-1)) * 100.0)


def mve(pred_vertices, gt_vertices) -> float:
    return mpjpe(pred_vertices, gt_vertices)


def ground_penetration(vertices_per_frame) -> float:
    """Mean depth of every below-ground vertex (pooled over penetrating frames).

    Sums are correctly rounded (fsum), so the result does not depend on
    summation order.
    """
    z = np.asarray(vertices_per_frame, dtype=np.float64)[..., 2]
    depths = -z[z < 0]
    if depths.size == 0:
        return 0.0
    return math.fsum(depths) / depths.size * 100.0


def floating_feet(vertices_per_frame) -> float:
    """Mean height of the lowest vertex over frames with no vertex below ground."""
    z = np.asarray(vertices_per_frame, dtype=np.float64)[..., 2]
    lowest = z.min(axis=-1)
    clean = lowest >= 0
    if not clean.any():
        return 0.0
    return math.fsum(lowest[clean]) / int(clean.sum()) * 100.0


def body_dimension_errors(pred_beta, gt_beta, model: SkeletonModel,
                          pred_model: SkeletonModel | None = None) -> tuple[float, float]:
    """Absolute T-pose height and arm-length errors in cm.

    ``pred_model`` lets the prediction use a different (e.g. calibrated,
    uniformly scaled) skeleton than the ground truth.
    """
    ph, pa = t_pose_measurements(pred_model or model, pred_beta)
    gh, ga = t_pose_measurements(model, gt_beta)
    return abs(ph - gh) * 100.0, abs(pa - ga) * 100.0


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)       # per-sequence dicts
    aggregate: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    offsets: list = field(default_factory=list)    # per-offset aggregate rows, if swept

    def to_json(self, path: str | Path) -> None:
        doc = {"report_version": REPORT_VERSION, "units": "cm, cm/s for mpjve",
               "aggregation": "frame-weighted mean over sequences",
               "config": self.config, "aggregate": self.aggregate,
               "sequences": self.rows, "offsets": self.offsets}
        Path(path).write_text(json.dumps(doc, indent=2))

    def to_csv(self, path: str | Path) -> None:
        write_csv(path, self.rows + [{"sequence": "ALL", **self.aggregate}])


def write_csv(path: str | Path, rows: list[dict]) -> None:
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)


def predict_track(net: PoseNet, feats: SequenceFeatures, batch: int = 512) -> np.ndarray:
    """Raw (F - tau + 1, 148) outputs for every full window, newest frame first at tau - 1."""
    tau = net.config.tau
    starts = np.arange(feats.n_frames - tau + 1)
    dtype = next(net.parameters()).dtype
    outs = []
    with torch.no_grad():
        for i in range(0, len(starts), batch):
            x = torch.as_tensor(feats.windows(starts[i:i + batch], tau), dtype=dtype)
            outs.append(net(x).double().numpy())
    return np.concatenate(outs)


def evaluate_sequence(net: PoseNet, seq: MotionSequence, model: SkeletonModel,
                      fov: FovConfig | None = None, shape_strategy: str = "estimate",
                      offset=None) -> dict:
    """Metrics for the frames tau-1 .. F-1 of one sequence."""
    if shape_strategy not in SHAPE_STRATEGIES:
        raise ValueError(f"unknown shape strategy {shape_strategy!r}")
    if offset is not None:
        seq = apply_offset(seq, offset)
    tau = net.config.tau
    track = extract_three_point(seq, model)
    vis = visibility_mask(fov, track) if fov is not None else None
    feats = SequenceFeatures(track, vis, mode=net.config.feature_mode)
    out = predict_track(net, feats)
    root6, local6, beta = split_output(out)
    R_root, R_local = rot6d_to_matrix(root6), rot6d_to_matrix(local6)
    frames = slice(tau - 1, seq.n_frames)

    if shape_strategy == "estimate":
        pred_model = model
        pred_beta = median_shape(beta[:MEDIAN_FRAMES])
    elif shape_strategy == "calib":
        h, a = t_pose_measurements(model, seq.beta)
        pred_model = model.scaled(calibrate_scale(h, a, model))
        pred_beta = np.zeros(NUM_BETAS)
    else:
        pred_model, pred_beta = model, np.zeros(NUM_BETAS)

    head = track.positions[frames, 0]
    root = root_from_head(pred_model, head, R_root, R_local, pred_beta)
    pred_fk = forward_kinematics(pred_model, BodyPose(root, R_root, R_local), pred_beta)
    gt_fk = forward_kinematics(model, seq.pose[frames], seq.beta)
    pred_v = proxy_vertices(pred_model, pred_fk, pred_beta)
    gt_v = proxy_vertices(model, gt_fk, seq.beta)
    h_err, a_err = body_dimension_errors(pred_beta, seq.beta, model, pred_model)
    return {
        "sequence": seq.sequence_id,
        "frames": int(len(head)),
        "mpjpe": mpjpe(pred_fk.joint_position, gt_fk.joint_position),
        "mpjve": mpjve(pred_fk.joint_position, gt_fk.joint_position, seq.fps),
        "mve": mve(pred_v, gt_v),
        "height_err": h_err,
        "arm_err": a_err,
        "gp": ground_penetration(pred_v),
        "ff": floating_feet(pred_v),
        "pred_beta": pred_beta.tolist(),
    }


def aggregate(rows: list[dict]) -> dict:
    w = np.array([r["frames"] for r in rows], dtype=np.float64)
    agg = {"frames": int(w.sum())}
    for m in METRICS:
        agg[m] = float(np.sum(w * np.array([r[m] for r in rows])) / w.sum())
    return agg


def evaluate(net: PoseNet, seqs: list[MotionSequence], model: SkeletonModel, fov: FovConfig | None = None,
             shape_strategy: str = "estimate", offset=None) -> EvalReport:
    rows = [evaluate_sequence(net, s, model, fov, shape_strategy, offset) for s in seqs]
    cfg = {"fov": None if fov is None else [fov.alpha_h, fov.alpha_v], "shape_strategy": shape_strategy,
           "offset": None if offset is None else list(np.asarray(offset, dtype=float)),
           "model": net.config.to_dict()}
    return EvalReport(rows, aggregate(rows), cfg)


def offset_sweep(net: PoseNet, seqs: list[MotionSequence], model: SkeletonModel,
                 offsets=(0, 2, 5, 10, 50), direction=(1.0, 0.0, 0.0), **kw) -> EvalReport:
    """Evaluate on copies of the data shifted by ``d * direction`` meters for each d."""
    direction = np.asarray(direction, dtype=np.float64)
    table, base = [], None
    for d in offsets:
        rep = evaluate(net, seqs, model, offset=d * direction, **kw)
        table.append({"offset_m": float(d), **rep.aggregate})
        if base is None:
            base = rep
    base.offsets = table
    return base


def fov_strategy_compare(nets: dict, seqs: list[MotionSequence], model: SkeletonModel,
                         fovs=(180.0, 120.0, 90.0), strategies=("full", "random", "fov"),
                         **kw) -> list[dict]:
    """MPJPE/MPJVE grid: one row per (training strategy, evaluation FoV)."""
    missing = [s for s in strategies if s not in nets]
    if missing:
        raise MissingWeights(f"no weights for strategies: {', '.join(missing)}")
    rows = []
    for s in strategies:
        for a in fovs:
            cfg = PRESETS["fisheye180"] if a >= 180 else FovConfig(a, a)
            agg = evaluate(nets[s], seqs, model, fov=cfg, **kw).aggregate
            rows.append({"strategy": s, "fov_deg": float(a), "mpjpe": agg["mpjpe"], "mpjve": agg["mpjve"]})
    return rows


def shape_strategy_compare(nets: dict, seqs: list[MotionSequence], model: SkeletonModel, **kw) -> list[dict]:
    """One row per strategy (mean shape, DA + calibration, shape estimation)."""
    missing = [s for s in SHAPE_STRATEGIES if s not in nets]
    if missing:
        raise MissingWeights(f"no weights for shape strategies: {', '.join(missing)}")
    rows = []
    for s in SHAPE_STRATEGIES:
        agg = evaluate(nets[s], seqs, model, shape_strategy=s, **kw).aggregate
        rows.append({"strategy": s, **agg})
    return rows
