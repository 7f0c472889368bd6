"""Single-stream real-time benchmark: per frame, push the tracked frame into
the incremental feature window and run one forward pass."""
from __future__ import annotations

import time

import numpy as np
import torch

from .features import StreamingFeatures
from .fov import FovConfig, visibility_mask
from .ingest import extract_three_point, synthesize_sequence
from .network import PoseNet, count_flops, count_params
from .skeleton import NUM_BETAS, SkeletonModel


def run_benchmark(net: PoseNet, skeleton: SkeletonModel, seconds: float = 10.0, warmup: int = 50,
                  fps: float = 60.0, fov: FovConfig | None = None, seed: int = 0) -> dict:
    """Stream synthetic frames for at least ``seconds`` of wall time."""
    cfg = net.config
    seq = synthesize_sequence(seed, "mixed", 60.0, fps, np.zeros(NUM_BETAS), skeleton)
    track = extract_three_point(seq, skeleton)
    vis = visibility_mask(fov, track) if fov is not None else track.visible
    stream = StreamingFeatures(fps, cfg.tau, cfg.feature_mode)
    net.eval()
    feat_ms, fwd_ms, total_ms = [], [], []
    n = track.n_frames

    def step(i):
        t0 = time.perf_counter()
        stream.push(track.positions[i % n], track.orientations[i % n], vis[i % n])
        x = torch.from_numpy(stream.window().features[None].astype(np.float32))
        t1 = time.perf_counter()
        with torch.inference_mode():
            net(x)
        t2 = time.perf_counter()
        return t1 - t0, t2 - t1

    for i in range(warmup):
        step(i)
    i = warmup
    start = time.perf_counter()
    while time.perf_counter() - start < seconds:
        a, b = step(i)
        feat_ms.append(a * 1e3)
        fwd_ms.append(b * 1e3)
        total_ms.append((a + b) * 1e3)
        i += 1
    wall = time.perf_counter() - start
    lat = np.asarray(total_ms)
    return {
        "frames": len(lat),
        "wall_s": wall,
        "throughput_fps": len(lat) / wall,
        "latency_ms_mean": float(lat.mean()),
        "latency_ms_p50": float(np.percentile(lat, 50)),
        "latency_ms_p95": float(np.percentile(lat, 95)),
        "latency_ms_max": float(lat.max()),
        "feature_ms_mean": float(np.mean(feat_ms)),
        "forward_ms_mean": float(np.mean(fwd_ms)),
        "threads": torch.get_num_threads(),
        "flops": count_flops(cfg),
        "params": count_params(cfg),
        "gate_fps": 60.0,
        "stretch_fps": 600.0,
        "passes_gate": len(lat) / wall >= 60.0,
        "meets_stretch": len(lat) / wall >= 600.0,
        "config": cfg.to_dict(),
    }
