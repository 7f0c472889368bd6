"""SlowFast-fused transformer encoder that regresses the newest frame's pose.

Pipeline: SlowFast fusion (tau frames -> tau/2 tokens) -> sinusoidal position
encoding -> pre-norm encoder layers -> final layer norm -> linear head on the
last token. The 148 outputs are the root orientation (6D), 21 local joint
rotations (6D each) and 16 shape coefficients.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core_math import IDENTITY_6D
from .errors import ConfigMismatch, FormatError, OddWindow
from .features import FEATURE_DIM, LAYOUT_VERSION, FeatureWindow

NUM_LOCAL = 21
NUM_BETAS = 16
OUTPUT_DIM = 6 + NUM_LOCAL * 6 + NUM_BETAS
WEIGHT_MAGIC = b"EPWT"
WEIGHT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    tau: int = 80
    feature_dim: int = FEATURE_DIM
    embed_dim: int = 128       # per stream; token width is 2 * embed_dim
    num_layers: int = 3
    num_heads: int = 8
    mlp_hidden: int = 2048
    fusion: str = "slowfast"   # "slowfast" or "plain"
    feature_mode: str = "decomposed"
    seed: int = 0

    def __post_init__(self):
        if self.fusion not in ("slowfast", "plain"):
            raise ValueError(f"unknown fusion {self.fusion!r}")
        if self.fusion == "slowfast" and self.tau % 2:
            raise OddWindow(f"SlowFast fusion needs an even window, got tau={self.tau}")
        if self.d_model % self.num_heads:
            raise ValueError(f"token width {self.d_model} not divisible by {self.num_heads} heads")

    @property
    def d_model(self) -> int:
        return 2 * self.embed_dim

    @property
    def num_tokens(self) -> int:
        return self.tau // 2 if self.fusion == "slowfast" else self.tau

    @property
    def output_dim(self) -> int:
        return OUTPUT_DIM

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class PoseOutput:
    root_orientation: np.ndarray  # (..., 6)
    local_rotations: np.ndarray   # (..., 21, 6)
    beta: np.ndarray              # (..., 16)


def split_output(out):
    """Split raw (..., 148) outputs into root 6D, local 6Ds and beta."""
    root = out[..., 0:6]
    local = out[..., 6:6 + 6 * NUM_LOCAL].reshape(out.shape[:-1] + (NUM_LOCAL, 6))
    beta = out[..., 6 + 6 * NUM_LOCAL:]
    return root, local, beta


def slowfast_fuse(frames):
    """Split a window into the SLOW (stride 2 over all frames) and FAST (newest half) streams."""
    tau = frames.shape[-2]
    if tau % 2:
        raise OddWindow(f"SlowFast fusion needs an even window, got {tau}")
    return frames[..., 0:tau:2, :], frames[..., tau // 2:, :]


def sinusoidal_encoding(n: int, d: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    i = torch.arange(0, d, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / d)
    pe = torch.zeros(n, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : d // 2])
    return pe.float()


class EncoderLayer(nn.Module):
    def __init__(self, d: int, heads: int, hidden: int):
        super().__init__()
        self.heads = heads
        self.ln1 = nn.LayerNorm(d)
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)
        self.ln2 = nn.LayerNorm(d)
        self.fc1 = nn.Linear(d, hidden)
        self.fc2 = nn.Linear(hidden, d)

    def attention(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        B, T, d = x.shape
        dh = d // self.heads
        q, k, v = self.qkv(x).view(B, T, 3, self.heads, dh).permute(2, 0, 3, 1, 4)
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(B, T, d)
        return self.proj(out), weights

    def forward(self, x: torch.Tensor, return_attention: bool = False):
        a, weights = self.attention(self.ln1(x))
        x = x + a
        x = x + self.fc2(F.gelu(self.fc1(self.ln2(x))))
        return (x, weights) if return_attention else x


class PoseNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        if config.fusion == "slowfast":
            self.embed_slow = nn.Linear(config.feature_dim, config.embed_dim)
            self.embed_fast = nn.Linear(config.feature_dim, config.embed_dim)
        else:
            self.embed = nn.Linear(config.feature_dim, d)
        self.register_buffer("pos_enc", sinusoidal_encoding(config.num_tokens, d), persistent=False)
        self.layers = nn.ModuleList(
            EncoderLayer(d, config.num_heads, config.mlp_hidden) for _ in range(config.num_layers)
        )
        self.norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, OUTPUT_DIM)
        self._init_weights()

    def _init_weights(self):
        g = torch.Generator().manual_seed(self.config.seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.startswith("head."):
                    continue
                if p.ndim == 2:
                    nn.init.xavier_uniform_(p, generator=g)
                elif "ln" in name or name.startswith("norm."):
                    nn.init.ones_(p) if name.endswith("weight") else nn.init.zeros_(p)
                else:
                    nn.init.zeros_(p)
            nn.init.normal_(self.head.weight, std=1e-3, generator=g)
            bias = torch.zeros(OUTPUT_DIM)
            bias[0:6] = torch.as_tensor(IDENTITY_6D)
            bias[6:6 + 6 * NUM_LOCAL] = torch.as_tensor(IDENTITY_6D).repeat(NUM_LOCAL)
            self.head.bias.copy_(bias)

    def tokens(self, x: torch.Tensor) -> torch.Tensor:
        """(B, tau, 59) -> (B, tokens, d) before position encoding."""
        if self.config.fusion == "slowfast":
            slow, fast = slowfast_fuse(x)
            return torch.cat([self.embed_slow(slow), self.embed_fast(fast)], dim=-1)
        return self.embed(x)

    def forward(self, x: torch.Tensor, return_attention: bool = False):
        h = self.tokens(x) + self.pos_enc.to(x.dtype)
        attn = []
        for layer in self.layers:
            if return_attention:
                h, w = layer(h, return_attention=True)
                attn.append(w)
            else:
                h = layer(h)
        out = self.head(self.norm(h[:, -1]))
        return (out, attn) if return_attention else out

    def weight_set(self) -> "WeightSet":
        return WeightSet(
            params={k: v.detach().cpu().numpy().astype(np.float32) for k, v in self.state_dict().items()},
            config=self.config,
        )

    @classmethod
    def from_weight_set(cls, ws: "WeightSet") -> "PoseNet":
        if ws.layout_version != LAYOUT_VERSION:
            raise ConfigMismatch(f"weights use feature layout {ws.layout_version}, this build uses {LAYOUT_VERSION}")
        net = cls(ws.config)
        expected = net.state_dict()
        if set(expected) != set(ws.params):
            raise ConfigMismatch("parameter names do not match the config")
        for k, v in expected.items():
            if tuple(v.shape) != tuple(ws.params[k].shape):
                raise ConfigMismatch(f"{k}: shape {ws.params[k].shape} vs config {tuple(v.shape)}")
        net.load_state_dict({k: torch.from_numpy(np.asarray(v, dtype=np.float32)) for k, v in ws.params.items()})
        return net


@dataclass
class WeightSet:
    params: dict
    config: ModelConfig
    layout_version: int = LAYOUT_VERSION
    meta: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)  # e.g. optimizer moments in checkpoints


def _as_batch(net: PoseNet, window) -> tuple[torch.Tensor, bool]:
    x = window.features if isinstance(window, FeatureWindow) else window
    x = torch.as_tensor(np.asarray(x) if not torch.is_tensor(x) else x)
    single = x.ndim == 2
    if single:
        x = x[None]
    cfg = net.config
    if x.shape[-2:] != (cfg.tau, cfg.feature_dim):
        raise ConfigMismatch(f"window shape {tuple(x.shape[-2:])} does not match config ({cfg.tau}, {cfg.feature_dim})")
    dtype = next(net.parameters()).dtype
    return x.to(dtype), single


def forward(net: PoseNet, window) -> PoseOutput:
    """Inference on one window (tau, 59) or a batch (B, tau, 59)."""
    x, single = _as_batch(net, window)
    with torch.no_grad():
        out = net(x).double().numpy()
    if single:
        out = out[0]
    return PoseOutput(*split_output(out))


def backward(net: PoseNet, window, output_gradient) -> dict:
    """Gradients of <forward(window), output_gradient> for every parameter."""
    x, single = _as_batch(net, window)
    g = torch.as_tensor(np.asarray(output_gradient), dtype=x.dtype)
    if single:
        g = g[None]
    net.zero_grad(set_to_none=False)
    out = net(x)
    out.backward(g.reshape(out.shape))
    return {k: p.grad.detach().numpy().copy() for k, p in net.named_parameters()}


def count_params(config: ModelConfig) -> int:
    d, h, fd = config.d_model, config.mlp_hidden, config.feature_dim
    if config.fusion == "slowfast":
        embed = 2 * (fd * config.embed_dim + config.embed_dim)
    else:
        embed = fd * d + d
    layer = (d * 3 * d + 3 * d) + (d * d + d) + (d * h + h) + (h * d + d) + 4 * d
    return embed + config.num_layers * layer + 2 * d + d * OUTPUT_DIM + OUTPUT_DIM


def count_flops(config: ModelConfig, breakdown: bool = False):
    """Analytic forward FLOPs, counting 2 per multiply-add of every matmul.

    embed     = 2 * T * feature_dim * d          (T tokens, d token width)
    per layer = 2 * T * d * 3d + 2 * T * d * d   (QKV + output projection)
              + 2 * 2 * T^2 * d                  (QK^T and attention x V)
              + 2 * 2 * T * d * mlp_hidden       (MLP)
    head      = 2 * d * 148                      (last token only)

    With SlowFast fusion the two stream embeddings of width d/2 together cost
    the same as one width-d embedding over T = tau/2 tokens.
    """
    T, d, h, fd = config.num_tokens, config.d_model, config.mlp_hidden, config.feature_dim
    parts = {
        "embed": 2 * T * fd * d,
        "attention_linear": config.num_layers * (2 * T * d * 3 * d + 2 * T * d * d),
        "attention_scores": config.num_layers * (2 * 2 * T * T * d),
        "mlp": config.num_layers * (2 * 2 * T * d * h),
        "head": 2 * d * OUTPUT_DIM,
    }
    total = sum(parts.values())
    return (total, parts) if breakdown else total


# --- persistence -------------------------------------------------------------
# Layout: b"EPWT" | u32 format version | u32 feature layout version |
# u32 header length | JSON header | little-endian float32 tensor data.
# The header lists config, meta and tensors as {name, shape, offset} with
# offsets relative to the start of the tensor data.

def save_weights(ws: WeightSet, path: str | Path) -> None:
    entries, blobs, offset = [], [], 0
    for group, tensors in (("param", ws.params), ("extra", ws.extras)):
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            entries.append({"group": group, "name": name, "shape": list(arr.shape), "offset": offset})
            blobs.append(arr.tobytes())
            offset += arr.nbytes
    header = json.dumps({"config": ws.config.to_dict(), "meta": ws.meta, "tensors": entries}).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<III", WEIGHT_FORMAT_VERSION, ws.layout_version, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def load_weights(path: str | Path, expected_layout: int = LAYOUT_VERSION) -> WeightSet:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != WEIGHT_MAGIC:
        raise FormatError(f"{path}: not an EPWT weight file")
    version, layout, hlen = struct.unpack_from("<III", data, 4)
    if version != WEIGHT_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported weight format version {version}")
    if layout != expected_layout:
        raise ConfigMismatch(f"{path}: feature layout {layout}, expected {expected_layout}")
    try:
        header = json.loads(data[16:16 + hlen])
    except ValueError as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    base = 16 + hlen
    groups = {"param": {}, "extra": {}}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        start = base + e["offset"]
        if start + 4 * count > len(data):
            raise FormatError(f"{path}: truncated tensor {e['name']}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=start).reshape(e["shape"])
        groups[e["group"]][e["name"]] = arr.astype(np.float32)
    try:
        config = ModelConfig.from_dict(header["config"])
    except (TypeError, ValueError) as exc:
        raise ConfigMismatch(f"{path}: invalid config: {exc}") from exc
    return WeightSet(groups["param"], config, layout, header.get("meta", {}), groups["extra"])
