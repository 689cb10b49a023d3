"""Feature-attention dehazing network, size-configurable.

The full-size preset uses 3 groups x 19 blocks x 64 channels; a toy preset
(1 group x 2 blocks x 16 channels) shares the same code path for desk-scale
runs.  The final reconstruction convolution is zero-initialized so an
untrained network is the identity map (global residual).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

CA_REDUCTION = 8


@dataclass(frozen=True)
class BackboneConfig:
    groups: int = 3
    blocks_per_group: int = 19
    channels: int = 64
    kernel: int = 3

    def __post_init__(self):
        if self.groups < 1 or self.blocks_per_group < 1:
            raise ValueError("groups and blocks_per_group must be >= 1")
        if self.channels < 4:
            raise ValueError("channels must be >= 4")
        if self.channels < CA_REDUCTION:
            raise ValueError(
                f"channels must be >= attention reduction {CA_REDUCTION}"
            )
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd")


FULL_PRESET = BackboneConfig(groups=3, blocks_per_group=19, channels=64)
TOY_PRESET = BackboneConfig(groups=1, blocks_per_group=2, channels=16)


def _conv(cin, cout, k):
    return nn.Conv2d(cin, cout, k, padding=k // 2, bias=True)


class ChannelAttention(nn.Module):
    """Global-average-pool -> two 1x1 convs -> sigmoid gate per channel."""

    def __init__(self, channels):
        super().__init__()
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Sequential(
            nn.Conv2d(channels, channels // CA_REDUCTION, 1, bias=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels // CA_REDUCTION, channels, 1, bias=True),
        )

    def gate(self, x):
        return torch.sigmoid(self.fc(self.pool(x)))

    def forward(self, x):
        return x * self.gate(x)


class PixelAttention(nn.Module):
    """Two 1x1 convs -> sigmoid gate per pixel."""

    def __init__(self, channels):
        super().__init__()
        self.fc = nn.Sequential(
            nn.Conv2d(channels, channels // CA_REDUCTION, 1, bias=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels // CA_REDUCTION, 1, 1, bias=True),
        )

    def gate(self, x):
        return torch.sigmoid(self.fc(x))

    def forward(self, x):
        return x * self.gate(x)


class BasicBlock(nn.Module):
    """conv -> ReLU -> conv -> channel attention -> pixel attention -> residual."""

    def __init__(self, channels, kernel):
        super().__init__()
        self.conv1 = _conv(channels, channels, kernel)
        self.act = nn.ReLU(inplace=True)
        self.conv2 = _conv(channels, channels, kernel)
        self.ca = ChannelAttention(channels)
        self.pa = PixelAttention(channels)

    def forward(self, x):
        res = self.act(self.conv1(x))
        res = self.conv2(res)
        res = self.ca(res)
        res = self.pa(res)
        return x + res


class Group(nn.Module):
    """A chain of basic blocks with a group-level skip connection."""

    def __init__(self, channels, kernel, blocks):
        super().__init__()
        self.blocks = nn.Sequential(
            *[BasicBlock(channels, kernel) for _ in range(blocks)]
        )

    def forward(self, x):
        return x + self.blocks(x)


class DehazeNet(nn.Module):
    """Shallow conv -> G groups -> channel-wise concat -> two convs -> global residual."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        c, k = config.channels, config.kernel
        self.head = _conv(3, c, k)
        self.groups = nn.ModuleList(
            [Group(c, k, config.blocks_per_group) for _ in range(config.groups)]
        )
        self.fuse = _conv(c * config.groups, c, k)
        self.tail = _conv(c, 3, k)

    def forward(self, x):
        if x.shape[-1] < self.config.kernel or x.shape[-2] < self.config.kernel:
            raise ValueError("spatial dims smaller than kernel")
        for name, p in self.named_parameters():
            if not torch.isfinite(p).all():
                raise FloatingPointError(f"non-finite values in parameter {name}")
        feat = self.head(x)
        outs = []
        for g in self.groups:
            feat = g(feat)
            outs.append(feat)
        fused = self.fuse(torch.cat(outs, dim=1))
        return x + self.tail(fused)

    def forward_clamped(self, x):
        """Inference path: output clamped to [0, 1]."""
        return self.forward(x).clamp(0.0, 1.0)


def init_network(config: BackboneConfig, seed: int) -> DehazeNet:
    """Deterministic init; tail conv zeroed so the fresh network is identity."""
    torch.manual_seed(seed)
    net = DehazeNet(config)
    with torch.no_grad():
        net.tail.weight.zero_()
        net.tail.bias.zero_()
    return net


def parameter_count(net: DehazeNet) -> int:
    return sum(p.numel() for p in net.parameters())


def _param_filename(name: str) -> str:
    return name.replace(".", "__") + ".bin"


def save_checkpoint(net: DehazeNet, ckpt_dir, step: int = 0, seed: int = 0,
                    extra: dict | None = None) -> None:
    """Write manifest.json plus one raw little-endian float32 file per parameter."""
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    params = dict(net.named_parameters())
    manifest = {
        "config": asdict(net.config),
        "dtype": "float32",
        "step": step,
        "seed": seed,
        "parameters": [
            {"name": n, "shape": list(p.shape), "file": _param_filename(n)}
            for n, p in params.items()
        ],
    }
    if extra:
        manifest.update(extra)
    for n, p in params.items():
        arr = p.detach().cpu().numpy().astype("<f4")
        (ckpt_dir / _param_filename(n)).write_bytes(arr.tobytes())
    (ckpt_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_checkpoint(ckpt_dir):
    """Rebuild the network from a checkpoint dir; validates every shape."""
    ckpt_dir = Path(ckpt_dir)
    manifest = json.loads((ckpt_dir / "manifest.json").read_text())
    config = BackboneConfig(**manifest["config"])
    net = DehazeNet(config)
    params = dict(net.named_parameters())
    recorded = {e["name"]: e for e in manifest["parameters"]}
    if set(recorded) != set(params):
        raise ValueError("parameter namespace mismatch between manifest and network")
    with torch.no_grad():
        for name, p in params.items():
            entry = recorded[name]
            if list(p.shape) != entry["shape"]:
                raise ValueError(
                    f"shape mismatch for {name}: manifest {entry['shape']}, "
                    f"network {list(p.shape)}"
                )
            raw = (ckpt_dir / entry["file"]).read_bytes()
            arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
            p.copy_(torch.from_numpy(arr.copy()))
    return net, manifest
