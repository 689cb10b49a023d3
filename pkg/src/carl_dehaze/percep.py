"""Frozen multi-layer feature extractor for the contrastive loss.

Two kinds: a pretrained VGG-19 (weights loaded from disk, taps at the
1st/3rd/5th/9th/13th conv layers post-activation) and a seeded fixed-random
strided-conv pyramid that needs no downloaded assets.  Extractor parameters
are never trained; gradients flow only to the input image.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch
import torch.nn.functional as F

log = logging.getLogger(__name__)

VGG_WEIGHTS_ENV = "CARL_VGG_WEIGHTS"

DEFAULT_TAPS = (1, 3, 5, 9, 13)
DEFAULT_LAYER_WEIGHTS = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

MIN_INPUT_SIZE = 32

_RANDOM_WIDTHS = (16, 32, 64, 64, 64)

# tapped fixed-random features are scaled up so typical inter-image L1
# distances sit in the same range as pretrained-backbone features
# (order 1, not 0.1); the temperature of the contrastive loss assumes that
_RANDOM_TAP_GAIN = 30.0


@dataclass(frozen=True)
class ExtractorConfig:
    kind: str = "fixed-random"  # or "pretrained-vgg19"
    tap_layers: Sequence[int] = DEFAULT_TAPS
    layer_weights: Sequence[float] = DEFAULT_LAYER_WEIGHTS
    normalize: tuple = ((0.5, 0.5, 0.5), (0.5, 0.5, 0.5))
    seed: int = 0  # fixed-random kind only

    def __post_init__(self):
        if self.kind not in ("fixed-random", "pretrained-vgg19"):
            raise ValueError(f"unknown extractor kind: {self.kind}")
        taps = tuple(int(t) for t in self.tap_layers)
        weights = tuple(float(w) for w in self.layer_weights)
        if len(taps) != len(weights):
            raise ValueError("tap_layers and layer_weights lengths differ")
        if any(w <= 0 for w in weights):
            raise ValueError("layer weights must be positive")
        object.__setattr__(self, "tap_layers", taps)
        object.__setattr__(self, "layer_weights", weights)
        object.__setattr__(
            self,
            "normalize",
            (tuple(self.normalize[0]), tuple(self.normalize[1])),
        )


def default_vgg_config() -> ExtractorConfig:
    return ExtractorConfig(
        kind="pretrained-vgg19",
        normalize=(IMAGENET_MEAN, IMAGENET_STD),
    )


@dataclass
class FeaturePyramid:
    """Per-layer feature maps (N, C_m, H_m, W_m), coarsening with depth."""

    maps: list

    def __len__(self):
        return len(self.maps)


class FeatureExtractor:
    """Frozen extractor; extract() is re-entrant and thread-safe."""

    def __init__(self, cfg: ExtractorConfig, require_pretrained: bool = False):
        self.cfg = cfg
        self._vgg_slices = None
        self._random_weights = None
        kind = cfg.kind
        if kind == "pretrained-vgg19":
            path = os.environ.get(VGG_WEIGHTS_ENV)
            if path and os.path.exists(path):
                self._vgg_slices = self._build_vgg(path, cfg.tap_layers)
            elif require_pretrained:
                raise FileNotFoundError(
                    f"pretrained weights not found; set {VGG_WEIGHTS_ENV}"
                )
            else:
                log.warning(
                    "pretrained weights unavailable (%s unset or missing); "
                    "falling back to fixed-random extractor",
                    VGG_WEIGHTS_ENV,
                )
                kind = "fixed-random"
        if kind == "fixed-random":
            self._random_weights = self._build_random(
                len(cfg.layer_weights), cfg.seed
            )
        self.kind = kind

    # -- construction -----------------------------------------------------

    @staticmethod
    def _build_vgg(weights_path: str, taps):
        import torchvision.models as tvm

        vgg = tvm.vgg19()
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        vgg.load_state_dict(state)
        features = vgg.features.eval()
        for p in features.parameters():
            p.requires_grad_(False)
        # slice the feature stack at the ReLU following each tapped conv
        slices = []
        conv_count = 0
        start = 0
        wanted = set(taps)
        for i, layer in enumerate(features):
            if isinstance(layer, torch.nn.Conv2d):
                conv_count += 1
                if conv_count in wanted:
                    # include the ReLU right after this conv
                    slices.append(features[start : i + 2])
                    start = i + 2
        if len(slices) != len(taps):
            raise ValueError(f"could not resolve taps {taps} in VGG-19")
        return slices

    @staticmethod
    def _build_random(levels: int, seed: int):
        g = torch.Generator().manual_seed(seed)
        weights = []
        cin = 3
        for m in range(levels):
            cout = _RANDOM_WIDTHS[m % len(_RANDOM_WIDTHS)]
            scale = math.sqrt(2.0 / (cin * 9))
            w = torch.randn(cout, cin, 3, 3, generator=g) * scale
            b = torch.zeros(cout)
            w.requires_grad_(False)
            weights.append((w, b))
            cin = cout
        return weights

    # -- inference --------------------------------------------------------

    def _normalize(self, batch):
        mean, std = self.cfg.normalize
        mean = torch.tensor(mean, dtype=batch.dtype).view(1, 3, 1, 1)
        std = torch.tensor(std, dtype=batch.dtype).view(1, 3, 1, 1)
        return (batch - mean) / std

    def extract(self, batch: torch.Tensor) -> FeaturePyramid:
        """Feature pyramid for an (N, 3, H, W) batch in [0, 1].

        Gradients flow to the batch, never to extractor parameters.
        """
        if batch.dim() != 4 or batch.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) batch, got {tuple(batch.shape)}")
        if batch.shape[-1] < MIN_INPUT_SIZE or batch.shape[-2] < MIN_INPUT_SIZE:
            raise ValueError(
                f"input smaller than receptive minimum {MIN_INPUT_SIZE}"
            )
        x = self._normalize(batch)
        maps = []
        if self.kind == "pretrained-vgg19":
            for sl in self._vgg_slices:
                x = sl(x)
                maps.append(x)
        else:
            for w, b in self._random_weights:
                x = F.conv2d(x, w.to(x.dtype), b.to(x.dtype), stride=2, padding=1)
                x = F.relu(x)
                maps.append(x * _RANDOM_TAP_GAIN)
        return FeaturePyramid(maps=maps)

    def parameter_checksum(self) -> str:
        """Digest of all frozen weights; must never change."""
        h = hashlib.sha256()
        if self.kind == "pretrained-vgg19":
            for sl in self._vgg_slices:
                for p in sl.parameters():
                    h.update(p.detach().numpy().tobytes())
        else:
            for w, b in self._random_weights:
                h.update(w.numpy().tobytes())
                h.update(b.numpy().tobytes())
        return h.hexdigest()


def layer_distance(a: FeaturePyramid, b: FeaturePyramid, m: int):
    """Mean absolute difference over all elements of layer m."""
    if m < 0 or m >= len(a.maps) or m >= len(b.maps):
        raise IndexError(f"layer index {m} out of range")
    if a.maps[m].shape != b.maps[m].shape:
        raise ValueError("feature shape mismatch")
    return (a.maps[m] - b.maps[m]).abs().mean()
