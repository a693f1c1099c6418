"""Configurable Xception-style CNN with attention hook points.

The network is a miniature of Xception's entry flow: a two-conv stem, a
stack of depthwise-separable residual blocks, and a global-pool linear
classifier over 2 classes.  Spatial attention recalibrates the stem output
("shallow" hook); temporal attention recalibrates the output of the
``mid_hook``-th block.

Inference is reentrant over read-only parameters; training steps need
exclusive ownership of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn


@dataclass
class BackboneConfig:
    input_size: int = 128
    stem_channels: tuple[int, int] = (16, 24)
    stem_strides: tuple[int, int] = (2, 2)
    block_channels: tuple[int, ...] = (32, 48, 64, 96)
    block_strides: tuple[int, ...] = (2, 2, 2, 1)
    mid_hook: int = 2  # 1-based block index whose output takes temporal maps
    maps: int = 4

    @property
    def num_blocks(self) -> int:
        return len(self.block_channels)

    def __post_init__(self) -> None:
        if self.input_size < 1:
            raise ValueError(f"input size must be positive, got {self.input_size}")
        if len(self.block_channels) != len(self.block_strides):
            raise ValueError(
                f"{len(self.block_channels)} block widths vs "
                f"{len(self.block_strides)} strides"
            )
        if not 1 <= self.mid_hook <= self.num_blocks:
            raise ValueError(
                f"mid_hook={self.mid_hook} outside 1..{self.num_blocks}"
            )
        if self.maps < 1:
            raise ValueError(f"map count must be >= 1, got {self.maps}")
        shallow = self.stem_channels[1]
        mid = self.block_channels[self.mid_hook - 1]
        # each map must own at least one channel at both hook points; the
        # last channel group absorbs any remainder
        for name, width in (("shallow", shallow), ("mid-level", mid)):
            if width < self.maps:
                raise ValueError(
                    f"{name} width {width} cannot carry m={self.maps} maps"
                )
        for s in (*self.stem_strides, *self.block_strides):
            if s not in (1, 2):
                raise ValueError(f"strides must be 1 or 2, got {s}")


class SeparableConv2d(nn.Module):
    """Depthwise 3x3 followed by pointwise 1x1, both bias-free."""

    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__()
        self.depthwise = nn.Conv2d(
            in_channels, in_channels, 3, padding=1, groups=in_channels, bias=False
        )
        self.pointwise = nn.Conv2d(in_channels, out_channels, 1, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.pointwise(self.depthwise(x))


class XceptionBlock(nn.Module):
    """Pre-activation separable-conv residual block.

    Branch: ReLU, SepConv, BN, ReLU, SepConv, BN (+ stride-2 max pool);
    shortcut is identity, or a strided 1x1 conv + BN when shape changes.
    A zeroed branch with an identity shortcut passes the input through.
    """

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1) -> None:
        super().__init__()
        self.relu1 = nn.ReLU()
        self.conv1 = SeparableConv2d(in_channels, out_channels)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.relu2 = nn.ReLU()
        self.conv2 = SeparableConv2d(out_channels, out_channels)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.pool = nn.MaxPool2d(3, stride=2, padding=1) if stride == 2 else None
        if stride != 1 or in_channels != out_channels:
            self.shortcut: nn.Module | None = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )
        else:
            self.shortcut = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.bn1(self.conv1(self.relu1(x)))
        y = self.bn2(self.conv2(self.relu2(y)))
        if self.pool is not None:
            y = self.pool(y)
        return y + (x if self.shortcut is None else self.shortcut(x))


class Backbone(nn.Module):
    """Stem + separable residual blocks + 2-class global-pool classifier."""

    def __init__(self, cfg: BackboneConfig) -> None:
        super().__init__()
        self.cfg = cfg
        c1, c2 = cfg.stem_channels
        s1, s2 = cfg.stem_strides
        self.stem = nn.Sequential(
            nn.Conv2d(3, c1, 3, stride=s1, padding=1),
            nn.BatchNorm2d(c1),
            nn.ReLU(),
            nn.Conv2d(c1, c2, 3, stride=s2, padding=1),
            nn.BatchNorm2d(c2),
            nn.ReLU(),
        )
        blocks = []
        prev = c2
        for width, stride in zip(cfg.block_channels, cfg.block_strides):
            blocks.append(XceptionBlock(prev, width, stride))
            prev = width
        self.blocks = nn.ModuleList(blocks)
        self.classifier = nn.Linear(prev, 2)

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def stem_forward(self, image: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) -> shallow feature maps at the spatial-attention hook."""
        if image.ndim != 4:
            raise ValueError(f"expected (B, 3, H, W), got shape {tuple(image.shape)}")
        size = self.cfg.input_size
        if image.shape[-2:] != (size, size) or image.shape[1] != 3:
            raise ValueError(
                f"backbone expects 3x{size}x{size} input, got "
                f"{image.shape[1]}x{image.shape[-2]}x{image.shape[-1]}"
            )
        return self.stem(image)

    def blocks_forward(
        self, features: torch.Tensor, from_block: int, to_block: int
    ) -> torch.Tensor:
        """Apply blocks ``from_block``..``to_block`` (1-based, inclusive).

        An empty range (from_block > to_block) is the identity.
        """
        b = self.num_blocks
        if not (1 <= from_block <= b + 1) or to_block > b:
            raise ValueError(
                f"block range {from_block}..{to_block} outside 1..{b}"
            )
        for i in range(from_block - 1, to_block):
            features = self.blocks[i](features)
        return features

    def classify(self, features: torch.Tensor) -> torch.Tensor:
        """Global average pool then affine map to 2 logits."""
        pooled = features.mean(dim=(-2, -1))
        return self.classifier(pooled)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        f = self.stem_forward(image)
        f = self.blocks_forward(f, 1, self.num_blocks)
        return self.classify(f)


def feature_hw(cfg: BackboneConfig, upto_block: int) -> tuple[int, int]:
    """Spatial size of the feature maps after the stem and ``upto_block`` blocks."""
    size = cfg.input_size
    for s in cfg.stem_strides:
        size = (size + 1) // 2 if s == 2 else size
    for s in cfg.block_strides[:upto_block]:
        size = (size + 1) // 2 if s == 2 else size
    return size, size
