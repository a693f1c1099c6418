"""Template attention: per-patch forgery scores from a learned global template.

Each head owns a transform matrix mapping patch features into a latent
property space and a template vector that is scored against every patch
representation independently (no patch-to-patch mixing):

    score_i = sigmoid( (template . transform^T f_i) / sqrt(latent_dim) )

Scores reshape row-major onto the patch grid; a bank of K heads is linearly
combined (1x1, sigmoid) into m final maps which recalibrate backbone feature
maps by element-wise multiplication over contiguous channel groups.

All forward functions are pure given the parameters and may be evaluated
concurrently on read-only inputs; heads are order-independent.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import NumericalError
from .imageio import save_image


def latent_transform(features: torch.Tensor, transform: torch.Tensor) -> torch.Tensor:
    """Map patch features to latent representations: x_i = transform^T f_i.

    ``features`` is (..., N, D), ``transform`` is (D, D'); returns (..., N, D').
    """
    if transform.ndim != 2:
        raise ValueError(f"transform must be a matrix, got shape {tuple(transform.shape)}")
    if features.shape[-1] != transform.shape[0]:
        raise ValueError(
            f"feature dim {features.shape[-1]} does not match transform "
            f"input dim {transform.shape[0]}"
        )
    return features @ transform


def template_activation(reps: torch.Tensor, template: torch.Tensor) -> torch.Tensor:
    """Score each latent representation against the template, in (0, 1).

    ``reps`` is (..., N, D'), ``template`` is (D',); returns (..., N) with
    a_i = sigmoid((template . x_i) / sqrt(D')).
    """
    if template.ndim != 1 or reps.shape[-1] != template.shape[0]:
        raise ValueError(
            f"template of length {tuple(template.shape)} does not match "
            f"latent dim {reps.shape[-1]}"
        )
    logits = (reps @ template) / math.sqrt(template.shape[0])
    if not torch.isfinite(logits).all():
        bad = (~torch.isfinite(logits)).nonzero()[0].tolist()
        raise NumericalError(
            f"non-finite activation logit at index {bad}; "
            f"template norm {float(template.norm()):.4g}"
        )
    return torch.sigmoid(logits)


def head_forward(
    features: torch.Tensor,
    transform: torch.Tensor,
    template: torch.Tensor,
    grid: tuple[int, int],
) -> torch.Tensor:
    """One head end to end: transform, activate, reshape row-major to the grid."""
    gr, gc = grid
    n = features.shape[-2]
    if n != gr * gc:
        raise ValueError(f"{n} patches cannot fill a {gr}x{gc} grid")
    act = template_activation(latent_transform(features, transform), template)
    return act.reshape(*act.shape[:-1], gr, gc)


def combine_heads(
    grids: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor
) -> torch.Tensor:
    """Linearly combine K head grids into m maps, squashed back into (0, 1).

    ``grids`` is (..., K, g_r, g_c), ``weight`` is (K, m), ``bias`` is (m,);
    returns (..., m, g_r, g_c) with map_j = sigmoid(sum_k w[k,j] grid_k + b_j).
    """
    if weight.ndim != 2 or bias.shape != (weight.shape[1],):
        raise ValueError(
            f"combiner needs (K, m) weights and (m,) biases, got "
            f"{tuple(weight.shape)} and {tuple(bias.shape)}"
        )
    if grids.shape[-3] != weight.shape[0]:
        raise ValueError(
            f"{grids.shape[-3]} head grids do not match combiner K={weight.shape[0]}"
        )
    mixed = torch.einsum("...kij,km->...mij", grids, weight)
    return torch.sigmoid(mixed + bias[..., :, None, None])


def resize_map(grid: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Bilinear-resize attention maps (..., h0, w0) -> (..., h, w).

    Corner alignment is off; outputs stay within [min(grid), max(grid)].
    """
    h, w = size
    if h < 1 or w < 1:
        raise ValueError(f"target size must be positive, got {size}")
    if grid.shape[-2:] == (h, w):
        return grid
    lead = grid.shape[:-2]
    flat = grid.reshape(1, -1, *grid.shape[-2:]) if lead else grid[None, None]
    out = nn.functional.interpolate(
        flat, size=(h, w), mode="bilinear", align_corners=False
    )
    return out.reshape(*lead, h, w)


def map_channel_index(channels: int, maps: int) -> torch.Tensor:
    """Which of the m maps recalibrates each channel.

    Channels are partitioned into m contiguous groups of floor(C/m); the last
    group absorbs the remainder.
    """
    if maps < 1:
        raise ValueError(f"need at least one map, got m={maps}")
    if maps > channels:
        raise ValueError(f"m={maps} maps cannot gate only C={channels} channels")
    group = channels // maps
    idx = torch.div(torch.arange(channels), group, rounding_mode="floor")
    return idx.clamp(max=maps - 1)


def recalibrate(features: torch.Tensor, maps: torch.Tensor) -> torch.Tensor:
    """Multiply feature-map channel groups by their attention map.

    ``features`` is (..., C, h, w) and ``maps`` is (..., m, h, w), already
    resized to the feature resolution.
    """
    if features.shape[-2:] != maps.shape[-2:]:
        raise ValueError(
            f"maps {tuple(maps.shape[-2:])} not resized to feature grid "
            f"{tuple(features.shape[-2:])}"
        )
    idx = map_channel_index(features.shape[-3], maps.shape[-3]).to(features.device)
    return features * maps.index_select(-3, idx)


class TemplateAttentionBank(nn.Module):
    """K template-attention heads plus the linear combiner producing m maps."""

    def __init__(
        self,
        embed_dim: int,
        latent_dim: int,
        heads: int = 12,
        maps: int = 4,
        bias_init: float = 2.0,
    ) -> None:
        super().__init__()
        if min(embed_dim, latent_dim, heads, maps) < 1:
            raise ValueError(
                f"bank dims must be positive: D={embed_dim} D'={latent_dim} "
                f"K={heads} m={maps}"
            )
        self.embed_dim = embed_dim
        self.latent_dim = latent_dim
        self.heads = heads
        self.maps = maps
        self.bias_init = bias_init
        self.transforms = nn.Parameter(torch.empty(heads, embed_dim, latent_dim))
        self.templates = nn.Parameter(torch.empty(heads, latent_dim))
        self.combine_weight = nn.Parameter(torch.empty(heads, maps))
        self.combine_bias = nn.Parameter(torch.empty(maps))
        self.reset_parameters()

    def reset_parameters(self) -> None:
        nn.init.normal_(self.transforms, std=1.0 / math.sqrt(self.embed_dim))
        nn.init.normal_(self.templates, std=1.0)
        nn.init.normal_(self.combine_weight, std=1.0 / math.sqrt(self.heads))
        # positive bias keeps initial maps near pass-through (sigmoid(2)=0.88)
        # instead of starving the backbone of gradient signal
        nn.init.constant_(self.combine_bias, self.bias_init)

    def activations(self, features: torch.Tensor) -> torch.Tensor:
        """Per-head per-patch scores: (..., N, D) -> (..., K, N)."""
        if features.shape[-1] != self.embed_dim:
            raise ValueError(
                f"feature dim {features.shape[-1]} does not match bank "
                f"embed dim {self.embed_dim}"
            )
        reps = torch.einsum("...nd,kde->...kne", features, self.transforms)
        logits = torch.einsum("...kne,ke->...kn", reps, self.templates)
        logits = logits / math.sqrt(self.latent_dim)
        if not torch.isfinite(logits).all():
            raise NumericalError("non-finite head activation logits")
        return torch.sigmoid(logits)

    def combine(self, grids: torch.Tensor) -> torch.Tensor:
        return combine_heads(grids, self.combine_weight, self.combine_bias)

    def forward(self, features: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
        """(..., N, D) -> (..., m, g_r, g_c) combined attention maps."""
        gr, gc = grid
        act = self.activations(features)
        if act.shape[-1] != gr * gc:
            raise ValueError(
                f"{act.shape[-1]} patches cannot fill a {gr}x{gc} grid"
            )
        return self.combine(act.reshape(*act.shape[:-1], gr, gc))


def export_attention_maps(
    maps: np.ndarray | torch.Tensor, out_dir: str | Path, stem: str = "map"
) -> Path:
    """Write m maps as grayscale PNGs plus a JSON manifest; returns its path.

    Map values in (0, 1) are scaled to 8-bit gray (value * 255, rounded).
    """
    if isinstance(maps, torch.Tensor):
        maps = maps.detach().cpu().numpy()
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim != 3:
        raise ValueError(f"expected (m, g_r, g_c) maps, got shape {maps.shape}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for j in range(maps.shape[0]):
        name = f"{stem}_{j}.png"
        save_image(out_dir / name, maps[j][:, :, None].astype(np.float32))
        records.append(
            {
                "file": name,
                "min": float(maps[j].min()),
                "max": float(maps[j].max()),
            }
        )
    manifest = {
        "grid": [int(maps.shape[1]), int(maps.shape[2])],
        "m": int(maps.shape[0]),
        "scale": "value in (0,1) mapped to 8-bit gray",
        "maps": records,
    }
    manifest_path = out_dir / f"{stem}_manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path
