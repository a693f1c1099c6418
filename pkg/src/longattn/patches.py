"""Patch front end: tiling, flattening, linear projection, position offsets.

An image is tiled into a row-major grid of non-overlapping s x s patches,
each patch is flattened in (row, column, channel) order and linearly
projected to an embedding, and a per-slot learned position vector is added.
Temporal inputs reuse the same projection with a distinct position slice per
temporal segment.

The numpy functions define the reference semantics; :class:`PatchFrontEnd`
is the trainable torch twin and is tested for exact agreement with them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


@dataclass
class PatchSequence:
    """Row-major sequence of non-overlapping patches tiling one image."""

    patches: np.ndarray  # (N, s, s, C)
    patch_size: int
    grid_rows: int
    grid_cols: int

    @property
    def n_patches(self) -> int:
        return self.grid_rows * self.grid_cols

    def __post_init__(self) -> None:
        p = np.asarray(self.patches)
        if p.ndim != 4:
            raise ValueError(f"patches must be (N, s, s, C), got shape {p.shape}")
        n, sh, sw, _ = p.shape
        if sh != self.patch_size or sw != self.patch_size:
            raise ValueError(
                f"patch blocks are {sh}x{sw} but patch_size={self.patch_size}"
            )
        if n != self.grid_rows * self.grid_cols:
            raise ValueError(
                f"{n} patches inconsistent with grid "
                f"{self.grid_rows}x{self.grid_cols}"
            )


def split_into_patches(image: np.ndarray, patch_size: int) -> PatchSequence:
    """Tile an (H, W, C) image into a row-major PatchSequence."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError(f"image must be (H, W, C), got shape {image.shape}")
    h, w, c = image.shape
    s = int(patch_size)
    if s < 1 or h % s != 0 or w % s != 0:
        raise ValueError(
            f"patch size s={s} must divide image dimensions H={h}, W={w}"
        )
    gr, gc = h // s, w // s
    blocks = image.reshape(gr, s, gc, s, c).transpose(0, 2, 1, 3, 4)
    return PatchSequence(
        patches=np.ascontiguousarray(blocks.reshape(gr * gc, s, s, c)),
        patch_size=s,
        grid_rows=gr,
        grid_cols=gc,
    )


def reassemble_patches(seq: PatchSequence) -> np.ndarray:
    """Invert :func:`split_into_patches` exactly."""
    s, gr, gc = seq.patch_size, seq.grid_rows, seq.grid_cols
    c = seq.patches.shape[3]
    blocks = seq.patches.reshape(gr, gc, s, s, c).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(blocks.reshape(gr * s, gc * s, c))


def flatten_patches(seq: PatchSequence) -> np.ndarray:
    """Flatten each patch in (row, column, channel) order -> (N, s*s*C)."""
    n = seq.patches.shape[0]
    return np.ascontiguousarray(seq.patches.reshape(n, -1))


def flatten_and_project(
    seq: PatchSequence, weight: np.ndarray, bias: np.ndarray
) -> np.ndarray:
    """Project flattened patches: z_i = flatten(p_i) @ weight + bias.

    ``weight`` is (s*s*C, D) and ``bias`` is (D,).
    """
    flat = flatten_patches(seq)
    weight = np.asarray(weight)
    bias = np.asarray(bias)
    if weight.ndim != 2 or weight.shape[0] != flat.shape[1]:
        raise ValueError(
            f"projection expects input dim {flat.shape[1]} (= s*s*C), "
            f"got weight shape {weight.shape}"
        )
    if bias.shape != (weight.shape[1],):
        raise ValueError(
            f"bias shape {bias.shape} does not match embed dim {weight.shape[1]}"
        )
    return flat @ weight + bias


def add_position(
    embeddings: np.ndarray, table: np.ndarray, slice_index: int = 0
) -> np.ndarray:
    """Add the position vectors of one temporal slice: f_i = z_i + table[k, i]."""
    embeddings = np.asarray(embeddings)
    table = np.asarray(table)
    if table.ndim == 2:
        table = table[None]
    n, d = embeddings.shape[-2], embeddings.shape[-1]
    if not 0 <= slice_index < table.shape[0]:
        raise ValueError(
            f"temporal slice {slice_index} out of range [0, {table.shape[0]})"
        )
    if n > table.shape[1] or d != table.shape[2]:
        raise ValueError(
            f"position table ({table.shape[1]} slots x dim {table.shape[2]}) "
            f"cannot cover a sequence of {n} vectors of dim {d}"
        )
    return embeddings + table[slice_index, :n]


class PatchFrontEnd(nn.Module):
    """Trainable projection + position table shared by both attention banks.

    Holds a (s*s*C, D) projection matrix with bias and a position table of
    shape (num_slices, N, D).  Slice 0 is the frame itself; slices 1..n are
    the motion residual segments of temporal windows.
    """

    def __init__(
        self,
        image_size: int,
        patch_size: int,
        channels: int = 3,
        embed_dim: int = 64,
        num_slices: int = 4,
    ) -> None:
        super().__init__()
        if image_size % patch_size != 0:
            raise ValueError(
                f"patch size s={patch_size} must divide attention input "
                f"size H=W={image_size}"
            )
        self.image_size = image_size
        self.patch_size = patch_size
        self.channels = channels
        self.embed_dim = embed_dim
        self.num_slices = num_slices
        self.grid = (image_size // patch_size, image_size // patch_size)
        self.n_patches = self.grid[0] * self.grid[1]
        in_dim = patch_size * patch_size * channels
        self.proj_weight = nn.Parameter(torch.empty(in_dim, embed_dim))
        self.proj_bias = nn.Parameter(torch.zeros(embed_dim))
        self.position = nn.Parameter(
            torch.empty(num_slices, self.n_patches, embed_dim)
        )
        self.reset_parameters()

    def reset_parameters(self) -> None:
        in_dim = self.proj_weight.shape[0]
        nn.init.normal_(self.proj_weight, std=1.0 / math.sqrt(in_dim))
        nn.init.zeros_(self.proj_bias)
        nn.init.normal_(self.position, std=0.02)

    def patch_vectors(self, images: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W) -> (B, N, s*s*C) flattened in (row, col, channel) order."""
        b, c, h, w = images.shape
        s = self.patch_size
        if c != self.channels or h != self.image_size or w != self.image_size:
            raise ValueError(
                f"attention input must be {self.channels}x{self.image_size}"
                f"x{self.image_size}, got {c}x{h}x{w}"
            )
        gr, gc = self.grid
        x = images.reshape(b, c, gr, s, gc, s)
        x = x.permute(0, 2, 4, 3, 5, 1)  # (B, gr, gc, s, s, C)
        return x.reshape(b, gr * gc, s * s * c)

    def embed(self, vectors: torch.Tensor) -> torch.Tensor:
        return vectors @ self.proj_weight + self.proj_bias

    def forward(self, images: torch.Tensor, slice_index: int = 0) -> torch.Tensor:
        """(B, C, H, W) -> (B, N, D) patch features with position added."""
        if not 0 <= slice_index < self.num_slices:
            raise ValueError(
                f"temporal slice {slice_index} out of range [0, {self.num_slices})"
            )
        z = self.embed(self.patch_vectors(images))
        return z + self.position[slice_index]
