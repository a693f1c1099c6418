"""Temporal attention input: motion residuals over a short frame window.

A window is the frame under test plus its n following frames.  Signed
differences between adjacent frames (motion residuals) are patched with the
shared front end, each temporal segment gets its own position slice, and the
per-head activations of all segments are averaged back to one weight per
grid cell before head combination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .attention import TemplateAttentionBank
from .patches import PatchFrontEnd


@dataclass
class FrameWindow:
    """A frame plus its n following frames, all sharing (H, W, C)."""

    frame: np.ndarray
    following: np.ndarray  # (n, H, W, C)

    @property
    def n(self) -> int:
        return self.following.shape[0]

    def __post_init__(self) -> None:
        self.frame = np.asarray(self.frame)
        self.following = np.asarray(self.following)
        if self.following.ndim != 4 or self.following.shape[0] < 1:
            raise ValueError(
                f"following frames must be (n>=1, H, W, C), got shape "
                f"{self.following.shape}"
            )
        if self.following.shape[1:] != self.frame.shape:
            raise ValueError(
                f"window frames disagree in shape: frame {self.frame.shape} "
                f"vs following {self.following.shape[1:]}"
            )

    def frames(self) -> np.ndarray:
        """(1+n, H, W, C) stack starting at the frame under test."""
        return np.concatenate([self.frame[None], self.following], axis=0)


def motion_residual(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Signed per-pixel difference b - a between adjacent frames."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return b - a


def residual_window(frames: np.ndarray) -> np.ndarray:
    """Residuals R_k = F_k - F_{k-1} for a (1+n, H, W, C) frame stack."""
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[0] < 2:
        raise ValueError(
            f"need at least two frames stacked as (T, H, W, C), got {frames.shape}"
        )
    return frames[1:] - frames[:-1]


def temporal_sequence(
    front_end: PatchFrontEnd,
    frame: torch.Tensor,
    following: torch.Tensor,
    residual_gain: float = 4.0,
) -> torch.Tensor:
    """Build the (B, (1+n)*N, D) feature sequence of a batched frame window.

    Segment 0 holds the frame's patches; segment k holds the patches of the
    k-th motion residual.  All segments share the projection but use their
    own position slice.  Residuals keep their sign and direction but are
    scaled by ``residual_gain``: frame pixels live in [0, 1] while typical
    inter-frame differences are an order of magnitude smaller, and the
    shared projection would otherwise map residual segments to near-constant
    activations.
    """
    if following.ndim != 5 or following.shape[0] != frame.shape[0]:
        raise ValueError(
            f"following frames must be (B, n, C, H, W) matching the frame "
            f"batch, got {tuple(following.shape)}"
        )
    n = following.shape[1]
    if n + 1 > front_end.num_slices:
        raise ValueError(
            f"window with n={n} needs {n + 1} position slices, front end "
            f"has {front_end.num_slices}"
        )
    segments = [front_end(frame, slice_index=0)]
    prev = frame
    for k in range(n):
        residual = (following[:, k] - prev) * residual_gain
        segments.append(front_end.embed(front_end.patch_vectors(residual))
                        + front_end.position[k + 1])
        prev = following[:, k]
    return torch.cat(segments, dim=-2)


def aggregate_temporal_activations(
    activations: torch.Tensor, n_slices: int, reduction: str = "mean"
) -> torch.Tensor:
    """Pool activations over temporal segments: (..., S*N) -> (..., N).

    The default mean keeps gradients flowing to every segment; "max" is
    available for comparison.
    """
    total = activations.shape[-1]
    if n_slices < 1 or total % n_slices != 0:
        raise ValueError(
            f"activation length {total} not divisible into {n_slices} segments"
        )
    n = total // n_slices
    stacked = activations.reshape(*activations.shape[:-1], n_slices, n)
    if reduction == "mean":
        return stacked.mean(dim=-2)
    if reduction == "max":
        return stacked.max(dim=-2).values
    raise ValueError(f"unknown temporal reduction '{reduction}'")


def temporal_forward(
    front_end: PatchFrontEnd,
    bank: TemplateAttentionBank,
    frame: torch.Tensor,
    following: torch.Tensor,
    grid: tuple[int, int],
    reduction: str = "mean",
    residual_gain: float = 4.0,
) -> torch.Tensor:
    """Frame window -> (B, m, g_r, g_c) temporal attention maps."""
    seq = temporal_sequence(front_end, frame, following, residual_gain)
    act = bank.activations(seq)  # (B, K, (1+n)*N)
    act = aggregate_temporal_activations(act, following.shape[1] + 1, reduction)
    gr, gc = grid
    if act.shape[-1] != gr * gc:
        raise ValueError(f"{act.shape[-1]} patches cannot fill a {gr}x{gc} grid")
    return bank.combine(act.reshape(*act.shape[:-1], gr, gc))
