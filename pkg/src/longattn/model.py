"""The full detector: patch front end, two attention banks, CNN backbone.

Forward pipeline (mode selects which recalibrations run):

    stem -> [spatial maps x shallow features] -> blocks 1..mid_hook
         -> [temporal maps x mid features]    -> blocks mid_hook+1..B
         -> global pool -> 2 logits

Checkpoints are a single binary blob of named arrays behind a JSON header
(config, shapes, format version); byte-identical for identical state.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn

from .attention import TemplateAttentionBank, recalibrate, resize_map
from .backbone import Backbone, BackboneConfig
from .patches import PatchFrontEnd

MODES = ("backbone-only", "spatial", "temporal", "spatial-temporal")

CHECKPOINT_MAGIC = b"LATTNCK1"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    backbone: BackboneConfig = dataclasses.field(default_factory=BackboneConfig)
    attention_size: int = 64
    patch_size: int = 8
    channels: int = 3
    embed_dim: int = 64
    latent_dim: int = 64
    heads: int = 12
    maps: int = 4
    max_frames: int = 3  # largest window length n the position table covers
    temporal_reduction: str = "mean"
    combine_bias_init: float = 2.0
    residual_gain: float = 4.0

    def __post_init__(self) -> None:
        if self.attention_size % self.patch_size != 0:
            raise ValueError(
                f"patch size s={self.patch_size} must divide attention size "
                f"{self.attention_size}"
            )
        if min(self.embed_dim, self.latent_dim, self.heads, self.maps) < 1:
            raise ValueError("embed_dim, latent_dim, heads and maps must be >= 1")
        if self.max_frames < 1:
            raise ValueError(f"max_frames must be >= 1, got {self.max_frames}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if self.maps != self.backbone.maps:
            raise ValueError(
                f"model m={self.maps} disagrees with backbone m={self.backbone.maps}"
            )
        if self.temporal_reduction not in ("mean", "max"):
            raise ValueError(
                f"unknown temporal reduction '{self.temporal_reduction}'"
            )
        if self.residual_gain <= 0:
            raise ValueError(
                f"residual gain must be > 0, got {self.residual_gain}"
            )

    @property
    def grid(self) -> tuple[int, int]:
        g = self.attention_size // self.patch_size
        return g, g


def desk_config(maps: int = 4, heads: int = 12, max_frames: int = 3) -> ModelConfig:
    """Small fast configuration used by the tests and default CLI runs."""
    return ModelConfig(
        backbone=BackboneConfig(maps=maps),
        maps=maps,
        heads=heads,
        max_frames=max_frames,
    )


def full_config(maps: int = 4, heads: int = 12, max_frames: int = 3) -> ModelConfig:
    """Full-size configuration: 398 backbone input, 224 attention input,
    16x16 patches, 12 main blocks."""
    return ModelConfig(
        backbone=BackboneConfig(
            input_size=398,
            stem_channels=(32, 64),
            stem_strides=(2, 1),
            block_channels=(128, 256, 728, 728, 728, 728, 728, 728, 728, 728, 728, 1024),
            block_strides=(2, 2, 2, 1, 1, 1, 1, 1, 1, 1, 1, 2),
            mid_hook=6,
            maps=maps,
        ),
        attention_size=224,
        patch_size=16,
        embed_dim=256,
        latent_dim=256,
        heads=heads,
        maps=maps,
        max_frames=max_frames,
    )


def micro_config() -> ModelConfig:
    """Tiny double-precision-friendly configuration for gradient checking.

    Kept deliberately small in unit count, not just parameter count: the
    fewer ReLU/pool sites a probe forward touches, the larger the typical
    distance to the nearest kink, which central differences need.
    """
    return ModelConfig(
        backbone=BackboneConfig(
            input_size=16,
            stem_channels=(4, 4),
            stem_strides=(2, 2),
            block_channels=(6,),
            block_strides=(2,),
            mid_hook=1,
            maps=1,
        ),
        attention_size=8,
        patch_size=4,
        embed_dim=4,
        latent_dim=4,
        heads=1,
        maps=1,
        max_frames=1,
    )


PRESETS = {"desk": desk_config, "full": full_config, "micro": micro_config}


@dataclass
class DetectorOutput:
    logits: torch.Tensor
    spatial_maps: torch.Tensor | None
    temporal_maps: torch.Tensor | None


class DetectorModel(nn.Module):
    """Spatial-temporal attention detector over a shared patch front end."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.front_end = PatchFrontEnd(
            image_size=cfg.attention_size,
            patch_size=cfg.patch_size,
            channels=cfg.channels,
            embed_dim=cfg.embed_dim,
            num_slices=1 + cfg.max_frames,
        )
        self.spatial_bank = TemplateAttentionBank(
            cfg.embed_dim, cfg.latent_dim, cfg.heads, cfg.maps, cfg.combine_bias_init
        )
        self.temporal_bank = TemplateAttentionBank(
            cfg.embed_dim, cfg.latent_dim, cfg.heads, cfg.maps, cfg.combine_bias_init
        )
        self.backbone = Backbone(cfg.backbone)

    def spatial_maps(self, attn_frame: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W) attention-resolution frame -> (B, m, g, g) maps."""
        features = self.front_end(attn_frame, slice_index=0)
        return self.spatial_bank(features, self.cfg.grid)

    def temporal_maps(
        self, attn_frame: torch.Tensor, following: torch.Tensor
    ) -> torch.Tensor:
        from .temporal import temporal_forward

        return temporal_forward(
            self.front_end,
            self.temporal_bank,
            attn_frame,
            following,
            self.cfg.grid,
            self.cfg.temporal_reduction,
            self.cfg.residual_gain,
        )

    def forward(
        self,
        backbone_frame: torch.Tensor,
        attn_frame: torch.Tensor,
        following: torch.Tensor | None = None,
        mode: str = "spatial-temporal",
        force_spatial_maps: torch.Tensor | None = None,
        force_temporal_maps: torch.Tensor | None = None,
    ) -> DetectorOutput:
        if mode not in MODES:
            raise ValueError(f"unknown mode '{mode}'; expected one of {MODES}")
        use_spatial = mode in ("spatial", "spatial-temporal")
        use_temporal = mode in ("temporal", "spatial-temporal")
        if use_temporal and (following is None or following.shape[1] < 1):
            raise ValueError(f"mode '{mode}' needs at least one following frame")

        feats = self.backbone.stem_forward(backbone_frame)
        smaps = tmaps = None
        if use_spatial:
            smaps = (
                self.spatial_maps(attn_frame)
                if force_spatial_maps is None
                else force_spatial_maps
            )
            feats = recalibrate(feats, resize_map(smaps, feats.shape[-2:]))
        feats = self.backbone.blocks_forward(feats, 1, self.cfg.backbone.mid_hook)
        if use_temporal:
            tmaps = (
                self.temporal_maps(attn_frame, following)
                if force_temporal_maps is None
                else force_temporal_maps
            )
            feats = recalibrate(feats, resize_map(tmaps, feats.shape[-2:]))
        feats = self.backbone.blocks_forward(
            feats, self.cfg.backbone.mid_hook + 1, self.backbone.num_blocks
        )
        return DetectorOutput(self.backbone.classify(feats), smaps, tmaps)


def build_model(cfg: ModelConfig, seed: int = 0) -> DetectorModel:
    """Construct a detector with a reproducible parameter initialization."""
    torch.manual_seed(seed)
    return DetectorModel(cfg)


def parameters_for_mode(
    model: DetectorModel, mode: str
) -> list[tuple[str, nn.Parameter]]:
    """Named parameters that participate in a mode (the optimizer set)."""
    if mode not in MODES:
        raise ValueError(f"unknown mode '{mode}'; expected one of {MODES}")
    use_spatial = mode in ("spatial", "spatial-temporal")
    use_temporal = mode in ("temporal", "spatial-temporal")
    selected = []
    for name, param in model.named_parameters():
        if name.startswith("backbone."):
            selected.append((name, param))
        elif name.startswith("front_end.") and (use_spatial or use_temporal):
            selected.append((name, param))
        elif name.startswith("spatial_bank.") and use_spatial:
            selected.append((name, param))
        elif name.startswith("temporal_bank.") and use_temporal:
            selected.append((name, param))
    return selected


def config_to_dict(cfg: ModelConfig) -> dict[str, Any]:
    d = dataclasses.asdict(cfg)
    return d


def config_from_dict(d: dict[str, Any]) -> ModelConfig:
    d = dict(d)
    bb = d.pop("backbone")
    bb = BackboneConfig(
        input_size=bb["input_size"],
        stem_channels=tuple(bb["stem_channels"]),
        stem_strides=tuple(bb["stem_strides"]),
        block_channels=tuple(bb["block_channels"]),
        block_strides=tuple(bb["block_strides"]),
        mid_hook=bb["mid_hook"],
        maps=bb["maps"],
    )
    return ModelConfig(backbone=bb, **d)


_DTYPES = {
    "float32": np.float32,
    "float64": np.float64,
    "int64": np.int64,
}


def save_checkpoint(
    model: DetectorModel, path: str | Path, extra: dict[str, Any] | None = None,
    optimizer_state: dict[str, torch.Tensor] | None = None,
) -> Path:
    """Serialize parameters + buffers (+ optimizer momentum) to one blob."""
    path = Path(path)
    arrays: list[tuple[str, np.ndarray]] = []
    for name, param in model.named_parameters():
        arrays.append((name, param.detach().cpu().numpy()))
    for name, buf in model.named_buffers():
        arrays.append(("buffer." + name, buf.detach().cpu().numpy()))
    for name, t in (optimizer_state or {}).items():
        arrays.append(("optim." + name, t.detach().cpu().numpy()))

    entries = []
    offset = 0
    for name, arr in arrays:
        if arr.dtype.name not in _DTYPES:
            raise ValueError(f"unsupported checkpoint dtype {arr.dtype} for {name}")
        nbytes = arr.nbytes
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": arr.dtype.name,
                "offset": offset,
            }
        )
        offset += nbytes
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": config_to_dict(model.cfg),
        "arrays": entries,
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr).tobytes())
    return path


def load_checkpoint(
    path: str | Path,
) -> tuple[DetectorModel, dict[str, Any], dict[str, torch.Tensor]]:
    """Rebuild a model from a checkpoint; returns (model, extra, optim state)."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a detector checkpoint")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint format {header.get('format_version')} unsupported"
        )
    payload = blob[12 + hlen :]
    model = DetectorModel(config_from_dict(header["config"]))
    tensors: dict[str, torch.Tensor] = {}
    for entry in header["arrays"]:
        dtype = _DTYPES[entry["dtype"]]
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        arr = np.frombuffer(
            payload, dtype=dtype, count=count, offset=start
        ).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.copy())

    state = {}
    optim_state: dict[str, torch.Tensor] = {}
    for name, tensor in tensors.items():
        if name.startswith("buffer."):
            state[name[len("buffer.") :]] = tensor
        elif name.startswith("optim."):
            optim_state[name[len("optim.") :]] = tensor
        else:
            state[name] = tensor
    model.load_state_dict(state)
    return model, header.get("extra", {}), optim_state
