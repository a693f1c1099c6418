"""Image tensors and file I/O.

An image tensor is a ``float32`` numpy array of shape (H, W, C) with values
in [0, 1] and C in {1, 3}.  Supported on-disk forms:

* lossless image files (PNG, PGM) decoded via Pillow,
* raw row-major float32 arrays with a JSON sidecar ``{"h":..,"w":..,"c":..}``
  stored next to the data file as ``<file>.json``.

All resizing in the package goes through :func:`resize_image` (bilinear,
no corner alignment) so that every pipeline stage sees identical pixels.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

RAW_SUFFIXES = {".raw", ".f32", ".bin"}


def validate_image(arr: np.ndarray) -> np.ndarray:
    """Check the image tensor contract and return the array as float32."""
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"image must be (H, W, C), got shape {arr.shape}")
    h, w, c = arr.shape
    if h < 1 or w < 1 or c not in (1, 3):
        raise ValueError(f"bad image dimensions H={h} W={w} C={c}; C must be 1 or 3")
    arr = arr.astype(np.float32, copy=False)
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(
            f"image values must lie in [0, 1], got range [{arr.min():.4g}, {arr.max():.4g}]"
        )
    return arr


def quantize_unit(arr: np.ndarray) -> np.ndarray:
    """Quantize a [0, 1] image to the 8-bit lattice used by PNG storage.

    Applying this to an in-memory image reproduces exactly the pixels that a
    save/load round trip through an 8-bit file would produce.
    """
    q = np.round(np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0) * 255.0)
    return (q.astype(np.uint8).astype(np.float32)) / np.float32(255.0)


def load_image(path: str | Path) -> np.ndarray:
    """Load PNG/PGM or raw-float image into a validated image tensor."""
    path = Path(path)
    if not path.exists():
        raise ValueError(f"image file not found: {path}")
    if path.suffix.lower() in RAW_SUFFIXES:
        return _load_raw(path)
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "I;16", "I"):
                arr = np.asarray(im.convert("L"), dtype=np.float32)[:, :, None] / 255.0
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except Exception as exc:  # Pillow raises several types for corrupt files
        raise ValueError(f"cannot decode image file {path}: {exc}") from exc
    return validate_image(arr)


def _load_raw(path: Path) -> np.ndarray:
    sidecar = path.with_name(path.name + ".json")
    if not sidecar.exists():
        raise ValueError(f"raw image {path} is missing its JSON sidecar {sidecar}")
    meta = json.loads(sidecar.read_text())
    for key in ("h", "w", "c"):
        if key not in meta:
            raise ValueError(f"sidecar {sidecar} misses required key '{key}'")
    h, w, c = int(meta["h"]), int(meta["w"]), int(meta["c"])
    data = np.fromfile(path, dtype=np.float32)
    if data.size != h * w * c:
        raise ValueError(
            f"raw image {path} holds {data.size} floats, expected h*w*c = {h * w * c}"
        )
    return validate_image(data.reshape(h, w, c))


def save_image(path: str | Path, arr: np.ndarray) -> Path:
    """Write an image tensor as an 8-bit PNG (or PGM for single channel)."""
    path = Path(path)
    arr = validate_image(arr)
    data = np.round(arr * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        im = Image.fromarray(data[:, :, 0], mode="L")
    else:
        im = Image.fromarray(data, mode="RGB")
    path.parent.mkdir(parents=True, exist_ok=True)
    im.save(path)
    return path


def save_raw(path: str | Path, arr: np.ndarray) -> Path:
    """Write an image tensor as raw float32 plus the JSON sidecar."""
    path = Path(path)
    arr = validate_image(arr)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr.astype(np.float32).tofile(path)
    h, w, c = arr.shape
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps({"h": h, "w": w, "c": c}))
    return path


def resize_image(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear-resize an image tensor to (height, width)."""
    arr = validate_image(arr)
    h, w = size
    if h < 1 or w < 1:
        raise ValueError(f"target size must be positive, got {size}")
    if arr.shape[:2] == (h, w):
        return arr
    t = torch.from_numpy(np.ascontiguousarray(arr)).permute(2, 0, 1)[None]
    out = F.interpolate(t, size=(h, w), mode="bilinear", align_corners=False)
    out_np = out[0].permute(1, 2, 0).numpy()
    return np.clip(out_np, 0.0, 1.0, out=out_np)
