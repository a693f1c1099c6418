"""Synthetic labeled corpora: procedural faces, injected defects, windows.

Real samples are procedurally rendered face scenes translated along a smooth
subpixel camera path.  Fake samples carry exactly one defect with a pixel
ground-truth mask:

* ``blur``          - Gaussian blur of the mouth area (texture removal)
* ``recolor``       - one iris painted a contrasting color (mismatched eyes)
* ``warp``          - sinusoidal geometric distortion of the mouth
* ``checkerboard``  - additive period-2 grid pattern (upsampling artifact)
* ``jitter``        - per-frame random mouth displacement (temporal defect,
                      frames 1..n only, so single frames stay clean)

Every injector leaves pixels outside its mask bit-identical, and generation
is a pure function of the seed, so the clean counterpart of any sample can
be re-rendered exactly.  Sample generation is embarrassingly parallel across
seeds; manifest writing is serialized.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .imageio import load_image, quantize_unit, resize_image, save_image

DEFECTS = ("blur", "recolor", "warp", "checkerboard", "jitter")
SPATIAL_DEFECTS = ("blur", "recolor", "warp", "checkerboard")
MANIFEST_VERSION = 1


# ---------------------------------------------------------------------------
# regions

@dataclass
class Ellipse:
    """Axis-aligned ellipse region in pixel coordinates."""

    cy: float
    cx: float
    ry: float
    rx: float

    def shifted(self, dy: float, dx: float) -> "Ellipse":
        return Ellipse(self.cy + dy, self.cx + dx, self.ry, self.rx)

    def mask(self, h: int, w: int, margin: float = 0.0) -> np.ndarray:
        yy, xx = np.mgrid[0:h, 0:w]
        d = np.sqrt(
            ((yy - self.cy) / (self.ry + margin)) ** 2
            + ((xx - self.cx) / (self.rx + margin)) ** 2
        )
        return d <= 1.0

    def bbox(self) -> tuple[float, float, float, float]:
        return (
            self.cy - self.ry,
            self.cx - self.rx,
            self.cy + self.ry,
            self.cx + self.rx,
        )


@dataclass
class Box:
    """Axis-aligned box region (half-heights) in pixel coordinates."""

    cy: float
    cx: float
    hy: float
    hx: float

    def shifted(self, dy: float, dx: float) -> "Box":
        return Box(self.cy + dy, self.cx + dx, self.hy, self.hx)

    def mask(self, h: int, w: int, margin: float = 0.0) -> np.ndarray:
        yy, xx = np.mgrid[0:h, 0:w]
        return (np.abs(yy - self.cy) <= self.hy + margin) & (
            np.abs(xx - self.cx) <= self.hx + margin
        )

    def bbox(self) -> tuple[float, float, float, float]:
        return (
            self.cy - self.hy,
            self.cx - self.hx,
            self.cy + self.hy,
            self.cx + self.hx,
        )


@dataclass
class FaceGeometry:
    """Key regions of one rendered face, in pixel coordinates."""

    face: Ellipse
    left_eye: Ellipse   # iris of the viewer-left eye
    right_eye: Ellipse  # iris of the viewer-right eye
    mouth: Ellipse

    def shifted(self, dy: float, dx: float) -> "FaceGeometry":
        return FaceGeometry(
            self.face.shifted(dy, dx),
            self.left_eye.shifted(dy, dx),
            self.right_eye.shifted(dy, dx),
            self.mouth.shifted(dy, dx),
        )


# ---------------------------------------------------------------------------
# procedural face rendering

_IRIS_PALETTE = (
    (0.23, 0.42, 0.62),  # blue
    (0.27, 0.50, 0.33),  # green
    (0.38, 0.26, 0.16),  # brown
    (0.45, 0.50, 0.55),  # gray
)

_CANVAS_PAD = 20  # covers the largest camera offset plus bilinear support


@dataclass
class _FaceParams:
    size: int
    face: Ellipse
    skin: np.ndarray
    eye_y: float
    eye_dx: float
    sclera_ry: float
    sclera_rx: float
    iris_r: float
    iris_color: np.ndarray
    brow_dy: float
    mouth: Ellipse
    lip_color: np.ndarray
    bg0: np.ndarray
    bg1: np.ndarray
    bg_axis: float
    bg_noise: np.ndarray
    skin_noise: np.ndarray


def _unit_noise(rng: np.random.Generator, shape: tuple[int, int], sigma: float) -> np.ndarray:
    raw = gaussian_filter(rng.standard_normal(shape), sigma)
    return raw / max(raw.std(), 1e-8)


def _face_params(seed: int, size: int) -> _FaceParams:
    rng = np.random.default_rng([int(seed), 0])
    u = size / 64.0
    fy = size * rng.uniform(0.52, 0.56)
    fx = size * rng.uniform(0.48, 0.52)
    fry = size * rng.uniform(0.34, 0.40)
    frx = size * rng.uniform(0.27, 0.32)
    skin_r = rng.uniform(0.70, 0.85)
    skin = np.array(
        [skin_r, skin_r - rng.uniform(0.10, 0.18), skin_r - rng.uniform(0.20, 0.30)]
    )
    iris = np.array(_IRIS_PALETTE[rng.integers(len(_IRIS_PALETTE))])
    iris = np.clip(iris + rng.uniform(-0.04, 0.04, 3), 0.0, 1.0)
    mouth = Ellipse(
        cy=fy + fry * rng.uniform(0.42, 0.52),
        cx=fx + size * rng.uniform(-0.01, 0.01),
        ry=size * rng.uniform(0.035, 0.050),
        rx=size * rng.uniform(0.11, 0.15),
    )
    lip = np.array(
        [rng.uniform(0.52, 0.65), rng.uniform(0.18, 0.28), rng.uniform(0.20, 0.30)]
    )
    pad = int(round(_CANVAS_PAD * u)) + 2
    canvas = (size + 2 * pad, size + 2 * pad)
    return _FaceParams(
        size=size,
        face=Ellipse(fy, fx, fry, frx),
        skin=skin,
        eye_y=fy - fry * rng.uniform(0.30, 0.38),
        eye_dx=frx * rng.uniform(0.42, 0.50),
        sclera_ry=size * rng.uniform(0.030, 0.040),
        sclera_rx=size * rng.uniform(0.048, 0.060),
        iris_r=size * rng.uniform(0.023, 0.029),
        iris_color=iris,
        brow_dy=size * rng.uniform(0.050, 0.065),
        mouth=mouth,
        lip_color=lip,
        bg0=rng.uniform(0.15, 0.65, 3),
        bg1=rng.uniform(0.15, 0.65, 3),
        bg_axis=rng.uniform(0.0, 2 * np.pi),
        bg_noise=_unit_noise(rng, canvas, 1.2 * u)
        + 0.8 * _unit_noise(rng, canvas, 3.0 * u),
        skin_noise=_unit_noise(rng, canvas, 0.8 * u),
    )


def _geometry(p: _FaceParams, offset: tuple[float, float] = (0.0, 0.0),
              mouth_extra: tuple[float, float] = (0.0, 0.0)) -> FaceGeometry:
    dy, dx = offset
    iris = p.iris_r
    geom = FaceGeometry(
        face=p.face,
        left_eye=Ellipse(p.eye_y, p.face.cx - p.eye_dx, iris, iris),
        right_eye=Ellipse(p.eye_y, p.face.cx + p.eye_dx, iris, iris),
        mouth=p.mouth,
    ).shifted(dy, dx)
    geom.mouth = geom.mouth.shifted(*mouth_extra)
    return geom


def _coverage(yy, xx, e: Ellipse) -> np.ndarray:
    d = np.sqrt(((yy - e.cy) / e.ry) ** 2 + ((xx - e.cx) / e.rx) ** 2)
    return np.clip(0.5 - (d - 1.0) * min(e.ry, e.rx), 0.0, 1.0)


def _blend(img: np.ndarray, cov: np.ndarray, color: np.ndarray) -> None:
    img *= (1.0 - cov)[:, :, None]
    img += cov[:, :, None] * color[None, None, :]


def _sample_canvas(canvas: np.ndarray, size: int, dy: float, dx: float) -> np.ndarray:
    pad = (canvas.shape[0] - size) // 2
    y0, x0 = pad - dy, pad - dx
    iy, ix = int(np.floor(y0)), int(np.floor(x0))
    fy, fx = y0 - iy, x0 - ix
    a = canvas[iy : iy + size, ix : ix + size]
    b = canvas[iy : iy + size, ix + 1 : ix + 1 + size]
    c = canvas[iy + 1 : iy + 1 + size, ix : ix + size]
    d = canvas[iy + 1 : iy + 1 + size, ix + 1 : ix + 1 + size]
    return (
        a * (1 - fy) * (1 - fx)
        + b * (1 - fy) * fx
        + c * fy * (1 - fx)
        + d * fy * fx
    )


def _render(p: _FaceParams, offset: tuple[float, float] = (0.0, 0.0),
            mouth_extra: tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    size = p.size
    dy, dx = offset
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    geom = _geometry(p, offset, mouth_extra)
    u = size / 64.0

    # background: translated linear gradient plus textured noise
    axis = (yy - dy) * np.sin(p.bg_axis) + (xx - dx) * np.cos(p.bg_axis)
    t = (axis / size + 1.0) / 2.0
    img = p.bg0[None, None, :] * (1 - t)[:, :, None] + p.bg1[None, None, :] * t[:, :, None]
    img += 0.08 * _sample_canvas(p.bg_noise, size, dy, dx)[:, :, None]

    # head with edge shading and skin texture
    face_cov = _coverage(yy, xx, geom.face)
    df = np.sqrt(
        ((yy - geom.face.cy) / geom.face.ry) ** 2
        + ((xx - geom.face.cx) / geom.face.rx) ** 2
    )
    shade = 1.0 - 0.28 * np.clip(df, 0.0, 1.0) ** 2
    skin = p.skin[None, None, :] * shade[:, :, None]
    skin = skin + 0.05 * _sample_canvas(p.skin_noise, size, dy, dx)[:, :, None]
    img = img * (1 - face_cov)[:, :, None] + skin * face_cov[:, :, None]

    # brows
    brow_color = p.skin * 0.35
    for side in (-1.0, 1.0):
        brow = Ellipse(
            p.eye_y - p.brow_dy + dy,
            p.face.cx + side * p.eye_dx + dx,
            1.3 * u,
            p.sclera_rx * 1.15,
        )
        _blend(img, _coverage(yy, xx, brow) * 0.9, brow_color)

    # eyes: sclera, iris (same color both sides), pupil
    sclera_color = np.array([0.93, 0.93, 0.90])
    pupil_color = np.array([0.06, 0.05, 0.05])
    for eye in (geom.left_eye, geom.right_eye):
        sclera = Ellipse(eye.cy, eye.cx, p.sclera_ry, p.sclera_rx)
        _blend(img, _coverage(yy, xx, sclera), sclera_color)
        _blend(img, _coverage(yy, xx, eye), p.iris_color)
        pupil = Ellipse(eye.cy, eye.cx, 0.45 * eye.ry, 0.45 * eye.rx)
        _blend(img, _coverage(yy, xx, pupil), pupil_color)

    # nose shading
    nose = Ellipse(
        (p.eye_y + p.mouth.cy) / 2 + dy, p.face.cx + dx, 4.5 * u, 1.6 * u
    )
    _blend(img, _coverage(yy, xx, nose) * 0.25, p.skin * 0.6)

    # mouth with a darker inner line
    _blend(img, _coverage(yy, xx, geom.mouth), p.lip_color)
    inner = Ellipse(geom.mouth.cy, geom.mouth.cx, 0.30 * geom.mouth.ry, 0.9 * geom.mouth.rx)
    _blend(img, _coverage(yy, xx, inner) * 0.6, p.lip_color * 0.55)

    return np.clip(img, 0.0, 1.0).astype(np.float32)


def gen_base_face(seed: int, size: int = 64) -> tuple[np.ndarray, FaceGeometry]:
    """Render one procedural face; returns the image and its key regions."""
    p = _face_params(seed, size)
    return _render(p), _geometry(p)


# ---------------------------------------------------------------------------
# samples and defect injectors

@dataclass
class SyntheticSample:
    """Image or frame window with label, defect kind and tamper mask."""

    frames: np.ndarray  # (T, H, W, C); T == 1 for single-image samples
    label: str
    mask: np.ndarray  # (H, W) bool, all-zero for real samples
    defect: str
    seed: int = 0

    @property
    def image(self) -> np.ndarray:
        return self.frames[0]

    @property
    def n_following(self) -> int:
        return self.frames.shape[0] - 1

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim == 3:
            self.frames = self.frames[None]
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.label not in ("real", "fake"):
            raise ValueError(f"label must be real|fake, got '{self.label}'")
        if self.defect != "none" and self.defect not in DEFECTS:
            raise ValueError(f"unknown defect kind '{self.defect}'")
        fake = self.label == "fake"
        if fake != (self.defect != "none") or fake != bool(self.mask.any()):
            raise ValueError(
                f"label soundness violated: label={self.label} "
                f"defect={self.defect} mask_pixels={int(self.mask.sum())}"
            )
        if self.mask.shape != self.frames.shape[1:3]:
            raise ValueError(
                f"mask shape {self.mask.shape} does not match frames "
                f"{self.frames.shape[1:3]}"
            )


def _masked_replace(image: np.ndarray, modified: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = image.copy()
    out[mask] = modified[mask]
    return out


def blur_pixels(image: np.ndarray, mask: np.ndarray, sigma: float) -> np.ndarray:
    blurred = gaussian_filter(image, sigma=(sigma, sigma, 0), mode="nearest")
    return _masked_replace(image, blurred.astype(image.dtype), mask)


def inject_blur(
    image: np.ndarray, region: np.ndarray, sigma: float = 2.0, seed: int = 0
) -> SyntheticSample:
    """Gaussian-blur the region; pixels outside stay bit-identical."""
    if sigma <= 0:
        raise ValueError(f"degenerate blur sigma={sigma}; must be > 0")
    region = np.asarray(region, dtype=bool)
    out = blur_pixels(np.asarray(image, dtype=np.float32), region, sigma)
    if np.array_equal(out, image):
        raise ValueError(
            "blur left the region unchanged (constant region?); "
            "refusing to emit a fake-labeled clean image"
        )
    return SyntheticSample(out, "fake", region, "blur", seed)


def recolor_pixels(
    image: np.ndarray, mask: np.ndarray, color: tuple[float, float, float],
    strength: float,
) -> np.ndarray:
    target = np.asarray(color, dtype=image.dtype)
    modified = (1.0 - strength) * image + strength * target[None, None, :]
    return _masked_replace(image, modified.astype(image.dtype), mask)


def inject_recolor(
    image: np.ndarray,
    eye_region: np.ndarray,
    color: tuple[float, float, float] = (0.78, 0.10, 0.10),
    strength: float = 0.85,
    seed: int = 0,
) -> SyntheticSample:
    """Paint one iris a contrasting color, creating mismatched eyes."""
    if not 0 < strength <= 1:
        raise ValueError(f"recolor strength {strength} outside (0, 1]")
    eye_region = np.asarray(eye_region, dtype=bool)
    out = recolor_pixels(np.asarray(image, dtype=np.float32), eye_region, color, strength)
    return SyntheticSample(out, "fake", eye_region, "recolor", seed)


def warp_displacement(
    shape: tuple[int, int], amplitude: float, wavelength: float
) -> tuple[np.ndarray, np.ndarray]:
    """Sinusoidal displacement field (dy, dx) over the full image grid."""
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
    dy = amplitude * np.sin(2 * np.pi * xx / wavelength)
    dx = amplitude * np.cos(2 * np.pi * yy / wavelength)
    return dy, dx


def warp_pixels(
    image: np.ndarray, mask: np.ndarray, amplitude: float, wavelength: float
) -> np.ndarray:
    h, w, c = image.shape
    dy, dx = warp_displacement((h, w), amplitude, wavelength)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = [yy + dy, xx + dx]
    warped = np.stack(
        [
            map_coordinates(image[:, :, ch], coords, order=1, mode="reflect")
            for ch in range(c)
        ],
        axis=-1,
    ).astype(image.dtype)
    return _masked_replace(image, warped, mask)


def inject_warp(
    image: np.ndarray,
    mouth_region: np.ndarray,
    amplitude: float = 2.5,
    wavelength: float = 10.0,
    seed: int = 0,
) -> SyntheticSample:
    """Distort the mouth area with a sinusoidal displacement field."""
    if amplitude <= 0:
        raise ValueError(f"degenerate warp amplitude={amplitude}; must be > 0")
    mouth_region = np.asarray(mouth_region, dtype=bool)
    out = warp_pixels(
        np.asarray(image, dtype=np.float32), mouth_region, amplitude, wavelength
    )
    return SyntheticSample(out, "fake", mouth_region, "warp", seed)


def checker_pixels(image: np.ndarray, mask: np.ndarray, amplitude: float) -> np.ndarray:
    h, w, _ = image.shape
    yy, xx = np.mgrid[0:h, 0:w]
    sign = 1.0 - 2.0 * ((yy + xx) % 2)
    modified = np.clip(image + amplitude * sign[:, :, None], 0.0, 1.0)
    return _masked_replace(image, modified.astype(image.dtype), mask)


def inject_checkerboard(
    image: np.ndarray, region: np.ndarray, amplitude: float = 0.15, seed: int = 0
) -> SyntheticSample:
    """Add a period-2 alternating pattern, mimicking upsampling overlap."""
    if amplitude <= 0:
        raise ValueError(f"degenerate checker amplitude={amplitude}; must be > 0")
    region = np.asarray(region, dtype=bool)
    out = checker_pixels(np.asarray(image, dtype=np.float32), region, amplitude)
    return SyntheticSample(out, "fake", region, "checkerboard", seed)


# ---------------------------------------------------------------------------
# video windows

def _camera_path(rng: np.random.Generator, n: int) -> list[tuple[float, float]]:
    start = rng.uniform(-2.0, 2.0, 2)
    angle = rng.uniform(0.0, 2 * np.pi)
    speed = rng.uniform(0.2, 0.4)
    vel = np.array([np.sin(angle), np.cos(angle)]) * speed
    return [tuple(start + t * vel) for t in range(n + 1)]


def _render_real_window(
    seed: int, size: int, n: int
) -> tuple[np.ndarray, list[FaceGeometry], _FaceParams, list[tuple[float, float]]]:
    p = _face_params(seed, size)
    rng = np.random.default_rng([int(seed), 1])
    path = _camera_path(rng, n)
    frames = np.stack([_render(p, off) for off in path])
    geoms = [_geometry(p, off) for off in path]
    return frames, geoms, p, path


def render_clean_frame(seed: int, size: int = 64) -> np.ndarray:
    """First frame of the seed's clean window, on the 8-bit storage lattice.

    This is the untampered counterpart of every stored sample with the same
    seed: pixels outside a sample's mask coincide bit-exactly.
    """
    frames, _, _, _ = _render_real_window(seed, size, 0)
    return quantize_unit(frames[0])


def gen_video_window(
    seed: int,
    n: int = 3,
    fake: bool = False,
    size: int = 64,
    jitter_amplitude: float = 2.0,
) -> SyntheticSample:
    """Smooth-path frame window; fakes add per-frame mouth jitter.

    Jitter displaces the mouth of frames 1..n by an independent random
    offset with per-axis magnitude in [amplitude/2, amplitude].  Frame 0
    stays on the smooth path, so the temporal branch is the only place the
    defect is visible.
    """
    if n < 1:
        raise ValueError(f"window needs n >= 1 following frames, got n={n}")
    if fake and jitter_amplitude <= 0:
        raise ValueError(
            f"degenerate jitter amplitude={jitter_amplitude}; must be > 0"
        )
    frames, geoms, p, path = _render_real_window(seed, size, n)
    if not fake:
        return SyntheticSample(
            frames, "real", np.zeros((size, size), dtype=bool), "none", seed
        )

    rng = np.random.default_rng([int(seed), 2])
    mask = np.zeros((size, size), dtype=bool)
    out = [frames[0]]
    for t in range(1, n + 1):
        mag = rng.uniform(0.5 * jitter_amplitude, jitter_amplitude, 2)
        extra = tuple(mag * rng.choice([-1.0, 1.0], 2))
        out.append(_render(p, path[t], extra))
        jittered = geoms[t].mouth.shifted(*extra)
        mask |= jittered.mask(size, size, margin=jitter_amplitude)
        mask |= geoms[t].mouth.mask(size, size, margin=jitter_amplitude)
    return SyntheticSample(np.stack(out), "fake", mask, "jitter", seed)


# ---------------------------------------------------------------------------
# corpus building

@dataclass
class CorpusConfig:
    train_count: int = 512
    test_count: int = 128
    size: int = 64
    n_frames: int = 3
    seed: int = 0
    blur_sigma: float = 2.0
    recolor_strength: float = 0.85
    warp_amplitude: float = 2.5
    warp_wavelength: float = 10.0
    checker_amplitude: float = 0.15
    jitter_amplitude: float = 2.0
    defects: tuple[str, ...] = DEFECTS

    def __post_init__(self) -> None:
        if self.train_count % 2 or self.test_count % 2:
            raise ValueError(
                f"split sizes must be even for exact label balance, got "
                f"{self.train_count}/{self.test_count}"
            )
        if self.n_frames < 1:
            raise ValueError(f"n_frames must be >= 1, got {self.n_frames}")
        bad = [d for d in self.defects if d not in DEFECTS]
        if bad:
            raise ValueError(f"unknown defect kinds {bad}")


@dataclass
class SampleRecord:
    id: str
    split: str
    label: str
    defect: str
    seed: int
    files: dict[str, object]
    hashes: dict[str, str] = field(default_factory=dict)


@dataclass
class CorpusManifest:
    version: int
    config: dict
    samples: list[SampleRecord]
    digest: str
    root: Path

    def split_records(self, split: str) -> list[SampleRecord]:
        return [r for r in self.samples if r.split == split]


def sample_seed(master_seed: int, split: str, index: int) -> int:
    """Stable per-sample seed derived from (master seed, split, index)."""
    split_id = {"train": 1, "test": 2}[split]
    ss = np.random.SeedSequence([int(master_seed), split_id, int(index)])
    return int(ss.generate_state(1)[0])


def _spatial_defect_window(
    seed: int, kind: str, cfg: CorpusConfig
) -> SyntheticSample:
    """Apply one spatial defect consistently to every frame of the window."""
    frames, geoms, _, _ = _render_real_window(seed, cfg.size, cfg.n_frames)
    rng = np.random.default_rng([int(seed), 3])
    size = cfg.size

    if kind == "checkerboard":
        g0 = geoms[0]
        anchor_y = g0.face.cy + g0.face.ry * rng.uniform(-0.55, 0.35)
        anchor_x = g0.face.cx + g0.face.rx * rng.uniform(-0.45, 0.45)
        half = rng.uniform(6.0, 9.0) * size / 64.0
        base_region: Ellipse | Box = Box(anchor_y, anchor_x, half, half)
        offset0 = (g0.face.cy, g0.face.cx)
    elif kind == "recolor":
        side = "right_eye" if rng.uniform() < 0.5 else "left_eye"
        base_region = getattr(geoms[0], side)
        offset0 = (base_region.cy, base_region.cx)
    else:  # blur / warp act on the mouth area
        base_region = geoms[0].mouth
        offset0 = (base_region.cy, base_region.cx)

    margins = {"blur": 2.5, "warp": 2.0, "recolor": 1.0, "checkerboard": 0.0}
    out = []
    mask0 = None
    for t, frame in enumerate(frames):
        if kind == "recolor":
            anchor = getattr(geoms[t], side)
        elif kind == "checkerboard":
            drift = (geoms[t].face.cy - offset0[0], geoms[t].face.cx - offset0[1])
            anchor = base_region.shifted(*drift)
        else:
            anchor = geoms[t].mouth
        mask = anchor.mask(size, size, margin=margins[kind])
        if t == 0:
            mask0 = mask
        if kind == "blur":
            out.append(blur_pixels(frame, mask, cfg.blur_sigma))
        elif kind == "recolor":
            out.append(
                recolor_pixels(frame, mask, (0.78, 0.10, 0.10), cfg.recolor_strength)
            )
        elif kind == "warp":
            out.append(warp_pixels(frame, mask, cfg.warp_amplitude, cfg.warp_wavelength))
        else:
            out.append(checker_pixels(frame, mask, cfg.checker_amplitude))
    return SyntheticSample(np.stack(out), "fake", mask0, kind, seed)


def build_sample(cfg: CorpusConfig, split: str, index: int) -> SyntheticSample:
    """Deterministic sample for one corpus slot.

    Even indices are real; odd indices cycle through the configured defects.
    """
    seed = sample_seed(cfg.seed, split, index)
    if index % 2 == 0:
        return gen_video_window(seed, cfg.n_frames, fake=False, size=cfg.size)
    kind = cfg.defects[(index // 2) % len(cfg.defects)]
    if kind == "jitter":
        return gen_video_window(
            seed, cfg.n_frames, fake=True, size=cfg.size,
            jitter_amplitude=cfg.jitter_amplitude,
        )
    return _spatial_defect_window(seed, kind, cfg)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def build_corpus(cfg: CorpusConfig, out_dir: str | Path) -> CorpusManifest:
    """Generate and write the corpus; returns the manifest (also on disk)."""
    root = Path(out_dir)
    records: list[SampleRecord] = []
    for split, count in (("train", cfg.train_count), ("test", cfg.test_count)):
        split_dir = root / split
        split_dir.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            sample = build_sample(cfg, split, i)
            sid = f"{i:05d}"
            files: dict[str, object] = {
                "img": f"{split}/{sid}_img.png",
                "mask": f"{split}/{sid}_mask.png",
                "frames": [
                    f"{split}/{sid}_f{t}.png" for t in range(sample.frames.shape[0])
                ],
            }
            save_image(root / str(files["img"]), sample.image)
            save_image(
                root / str(files["mask"]),
                sample.mask.astype(np.float32)[:, :, None],
            )
            for t, frame in enumerate(sample.frames):
                save_image(root / files["frames"][t], frame)
            flat = [files["img"], files["mask"], *files["frames"]]
            hashes = {f: _sha256(root / f) for f in map(str, flat)}
            records.append(
                SampleRecord(
                    id=sid,
                    split=split,
                    label=sample.label,
                    defect=sample.defect,
                    seed=sample.seed,
                    files=files,
                    hashes=hashes,
                )
            )

    payload = {
        "version": MANIFEST_VERSION,
        "config": dataclasses.asdict(cfg),
        "samples": [dataclasses.asdict(r) for r in records],
    }
    digest = hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode("utf-8")
    ).hexdigest()
    payload["digest"] = digest
    (root / "manifest.json").write_text(json.dumps(payload, indent=1, sort_keys=True))
    return CorpusManifest(
        version=MANIFEST_VERSION,
        config=payload["config"],
        samples=records,
        digest=digest,
        root=root,
    )


def load_manifest(corpus_dir: str | Path) -> CorpusManifest:
    """Read and validate a corpus manifest; files must exist on disk."""
    root = Path(corpus_dir)
    path = root / "manifest.json"
    if not path.exists():
        raise ValueError(f"no manifest.json under {root}")
    payload = json.loads(path.read_text())
    if payload.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {payload.get('version')}")
    records = [SampleRecord(**r) for r in payload["samples"]]
    for rec in records:
        for f in (rec.files["img"], rec.files["mask"], *rec.files["frames"]):
            if not (root / str(f)).exists():
                raise ValueError(f"manifest names missing file {f}")
    return CorpusManifest(
        version=payload["version"],
        config=payload["config"],
        samples=records,
        digest=payload["digest"],
        root=root,
    )


@dataclass
class LoadedSample:
    id: str
    frames: np.ndarray  # (T, H, W, 3) float32
    label: int  # 0 real, 1 fake
    defect: str
    mask: np.ndarray
    seed: int


def load_sample(manifest: CorpusManifest, record: SampleRecord) -> LoadedSample:
    frames = np.stack(
        [load_image(manifest.root / str(f)) for f in record.files["frames"]]
    )
    mask = load_image(manifest.root / str(record.files["mask"]))[:, :, 0] > 0.5
    return LoadedSample(
        id=record.id,
        frames=frames,
        label=1 if record.label == "fake" else 0,
        defect=record.defect,
        mask=mask,
        seed=record.seed,
    )


# ---------------------------------------------------------------------------
# external frame ingestion

_IMG_SUFFIXES = {".png", ".pgm", ".ppm"}


def _numeric_key(path: Path) -> tuple[int, str]:
    digits = re.findall(r"\d+", path.stem)
    return (int(digits[-1]) if digits else -1, path.name)


def load_frame_folder(
    folder: str | Path, backbone_size: int, attention_size: int
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Decode a directory of numerically sorted frames at both resolutions."""
    folder = Path(folder)
    if not folder.is_dir():
        raise ValueError(f"frame folder not found: {folder}")
    paths = sorted(
        (p for p in folder.iterdir() if p.suffix.lower() in _IMG_SUFFIXES),
        key=_numeric_key,
    )
    if not paths:
        raise ValueError(f"frame folder {folder} holds no image files")
    backbone_frames, attention_frames = [], []
    channels = None
    for p in paths:
        img = load_image(p)
        if channels is None:
            channels = img.shape[2]
        elif img.shape[2] != channels:
            raise ValueError(
                f"inconsistent channel count in {p.name}: {img.shape[2]} "
                f"(expected {channels})"
            )
        if img.shape[2] == 1:
            img = np.repeat(img, 3, axis=2)
        backbone_frames.append(resize_image(img, (backbone_size, backbone_size)))
        attention_frames.append(resize_image(img, (attention_size, attention_size)))
    return backbone_frames, attention_frames
