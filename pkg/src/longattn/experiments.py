"""Defect-localization probe and ablation sweeps.

The localization probe compares the spatial attention maps of a tampered
image against those of its untampered counterpart.  Because head scores
depend only on their own patch, the difference is exactly zero outside the
grid cells touched by the tamper, so the in-mask/out-of-mask ratio measures
how sharply the maps react to the defect.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .attention import resize_map
from .model import DetectorModel, ModelConfig
from .synthcorpus import (
    SPATIAL_DEFECTS,
    CorpusManifest,
    LoadedSample,
    load_sample,
    render_clean_frame,
)
from .train import SplitData, TrainConfig, evaluate, load_split, train_fresh


def spatial_attention_maps(model: DetectorModel, image: np.ndarray) -> np.ndarray:
    """(H, W, C) attention-resolution image -> (m, g, g) spatial maps."""
    t = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1)[None]
    with torch.no_grad():
        maps = model.spatial_maps(t.to(next(model.parameters()).dtype))
    return maps[0].numpy()


def localization_ratio(diff: np.ndarray, mask: np.ndarray) -> float | None:
    """mean(diff inside mask) / mean(diff outside); None when diff is all zero."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != diff.shape:
        raise ValueError(f"mask {mask.shape} does not match diff {diff.shape}")
    if not mask.any() or mask.all():
        raise ValueError("mask must cover some but not all pixels")
    if not diff.any():
        return None
    inside = float(diff[mask].mean())
    outside = float(diff[~mask].mean())
    if outside == 0.0:
        return float("inf")
    return inside / outside


def attention_diff(
    model: DetectorModel, original: np.ndarray, tampered_image: np.ndarray,
    mask: np.ndarray,
) -> tuple[np.ndarray, float | None]:
    """Mean absolute spatial-map difference, upsampled to image size.

    Returns the (H, W) diff map and the localization ratio (None when the
    maps do not react at all).
    """
    if original.shape != tampered_image.shape:
        raise ValueError(
            f"original {original.shape} vs tampered {tampered_image.shape}"
        )
    maps_o = spatial_attention_maps(model, original)
    maps_t = spatial_attention_maps(model, tampered_image)
    diff = np.abs(maps_t - maps_o).mean(axis=0)
    h, w = tampered_image.shape[:2]
    diff_img = resize_map(torch.from_numpy(diff), (h, w)).numpy()
    return diff_img, localization_ratio(diff_img, mask)


@dataclass
class LocalizationResult:
    ratios: dict[str, float | None]  # sample id -> ratio
    median_ratio: float
    frac_at_least_2: float
    by_defect: dict[str, float]


def localization_experiment(
    model: DetectorModel,
    manifest: CorpusManifest,
    split: str = "test",
    kinds: tuple[str, ...] = SPATIAL_DEFECTS,
    attention_size: int | None = None,
) -> LocalizationResult:
    """Run the attention-diff probe over every tampered image of a split.

    Untampered counterparts are re-rendered from the stored sample seeds and
    quantized to the same 8-bit lattice as the corpus files, so pixels
    outside the tamper mask coincide exactly.
    """
    size = attention_size or model.cfg.attention_size
    ratios: dict[str, float | None] = {}
    per_kind: dict[str, list[float]] = {k: [] for k in kinds}
    for rec in manifest.split_records(split):
        if rec.defect not in kinds:
            continue
        sample: LoadedSample = load_sample(manifest, rec)
        if sample.frames.shape[1] != size:
            raise ValueError(
                f"corpus frames are {sample.frames.shape[1]}px but the model "
                f"attends at {size}px; regenerate the corpus at the model size"
            )
        clean = render_clean_frame(rec.seed, size)
        _, ratio = attention_diff(model, clean, sample.frames[0], sample.mask)
        ratios[rec.id] = ratio
        if ratio is not None:
            per_kind[rec.defect].append(ratio)
    finite = [r for r in ratios.values() if r is not None]
    if not finite:
        raise ValueError(f"no tampered '{split}' samples with responsive maps")
    return LocalizationResult(
        ratios=ratios,
        median_ratio=float(np.median(finite)),
        frac_at_least_2=sum(r >= 2.0 for r in finite) / len(ratios),
        by_defect={k: float(np.median(v)) if v else float("nan") for k, v in per_kind.items()},
    )


# ---------------------------------------------------------------------------
# ablation sweeps

MODE_SWEEP = ("backbone-only", "spatial", "temporal", "spatial-temporal")
M_SWEEP = (1, 2, 3, 4, 5)
N_SWEEP = (2, 3, 4, 5)


@dataclass
class AblationRow:
    variant: str
    seed: int
    acc: float
    auc: float
    final_loss: float


@dataclass
class AblationReport:
    sweep: str
    rows: list[AblationRow]
    medians: dict[str, dict[str, float]]  # variant -> {"acc":…, "auc":…}

    def table(self) -> str:
        lines = [f"{'variant':<18} {'median ACC':>10} {'median AUC':>10}"]
        for variant, agg in self.medians.items():
            lines.append(
                f"{variant:<18} {agg['acc']:>10.4f} {agg['auc']:>10.4f}"
            )
        return "\n".join(lines)


def _variants(sweep: str, values) -> list[tuple[str, dict]]:
    if sweep == "mode":
        vals = tuple(values) if values else MODE_SWEEP
        return [(str(v), {"mode": str(v)}) for v in vals]
    if sweep == "m":
        vals = tuple(values) if values else M_SWEEP
        return [(f"m={v}", {"maps": int(v)}) for v in vals]
    if sweep == "n":
        vals = tuple(values) if values else N_SWEEP
        return [(f"n={v}", {"n": int(v)}) for v in vals]
    raise ValueError(f"unknown sweep '{sweep}'; expected mode, m or n")


def ablation_run(
    manifest: CorpusManifest,
    model_cfg: ModelConfig,
    base: TrainConfig,
    sweep: str,
    values=None,
    seeds: tuple[int, ...] = (0, 1, 2),
    log=None,
) -> AblationReport:
    """Train/evaluate every sweep variant with shared seeds and shared data."""
    variants = _variants(sweep, values)
    rows: list[AblationRow] = []
    cache: dict[tuple, tuple[SplitData, SplitData]] = {}
    for name, overrides in variants:
        cfg = dataclasses.replace(base, **overrides)
        mcfg = dataclasses.replace(
            model_cfg,
            maps=cfg.maps,
            heads=cfg.heads,
            max_frames=cfg.n,
            backbone=dataclasses.replace(model_cfg.backbone, maps=cfg.maps),
        )
        key = (mcfg.attention_size, cfg.n)
        if key not in cache:
            cache[key] = (
                load_split(manifest, "train", mcfg, cfg.n),
                load_split(manifest, "test", mcfg, cfg.n),
            )
        train_data, test_data = cache[key]
        for seed in seeds:
            run_cfg = dataclasses.replace(cfg, seed=seed)
            result = train_fresh(mcfg, train_data, run_cfg)
            m = evaluate(result.model, test_data, mode=run_cfg.mode)
            rows.append(
                AblationRow(
                    variant=name,
                    seed=seed,
                    acc=m.acc,
                    auc=m.auc,
                    final_loss=result.history[-1]["loss"],
                )
            )
            if log is not None:
                log(rows[-1])
    medians = {}
    for name, _ in variants:
        sub = [r for r in rows if r.variant == name]
        medians[name] = {
            "acc": float(np.median([r.acc for r in sub])),
            "auc": float(np.median([r.auc for r in sub])),
        }
    return AblationReport(sweep=sweep, rows=rows, medians=medians)


def write_ablation_report(report: AblationReport, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "sweep": report.sweep,
        "rows": [dataclasses.asdict(r) for r in report.rows],
        "medians": report.medians,
    }
    (out_dir / "ablation.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    (out_dir / "ablation.txt").write_text(report.table() + "\n")
    return out_dir / "ablation.json"
