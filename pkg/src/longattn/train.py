"""Training and evaluation harness.

SGD with momentum on cross-entropy over the 2 logits, deterministic given
the seed: model init, shuffling and batch order are all driven by seeded
generators, so identical configs produce bit-identical checkpoints.
Evaluation is batched and side-effect free and may fan out across samples.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .imageio import resize_image
from .metrics import Metrics, summarize
from .model import (
    MODES,
    DetectorModel,
    ModelConfig,
    build_model,
    parameters_for_mode,
    save_checkpoint,
)
from .synthcorpus import CorpusManifest, load_sample


@dataclass
class TrainConfig:
    lr: float = 0.0003
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    mode: str = "spatial-temporal"
    maps: int = 4
    heads: int = 12
    n: int = 3  # following frames per window

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode '{self.mode}'; expected one of {MODES}")
        if self.maps < 1 or self.heads < 1 or self.n < 1:
            raise ValueError("maps, heads and n must all be >= 1")


@dataclass
class SplitData:
    """One corpus split staged as ready-to-use tensors."""

    backbone: torch.Tensor   # (N, 3, Hb, Wb)
    attention: torch.Tensor  # (N, C, Ha, Wa)
    following: torch.Tensor  # (N, n, C, Ha, Wa)
    labels: torch.Tensor     # (N,) int64
    defects: list[str]
    ids: list[str]

    def __len__(self) -> int:
        return self.labels.shape[0]


def load_split(
    manifest: CorpusManifest, split: str, model_cfg: ModelConfig, n: int
) -> SplitData:
    """Stage a split at the model's two working resolutions."""
    records = manifest.split_records(split)
    if not records:
        raise ValueError(f"corpus at {manifest.root} has no '{split}' split")
    size_b = model_cfg.backbone.input_size
    size_a = model_cfg.attention_size
    backbone, attention, following, labels, defects, ids = [], [], [], [], [], []
    for rec in records:
        sample = load_sample(manifest, rec)
        if sample.frames.shape[0] < n + 1:
            raise ValueError(
                f"sample {rec.id} has {sample.frames.shape[0] - 1} following "
                f"frames, config wants n={n}"
            )
        frames = sample.frames[: n + 1]
        backbone.append(resize_image(frames[0], (size_b, size_b)))
        attn = [resize_image(f, (size_a, size_a)) for f in frames]
        attention.append(attn[0])
        following.append(np.stack(attn[1:]))
        labels.append(sample.label)
        defects.append(sample.defect)
        ids.append(sample.id)
    to_chw = lambda a: torch.from_numpy(np.ascontiguousarray(a)).permute(0, 3, 1, 2)
    return SplitData(
        backbone=to_chw(np.stack(backbone)),
        attention=to_chw(np.stack(attention)),
        following=torch.from_numpy(np.stack(following)).permute(0, 1, 4, 2, 3),
        labels=torch.tensor(labels, dtype=torch.int64),
        defects=defects,
        ids=ids,
    )


def _batch(data: SplitData, idx: torch.Tensor):
    return (
        data.backbone[idx],
        data.attention[idx],
        data.following[idx],
        data.labels[idx],
    )


def evaluate(
    model: DetectorModel,
    data: SplitData,
    mode: str = "spatial-temporal",
    batch_size: int = 32,
) -> Metrics:
    """ACC at the argmax-logit threshold, exact AUC and the ROC sweep."""
    was_training = model.training
    model.eval()
    scores, losses = [], []
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            idx = torch.arange(start, min(start + batch_size, len(data)))
            xb, xa, nxt, y = _batch(data, idx)
            out = model(xb, xa, nxt if mode in ("temporal", "spatial-temporal") else None, mode=mode)
            losses.append(float(F.cross_entropy(out.logits, y)) * len(idx))
            scores.append(torch.softmax(out.logits, dim=1)[:, 1].numpy())
    model.train(was_training)
    scores = np.concatenate(scores)
    return summarize(scores, data.labels.numpy(), loss=sum(losses) / len(data))


@dataclass
class TrainResult:
    model: DetectorModel
    history: list[dict]
    diverged: bool = False
    checkpoints: list[Path] = field(default_factory=list)


def _momentum_state(optimizer: torch.optim.SGD, named) -> dict[str, torch.Tensor]:
    state = {}
    for name, param in named:
        buf = optimizer.state.get(param, {}).get("momentum_buffer")
        if buf is not None:
            state[name] = buf
    return state


def train(
    model: DetectorModel,
    data: SplitData,
    cfg: TrainConfig,
    eval_data: SplitData | None = None,
    out_dir: str | Path | None = None,
    start_epoch: int = 0,
    momentum_state: dict[str, torch.Tensor] | None = None,
    log=None,
) -> TrainResult:
    """SGD-with-momentum training loop; checkpoints per epoch when out_dir set.

    A non-finite loss aborts the run and restores the last finite epoch's
    parameters (``diverged`` is set on the result).
    """
    named = parameters_for_mode(model, cfg.mode)
    optimizer = torch.optim.SGD(
        [p for _, p in named], lr=cfg.lr, momentum=cfg.momentum
    )
    if momentum_state:
        lookup = dict(named)
        for name, buf in momentum_state.items():
            if name in lookup:
                optimizer.state[lookup[name]] = {"momentum_buffer": buf.clone()}

    shuffler = torch.Generator().manual_seed(cfg.seed)
    snapshot = {k: v.clone() for k, v in model.state_dict().items()}
    history: list[dict] = []
    checkpoints: list[Path] = []
    out_dir = Path(out_dir) if out_dir is not None else None

    needs_temporal = cfg.mode in ("temporal", "spatial-temporal")
    model.train()
    for epoch in range(start_epoch + 1, start_epoch + cfg.epochs + 1):
        perm = torch.randperm(len(data), generator=shuffler)
        total, seen = 0.0, 0
        diverged = False
        for start in range(0, len(data), cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb, xa, nxt, y = _batch(data, idx)
            out = model(xb, xa, nxt if needs_temporal else None, mode=cfg.mode)
            loss = F.cross_entropy(out.logits, y)
            if not torch.isfinite(loss):
                diverged = True
                break
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(idx)
            seen += len(idx)
        if diverged:
            model.load_state_dict(snapshot)
            return TrainResult(model, history, diverged=True, checkpoints=checkpoints)

        row = {"epoch": epoch, "loss": total / max(seen, 1)}
        if eval_data is not None:
            m = evaluate(model, eval_data, mode=cfg.mode)
            row.update(acc=m.acc, auc=m.auc)
        history.append(row)
        if log is not None:
            log(row)
        snapshot = {k: v.clone() for k, v in model.state_dict().items()}
        if out_dir is not None:
            path = out_dir / f"epoch_{epoch:03d}.ckpt"
            save_checkpoint(
                model,
                path,
                extra={"epoch": epoch, "train_config": dataclasses.asdict(cfg)},
                optimizer_state=_momentum_state(optimizer, named),
            )
            checkpoints.append(path)
    return TrainResult(model, history, diverged=False, checkpoints=checkpoints)


def train_fresh(
    model_cfg: ModelConfig,
    data: SplitData,
    cfg: TrainConfig,
    eval_data: SplitData | None = None,
    out_dir: str | Path | None = None,
    log=None,
) -> TrainResult:
    """Build a seeded model and train it (the standard entry point)."""
    model = build_model(model_cfg, seed=cfg.seed)
    return train(model, data, cfg, eval_data=eval_data, out_dir=out_dir, log=log)


def write_history_csv(history: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "ACC", "AUC"])
        for row in history:
            writer.writerow(
                [
                    row["epoch"],
                    f"{row['loss']:.6f}",
                    "" if "acc" not in row else f"{row['acc']:.6f}",
                    "" if "auc" not in row else f"{row['auc']:.6f}",
                ]
            )
    return path
