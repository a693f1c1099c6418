"""Command line entry point.

Subcommands: synth, train, eval, score, inspect, ablate, gradcheck.
Flags override config-file keys; the config file overrides built-in
defaults; the effective configuration is echoed next to every output.

Exit codes: 0 success, 1 usage error, 2 validation/config error,
3 numerical failure (divergence or a failed gradient check).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .attention import export_attention_maps, resize_map
from .config import (
    CONFIG_ENV_VAR,
    build_model_config,
    build_train_config,
    echo_config,
    load_run_config,
)
from .errors import ConfigError, NumericalError
from .experiments import ablation_run, localization_experiment, write_ablation_report
from .gradcheck import ATTENTION_PREFIXES, run_model_gradcheck
from .imageio import load_image, resize_image, save_image
from .model import PRESETS, build_model, load_checkpoint, save_checkpoint
from .synthcorpus import build_corpus, load_frame_folder, load_manifest
from .train import evaluate, load_split, train, write_history_csv


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse defaults to exit code 2
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="longattn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help=f"JSON config path (default ${CONFIG_ENV_VAR})")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--train-count", type=int)
    p.add_argument("--test-count", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--n-frames", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train a detector on a corpus")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--out")
    p.add_argument("--localization", action="store_true",
                   help="also run the attention-diff localization probe")

    p = sub.add_parser("score", help="score a folder of video frames")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frames", required=True)

    p = sub.add_parser("inspect", help="export attention maps for one input")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", help="single image file (spatial maps only)")
    src.add_argument("--frames", help="frame folder (spatial + temporal maps)")

    p = sub.add_parser("ablate", help="run an ablation sweep")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sweep", default="mode", choices=("mode", "m", "n"))
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("gradcheck", help="finite-difference gradient oracle")
    common(p)
    p.add_argument("--preset", default="micro", choices=sorted(PRESETS))
    p.add_argument("--mode", default="spatial-temporal")
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol-attention", type=float, default=1e-4)
    p.add_argument("--tol-backbone", type=float, default=1e-3)
    p.add_argument("--selftest-broken", action="store_true", help=argparse.SUPPRESS)
    return parser


def _load_config(args, overrides):
    return load_run_config(getattr(args, "config", None), overrides)


def cmd_synth(args) -> int:
    cfg = _load_config(
        args,
        {
            "data": {
                "train_count": args.train_count,
                "test_count": args.test_count,
                "size": args.size,
                "n_frames": args.n_frames,
                "seed": args.seed,
            }
        },
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = build_corpus(cfg.data, out)
    echo_config(cfg, out)
    print(f"corpus: {out}")
    print(f"samples: {len(manifest.samples)}")
    print(f"digest: {manifest.digest}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(
        args,
        {"train": {"mode": args.mode, "epochs": args.epochs, "seed": args.seed}},
    )
    mcfg = build_model_config(cfg)
    tcfg = build_train_config(cfg)
    manifest = load_manifest(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)

    start_epoch = 0
    momentum_state = None
    if args.resume:
        model, extra, momentum_state = load_checkpoint(args.resume)
        start_epoch = int(extra.get("epoch", 0))
        mcfg = model.cfg
    else:
        model = build_model(mcfg, seed=tcfg.seed)

    train_data = load_split(manifest, "train", mcfg, tcfg.n)
    test_data = load_split(manifest, "test", mcfg, tcfg.n)
    result = train(
        model,
        train_data,
        tcfg,
        eval_data=test_data,
        out_dir=out,
        start_epoch=start_epoch,
        momentum_state=momentum_state,
        log=lambda row: print(
            f"epoch {row['epoch']:3d}  loss {row['loss']:.4f}  "
            f"ACC {row.get('acc', float('nan')):.4f}  AUC {row.get('auc', float('nan')):.4f}"
        ),
    )
    write_history_csv(result.history, out / "history.csv")
    final = out / "model.ckpt"
    save_checkpoint(
        result.model,
        final,
        extra={
            "epoch": start_epoch + len(result.history),
            "train_config": dataclasses.asdict(tcfg),
        },
    )
    if result.diverged:
        print("training diverged; last finite checkpoint restored", file=sys.stderr)
        raise NumericalError("training diverged (non-finite loss)")
    print(f"checkpoint: {final}")
    return 0


def cmd_eval(args) -> int:
    model, extra, _ = load_checkpoint(args.checkpoint)
    mode = extra.get("train_config", {}).get("mode", "spatial-temporal")
    n = int(extra.get("train_config", {}).get("n", model.cfg.max_frames))
    manifest = load_manifest(args.corpus)
    data = load_split(manifest, args.split, model.cfg, n)
    metrics = evaluate(model, data, mode=mode)
    report = {
        "split": args.split,
        "mode": mode,
        "n_samples": metrics.n,
        "ACC": metrics.acc,
        "AUC": metrics.auc,
        "loss": metrics.loss,
        "roc": metrics.roc,
    }
    if args.localization:
        loc = localization_experiment(model, manifest, split=args.split)
        report["localization"] = {
            "median_ratio": loc.median_ratio,
            "frac_ratio_ge_2": loc.frac_at_least_2,
            "median_by_defect": loc.by_defect,
        }
    print(json.dumps(report, indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_score(args) -> int:
    model, extra, _ = load_checkpoint(args.checkpoint)
    mode = extra.get("train_config", {}).get("mode", "spatial-temporal")
    n = int(extra.get("train_config", {}).get("n", model.cfg.max_frames))
    needs_temporal = mode in ("temporal", "spatial-temporal")
    window = (1 + n) if needs_temporal else 1
    backbone_frames, attention_frames = load_frame_folder(
        args.frames, model.cfg.backbone.input_size, model.cfg.attention_size
    )
    if len(backbone_frames) < window:
        raise ValueError(
            f"folder {args.frames} holds {len(backbone_frames)} frames; "
            f"mode '{mode}' needs at least {window} (1+n)"
        )
    model.eval()
    probs = []
    with torch.no_grad():
        for start in range(0, len(backbone_frames) - window + 1):
            to_t = lambda a: torch.from_numpy(np.ascontiguousarray(a)).permute(2, 0, 1)[None]
            xb = to_t(backbone_frames[start])
            xa = to_t(attention_frames[start])
            nxt = None
            if needs_temporal:
                nxt = torch.stack(
                    [to_t(attention_frames[start + k])[0] for k in range(1, n + 1)]
                )[None]
            out = model(xb, xa, nxt, mode=mode)
            probs.append(float(torch.softmax(out.logits, dim=1)[0, 1]))
    verdict = float(np.mean(probs))
    print(
        json.dumps(
            {
                "frames": len(backbone_frames),
                "windows": len(probs),
                "per_window": probs,
                "verdict": verdict,
                "decision": "fake" if verdict > 0.5 else "real",
            },
            indent=2,
        )
    )
    return 0


def cmd_inspect(args) -> int:
    model, extra, _ = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    size = model.cfg.attention_size
    model.eval()

    if args.image:
        base = load_image(args.image)
        if base.shape[2] == 1:
            base = np.repeat(base, 3, axis=2)
        attn = resize_image(base, (size, size))
        to_t = lambda a: torch.from_numpy(np.ascontiguousarray(a)).permute(2, 0, 1)[None]
        with torch.no_grad():
            smaps = model.spatial_maps(to_t(attn))[0]
        tmaps = None
    else:
        n = int(extra.get("train_config", {}).get("n", model.cfg.max_frames))
        backbone_frames, attention_frames = load_frame_folder(
            args.frames, model.cfg.backbone.input_size, size
        )
        if len(attention_frames) < 1 + n:
            raise ValueError(
                f"folder {args.frames} holds {len(attention_frames)} frames; "
                f"need at least {1 + n}"
            )
        base = load_image(sorted(Path(args.frames).iterdir())[0])
        to_t = lambda a: torch.from_numpy(np.ascontiguousarray(a)).permute(2, 0, 1)[None]
        xa = to_t(attention_frames[0])
        nxt = torch.stack(
            [to_t(attention_frames[1 + k])[0] for k in range(n)]
        )[None]
        with torch.no_grad():
            smaps = model.spatial_maps(xa)[0]
            tmaps = model.temporal_maps(xa, nxt)[0]

    manifests = [str(export_attention_maps(smaps, out, stem="spatial"))]
    _write_overlays(base, smaps, out, "spatial")
    if tmaps is not None:
        manifests.append(str(export_attention_maps(tmaps, out, stem="temporal")))
        _write_overlays(base, tmaps, out, "temporal")
    print(json.dumps({"out": str(out), "manifests": manifests}, indent=2))
    return 0


def _write_overlays(image: np.ndarray, maps: torch.Tensor, out: Path, stem: str) -> None:
    h, w = image.shape[:2]
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    for j in range(maps.shape[0]):
        up = resize_map(maps[j][None], (h, w))[0].numpy()
        overlay = 0.55 * image + 0.45 * up[:, :, None]
        save_image(out / f"{stem}_overlay_{j}.png", np.clip(overlay, 0, 1))


def cmd_ablate(args) -> int:
    cfg = _load_config(args, {"train": {"epochs": args.epochs}})
    mcfg = build_model_config(cfg)
    tcfg = build_train_config(cfg)
    manifest = load_manifest(args.corpus)
    try:
        seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip())
    except ValueError as exc:
        raise UsageError(f"bad --seeds '{args.seeds}': {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    report = ablation_run(
        manifest,
        mcfg,
        tcfg,
        sweep=args.sweep,
        seeds=seeds,
        log=lambda row: print(
            f"{row.variant:<18} seed {row.seed}  ACC {row.acc:.4f}  AUC {row.auc:.4f}"
        ),
    )
    write_ablation_report(report, out)
    print(report.table())
    return 0


def cmd_gradcheck(args) -> int:
    tamper = None
    if args.selftest_broken:
        def tamper(name, grad):
            return grad + 1e-2

    cfg = PRESETS[args.preset]()
    report = run_model_gradcheck(
        cfg, mode=args.mode, seed=args.seed, eps=args.eps, grad_tamper=tamper
    )
    attn_err = report.max_rel_error_over(ATTENTION_PREFIXES)
    backbone_err = report.max_rel_error_over(("backbone.",))
    print(f"checked {len(report.params)} parameter tensors (eps={report.eps:g})")
    print(f"worst parameter: {report.worst_param} (rel err {report.max_rel_error:.3e})")
    print(f"attention max rel err: {attn_err:.3e} (tol {args.tol_attention:g})")
    print(f"backbone  max rel err: {backbone_err:.3e} (tol {args.tol_backbone:g})")
    if attn_err >= args.tol_attention or backbone_err >= args.tol_backbone:
        raise NumericalError(
            f"gradient check failed: attention {attn_err:.3e} "
            f"backbone {backbone_err:.3e}"
        )
    print("gradient check passed")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "score": cmd_score,
    "inspect": cmd_inspect,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
