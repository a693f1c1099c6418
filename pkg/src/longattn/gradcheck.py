"""Finite-difference gradient oracle.

Central differences per parameter element are compared against autograd
gradients of the same scalar loss, in double precision.  Relative error for
one element is |a - f| / max(|a| + |f|, 1e-6).

Non-differentiable kinks (ReLU at exactly 0, max-pool ties) are excluded by
input nudging: probe inputs are re-offset until every ReLU pre-activation
and every pooling top-2 gap clears a margin, so the loss is smooth in an
eps-neighborhood of the checked point.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import NumericalError
from .model import DetectorModel, ModelConfig, build_model, micro_config

ATTENTION_PREFIXES = ("front_end.", "spatial_bank.", "temporal_bank.")


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    max_abs_error: float
    grad_scale: float
    n_excluded: int = 0  # elements whose +-eps step flips a kink


@dataclass
class GradcheckReport:
    params: list[ParamCheck]
    eps: float

    @property
    def max_rel_error(self) -> float:
        return max(p.max_rel_error for p in self.params)

    @property
    def worst_param(self) -> str:
        return max(self.params, key=lambda p: p.max_rel_error).name

    @property
    def n_excluded(self) -> int:
        return sum(p.n_excluded for p in self.params)

    @property
    def n_elements(self) -> int:
        return sum(1 for _ in self.params)

    def max_rel_error_over(self, prefixes: tuple[str, ...]) -> float:
        vals = [p.max_rel_error for p in self.params if p.name.startswith(prefixes)]
        return max(vals) if vals else 0.0


class ActivationPatternRecorder:
    """Capture the ReLU sign pattern and pooling argmax pattern of a forward.

    A central difference is only a valid derivative estimate while the two
    perturbed evaluations stay on the same smooth piece of the loss; an
    element whose +-eps step flips any ReLU sign or pooling winner is
    excluded from the comparison (counted per parameter).
    """

    def __init__(self, model: nn.Module) -> None:
        self.model = model
        self._chunks: list[torch.Tensor] = []
        self._hooks = []

    def _relu_hook(self, _mod, inputs, _out):
        self._chunks.append((inputs[0] > 0).flatten())

    def _pool_hook(self, mod, inputs, _out):
        x = inputs[0].reshape(-1, 1, *inputs[0].shape[-2:])
        pad = mod.padding if isinstance(mod.padding, int) else mod.padding[0]
        x = F.pad(x, (pad,) * 4, value=float("-inf"))
        win = F.unfold(x, kernel_size=mod.kernel_size, stride=mod.stride)
        self._chunks.append(win.argmax(dim=1).flatten())

    def __enter__(self):
        for mod in self.model.modules():
            if isinstance(mod, nn.ReLU):
                self._hooks.append(mod.register_forward_hook(self._relu_hook))
            elif isinstance(mod, nn.MaxPool2d):
                self._hooks.append(mod.register_forward_hook(self._pool_hook))
        return self

    def __exit__(self, *exc):
        for h in self._hooks:
            h.remove()
        self._hooks.clear()

    def capture(self, loss_fn: Callable[[], torch.Tensor]) -> tuple[float, tuple]:
        self._chunks = []
        value = float(loss_fn())
        pattern = tuple(c.cpu() for c in self._chunks)
        self._chunks = []
        return value, pattern


def _same_pattern(a: tuple, b: tuple) -> bool:
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


def central_difference_grad(
    loss_fn: Callable[[], torch.Tensor],
    param: torch.Tensor,
    eps: float,
    recorder: ActivationPatternRecorder | None = None,
    base_pattern: tuple | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-element central differences of the loss w.r.t. one parameter.

    Returns (grad, excluded) where ``excluded`` flags elements whose
    perturbation crossed a kink (only when a recorder is supplied).
    """
    grad = np.zeros(param.numel(), dtype=np.float64)
    excluded = np.zeros(param.numel(), dtype=bool)
    flat = param.data.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            if recorder is None:
                up, up_pat = float(loss_fn()), None
            else:
                up, up_pat = recorder.capture(loss_fn)
            flat[i] = orig - eps
            if recorder is None:
                down, down_pat = float(loss_fn()), None
            else:
                down, down_pat = recorder.capture(loss_fn)
            flat[i] = orig
            grad[i] = (up - down) / (2.0 * eps)
            if recorder is not None and not (
                _same_pattern(up_pat, base_pattern)
                and _same_pattern(down_pat, base_pattern)
            ):
                excluded[i] = True
    return grad.reshape(tuple(param.shape)), excluded.reshape(tuple(param.shape))


def gradcheck_params(
    loss_fn: Callable[[], torch.Tensor],
    named_params: Iterable[tuple[str, torch.Tensor]],
    eps: float = 1e-4,
    grad_tamper: Callable[[str, np.ndarray], np.ndarray] | None = None,
    model: nn.Module | None = None,
) -> GradcheckReport:
    """Compare autograd gradients of ``loss_fn`` against central differences.

    ``grad_tamper`` is a test hook applied to the analytic gradients before
    comparison (used to prove the check can fail).  When ``model`` is given,
    kink-crossing elements are detected via its activation pattern and
    excluded from the comparison.
    """
    named_params = list(named_params)
    params = [p for _, p in named_params]
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise NumericalError(f"loss probe is non-finite: {float(loss)}")
    analytic = torch.autograd.grad(loss, params, allow_unused=True)

    recorder = None
    base_pattern = None
    if model is not None:
        recorder = ActivationPatternRecorder(model)
        recorder.__enter__()
        with torch.no_grad():
            _, base_pattern = recorder.capture(loss_fn)

    try:
        checks = []
        for (name, param), grad in zip(named_params, analytic):
            a = (
                np.zeros(tuple(param.shape))
                if grad is None
                else grad.detach().cpu().numpy().astype(np.float64)
            )
            if grad_tamper is not None:
                a = grad_tamper(name, a)
            f, excluded = central_difference_grad(
                loss_fn, param, eps, recorder, base_pattern
            )
            abs_err = np.where(excluded, 0.0, np.abs(a - f))
            denom = np.maximum(np.abs(a) + np.abs(f), 1e-6)
            rel = abs_err / denom
            checks.append(
                ParamCheck(
                    name=name,
                    max_rel_error=float(rel.max()),
                    max_abs_error=float(abs_err.max()),
                    grad_scale=float(np.abs(a).max()),
                    n_excluded=int(excluded.sum()),
                )
            )
    finally:
        if recorder is not None:
            recorder.__exit__()
    return GradcheckReport(params=checks, eps=eps)


def _kink_margin(model: nn.Module, forward: Callable[[], torch.Tensor]) -> float:
    """Smallest distance to a ReLU zero or a pooling top-2 tie in one forward.

    Exact-zero ReLU inputs are ignored: they are outputs of an upstream ReLU
    pinned at zero, which a small parameter perturbation cannot move as long
    as that upstream ReLU itself clears the margin.
    """
    margins: list[float] = []
    hooks = []

    def relu_hook(_mod, inputs, _out):
        x = inputs[0]
        nonzero = x[x != 0]
        if nonzero.numel():
            margins.append(float(nonzero.abs().min()))

    def pool_hook(mod, inputs, _out):
        # max pooling implicitly pads with -inf, so pad explicitly before
        # unfolding (F.unfold pads with zeros, which would fake ties)
        x = inputs[0].reshape(-1, 1, *inputs[0].shape[-2:])
        pad = mod.padding if isinstance(mod.padding, int) else mod.padding[0]
        x = F.pad(x, (pad,) * 4, value=float("-inf"))
        win = F.unfold(x, kernel_size=mod.kernel_size, stride=mod.stride)
        top2 = torch.topk(win, k=2, dim=1).values
        gaps = top2[:, 0] - top2[:, 1]
        gaps = gaps[torch.isfinite(gaps)]
        if gaps.numel():
            margins.append(float(gaps.min()))

    for mod in model.modules():
        if isinstance(mod, nn.ReLU):
            hooks.append(mod.register_forward_hook(relu_hook))
        elif isinstance(mod, nn.MaxPool2d):
            hooks.append(mod.register_forward_hook(pool_hook))
    try:
        with torch.no_grad():
            forward()
    finally:
        for h in hooks:
            h.remove()
    return min(margins) if margins else float("inf")


def model_loss_probe(
    model: DetectorModel,
    mode: str = "spatial-temporal",
    seed: int = 0,
    batch: int = 2,
    n_frames: int | None = None,
    kink_tol: float = 1e-3,
    max_attempts: int = 64,
) -> Callable[[], torch.Tensor]:
    """Build a smooth scalar loss over a random double-precision batch.

    Probe inputs are redrawn until no ReLU pre-activation and no pooling
    top-2 gap sits within ``kink_tol`` of a kink (the best draw wins if the
    margin is never reached).  The margin has to dominate eps times the
    largest preactivation sensitivity to a single parameter, which is why it
    sits an order of magnitude above the eps used for the differences.
    """
    cfg = model.cfg
    n = cfg.max_frames if n_frames is None else n_frames
    size_b, size_a = cfg.backbone.input_size, cfg.attention_size
    labels = torch.arange(batch) % 2

    def make_loss(attempt: int) -> Callable[[], torch.Tensor]:
        gen = torch.Generator().manual_seed(seed + 9973 * attempt)
        xb = torch.rand((batch, 3, size_b, size_b), generator=gen, dtype=torch.float64)
        xa = torch.rand(
            (batch, cfg.channels, size_a, size_a), generator=gen, dtype=torch.float64
        )
        nxt = torch.rand(
            (batch, n, cfg.channels, size_a, size_a), generator=gen, dtype=torch.float64
        )

        def loss_fn() -> torch.Tensor:
            out = model(
                xb, xa, nxt if mode in ("temporal", "spatial-temporal") else None,
                mode=mode,
            )
            return F.cross_entropy(out.logits, labels)

        return loss_fn

    best_fn, best_margin = None, -1.0
    for attempt in range(max_attempts):
        loss_fn = make_loss(attempt)
        margin = _kink_margin(model, loss_fn)
        if margin > best_margin:
            best_fn, best_margin = loss_fn, margin
        if margin > kink_tol:
            break
    return best_fn


def run_model_gradcheck(
    cfg: ModelConfig | None = None,
    mode: str = "spatial-temporal",
    seed: int = 0,
    eps: float = 1e-4,
    grad_tamper: Callable[[str, np.ndarray], np.ndarray] | None = None,
) -> GradcheckReport:
    """Gradcheck every learnable parameter of a (micro by default) model."""
    cfg = micro_config() if cfg is None else cfg
    model = build_model(cfg, seed=seed).double()
    model.train(False)
    loss_fn = model_loss_probe(model, mode=mode, seed=seed)
    return gradcheck_params(
        loss_fn, list(model.named_parameters()), eps, grad_tamper, model=model
    )
