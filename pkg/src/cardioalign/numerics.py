"""Dense tensor ops, reverse-mode gradients and the optimizer/schedule pair.

Tensors are plain ``torch.Tensor`` objects; torch records the tape. The ops
below are written out from elementary tensor primitives (no ``nn.functional``
shortcuts for normalization, softmax, activation or attention) so that every
one of them can be checked against finite differences on its own.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import torch
import torch.nn.functional as F

Tensor = torch.Tensor


class NumericsError(RuntimeError):
    """Non-finite values or misuse of the gradient tape."""


class DimensionError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# precision / determinism

@contextlib.contextmanager
def float64_mode():
    """Run the enclosed block with float64 as the default dtype."""
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    try:
        yield
    finally:
        torch.set_default_dtype(prev)


def set_determinism(enabled: bool, seed: int | None = None) -> None:
    """Single-threaded, deterministic kernels when ``enabled``."""
    if enabled:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    else:
        torch.use_deterministic_algorithms(False)
    if seed is not None:
        torch.manual_seed(seed)


def check_finite(t: Tensor, where: str = "tensor") -> Tensor:
    if not torch.isfinite(t).all():
        raise NumericsError(f"non-finite values in {where}")
    return t


# ---------------------------------------------------------------------------
# ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {tuple(a.shape)} by {tuple(b.shape)}")
    return a @ b


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as [in, out]."""
    y = matmul(x, weight)
    return y if bias is None else y + bias


def conv3d(x: Tensor, kernel: Tensor, stride: Sequence[int], bias: Tensor | None = None,
           padding: Sequence[int] | int = 0) -> Tensor:
    """Unpadded 3D cross-correlation.

    ``x`` is C×D×H×W (or N×C×D×H×W), ``kernel`` F×C×d×h×w. When the stride
    equals the kernel extents (patchify mode) every spatial extent must divide
    evenly.
    """
    batched = x.ndim == 5
    if not batched and x.ndim != 4:
        raise DimensionError(f"conv3d expects C×D×H×W input, got {tuple(x.shape)}")
    if kernel.ndim != 5 or kernel.shape[1] != x.shape[-4]:
        raise DimensionError(
            f"conv3d kernel {tuple(kernel.shape)} does not match input channels {x.shape[-4]}")
    stride = tuple(int(s) for s in stride)
    ext = tuple(kernel.shape[2:])
    if stride == ext:
        for axis, n, s in zip("DHW", x.shape[-3:], stride):
            if n % s:
                raise ConfigurationError(f"conv3d patchify: extent {axis}={n} not divisible by {s}")
    out = F.conv3d(x if batched else x.unsqueeze(0), kernel, bias, stride=stride, padding=padding)
    return out if batched else out.squeeze(0)


def conv_transpose3d(x: Tensor, kernel: Tensor, stride: Sequence[int],
                     bias: Tensor | None = None) -> Tensor:
    """Transposed 3D convolution on N×C×D×H×W input; kernel C×F×d×h×w."""
    if x.ndim != 5 or kernel.ndim != 5 or kernel.shape[0] != x.shape[1]:
        raise DimensionError(
            f"conv_transpose3d: kernel {tuple(kernel.shape)} vs input {tuple(x.shape)}")
    return F.conv_transpose3d(x, kernel, bias, stride=tuple(int(s) for s in stride))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if gain.shape[-1] != x.shape[-1] or bias.shape[-1] != x.shape[-1]:
        raise DimensionError("layer_norm: gain/bias must match the last axis")
    mean = x.mean(dim=-1, keepdim=True)
    centered = x - mean
    var = (centered * centered).mean(dim=-1, keepdim=True)
    return centered / torch.sqrt(var + eps) * gain + bias


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - x.amax(dim=axis, keepdim=True).detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=axis, keepdim=True)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - x.amax(dim=axis, keepdim=True).detach()
    return shifted - torch.log(torch.exp(shifted).sum(dim=axis, keepdim=True))


def gelu(x: Tensor) -> Tensor:
    return 0.5 * x * (1.0 + torch.erf(x / math.sqrt(2.0)))


@dataclass
class AttentionWeights:
    """Projection matrices ([dim, dim], stored input-major) and biases."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Tensor | None = None
    bk: Tensor | None = None
    bv: Tensor | None = None
    bo: Tensor | None = None


def multi_head_attention(x: Tensor, weights: AttentionWeights, heads: int) -> Tensor:
    """Unmasked scaled dot-product self-attention over the second-to-last axis."""
    dim = x.shape[-1]
    if heads < 1 or dim % heads:
        raise ConfigurationError(f"attention: dim {dim} not divisible by {heads} heads")
    hd = dim // heads

    def split(t: Tensor) -> Tensor:
        return t.reshape(*t.shape[:-1], heads, hd).transpose(-2, -3)

    q = split(linear(x, weights.wq, weights.bq))
    k = split(linear(x, weights.wk, weights.bk))
    v = split(linear(x, weights.wv, weights.bv))
    scores = matmul(q, k.transpose(-1, -2)) / math.sqrt(hd)
    ctx = matmul(softmax(scores, axis=-1), v)
    ctx = ctx.transpose(-2, -3).reshape(*x.shape[:-1], dim)
    return linear(ctx, weights.wo, weights.bo)


# ---------------------------------------------------------------------------
# gradients

def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from a scalar ``loss``.

    A given loss may be differentiated once; a second call raises instead of
    silently accumulating into the leaves.
    """
    if loss.numel() != 1:
        raise NumericsError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    if getattr(loss, "_tape_consumed", False):
        raise NumericsError("backward called twice on the same loss; recompute the forward pass")
    if not loss.requires_grad:
        raise NumericsError("loss does not depend on any parameter")
    check_finite(loss.detach(), "loss")
    loss.backward()
    loss._tape_consumed = True


def finite_difference_grad(fn, x: Tensor, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of scalar ``fn`` at ``x`` (no tape)."""
    x = x.detach().clone()
    g = torch.zeros_like(x)
    flat, gflat = x.view(-1), g.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            fp = float(fn(x))
            flat[i] = orig - h
            fm = float(fn(x))
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# optimizer and schedule

@dataclass
class OptimState:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    exp_avg: dict[int, Tensor] = field(default_factory=dict)
    exp_avg_sq: dict[int, Tensor] = field(default_factory=dict)


def adamw_step(params: Sequence[Tensor], grads: Sequence[Tensor | None], state: OptimState,
               rate: float | None = None) -> None:
    """One decoupled-weight-decay Adam update, in place."""
    if len(params) != len(grads):
        raise DimensionError("adamw_step: params and grads differ in length")
    rate = state.lr if rate is None else rate
    b1, b2 = state.betas
    state.step += 1
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    with torch.no_grad():
        for i, (p, g) in enumerate(zip(params, grads)):
            if g is None:
                continue
            if g.shape != p.shape:
                raise DimensionError(f"adamw_step: grad {tuple(g.shape)} vs param {tuple(p.shape)}")
            m = state.exp_avg.setdefault(i, torch.zeros_like(p))
            v = state.exp_avg_sq.setdefault(i, torch.zeros_like(p))
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            if state.weight_decay:
                p.mul_(1 - rate * state.weight_decay)
            p.sub_(rate * (m / c1) / (torch.sqrt(v / c2) + state.eps))


class AdamW:
    """Thin stateful wrapper around :func:`adamw_step` for a parameter list."""

    def __init__(self, params: Iterable[Tensor], lr: float, weight_decay: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.state = OptimState(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, rate: float | None = None) -> None:
        adamw_step(self.params, [p.grad for p in self.params], self.state, rate)


@dataclass
class LrSchedule:
    base: float
    total_epochs: int
    warmup_epochs: float = 10
    floor: float = 0.0
    steps_per_epoch: int = 1


def lr_at(schedule: LrSchedule, epoch: int, step_in_epoch: int = 0) -> float:
    """Linear warmup from 0, then cosine decay to ``floor``."""
    s = schedule
    e = epoch + step_in_epoch / max(s.steps_per_epoch, 1)
    if s.warmup_epochs > 0 and e < s.warmup_epochs:
        return s.base * e / s.warmup_epochs
    span = s.total_epochs - s.warmup_epochs
    if span <= 0:
        return s.base
    progress = min(max((e - s.warmup_epochs) / span, 0.0), 1.0)
    return s.floor + (s.base - s.floor) * 0.5 * (1.0 + math.cos(math.pi * progress))
