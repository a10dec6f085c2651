"""Loss functions for the three training stages."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

from . import numerics as nx
from .patching import MaskPlan

log = logging.getLogger(__name__)

PAPER_EXACT = "paper"
STANDARD = "standard"


class LossError(ValueError):
    pass


@dataclass
class ClipConfig:
    tau: float = 0.1
    lam: float = 0.5
    mode: str = PAPER_EXACT  # "paper": denominator skips the positive; "standard": InfoNCE

    def validate(self) -> None:
        if not self.tau > 0:
            raise LossError(f"temperature must be positive, got {self.tau}")
        if not 0.0 <= self.lam <= 1.0:
            raise LossError(f"loss weight must lie in [0, 1], got {self.lam}")
        if self.mode not in (PAPER_EXACT, STANDARD):
            raise LossError(f"unknown contrastive mode {self.mode!r}")


# ---------------------------------------------------------------------------
# stage I

def masked_recon_loss(pred: torch.Tensor, target: torch.Tensor,
                      plans: MaskPlan | list[MaskPlan]) -> torch.Tensor:
    """Mean squared error over masked patches only.

    ``pred``/``target`` are [L, V] or [B, L, V]; one plan per batch row.
    """
    if pred.shape != target.shape:
        raise LossError(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    single = pred.ndim == 2
    plans = [plans] if isinstance(plans, MaskPlan) else list(plans)
    if single:
        pred, target = pred[None], target[None]
    if len(plans) != pred.shape[0]:
        raise LossError(f"{len(plans)} mask plans for a batch of {pred.shape[0]}")
    weight = torch.zeros(pred.shape[:2], dtype=pred.dtype)
    for b, p in enumerate(plans):
        if p.total != pred.shape[1]:
            raise LossError(f"mask plan covers {p.total} tokens, prediction has {pred.shape[1]}")
        if len(p.masked) == 0:
            raise LossError("nothing is masked; reconstruction loss is undefined")
        weight[b, torch.as_tensor(p.masked, dtype=torch.long)] = 1.0
    sq = ((pred - target) ** 2).mean(dim=-1)
    return (sq * weight).sum() / weight.sum()


# ---------------------------------------------------------------------------
# stage II

def cosine_matrix(a: torch.Tensor, b: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    # clamped, not additive: unit vectors keep a cosine of exactly 1
    an = a / torch.sqrt((a * a).sum(-1, keepdim=True)).clamp_min(eps)
    bn = b / torch.sqrt((b * b).sum(-1, keepdim=True)).clamp_min(eps)
    return nx.matmul(an, bn.transpose(0, 1))


def _directional(sim: torch.Tensor, mode: str) -> torch.Tensor:
    """-sum_j log(exp(s_jj) / sum_k exp(s_jk)) with k != j in paper mode."""
    B = sim.shape[0]
    pos = torch.diagonal(sim)
    if mode == PAPER_EXACT:
        eye = torch.eye(B, dtype=torch.bool)
        sim = sim.masked_fill(eye, float("-inf"))
    lse = torch.logsumexp(sim, dim=1)
    return -(pos - lse).sum()


def clip_loss(zi: torch.Tensor, zt: torch.Tensor, cfg: ClipConfig = ClipConfig()):
    """Bidirectional contrastive loss; returns ``(total, l_it, l_ti)``.

    Both directional terms are sums over the batch, as written in the
    original objective, not means.
    """
    cfg.validate()
    if zi.shape != zt.shape or zi.ndim != 2:
        raise LossError(f"embedding batches differ: {tuple(zi.shape)} vs {tuple(zt.shape)}")
    if zi.shape[0] < 2:
        raise LossError("contrastive loss needs a batch of at least 2")
    sim = cosine_matrix(zi, zt) / cfg.tau
    l_it = _directional(sim, cfg.mode)
    l_ti = _directional(sim.transpose(0, 1), cfg.mode)
    return cfg.lam * l_it + (1 - cfg.lam) * l_ti, l_it, l_ti


def retrieval_top1(zi: torch.Tensor, zt: torch.Tensor) -> float:
    """Fraction of rows whose most similar tabular embedding is their own."""
    with torch.no_grad():
        sim = cosine_matrix(zi, zt)
        return float((sim.argmax(dim=1) == torch.arange(sim.shape[0])).double().mean())


# ---------------------------------------------------------------------------
# stage III

def cross_entropy(logits: torch.Tensor, labels: torch.Tensor, axis: int = 1) -> torch.Tensor:
    """Mean softmax cross-entropy; class scores along ``axis``."""
    lp = nx.log_softmax(logits, axis=axis)
    return -torch.gather(lp, axis, labels.unsqueeze(axis)).mean()


def soft_dice(logits: torch.Tensor, labels: torch.Tensor, axis: int = 1,
              eps: float = 1e-6) -> torch.Tensor:
    """1 - mean over classes of the soft Dice between softmax and one-hot labels."""
    C = logits.shape[axis]
    prob = nx.softmax(logits, axis=axis)
    onehot = torch.nn.functional.one_hot(labels, C).movedim(-1, axis).to(prob.dtype)
    dims = [d for d in range(logits.ndim) if d != axis]
    inter = (prob * onehot).sum(dims)
    denom = prob.sum(dims) + onehot.sum(dims)
    return 1 - ((2 * inter + eps) / (denom + eps)).mean()


def seg_loss(logits: torch.Tensor, labels: torch.Tensor, dice_weight: float = 0.5) -> torch.Tensor:
    """logits [B, P, C, T, H, W] (or [N, C, ...]); labels the same without C."""
    if logits.ndim == labels.ndim + 1 and logits.ndim == 6:
        logits = logits.flatten(0, 1)
        labels = labels.flatten(0, 1)
    labels = labels.long()
    C = logits.shape[1]
    if labels.shape != logits.shape[:1] + logits.shape[2:]:
        raise LossError(f"labels {tuple(labels.shape)} do not match logits {tuple(logits.shape)}")
    if (labels < 0).any() or (labels >= C).any():
        raise LossError(f"label outside the class set [0, {C})")
    loss = cross_entropy(logits, labels)
    if dice_weight:
        loss = loss + dice_weight * soft_dice(logits, labels)
    return loss


def bce_with_logits(logit: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
    """Elementwise stable binary cross-entropy."""
    return torch.clamp(logit, min=0) - logit * label + torch.log1p(torch.exp(-logit.abs()))


def weighted_bce(logit: torch.Tensor, label: torch.Tensor, pos_weight: float = 1.0) -> torch.Tensor:
    label = label.to(logit.dtype)
    # log(1 + e^-x) for positives, log(1 + e^x) for negatives
    pos = bce_with_logits(logit, torch.ones_like(logit))
    neg = bce_with_logits(logit, torch.zeros_like(logit))
    return (pos_weight * label * pos + (1 - label) * neg).mean()


def positive_weight(labels) -> float:
    """N_neg / N_pos on the training labels (1 when a class is absent)."""
    labels = torch.as_tensor(labels)
    n_pos = int((labels > 0.5).sum())
    n_neg = int(labels.numel() - n_pos)
    return n_neg / n_pos if n_pos and n_neg else 1.0


def _masked_mean(x: torch.Tensor, observed: torch.Tensor, head: str) -> torch.Tensor:
    n = observed.sum()
    if n == 0:
        log.warning("head %r has no observed targets in this batch; contributing 0", head)
        return x.sum() * 0.0
    return (x * observed).sum() / n


@dataclass
class TabularTargetsBatch:
    phenotype: torch.Tensor        # [B, n_pheno] standardized
    physio: torch.Tensor           # [B, n_physio] standardized
    physio_observed: torch.Tensor  # bool
    binary: torch.Tensor           # [B, n_binary] in {0, 1}
    binary_observed: torch.Tensor
    categorical: torch.Tensor      # [B, n_cat] integer codes
    categorical_observed: torch.Tensor


HEADS = ("phenotype", "physio", "binary", "multiclass")


def tabular_multitask_loss(out: dict[str, torch.Tensor], tgt: TabularTargetsBatch,
                           cards: list[int], weights: dict[str, float] | None = None):
    """Weighted sum of the four head losses; returns ``(total, per_head)``."""
    w = {h: 1.0 for h in HEADS}
    w.update(weights or {})
    if out["multiclass"].shape[-1] != sum(cards):
        raise LossError(f"multi-class head width {out['multiclass'].shape[-1]} != {sum(cards)}")
    parts = {}
    parts["phenotype"] = ((out["phenotype"] - tgt.phenotype) ** 2).mean()
    sq = (out["physio"] - tgt.physio) ** 2
    parts["physio"] = _masked_mean(sq, tgt.physio_observed.to(sq.dtype), "physio")
    bce = bce_with_logits(out["binary"], tgt.binary.to(out["binary"].dtype))
    parts["binary"] = _masked_mean(bce, tgt.binary_observed.to(bce.dtype), "binary")
    ce_terms, obs_terms = [], []
    start = 0
    for j, c in enumerate(cards):
        lp = nx.log_softmax(out["multiclass"][:, start:start + c], axis=-1)
        start += c
        code = tgt.categorical[:, j].long()
        observed = tgt.categorical_observed[:, j] & (code < c)
        safe = torch.where(observed, code, torch.zeros_like(code))
        ce_terms.append(-lp.gather(1, safe[:, None])[:, 0])
        obs_terms.append(observed)
    if ce_terms:
        ce = torch.stack(ce_terms, 1)
        parts["multiclass"] = _masked_mean(ce, torch.stack(obs_terms, 1).to(ce.dtype), "multiclass")
    else:
        parts["multiclass"] = out["multiclass"].sum() * 0.0
    total = sum(w[h] * parts[h] for h in HEADS)
    return total, parts
