"""The three training stages, evaluation and embedding export."""

from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .. import numerics as nx
from ..data import DISEASES, Dataset, select_frames
from ..data.augment import AugmentConfig, augment_subject
from ..data.phantom import APPENDIX_PHENOTYPES, CLASSES, Subject
from ..data.schema import TabularSchema
from ..data.tabular import TabularStats, apply_tabular_stats, fit_tabular_stats
from ..evaluation import metric_accuracy, metric_auc, metric_dice, metric_mae, regression_table
from ..model import STAGE_PARTS, TASK_PARTS, CardiacModel
from ..model.config import ImageModelConfig
from ..objectives import (ClipConfig, TabularTargetsBatch, clip_loss, masked_recon_loss,
                          positive_weight, retrieval_top1, seg_loss, tabular_multitask_loss,
                          weighted_bce)
from ..patching import patch_extract, sample_mask
from .checkpoint import Checkpoint, load_into, module_tensors
from .config import STAGE_SECTIONS, RunConfig, StageConfig, paper_deviations

log = logging.getLogger("cardioalign.pipeline")

PHENOTYPE_NAMES = tuple(APPENDIX_PHENOTYPES)


class PipelineError(RuntimeError):
    pass


@dataclass
class StageResult:
    checkpoint: Checkpoint
    history: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    deviations: dict = field(default_factory=dict)
    wall_time: float = 0.0


# ---------------------------------------------------------------------------
# tasks and splits

def parse_task(task: str) -> tuple[str, str | None]:
    """``seg`` | ``tabular`` | ``disease:<name>`` -> (kind, disease)."""
    if task in ("seg", "segmentation"):
        return "seg", None
    if task == "tabular":
        return "tabular", None
    if task.startswith("disease:"):
        name = task.split(":", 1)[1]
        if name not in DISEASES:
            raise PipelineError(f"unknown disease {name!r}; expected one of {', '.join(DISEASES)}")
        return "disease", name
    raise PipelineError(f"unknown task {task!r}; expected seg, tabular or disease:<name>")


def split_ids(ids: list[str], val_fraction: float, test_fraction: float,
              seed: int = 0) -> dict[str, list[str]]:
    """Deterministic disjoint train/val/test partition of subject ids."""
    ids = sorted(ids)
    order = np.random.default_rng(seed).permutation(len(ids))
    n_test = int(round(test_fraction * len(ids)))
    n_val = int(round(val_fraction * len(ids)))
    test = sorted(ids[i] for i in order[:n_test])
    val = sorted(ids[i] for i in order[n_test:n_test + n_val])
    train = sorted(ids[i] for i in order[n_test + n_val:])
    return {"train": train, "val": val, "test": test}


def subset(ds: Dataset, ids) -> Dataset:
    keep = set(ids)
    return Dataset(ds.schema, [s for s in ds.subjects if s.id in keep])


# ---------------------------------------------------------------------------
# tensors

def _center_crop(a: np.ndarray, size: int) -> np.ndarray:
    H, W = a.shape[-2:]
    if H < size or W < size:
        raise PipelineError(f"planes are {H}x{W}, model expects {size}x{size}")
    y0, x0 = (H - size) // 2, (W - size) // 2
    return a[..., y0:y0 + size, x0:x0 + size]


def subject_arrays(s: Subject, icfg: ImageModelConfig, offset: int = 0):
    """Model-sized (images, labels) for one subject: frames subsampled, planes cropped."""
    img = s.stack.images
    if img.shape[0] != icfg.planes:
        raise PipelineError(f"subject {s.id} has {img.shape[0]} planes, model expects {icfg.planes}")
    frames = select_frames(img.shape[1], icfg.frames, offset)
    images = _center_crop(img[:, frames], icfg.crop).astype(np.float32)
    labels = None if s.mask is None else _center_crop(s.mask.labels[:, frames], icfg.crop)
    return images, labels


def image_batch(subjects: list[Subject], icfg: ImageModelConfig, augment: AugmentConfig | None,
                rng: np.random.Generator | None, with_labels: bool = False, offset: int = 0):
    imgs, labs = [], []
    for s in subjects:
        x, y = subject_arrays(s, icfg, offset)
        if with_labels and y is None:
            raise PipelineError(f"subject {s.id} has no segmentation mask")
        if augment is not None:
            x, y = augment_subject(x, y if with_labels else None, augment, rng)
        imgs.append(x)
        labs.append(y)
    xb = torch.from_numpy(np.stack(imgs))
    yb = torch.from_numpy(np.stack(labs).astype(np.int64)) if with_labels else None
    return xb, yb


def tabular_batch(subjects: list[Subject], schema: TabularSchema, stats: TabularStats):
    recs = apply_tabular_stats([s.record for s in subjects], schema, stats)
    values = torch.as_tensor(np.stack([r.values for r in recs]), dtype=torch.float32)
    missing = torch.as_tensor(np.stack([r.missing for r in recs]))
    return values, missing


@dataclass
class PhenotypeStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, subjects: list[Subject]) -> "PhenotypeStats":
        v = np.stack([s.phenotypes.vector(PHENOTYPE_NAMES) for s in subjects])
        std = v.std(0)
        return cls(v.mean(0), np.where(std > 0, std, 1.0))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PhenotypeStats":
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]))


def tabular_targets(subjects: list[Subject], model: CardiacModel, stats: TabularStats,
                    pstats: PhenotypeStats) -> TabularTargetsBatch:
    values, missing = tabular_batch(subjects, model.schema, stats)
    t = model.targets
    ph = np.stack([s.phenotypes.vector(PHENOTYPE_NAMES) for s in subjects])
    ph = torch.as_tensor((ph - pstats.mean) / pstats.std, dtype=torch.float32)
    return TabularTargetsBatch(
        ph, values[:, t.physio], ~missing[:, t.physio], values[:, t.binary], ~missing[:, t.binary],
        values[:, t.categorical].long(), ~missing[:, t.categorical])


# ---------------------------------------------------------------------------
# shared training loop

def _batches(n: int, bs: int, rng: np.random.Generator, min_size: int = 1):
    order = rng.permutation(n)
    for i in range(0, n, bs):
        chunk = order[i:i + bs]
        if len(chunk) >= min_size:
            yield chunk


def _train(model: CardiacModel, stage: StageConfig, n: int, step_fn, tag: str,
           min_batch: int = 1) -> list[dict]:
    """Run ``stage.epochs`` epochs (or ``stage.max_steps`` steps) of AdamW.

    ``step_fn(indices, rng)`` returns ``(loss, extras)``; the loop owns the
    optimizer, schedule and logging.
    """
    rng = np.random.default_rng(stage.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = nx.AdamW(params, lr=stage.lr, weight_decay=stage.weight_decay)
    per_epoch = len(range(0, n, stage.batch_size))
    if min_batch > 1 and n % stage.batch_size and n % stage.batch_size < min_batch:
        per_epoch -= 1
    if per_epoch < 1:
        raise PipelineError(f"{n} subjects cannot fill a batch for stage {stage.stage}")
    total_epochs = stage.epochs
    if stage.max_steps:
        total_epochs = min(total_epochs, math.ceil(stage.max_steps / per_epoch))
    sched = nx.LrSchedule(stage.lr, total_epochs, stage.warmup_epochs, stage.min_lr, per_epoch)
    history, step = [], 0
    model.train()
    for epoch in range(total_epochs):
        for k, idx in enumerate(_batches(n, stage.batch_size, rng, min_batch)):
            if stage.max_steps and step >= stage.max_steps:
                return history
            rate = nx.lr_at(sched, epoch, k)
            opt.zero_grad()
            loss, extras = step_fn(idx, rng)
            nx.backward(loss)
            opt.step(rate)
            rec = {"epoch": epoch, "step": step, "loss": float(loss.detach()), "lr": rate, **extras}
            history.append(rec)
            if stage.log_every and step % stage.log_every == 0:
                log.info("%s epoch=%d step=%d loss=%.6f lr=%.3e", tag, epoch, step, rec["loss"],
                         rate)
            step += 1
    return history


def _fit_feature_scale(norm, features, n: int, batch: int = 16) -> None:
    """Fit a head's fixed standardization on pooled features of the training set."""
    with torch.no_grad():
        norm.fit(torch.cat([features(np.arange(lo, min(lo + batch, n)))
                            for lo in range(0, n, batch)]))


def _begin(run: RunConfig, name: str) -> StageConfig:
    stage = run.stages[name]
    stage.validate()
    if stage.stage != name:
        raise PipelineError(f"stage config tagged {stage.stage}, expected {name}")
    nx.set_determinism(stage.deterministic, stage.seed)
    for k, v in paper_deviations(stage).items():
        log.info("stage %s: %s=%s (paper value %s)", name, k, v["value"], v["paper"])
    return stage


def _augment_cfg(stage: StageConfig) -> AugmentConfig | None:
    if not stage.augment:
        return None
    c = stage.aug_contrast
    return AugmentConfig(stage.aug_rotation, stage.aug_flip, (1.0 - c, 1.0 + c))


def _require(ds: Dataset, what: str) -> None:
    if len(ds) == 0:
        raise PipelineError(f"{what} split is empty")


def _checkpoint(model: CardiacModel, stage: str, run: RunConfig, stats=None, **extra) -> Checkpoint:
    return Checkpoint(stage, run.to_dict(), list(model.parts), module_tensors(model),
                      model.schema.to_dict(), None if stats is None else stats.to_dict(), extra)


def _check_prior(prior: Checkpoint, allowed: tuple[str, ...], ds: Dataset) -> None:
    if prior.stage not in allowed:
        raise PipelineError(f"needs a stage {'/'.join(allowed)} checkpoint, got stage {prior.stage}")
    if prior.schema is not None and prior.schema_obj.fingerprint() != ds.schema.fingerprint():
        raise PipelineError("schema mismatch between checkpoint and dataset")


# ---------------------------------------------------------------------------
# stage I

def recon_probe(model: CardiacModel, subjects: list[Subject], ratio: float, seed: int = 0) -> float:
    """Masked-patch MSE on a fixed batch and fixed mask plans (no augmentation)."""
    icfg = model.cfg.image
    x, _ = image_batch(subjects, icfg, None, None)
    L = model.image_encoder.total_tokens
    plans = [sample_mask(L, ratio, seed + i) for i in range(len(subjects))]
    was = model.training
    model.eval()
    with torch.no_grad():
        pred = model.reconstruct(x, plans)
        target = patch_extract(x, icfg.patch).patches
        loss = float(masked_recon_loss(pred, target, plans))
    model.train(was)
    return loss


def run_stage1(run: RunConfig, train: Dataset, probe_size: int = 8) -> StageResult:
    t0 = time.perf_counter()
    stage = _begin(run, "I")
    _require(train, "training")
    model = CardiacModel(run.model, train.schema, STAGE_PARTS["I"])
    icfg = run.image
    aug = _augment_cfg(stage)
    subjects = train.subjects
    probe = subjects[:probe_size]
    L = model.image_encoder.total_tokens
    initial = recon_probe(model, probe, stage.mask_ratio)

    def step(idx, rng):
        x, _ = image_batch([subjects[i] for i in idx], icfg, aug, rng)
        plans = [sample_mask(L, stage.mask_ratio, rng) for _ in idx]
        pred = model.reconstruct(x, plans)
        target = patch_extract(x, icfg.patch).patches
        return masked_recon_loss(pred, target, plans), {}

    history = _train(model, stage, len(subjects), step, "stage=I")
    final = recon_probe(model, probe, stage.mask_ratio)
    ckpt = _checkpoint(model, "I", run)
    return StageResult(ckpt, history, {"probe_initial": initial, "probe_final": final},
                       paper_deviations(stage), time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# stage II

def clip_cfg(stage: StageConfig) -> ClipConfig:
    return ClipConfig(stage.clip_tau, stage.clip_lam, stage.clip_mode)


def run_stage2(run: RunConfig, prior: Checkpoint, train: Dataset) -> StageResult:
    t0 = time.perf_counter()
    stage = _begin(run, "II")
    _require(train, "training")
    _check_prior(prior, ("I",), train)
    model = CardiacModel(run.model, train.schema, STAGE_PARTS["II"])
    load_into(model, prior, ["image_encoder"])
    icfg = run.image
    subjects = train.subjects
    stats = fit_tabular_stats([s.record for s in subjects], train.schema)
    values, _ = tabular_batch(subjects, train.schema, stats)
    aug = _augment_cfg(stage)
    L = model.image_encoder.total_tokens
    ccfg = clip_cfg(stage)
    calib = np.random.default_rng(stage.seed)

    def pooled_image(idx):
        x, _ = image_batch([subjects[i] for i in idx], icfg, None, None)
        plans = [sample_mask(L, stage.mask_ratio, calib) for _ in idx] if stage.mask_ratio else None
        return model.encode_image(x, plans).latent.mean(dim=-2)

    _fit_feature_scale(model.proj_image.norm, pooled_image, len(subjects))
    _fit_feature_scale(model.proj_tabular.norm,
                       lambda idx: model.tabular_encoder(model.tabular_embed(
                           values[torch.as_tensor(idx)])).mean(dim=-2), len(subjects))

    def step(idx, rng):
        x, _ = image_batch([subjects[i] for i in idx], icfg, aug, rng)
        plans = [sample_mask(L, stage.mask_ratio, rng) for _ in idx] if stage.mask_ratio else None
        zi = model.embed_image(x, plans)
        zt = model.embed_tabular(values[torch.as_tensor(idx)])
        total, l_it, l_ti = clip_loss(zi, zt, ccfg)
        return total, {"l_it": float(l_it.detach()), "l_ti": float(l_ti.detach()), "batch": len(idx)}

    history = _train(model, stage, len(subjects), step, "stage=II", min_batch=2)
    ckpt = _checkpoint(model, "II", run, stats)
    summary = {"initial_l_it": history[0]["l_it"], "initial_l_ti": history[0]["l_ti"],
               "initial_batch": history[0]["batch"]} if history else {}
    return StageResult(ckpt, history, summary, paper_deviations(stage), time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# stage III

def build_model(ckpt: Checkpoint, schema: TabularSchema | None = None) -> CardiacModel:
    """Reconstruct the model a checkpoint was saved from and load its tensors."""
    run = RunConfig.from_dict(ckpt.config)
    schema = schema or ckpt.schema_obj
    model = CardiacModel(run.model, schema, ckpt.parts)
    load_into(model, ckpt, list(ckpt.parts))
    return model


def run_stage3(run: RunConfig, prior: Checkpoint, train: Dataset, task: str | None = None) -> StageResult:
    t0 = time.perf_counter()
    stage = _begin(run, "III")
    task = task or stage.task
    kind, disease = parse_task(task)
    _require(train, "training")
    _check_prior(prior, ("I", "II"), train)
    model = CardiacModel(run.model, train.schema, STAGE_PARTS["III"] + TASK_PARTS[kind])
    load_into(model, prior, ["image_encoder"])
    if stage.freeze_encoder:
        for p in model.image_encoder.parameters():
            p.requires_grad_(False)
    icfg = run.image
    subjects = train.subjects
    aug = _augment_cfg(stage)
    extra: dict = {"task": task, "init_stage": prior.stage}
    stats = prior.stats_obj or fit_tabular_stats([s.record for s in subjects], train.schema)
    if kind != "seg":
        head = model.tab_decoder if kind == "tabular" else model.disease_heads
        _fit_feature_scale(head.norm, lambda idx: model.pooled(
            image_batch([subjects[i] for i in idx], icfg, None, None)[0]), len(subjects))

    if kind == "seg":
        if any(s.mask is None for s in subjects):
            raise PipelineError("segmentation needs masks for every training subject")

        def step(idx, rng):
            x, y = image_batch([subjects[i] for i in idx], icfg, aug, rng, with_labels=True)
            return seg_loss(model.segment(x), y, stage.dice_weight), {}

    elif kind == "tabular":
        pstats = PhenotypeStats.fit(subjects)
        extra["phenotype_stats"] = pstats.to_dict()
        cards = model.targets.cards

        def step(idx, rng):
            batch = [subjects[i] for i in idx]
            x, _ = image_batch(batch, icfg, aug, rng)
            out = model.tab_decoder(model.pooled(x))
            total, parts = tabular_multitask_loss(out, tabular_targets(batch, model, stats, pstats),
                                                  cards)
            return total, {h: float(v.detach()) for h, v in parts.items()}

    else:
        labels = np.array([s.labels[disease] for s in subjects], dtype=np.float32)
        pw = positive_weight(labels)
        extra["pos_weight"] = pw
        log.info("stage III disease:%s positives %d/%d, positive weight %.3f", disease,
                 int(labels.sum()), len(labels), pw)

        def step(idx, rng):
            x, _ = image_batch([subjects[i] for i in idx], icfg, aug, rng)
            logit = model.disease_heads(model.pooled(x), disease)
            return weighted_bce(logit, torch.as_tensor(labels[idx]), pw), {}

    history = _train(model, stage, len(subjects), step, f"stage=III task={task}")
    for p in model.parameters():
        p.requires_grad_(True)
    ckpt = _checkpoint(model, "III", run, stats, **extra)
    return StageResult(ckpt, history, {"task": task}, paper_deviations(stage),
                       time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# evaluation

def _chunks(items: list, size: int):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def evaluate(ckpt: Checkpoint, task: str, ds: Dataset, split: str = "test",
             batch_size: int = 8, retrieval_batch: int = 16) -> dict:
    """Deterministic report: no augmentation, no masking.

    ``task`` is ``align`` for a stage II checkpoint, else the stage III task.
    """
    t0 = time.perf_counter()
    if len(ds) == 0:
        raise PipelineError(f"evaluation split {split!r} is empty")
    if ckpt.schema is not None and ckpt.schema_obj.fingerprint() != ds.schema.fingerprint():
        raise PipelineError("schema mismatch between checkpoint and dataset")
    model = build_model(ckpt, ds.schema)
    model.eval()
    subjects = ds.subjects
    report = {"task": task, "split": split, "n": len(subjects), "stage": ckpt.stage,
              "config": ckpt.config,
              "seed": ckpt.config.get(STAGE_SECTIONS.get(ckpt.stage, ""), {}).get("seed")}
    with torch.no_grad():
        if task == "align":
            if ckpt.stage != "II":
                raise PipelineError("alignment evaluation needs a stage II checkpoint")
            stats = ckpt.stats_obj
            zi, zt = embed_pairs(model, subjects, stats, batch_size)
            per_batch, losses = [], []
            for lo in range(0, len(subjects) - retrieval_batch + 1, retrieval_batch):
                a, b = zi[lo:lo + retrieval_batch], zt[lo:lo + retrieval_batch]
                per_batch.append(retrieval_top1(a, b))
                losses.append(float(clip_loss(a, b, ClipConfig(
                    ckpt.config["stage2"]["clip_tau"], ckpt.config["stage2"]["clip_lam"],
                    ckpt.config["stage2"]["clip_mode"]))[0]))
            if not per_batch:
                raise PipelineError(f"need at least {retrieval_batch} subjects for retrieval")
            report["metrics"] = {"retrieval_top1": float(np.mean(per_batch)),
                                 "retrieval_per_batch": per_batch, "clip_loss": float(np.mean(losses)),
                                 "retrieval_batch": retrieval_batch, "chance": 1 / retrieval_batch}
        else:
            kind, disease = parse_task(task)
            if ckpt.extra.get("task") != task:
                raise PipelineError(f"checkpoint was fine-tuned for {ckpt.extra.get('task')!r}, not {task!r}")
            if kind == "seg":
                report["metrics"] = _eval_seg(model, subjects, batch_size)
            elif kind == "tabular":
                pstats = PhenotypeStats.from_dict(ckpt.extra["phenotype_stats"])
                report["metrics"] = _eval_tabular(model, subjects, pstats, batch_size)
            else:
                report["metrics"] = _eval_disease(model, subjects, disease, batch_size)
    report["wall_time"] = time.perf_counter() - t0
    return report


def embed_pairs(model: CardiacModel, subjects: list[Subject], stats: TabularStats,
                batch_size: int = 8, offset: int = 0):
    zi, zt = [], []
    for chunk in _chunks(subjects, batch_size):
        x, _ = image_batch(chunk, model.cfg.image, None, None, offset=offset)
        zi.append(model.embed_image(x))
        if stats is not None and hasattr(model, "tabular_embed"):
            v, _ = tabular_batch(chunk, model.schema, stats)
            zt.append(model.embed_tabular(v))
    return torch.cat(zi), (torch.cat(zt) if zt else None)


def predict_segmentation(model: CardiacModel, subjects: list[Subject], batch_size: int = 4):
    preds, truths = [], []
    for chunk in _chunks(subjects, batch_size):
        x, y = image_batch(chunk, model.cfg.image, None, None, with_labels=True)
        logits = model.segment(x)                       # [B, P, C, T, H, W]
        preds.append(logits.argmax(dim=2).numpy().astype(np.uint8))
        truths.append(y.numpy().astype(np.uint8))
    return np.concatenate(preds), np.concatenate(truths)


def _eval_seg(model, subjects, batch_size) -> dict:
    pred, truth = predict_segmentation(model, subjects, batch_size)
    per_class = {}
    for c, name in enumerate(CLASSES):
        if c == 0:
            continue
        scores = [metric_dice(pred[i], truth[i], c) for i in range(len(pred))]
        per_class[name] = {"mean": float(np.mean(scores)), "std": float(np.std(scores))}
    fg = float(np.mean([v["mean"] for v in per_class.values()]))
    return {"dice": per_class, "foreground_mean": fg, "n": len(pred)}


def predict_phenotypes(model, subjects, pstats: PhenotypeStats, batch_size: int = 8) -> np.ndarray:
    out = []
    for chunk in _chunks(subjects, batch_size):
        x, _ = image_batch(chunk, model.cfg.image, None, None)
        out.append(model.tab_decoder(model.pooled(x))["phenotype"].numpy().astype(np.float64))
    return np.concatenate(out) * pstats.std + pstats.mean


def _eval_tabular(model, subjects, pstats, batch_size) -> dict:
    pred = predict_phenotypes(model, subjects, pstats, batch_size)
    truth = np.stack([s.phenotypes.vector(PHENOTYPE_NAMES) for s in subjects])
    names = [APPENDIX_PHENOTYPES[k] for k in PHENOTYPE_NAMES]
    table = regression_table(pred, truth, names)
    overall = metric_mae(np.abs(pred - truth) / pstats.std, np.zeros_like(pred))
    return {"phenotypes": table, "standardized_mae": overall.value, "n": len(subjects),
            "baseline_note": f"mean guess uses the evaluated cohort mean (n={len(subjects)})"}


def predict_disease(model, subjects, disease: str, batch_size: int = 8) -> np.ndarray:
    out = []
    for chunk in _chunks(subjects, batch_size):
        x, _ = image_batch(chunk, model.cfg.image, None, None)
        out.append(torch.sigmoid(model.disease_heads(model.pooled(x), disease)).numpy())
    return np.concatenate(out).astype(np.float64)


def _eval_disease(model, subjects, disease, batch_size) -> dict:
    scores = predict_disease(model, subjects, disease, batch_size)
    labels = np.array([s.labels[disease] for s in subjects], dtype=np.float64)
    return {"auc": metric_auc(scores, labels), "accuracy": metric_accuracy(scores, labels),
            "n": len(subjects), "n_positive": int(labels.sum()), "disease": disease}


def report_rows(report: dict) -> list[dict]:
    """Flatten a report into delimited-text rows (metric, target, value)."""
    rows = []
    base = {"task": report["task"], "split": report["split"], "n": report["n"]}

    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k, v in obj.items():
                walk(f"{prefix}.{k}" if prefix else str(k), v)
        elif isinstance(obj, (int, float)) or obj is None:
            rows.append({**base, "metric": prefix, "value": obj})

    walk("", report.get("metrics", {}))
    return rows


# ---------------------------------------------------------------------------
# embeddings

def export_embeddings(ckpt: Checkpoint, ds: Dataset, sections: int = 1, pca: bool = False,
                      batch_size: int = 8) -> list[dict]:
    """Pooled image embeddings, one row per subject and time section.

    Section ``s`` starts the subsampled cine at frame ``s * T // sections``
    of the stored sequence.
    """
    if ckpt.stage not in ("II", "III") or "proj_image" not in ckpt.parts:
        raise PipelineError("embedding export needs a stage II checkpoint")
    if sections < 1:
        raise PipelineError("sections must be at least 1")
    _require(ds, "embedding")
    model = build_model(ckpt, ds.schema)
    model.eval()
    rows = []
    with torch.no_grad():
        for sec in range(sections):
            T = ds.subjects[0].stack.images.shape[1]
            offset = sec * T // sections
            z, _ = embed_pairs(model, ds.subjects, None, batch_size, offset)
            for s, vec in zip(ds.subjects, z.numpy()):
                rows.append({"id": s.id, "section": sec, **{f"z{k}": float(v) for k, v in enumerate(vec)}})
    if pca:
        Z = np.array([[r[f"z{k}"] for k in range(model.cfg.proj_dim)] for r in rows])
        Zc = Z - Z.mean(0)
        _, _, vt = np.linalg.svd(Zc, full_matrices=False)
        pcs = Zc @ vt[:2].T
        for r, (a, b) in zip(rows, pcs):
            r["pc1"], r["pc2"] = float(a), float(b)
    return rows


def write_rows(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        raise PipelineError("nothing to write")
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return path


def clone_run(run: RunConfig) -> RunConfig:
    return copy.deepcopy(run)
