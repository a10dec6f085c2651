"""Z-scoring, imputation and the inverse transform for tabular records."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .schema import NUMERICAL, TabularRecord, TabularSchema

log = logging.getLogger(__name__)


@dataclass
class TabularStats:
    mean: np.ndarray  # per feature; 0 for categorical
    std: np.ndarray   # per feature; 1 for categorical
    mode: np.ndarray  # per feature; categorical fallback code, 0 for numerical

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "mode": self.mode.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TabularStats":
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float),
                   np.asarray(d["mode"], float))


def fit_tabular_stats(records: list[TabularRecord], schema: TabularSchema) -> TabularStats:
    """Population mean/std per numerical feature, mode per categorical feature.

    Statistics come from observed entries only. A categorical feature with no
    observations falls back to its reserved row (index == cardinality).
    """
    F = len(schema)
    vals = np.stack([r.values for r in records]) if records else np.zeros((0, F))
    miss = np.stack([r.missing for r in records]) if records else np.zeros((0, F), bool)
    mean, std, mode = np.zeros(F), np.ones(F), np.zeros(F)
    for i, f in enumerate(schema.features):
        obs = vals[~miss[:, i], i]
        if f.kind == NUMERICAL:
            if len(obs) < 2:
                log.warning("feature %r has %d observed values; using mean=%s, std=1",
                            f.name, len(obs), obs[0] if len(obs) else 0.0)
                mean[i] = obs[0] if len(obs) else 0.0
                continue
            mean[i] = obs.mean()
            s = obs.std()
            if s == 0:
                log.warning("feature %r has zero variance; std clamped to 1", f.name)
                s = 1.0
            std[i] = s
        else:
            if len(obs):
                counts = np.bincount(obs.astype(int), minlength=f.cardinality)
                mode[i] = int(np.argmax(counts))
            else:
                mode[i] = f.cardinality
    return TabularStats(mean, std, mode)


def apply_tabular_stats(records: list[TabularRecord], schema: TabularSchema,
                        stats: TabularStats) -> list[TabularRecord]:
    num = np.array([f.kind == NUMERICAL for f in schema.features])
    out = []
    for r in records:
        r.validate(schema)
        v = r.values.copy()
        v[num] = (v[num] - stats.mean[num]) / stats.std[num]
        # imputation: mean (0 after standardization) / categorical mode
        v[num & r.missing] = 0.0
        v[~num & r.missing] = stats.mode[~num & r.missing]
        out.append(TabularRecord(v, r.missing.copy()))
    return out


def normalize_tabular(records: list[TabularRecord], schema: TabularSchema,
                      stats: TabularStats | None = None) -> tuple[list[TabularRecord], TabularStats]:
    """Standardize and impute ``records``; fit ``stats`` on them unless given."""
    stats = fit_tabular_stats(records, schema) if stats is None else stats
    return apply_tabular_stats(records, schema, stats), stats


def inverse_numerical(z: np.ndarray, stats: TabularStats, idx) -> np.ndarray:
    """Map standardized values of features ``idx`` (last axis) back to original units."""
    idx = np.asarray(idx)
    return np.asarray(z) * stats.std[idx] + stats.mean[idx]


def denormalize_tabular(records: list[TabularRecord], schema: TabularSchema,
                        stats: TabularStats) -> list[TabularRecord]:
    num = np.array([f.kind == NUMERICAL for f in schema.features])
    out = []
    for r in records:
        v = r.values.copy()
        v[num] = v[num] * stats.std[num] + stats.mean[num]
        out.append(TabularRecord(v, r.missing.copy()))
    return out
