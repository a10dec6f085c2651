"""How much subject identity can a linear map recover from frozen image features?

Pretrains the image encoder, then fits a ridge regression from standardized
mean-pooled features to the normalized tabular vector on the training cohort.
Held-out image->table top-1 retrieval of the ridge prediction (batches of 16)
bounds what a linear projector on these features can reach.

    python scripts/retrieval_ceiling_probe.py --train 128 --test 128
"""

from __future__ import annotations

import argparse

import numpy as np
import torch

from cardioalign.data import Dataset, PhantomConfig, default_schema, generate_cohort
from cardioalign.data.schema import CARDIAC_NUMERICAL
from cardioalign.data.tabular import fit_tabular_stats
from cardioalign.model import CardiacModel
from cardioalign.pipeline import stages as S
from cardioalign.pipeline.config import RunConfig


def pooled(model: CardiacModel, subjects) -> np.ndarray:
    model.eval()
    with torch.no_grad():
        return torch.cat([model.pooled(S.image_batch(list(ch), model.cfg.image, None, None)[0])
                          for ch in S._chunks(subjects, 16)]).numpy()


def retrieval(pred: np.ndarray, truth: np.ndarray, batch: int = 16) -> float:
    def unit(a):
        return a / np.linalg.norm(a, axis=1, keepdims=True)

    hits = [np.mean(np.argmax(unit(pred[lo:lo + batch]) @ unit(truth[lo:lo + batch]).T, 1)
                    == np.arange(batch)) for lo in range(0, len(pred) - batch + 1, batch)]
    return float(np.mean(hits))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--train", type=int, default=128)
    ap.add_argument("--test", type=int, default=128)
    ap.add_argument("--stage1-steps", type=int, default=200)
    ap.add_argument("--ridge", type=float, nargs="*", default=[1.0, 10.0, 100.0])
    args = ap.parse_args()

    schema = default_schema()
    run = RunConfig()
    for st in run.stages.values():
        st.log_every = 0
    run.stages["I"].max_steps = args.stage1_steps
    pcfg = PhantomConfig(crop=run.image.crop, frames=run.data.phantom_frames)
    train = Dataset(schema, generate_cohort(args.train, 0, pcfg, schema))
    test = Dataset(schema, generate_cohort(args.test, 0, pcfg, schema, start=10_000))

    encoders = {"random": CardiacModel(run.model, schema, ("image_encoder",)),
                "stage I": S.build_model(S.run_stage1(run, Dataset(
                    schema, train.subjects[:64])).checkpoint)}
    stats = fit_tabular_stats([s.record for s in train.subjects], schema)
    ta = S.tabular_batch(train.subjects, schema, stats)[0].numpy()
    tb = S.tabular_batch(test.subjects, schema, stats)[0].numpy()
    cardiac = [i for i, f in enumerate(schema.features) if f.name in set(CARDIAC_NUMERICAL)]
    column_sets = {"cardiac": cardiac, "all": list(range(ta.shape[1]))}

    for name, model in encoders.items():
        fa, fb = pooled(model, train.subjects), pooled(model, test.subjects)
        mu, sd = fa.mean(0), fa.std(0) + 1e-8
        a, b = (fa - mu) / sd, (fb - mu) / sd
        for cols_name, cols in column_sets.items():
            for lam in args.ridge:
                w = np.linalg.solve(a.T @ a + lam * np.eye(a.shape[1]), a.T @ ta[:, cols])
                print(f"{name:8s} {cols_name:8s} ({len(cols):3d} columns) ridge {lam:6g}: "
                      f"top-1 {retrieval(b @ w, tb[:, cols]):.3f}")


if __name__ == "__main__":
    main()
