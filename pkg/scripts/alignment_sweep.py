"""Stage II retrieval under stage-config overrides.

Pretrains once, then runs the alignment stage for every override set given on the
command line and reports top-1 retrieval (batches of 16) on the training and
held-out cohorts. Each override set is a comma-separated list of field=value.

    python scripts/alignment_sweep.py "" "lr=3e-3" "aug_rotation=30,aug_flip=0.5"
"""

from __future__ import annotations

import argparse
import time

from cardioalign.data import Dataset, PhantomConfig, default_schema, generate_cohort
from cardioalign.pipeline import stages as S
from cardioalign.pipeline.config import RunConfig


def parse_overrides(spec: str) -> dict:
    defaults = RunConfig().stages["II"]
    out = {}
    for item in filter(None, spec.split(",")):
        key, value = item.split("=", 1)
        kind = type(getattr(defaults, key))
        out[key] = bool(int(value)) if kind is bool else kind(value)
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("overrides", nargs="*", default=[""])
    ap.add_argument("--train", type=int, default=128)
    ap.add_argument("--test", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    schema = default_schema()
    run = RunConfig()
    for st in run.stages.values():
        st.seed, st.log_every = args.seed, 0
    run.stages["I"].max_steps = 200
    pcfg = PhantomConfig(crop=run.image.crop, frames=run.data.phantom_frames)
    train = Dataset(schema, generate_cohort(args.train, 0, pcfg, schema))
    test = Dataset(schema, generate_cohort(args.test, 0, pcfg, schema, start=10_000))
    prior = S.run_stage1(run, Dataset(schema, train.subjects[:64])).checkpoint

    for spec in args.overrides:
        trial = S.clone_run(run)
        for k, v in parse_overrides(spec).items():
            setattr(trial.stages["II"], k, v)
        t0 = time.perf_counter()
        ckpt = S.run_stage2(trial, prior, train).checkpoint
        seen = S.evaluate(ckpt, "align", train)["metrics"]["retrieval_top1"]
        held = S.evaluate(ckpt, "align", test)["metrics"]["retrieval_top1"]
        print(f"[{spec or 'defaults'}] {time.perf_counter() - t0:.0f}s "
              f"train top-1 {seen:.3f}, held-out top-1 {held:.3f}")


if __name__ == "__main__":
    main()
