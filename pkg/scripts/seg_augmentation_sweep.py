"""Segmentation Dice under different stage III augmentation settings.

Trains the segmentation decoder from a randomly initialized encoder for a fixed
step budget, once per setting, and prints per-class and foreground Dice on a
held-out cohort. This is the experiment behind the mild stage III augmentation
in the desk preset.

    python scripts/seg_augmentation_sweep.py --steps 300
"""

from __future__ import annotations

import argparse
import time

from cardioalign.data import Dataset, PhantomConfig, default_schema, generate_cohort
from cardioalign.model import CardiacModel
from cardioalign.pipeline import stages as S
from cardioalign.pipeline.checkpoint import Checkpoint, module_tensors
from cardioalign.pipeline.config import RunConfig

SETTINGS = {
    "none": dict(augment=False),
    "rot10": dict(aug_rotation=10.0, aug_flip=0.0),
    "rot30-flip": dict(aug_rotation=30.0, aug_flip=0.5),
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--crop", type=int, default=48)
    ap.add_argument("--train", type=int, default=32)
    ap.add_argument("--test", type=int, default=8)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--settings", nargs="*", default=list(SETTINGS))
    args = ap.parse_args()

    schema = default_schema()
    run = RunConfig()
    run.image.crop = args.crop
    pcfg = PhantomConfig(crop=args.crop, frames=run.data.phantom_frames)
    train = Dataset(schema, generate_cohort(args.train, 0, pcfg, schema))
    test = Dataset(schema, generate_cohort(args.test, 0, pcfg, schema, start=1000))
    encoder = CardiacModel(run.model, schema, ("image_encoder",))
    prior = Checkpoint("I", run.to_dict(), ["image_encoder"], module_tensors(encoder),
                       schema.to_dict())

    for name in args.settings:
        stage = run.stages["III"]
        stage.batch_size, stage.lr, stage.warmup_epochs = 2, args.lr, 0.5
        stage.max_steps, stage.epochs, stage.log_every = args.steps, 10_000, 0
        stage.augment = True
        for k, v in SETTINGS[name].items():
            setattr(stage, k, v)
        t0 = time.perf_counter()
        result = S.run_stage3(run, prior, train, "seg")
        m = S.evaluate(result.checkpoint, "seg", test)["metrics"]
        dice = {k: round(v["mean"], 3) for k, v in m["dice"].items()}
        print(f"{name:11s} {time.perf_counter() - t0:5.0f}s foreground {m['foreground_mean']:.3f} {dice}")


if __name__ == "__main__":
    main()
