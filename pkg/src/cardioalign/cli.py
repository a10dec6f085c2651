"""Command-line entry point.

Verbs: gen, pretrain, align, finetune, eval, embed, inspect. Exit status is 0
on success, 1 on a runtime error (one-line diagnostic on stderr) and 2 on a
usage error. Relative output paths land under ``$CARDIOALIGN_OUT`` when set.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .data import PhantomConfig, default_schema, generate_cohort, read_dataset, write_dataset
from .data.io import DatasetError
from .data.schema import SchemaError
from .model import CardiacModel, count_parameters
from .numerics import ConfigurationError, NumericsError
from .pipeline.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .pipeline.config import ConfigError, RunConfig, preset_path, resolve_config
from .pipeline.stages import (PipelineError, evaluate, export_embeddings, parse_task, report_rows,
                              run_stage1, run_stage2, run_stage3, split_ids, subset, write_rows)

OUT_ENV = "CARDIOALIGN_OUT"
PRESETS = ("desk", "paper")
RUNTIME_ERRORS = (PipelineError, CheckpointError, DatasetError, ConfigError, SchemaError,
                  ConfigurationError, NumericsError, OSError, KeyError)

log = logging.getLogger("cardioalign")


def _out_path(p: str | None, default: str) -> Path:
    path = Path(p or default)
    root = os.environ.get(OUT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _task(value: str) -> str:
    try:
        parse_task(value)
    except PipelineError as e:
        raise argparse.ArgumentTypeError(str(e)) from None
    return value


def _overrides(pairs: list[str] | None) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not section.key=value")
        out[key.strip()] = value.strip()
    return out


def _load_run(args, stage_key: str | None = None) -> RunConfig:
    """Resolve ``--config`` (INI, a shipped preset name, or a JSON snapshot of an earlier run)."""
    over = _overrides(getattr(args, "set", None))
    if stage_key and getattr(args, "seed", None) is not None:
        over[f"{stage_key}.seed"] = str(args.seed)
    path = getattr(args, "config", None)
    if path in PRESETS and not Path(path).exists():
        path = preset_path(path)
    if path and str(path).endswith(".json"):
        snap = json.loads(Path(path).read_text())
        run = RunConfig.from_dict(snap.get("values", snap))
        base = resolve_config(None, over)
        for dotted in over:
            section, _, key = dotted.rpartition(".")
            setattr(run.sections()[section], key, getattr(base.sections()[section], key))
        run.provenance = {**snap.get("provenance", {}), **{k: "flag" for k in over}}
        return run
    return resolve_config(path, over)


def _snapshot(run: RunConfig, out: Path, args) -> None:
    snap = run.snapshot()
    snap["command"] = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
                       if k != "func"}
    p = out.with_name(out.name + ".config.json")
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(snap, indent=1, sort_keys=True))


def _split(run: RunConfig, data: Path, which: str):
    ds = read_dataset(data)
    parts = split_ids([s.id for s in ds.subjects], run.data.val_fraction, run.data.test_fraction,
                      run.data.split_seed)
    if which not in parts:
        raise PipelineError(f"unknown split {which!r}; expected train, val or test")
    return subset(ds, parts[which])


# ---------------------------------------------------------------------------
# verbs

def cmd_gen(args) -> int:
    run = _load_run(args)
    out = _out_path(args.out, "phantom")
    cfg = PhantomConfig(crop=run.image.crop, frames=run.data.phantom_frames, n_sa=run.image.n_sa,
                        n_la=run.image.n_la, noise=run.data.noise,
                        positive_rate=run.data.positive_rate)
    schema = default_schema()
    write_dataset(generate_cohort(args.subjects, args.seed, cfg, schema), out, schema)
    _snapshot(run, out, args)
    print(f"wrote {args.subjects} subjects to {out}")
    return 0


def _finish(result, out: Path, run: RunConfig, args) -> int:
    save_checkpoint(result.checkpoint, out)
    _snapshot(run, out, args)
    (out.with_name(out.name + ".log.json")).write_text(json.dumps(
        {"history": result.history, "summary": result.summary, "deviations": result.deviations,
         "wall_time": result.wall_time}, indent=1))
    print(f"stage {result.checkpoint.stage} checkpoint written to {out}")
    return 0


def cmd_pretrain(args) -> int:
    run = _load_run(args, "stage1")
    out = _out_path(args.out, "stage1.ckpt")
    return _finish(run_stage1(run, _split(run, args.data, "train")), out, run, args)


def cmd_align(args) -> int:
    run = _load_run(args, "stage2")
    out = _out_path(args.out, "stage2.ckpt")
    prior = load_checkpoint(args.from_ckpt)
    return _finish(run_stage2(run, prior, _split(run, args.data, "train")), out, run, args)


def cmd_finetune(args) -> int:
    run = _load_run(args, "stage3")
    run.stages["III"].task = args.task
    run.provenance["stage3.task"] = "flag"
    out = _out_path(args.out, f"stage3-{args.task.replace(':', '-')}.ckpt")
    prior = load_checkpoint(args.from_ckpt)
    return _finish(run_stage3(run, prior, _split(run, args.data, "train"), args.task), out, run,
                   args)


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    run = RunConfig.from_dict(ckpt.config)
    ds = _split(run, args.data, args.split)
    report = evaluate(ckpt, args.task, ds, args.split)
    out = _out_path(args.out, "report.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=1, sort_keys=True))
    write_rows(report_rows(report), out.with_suffix(".tsv") if out.suffix else out.with_name(
        out.name + ".tsv"))
    _snapshot(run, out, args)
    print(json.dumps(report["metrics"], sort_keys=True))
    return 0


def cmd_embed(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    run = RunConfig.from_dict(ckpt.config)
    ds = read_dataset(args.data) if args.split == "all" else _split(run, args.data, args.split)
    rows = export_embeddings(ckpt, ds, args.sections, args.pca)
    out = _out_path(args.out, "embeddings.csv")
    write_rows(rows, out)
    _snapshot(run, out, args)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    run = RunConfig.from_dict(ckpt.config)
    model = CardiacModel(run.model, ckpt.schema_obj or default_schema(), ckpt.parts)
    print(json.dumps({"stage": ckpt.stage, "parts": ckpt.parts, "extra": ckpt.extra,
                      "parameters": count_parameters(model), "config": ckpt.config},
                     indent=1, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cardioalign",
                                description="Phantom-scale multi-view CMR pretraining pipeline.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every training step")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, config_required: bool):
        sp.add_argument("--config", required=config_required, help="INI file, JSON snapshot, or a shipped preset: desk | paper")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")

    g = sub.add_parser("gen", help="generate a phantom dataset")
    common(g, False)
    g.add_argument("--subjects", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    for verb, func, needs_prior, text in (
            ("pretrain", cmd_pretrain, False, "stage I: masked-autoencoder pretraining"),
            ("align", cmd_align, True, "stage II: image-tabular contrastive alignment"),
            ("finetune", cmd_finetune, True, "stage III: seg | tabular | disease:<name>")):
        sp = sub.add_parser(verb, help=text)
        common(sp, True)
        sp.add_argument("--data", required=True, type=Path)
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        if needs_prior:
            sp.add_argument("--from", dest="from_ckpt", required=True, type=Path)
        if verb == "finetune":
            sp.add_argument("--task", required=True, type=_task)
        sp.set_defaults(func=func)

    e = sub.add_parser("eval", help="score a checkpoint on one split")
    e.add_argument("--task", required=True, type=lambda v: v if v == "align" else _task(v))
    e.add_argument("--ckpt", required=True, type=Path)
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("embed", help="export per-subject embeddings as CSV")
    m.add_argument("--ckpt", required=True, type=Path)
    m.add_argument("--data", required=True, type=Path)
    m.add_argument("--split", default="all", choices=("all", "train", "val", "test"))
    m.add_argument("--sections", type=int, default=10)
    m.add_argument("--pca", action="store_true")
    m.add_argument("--out")
    m.set_defaults(func=cmd_embed)

    i = sub.add_parser("inspect", help="print checkpoint metadata and parameter counts")
    i.add_argument("--ckpt", required=True, type=Path)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except RUNTIME_ERRORS as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"cardioalign {args.verb}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
