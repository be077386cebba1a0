"""Command-line entry point.

Exit codes: 0 success, 2 invalid configuration, 3 missing input,
4 numeric divergence (non-finite loss), 1 anything else.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from ..encoder import DivergenceError, TeacherProvider, read_teacher_json, write_teacher_file
from ..encoder.teacher import TeacherError, read_teacher_file
from ..ingest import IngestError, load_manifest, split_dataset
from ..metrics import evaluate_corpus, load_candidates, load_references
from .config import ConfigError, load_config, resolve, set_path
from .harness import HoldoutError, ablate, format_table, holdout_report
from .pipeline import (
    Layout,
    MissingInputError,
    load_clips,
    run_pipeline,
    run_stage,
    stage_data,
    stage_preprocess,
    write_jsonl,
    write_resolved,
)
from .synthetic import TASKS, make_synthetic_dataset

EXIT_CONFIG, EXIT_MISSING, EXIT_DIVERGED = 2, 3, 4

STAGE_COMMANDS = {
    "preprocess": "preprocess",
    "train-encoder": "encoder",
    "pretrain-lm": "lm",
    "train-bridge": "stage1",
    "instruct-tune": "stage2",
}


def _value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_config(args) -> dict:
    user = {}
    if args.config:
        if not os.path.exists(args.config):
            raise MissingInputError(f"config not found: {args.config}")
        user = load_config(args.config)
    overrides = {}
    for item in args.set or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        set_path(overrides, key, _value(val))
    if args.seed is not None:
        overrides["seed"] = args.seed
    return resolve(user, overrides)


def _print_progress(msg):
    print(msg, file=sys.stderr, flush=True)


def cmd_stage(args, cfg):
    path = run_stage(cfg, args.out, STAGE_COMMANDS[args.command], args.force, progress=_print_progress)
    print(path if path else "skipped")


def cmd_run(args, cfg):
    report = run_pipeline(cfg, args.out, args.force, progress=_print_progress)
    print(json.dumps(report["scores"], indent=1))


def cmd_evaluate(args, cfg):
    if args.candidates or args.references:
        if not (args.candidates and args.references):
            raise ConfigError("--candidates and --references go together")
        for p in (args.candidates, args.references):
            if not os.path.exists(p):
                raise MissingInputError(f"not found: {p}")
        report = evaluate_corpus(load_candidates(args.candidates), load_references(args.references))
        text = report.dumps()
        if args.report:
            with open(args.report, "w", encoding="utf-8") as fh:
                fh.write(text)
        print(text, end="")
        return
    report = run_stage(cfg, args.out, "eval", args.force, progress=_print_progress)
    print(json.dumps(report, indent=1))


def cmd_generate(args, cfg):
    from .pipeline import generate, stage_stage2
    layout = Layout(args.out)
    write_resolved(cfg, layout.out)
    stage_stage2(cfg, layout, False, _print_progress)
    outputs, refs, ck = generate(cfg, layout, args.partition)
    dest = args.dest or os.path.join(layout.out, "generate", f"{args.partition or cfg['evaluate']['partition']}.jsonl")
    os.makedirs(os.path.dirname(os.path.abspath(dest)), exist_ok=True)
    tmp = dest + ".tmp"
    write_jsonl(tmp, [{"item_id": i, "candidate": outputs[i], "references": refs[i]} for i in sorted(outputs)])
    os.replace(tmp, dest)
    print(dest)


def cmd_teacher(args, cfg):
    dest = args.dest or os.path.join(args.out, "teacher", "teacher.s2te")
    if args.action == "import":
        if not args.source or not os.path.exists(args.source):
            raise MissingInputError(f"teacher source not found: {args.source}")
        table = read_teacher_json(args.source) if args.source.endswith(".json") else read_teacher_file(args.source)
    else:
        layout = Layout(args.out)
        write_resolved(cfg, layout.out)
        pre = stage_preprocess(cfg, layout, False, _print_progress)
        teacher = TeacherProvider.synthetic(cfg["teacher"]["dim"], cfg["seed"])
        table = {}
        for c in load_clips(pre, "encoder"):
            table[c.clip_id] = teacher.lookup(c)
    os.makedirs(os.path.dirname(os.path.abspath(dest)), exist_ok=True)
    write_teacher_file(dest + ".tmp", table)
    os.replace(dest + ".tmp", dest)
    print(f"{dest}: {len(table)} embeddings")


def cmd_split(args, cfg):
    layout = Layout(args.out)
    write_resolved(cfg, layout.out)
    entries = load_manifest(stage_data(cfg, layout, False, _print_progress))
    sp = cfg["split"]
    split = split_dataset(entries, sp["mode"], tuple(sp["fractions"]), cfg["seed"], sp["holdout_subjects"])
    dest = os.path.join(layout.out, "split.json")
    with open(dest + ".tmp", "w", encoding="utf-8") as fh:
        json.dump(split.to_json(), fh, indent=1)
        fh.write("\n")
    os.replace(dest + ".tmp", dest)
    print(f"{dest}: train {len(split.train)}, validation {len(split.validation)}, test {len(split.test)}")


def cmd_ablate(args, cfg):
    variants = [v for v in (args.variants or "").split(",") if v]
    write_resolved(cfg, args.out)
    table = ablate(cfg, args.out, variants, args.force, _print_progress)
    print(format_table(table["title"], table["rows"]), end="")


def cmd_holdout(args, cfg):
    write_resolved(cfg, args.out)
    table = holdout_report(cfg, args.out, args.dimension, args.force, _print_progress)
    print(format_table(table["title"], table["rows"]), end="")


def cmd_make_synthetic(args, cfg):
    syn = cfg["data"]["synthetic"]
    path = make_synthetic_dataset(args.out, args.task or syn["task"], syn["n_recordings"], syn["n_subjects"],
                                  syn["duration_s"], syn["n_activities"], cfg["modalities"], cfg["seed"],
                                  syn["nan_rate"])
    print(path)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="runs/default", help="output directory")
    common.add_argument("--force", action="store_true", help="rebuild existing stages")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field, e.g. --set train.encoder.epochs=20")

    p = argparse.ArgumentParser(prog="wearcap", description="Wearable-sensor captioning pipeline.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("preprocess", "resample, normalize and segment recordings"),
                        ("train-encoder", "fit the sensor encoder to teacher embeddings"),
                        ("pretrain-lm", "train the toy decoder on text"),
                        ("train-bridge", "stage 1: train the Q-former"),
                        ("instruct-tune", "stage 2: instruction tuning")):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.set_defaults(func=cmd_stage)
    s = sub.add_parser("run", parents=[common], help="full pipeline through evaluation")
    s.set_defaults(func=cmd_run)
    s = sub.add_parser("generate", parents=[common], help="caption a partition")
    s.add_argument("--partition", choices=("train", "validation", "test"))
    s.add_argument("--dest")
    s.set_defaults(func=cmd_generate)
    s = sub.add_parser("evaluate", parents=[common], help="score generations")
    s.add_argument("--candidates", help="JSONL with item_id and candidate")
    s.add_argument("--references", help="JSONL with item_id and references")
    s.add_argument("--report", help="where to write the report (standalone mode)")
    s.set_defaults(func=cmd_evaluate)
    s = sub.add_parser("teacher", parents=[common], help="import or synthesize teacher embeddings")
    s.add_argument("action", choices=("import", "synth"))
    s.add_argument("source", nargs="?", help="JSON or binary table to import")
    s.add_argument("--dest")
    s.set_defaults(func=cmd_teacher)
    s = sub.add_parser("split", parents=[common], help="write the train/validation/test split")
    s.set_defaults(func=cmd_split)
    s = sub.add_parser("ablate", parents=[common], help="ablation table")
    s.add_argument("--variants", default="full,no_temporal,no_noise,no_stage1",
                   help="comma-separated subset of full,no_temporal,no_noise,no_stage1")
    s.set_defaults(func=cmd_ablate)
    s = sub.add_parser("holdout", parents=[common], help="modality or subject holdout table")
    s.add_argument("--dimension", choices=("modality", "subject"), default="modality")
    s.set_defaults(func=cmd_holdout)
    s = sub.add_parser("make-synthetic", parents=[common], help="write a synthetic dataset to --out")
    s.add_argument("--task", choices=TASKS)
    s.set_defaults(func=cmd_make_synthetic)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        args.func(args, cfg)
    except (ConfigError, HoldoutError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingInputError, FileNotFoundError) as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except DivergenceError as exc:
        print(f"error: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (IngestError, TeacherError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
