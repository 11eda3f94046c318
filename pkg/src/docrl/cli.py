"""Command-line entry points.

Exit codes: 0 success, 1 usage/config/IO error, 2 data error, 3 numerical failure.
Machine output goes to stdout or files; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from docrl.config import ConfigError, load_config
from docrl.evaluation import evaluate, index_predictions, read_predictions, report_emit
from docrl.policy import load_checkpoint, save_checkpoint
from docrl.rewards import score
from docrl.structured_output import build_prompt
from docrl.synth import DataError, gen_dataset, read_jsonl, write_jsonl
from docrl.training import NumericalError, Trainer, policy_from_config, predict

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_gen_data(args) -> int:
    overrides = {"env.n_fields": args.fields, "seed": args.seed}
    cfg = load_config(args.config, overrides)
    samples = gen_dataset(args.n, cfg.seed, cfg.env)
    try:
        write_jsonl(samples, args.out)
    except OSError as exc:
        return _fail(f"cannot write {args.out}: {exc}", EXIT_USAGE)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed, "train.steps": args.steps})
    samples = read_jsonl(args.data)
    policy, optimizer = policy_from_config(cfg)
    steps = int(cfg["train.steps"])
    try:
        log = open(args.log, "w", encoding="utf-8") if args.log else None
    except OSError as exc:
        return _fail(f"cannot write {args.log}: {exc}", EXIT_USAGE)
    try:
        if steps > 0:
            trainer = Trainer(policy, optimizer, samples, cfg.grpo, cfg.reward, cfg.seed)
            trainer.train(steps, log)
    finally:
        if log is not None:
            log.close()
    try:
        save_checkpoint(args.out, policy, optimizer)
    except OSError as exc:
        return _fail(f"cannot write {args.out}: {exc}", EXIT_USAGE)
    return EXIT_OK


def cmd_predict(args) -> int:
    policy, _ = load_checkpoint(args.checkpoint)
    records = predict(policy, read_jsonl(args.dataset))
    with open(args.out, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = load_config(args.config)
    samples = {s.id: s for s in read_jsonl(args.dataset)}
    predictions = read_predictions(args.predictions)
    index_predictions(predictions)  # rejects duplicates
    lines = []
    for p in predictions:
        sample = samples.get(p.id)
        if sample is None:
            raise DataError(f"prediction id {p.id!r} not in dataset")
        br = score(p.raw_output, sample.question, sample.gt, cfg.reward)
        lines.append(json.dumps({"id": p.id, **br.as_dict()}))
    Path(args.out).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    splits = {}
    for path in args.dataset:
        name = Path(path).stem
        if name in splits:
            return _fail(f"two datasets share the split name {name!r}", EXIT_USAGE)
        splits[name] = read_jsonl(path)
    report = evaluate(splits, read_predictions(args.predictions), args.roi_threshold,
                      cfg.reward.accuracy_mode)
    print(report_emit(report, args.format))
    return EXIT_OK


def cmd_prompt(args) -> int:
    print(build_prompt(args.question))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="docrl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic QA dataset as JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fields", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the slot policy with GRPO")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="step report JSONL path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="greedy predictions from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score", help="per-record reward breakdowns")
    p.add_argument("--predictions", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="accuracy / detection / parse-rate report")
    p.add_argument("--predictions", required=True)
    p.add_argument("--dataset", required=True, action="append",
                   help="dataset JSONL; repeat for several splits")
    p.add_argument("--roi-threshold", type=float, default=0.5)
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("prompt", help="print the prompt for a question")
    p.add_argument("question")
    p.set_defaults(func=cmd_prompt)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(f"config: {exc}", EXIT_USAGE)
    except DataError as exc:
        return _fail(str(exc), EXIT_DATA)
    except (NumericalError, FloatingPointError) as exc:
        return _fail(str(exc), EXIT_NUMERIC)
    except FileNotFoundError as exc:
        return _fail(str(exc), EXIT_DATA)
    except OSError as exc:
        return _fail(str(exc), EXIT_USAGE)
    except ValueError as exc:
        return _fail(str(exc), EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
