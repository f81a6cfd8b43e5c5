"""Command-line entry point: ``rgat <command> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .inspection import (aspect_alignment_score, chance_alignment, channel_attention_summary,
                         load_aspects, top_facts)
from .synth import generate_labeled, generate_synthetic
from .train import format_sweep, load_ec, load_lp, sweep_channels, train_ec, train_lp


def _config(args, task: str | None = None) -> RunConfig:
    if not args.config:
        raise SystemExit("error: --config is required for this command")
    overrides = {"seed": args.seed}
    if task:
        overrides["task"] = task
    return load_config(args.config, **overrides)


def _emit(args, name: str, text: str) -> None:
    sys.stdout.write(text)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text, encoding="utf-8")


def _checkpoint(args) -> str:
    if not args.checkpoint:
        raise SystemExit("error: --checkpoint is required for this command")
    return args.checkpoint


def cmd_train_lp(args) -> None:
    cfg = _config(args, "link_prediction")
    res = train_lp(cfg, out_dir=args.out_dir)
    text = f"best valid mrr {res.best_metric:.6f} at epoch {res.best_epoch}\n"
    if res.model.data.test:
        text += res.model.evaluate("test").metric_lines("test_")
    _emit(args, "summary.txt", text)


def cmd_train_ec(args) -> None:
    cfg = _config(args, "entity_classification")
    res = train_ec(cfg, out_dir=args.out_dir)
    text = f"best selection accuracy {res.best_metric:.6f} at epoch {res.best_epoch}\n"
    if (res.model.labels.splits == "test").any():
        text += f"test_accuracy={res.model.accuracy('test'):.6f}\n"
    _emit(args, "summary.txt", text)


def cmd_eval_lp(args) -> None:
    cfg = _config(args, "link_prediction")
    model = load_lp(cfg, _checkpoint(args))
    report = model.evaluate(args.split)
    _emit(args, f"eval_{args.split}.txt",
          report.table(f"filtered ranking, {args.split} split") + report.metric_lines(f"{args.split}_"))


def cmd_eval_ec(args) -> None:
    cfg = _config(args, "entity_classification")
    model = load_ec(cfg, _checkpoint(args))
    _emit(args, f"eval_{args.split}.txt", f"{args.split}_accuracy={model.accuracy(args.split):.6f}\n")


def cmd_sweep(args) -> None:
    cfg = _config(args, "link_prediction")
    ks = [int(k) for k in args.channels.split(",")]
    _emit(args, "sweep.txt", format_sweep(sweep_channels(cfg, ks, out_dir=args.out_dir)))


def cmd_gen_synth(args) -> None:
    if not args.out_dir:
        raise SystemExit("error: --out-dir is required for gen-synth")
    seed = args.seed or 0
    if args.classes:
        lg = generate_labeled(args.entities, args.classes, args.aspects, args.relations_per_aspect,
                              args.density, seed)
        paths = lg.write(args.out_dir)
    else:
        kg = generate_synthetic(args.aspects, args.relations_per_aspect, args.entities,
                                args.density, seed, args.groups)
        paths = kg.write(args.out_dir)
    for name, p in paths.items():
        print(f"{name}\t{p}")


def cmd_inspect(args) -> None:
    cfg = _config(args, "link_prediction")
    model = load_lp(cfg, _checkpoint(args))
    seed = cfg.seed
    if args.subject:
        if not args.relation:
            raise SystemExit("error: --subject needs --relation")
        rep = top_facts(model, args.subject, args.relation, args.top_channels, args.top_facts)
        _emit(args, "top_facts.txt", rep.to_text())
        return
    relations = args.relation.split(",") if args.relation else None
    summary = channel_attention_summary(model, relations, args.sample_size, seed)
    text = summary.to_text()
    if args.aspects:
        aspects = load_aspects(args.aspects)
        score = aspect_alignment_score(summary, aspects)
        chance = chance_alignment({r: aspects[r] for r in summary.relations},
                                  summary.beta.shape[1], seed=seed)
        text += f"aspect_alignment={score:.6f}\naspect_alignment_chance={chance:.6f}\n"
    _emit(args, "channel_attention.txt", text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out-dir", help="directory for logs, checkpoints and reports")
    common.add_argument("--checkpoint", help="checkpoint to load")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rgat", description="Relational graph attention toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train-lp", parents=[common], help="train for link prediction").set_defaults(fn=cmd_train_lp)
    sub.add_parser("train-ec", parents=[common], help="train for entity classification").set_defaults(fn=cmd_train_ec)
    for name, fn in (("eval-lp", cmd_eval_lp), ("eval-ec", cmd_eval_ec)):
        p = sub.add_parser(name, parents=[common], help="evaluate a checkpoint")
        p.add_argument("--split", default="test", choices=["train", "valid", "test"])
        p.set_defaults(fn=fn)

    p = sub.add_parser("sweep-k", parents=[common], help="compare channel counts")
    p.add_argument("--channels", default="1,2,4,8,16", help="comma-separated K values")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("gen-synth", parents=[common], help="write a planted-aspect dataset")
    p.add_argument("--aspects", type=int, default=4)
    p.add_argument("--relations-per-aspect", type=int, default=2)
    p.add_argument("--entities", type=int, default=60)
    p.add_argument("--density", type=float, default=3.0)
    p.add_argument("--groups", type=int, default=8)
    p.add_argument("--classes", type=int, default=0, help="also write entity labels with this many classes")
    p.set_defaults(fn=cmd_gen_synth)

    p = sub.add_parser("inspect", parents=[common], help="channel attention and fact attribution reports")
    p.add_argument("--subject")
    p.add_argument("--relation", help="query relation (comma-separated list for the summary)")
    p.add_argument("--top-channels", type=int, default=3)
    p.add_argument("--top-facts", type=int, default=4)
    p.add_argument("--sample-size", type=int, default=100)
    p.add_argument("--aspects", help="relation TAB aspect file for the alignment score")
    p.set_defaults(fn=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.fn(args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
