"""Command line entry point: ``hielo prepare|train|generate|evaluate|inspect``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .corpus import (CorpusError, atomic_write, build_vocab, group_by_mr, load_corpus,
                     read_e2e_csv, save_prepared, tokenize)
from .hierdec import ConfigError
from .metrics import evaluate
from .numkernel import NumericError
from .pipeline import evaluate_texts, generate_for_groups, generate_for_mr, reference_sets
from .training import (STATS_HEADER, CheckpointError, TrainConfig, TrainingError, count_parameters,
                       encode_instances, load_checkpoint, new_checkpoint, parameter_table,
                       save_checkpoint, train)

EXPECTED_ERRORS = (CorpusError, ConfigError, CheckpointError, TrainingError, NumericError,
                   OSError, ValueError)


def _on_off(text: str) -> bool:
    low = text.lower()
    if low not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return low == "on"


def _load_prepared(path):
    return load_corpus(path, format="prepared-jsonl")


def cmd_prepare(args) -> int:
    try:
        instances, stats = read_e2e_csv(args.input, args.tags)
    except CorpusError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    mr_vocab, tgt_vocab = build_vocab(instances, args.min_count)
    bad = sum(not inst.containment_ok() for inst in instances)
    save_prepared(instances, args.output)
    print(f"instances = {len(instances)}")
    print(f"rows = {stats.rows}")
    print(f"skipped_rows = {stats.skipped}")
    print(f"mr_vocab = {len(mr_vocab)}")
    print(f"tgt_vocab = {len(tgt_vocab)}")
    print(f"unmatched_delex = {stats.unmatched_delex}")
    print(f"containment = {'PASS' if bad == 0 else 'FAIL'} ({len(instances) - bad}/{len(instances)})")
    sources = ", ".join(f"{k}={v}" for k, v in sorted(stats.tag_sources.items())) or "none"
    print(f"tag_sources = {sources}")
    return 0 if bad == 0 else 1


def _train_config(args) -> TrainConfig:
    seed = args.seed
    if seed is None and os.environ.get("HIELO_SEED"):
        seed = int(os.environ["HIELO_SEED"])
    overrides = dict(model_variant=args.variant, seed=seed, epochs=args.epochs,
                     batch_size=args.batch_size, lr=args.lr, p_inner0=args.p_inner,
                     p_inter0=args.p_inter, tf_decay=args.tf_decay, curriculum=args.curriculum,
                     repeat_input=args.repeat_input, cell=args.cell, embed_dim=args.embed_dim,
                     enc_hidden=args.enc_hidden, dec_hidden=args.dec_hidden,
                     min_count=args.min_count, max_len=args.max_len)
    if args.config:
        return TrainConfig.from_file(args.config, **overrides)
    return TrainConfig(**{k: v for k, v in overrides.items() if v is not None})


def cmd_train(args) -> int:
    cfg = _train_config(args)
    instances = _load_prepared(args.data)
    if not instances:
        raise TrainingError(f"{args.data}: no instances")
    mr_vocab, tgt_vocab = build_vocab(instances, cfg.min_count)
    ckpt = new_checkpoint(cfg, mr_vocab, tgt_vocab)
    data = encode_instances(instances, mr_vocab, tgt_vocab)
    print(STATS_HEADER, flush=True)
    train(ckpt, data, on_epoch=lambda s: print(s.csv_line(), flush=True))
    save_checkpoint(ckpt, args.out)
    return 0


def _format_trace(ckpt, trace) -> list[str]:
    lines = []
    for i, (emitted, fed) in enumerate(zip(trace.emitted, trace.pointer_history), start=1):
        cap = " [length cap]" if trace.cap_hit[i - 1] else ""
        lines.append(f"  L{i}: {' '.join(ckpt.tgt_vocab.decode(trace.per_layer_outputs[i - 1]))}{cap}")
        if fed:
            lines.append(f"  L{i} inter-layer input: {' '.join(ckpt.tgt_vocab.decode(fed))}")
    return lines


def cmd_generate(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    if (args.mr is None) == (args.data is None):
        raise ValueError("give exactly one of --mr or --data")
    if args.mr is not None:
        results = [generate_for_mr(ckpt, args.mr, args.repeat_input)]
    else:
        results = generate_for_groups(ckpt, group_by_mr(_load_prepared(args.data)), args.repeat_input)
    lines = []
    for text, trace in results:
        lines.append(text)
        if args.trace:
            lines.extend(_format_trace(ckpt, trace))
    out = "".join(line + "\n" for line in lines)
    if args.output:
        atomic_write(args.output, out)
    else:
        sys.stdout.write(out)
    return 0


def cmd_evaluate(args) -> int:
    groups = group_by_mr(_load_prepared(args.data))
    if args.hyp is not None:
        with open(args.hyp, encoding="utf-8") as fh:
            texts = [line.rstrip("\n") for line in fh]
        if texts and texts[-1] == "" and len(texts) == len(groups) + 1:
            texts.pop()
    elif args.ckpt is not None:
        texts = [text for text, _ in generate_for_groups(load_checkpoint(args.ckpt), groups)]
    else:
        raise ValueError("give --hyp or --ckpt")
    if len(texts) != len(groups):
        print(f"error: {len(texts)} hypotheses for {len(groups)} MR groups", file=sys.stderr)
        return 2
    if args.smoothing:
        report = evaluate([tokenize(t) for t in texts], reference_sets(groups), smoothing=True)
    else:
        report = evaluate_texts(texts, groups)
    sys.stdout.write(report.to_text())
    return 0


def cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    rows = parameter_table(ckpt.model)
    width = max(len(name) for name, _, _ in rows)
    print(f"# variant = {ckpt.config.model_variant}, cell = {ckpt.config.cell}, epoch = {ckpt.epoch}")
    for name, shape, size in rows:
        print(f"{name:<{width}}  {str(shape[0]) + 'x' + str(shape[1]):>10}  {size:>9}")
    print(f"total = {count_parameters(ckpt.model)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hielo", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="delexicalize, tag and layer an E2E csv")
    p.add_argument("--input", required=True)
    p.add_argument("--tags", help="token<TAB>tag file aligned with the csv rows")
    p.add_argument("--output", required=True)
    p.add_argument("--min-count", type=int, default=2)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared corpus")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--variant", choices=("baseline", "hier"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--p-inner", type=float)
    p.add_argument("--p-inter", type=float)
    p.add_argument("--tf-decay", type=float)
    p.add_argument("--curriculum", type=_on_off)
    p.add_argument("--repeat-input", type=_on_off)
    p.add_argument("--cell", choices=("gru", "basic-rnn"))
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--enc-hidden", type=int)
    p.add_argument("--dec-hidden", type=int)
    p.add_argument("--min-count", type=int)
    p.add_argument("--max-len", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="greedy generation from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mr")
    p.add_argument("--data")
    p.add_argument("--repeat-input", type=_on_off)
    p.add_argument("--trace", action="store_true")
    p.add_argument("--output")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="BLEU and ROUGE against the references in --data")
    p.add_argument("--data", required=True)
    p.add_argument("--hyp")
    p.add_argument("--ckpt")
    p.add_argument("--smoothing", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect", help="parameter table of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EXPECTED_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
