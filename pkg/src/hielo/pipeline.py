"""End-to-end helpers: train on prepared instances, generate text, score against references."""
from __future__ import annotations

from .corpus import (EOS_ID, LayeredInstance, build_vocab, delexicalize, group_by_mr, parse_mr,
                     relexicalize, tokenize)
from .hierdec import Batch
from .metrics import EvalReport, evaluate
from .training import Checkpoint, TrainConfig, encode_instances, new_checkpoint, train


def train_on(instances, cfg: TrainConfig, on_epoch=None) -> Checkpoint:
    mr_vocab, tgt_vocab = build_vocab(instances, cfg.min_count)
    ckpt = new_checkpoint(cfg, mr_vocab, tgt_vocab)
    data = encode_instances(instances, mr_vocab, tgt_vocab)
    return train(ckpt, data, on_epoch=on_epoch)


def decode(ckpt: Checkpoint, mr_token_lists, batch_size: int = 64, repeat_input: bool | None = None):
    """Greedy traces for delexicalized MR token lists."""
    cfg = ckpt.config
    repeat = cfg.repeat_input if repeat_input is None else repeat_input
    traces = []
    for start in range(0, len(mr_token_lists), batch_size):
        chunk = mr_token_lists[start:start + batch_size]
        batch = Batch.from_ids([ckpt.mr_vocab.encode(toks) or [EOS_ID] for toks in chunk])
        traces.extend(ckpt.model.generate(batch, cfg.max_len, repeat))
    return traces


def surface_text(ckpt: Checkpoint, ids, delex_map: dict) -> str:
    return relexicalize(ckpt.tgt_vocab.decode(ids), delex_map)


def generate_for_mr(ckpt: Checkpoint, raw_mr: str, repeat_input: bool | None = None):
    """(text, trace) for one raw ``slot[value], ...`` string."""
    dx = delexicalize(parse_mr(raw_mr))
    trace = decode(ckpt, [dx.mr_tokens], repeat_input=repeat_input)[0]
    return surface_text(ckpt, trace.output, dx.delex_map), trace


def generate_for_groups(ckpt: Checkpoint, groups, repeat_input: bool | None = None):
    """One (text, trace) per MR group, in group order."""
    heads = [g[0] for g in groups]
    traces = decode(ckpt, [h.mr_tokens for h in heads], repeat_input=repeat_input)
    return [(surface_text(ckpt, t.output, h.delex_map), t) for h, t in zip(heads, traces)]


def reference_sets(groups) -> list[list[list[str]]]:
    return [[tokenize(inst.reference) for inst in g] for g in groups]


def evaluate_texts(texts, groups) -> EvalReport:
    if len(texts) != len(groups):
        raise ValueError(f"{len(texts)} hypotheses for {len(groups)} MR groups")
    return evaluate([tokenize(t) for t in texts], reference_sets(groups))


def evaluate_checkpoint(ckpt: Checkpoint, instances: list[LayeredInstance],
                        repeat_input: bool | None = None) -> EvalReport:
    groups = group_by_mr(instances)
    texts = [text for text, _ in generate_for_groups(ckpt, groups, repeat_input)]
    return evaluate_texts(texts, groups)
