"""Memorize a 16-pair toy corpus and print the layer-by-layer greedy decode.

Takes about a minute. Each layer re-emits the one below it and inserts
the words of its own POS class.
"""
from hielo import synth
from hielo.corpus import build_instance, group_by_mr, parse_mr
from hielo.pipeline import generate_for_groups, train_on
from hielo.training import TrainConfig

rows = synth.toy_rows()
instances = [build_instance(parse_mr(mr), ref, external_tags=[t for _, t in tagged])[0]
             for mr, ref, tagged in rows]

cfg = TrainConfig(embed_dim=64, enc_hidden=64, dec_hidden=64, lr=5e-3, batch_size=4,
                  epochs=300, min_count=1)


def progress(stats):
    if stats.epoch % 50 == 0 or stats.epoch == 1:
        print(stats.csv_line(), flush=True)


ckpt = train_on(instances, cfg, on_epoch=progress)

groups = group_by_mr(instances)
for (text, trace), group in list(zip(generate_for_groups(ckpt, groups), groups))[:4]:
    print()
    print(group[0].mr)
    for i, ids in enumerate(trace.per_layer_outputs, start=1):
        print(f"  L{i}:", " ".join(ckpt.tgt_vocab.decode(ids)))
    print("  out:", text)
    print("  ref:", group[0].reference)
