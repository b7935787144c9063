"""Walk one MR/reference pair through the corpus pipeline.

Shows delexicalization, the coarse POS tags and the four cumulative layer
targets the hierarchical decoder is trained on.
"""
from hielo import synth
from hielo.corpus import build_instance, parse_mr

MR = "name[The Eagle], eatType[coffee shop], food[Japanese], area[riverside], near[Burger King]"
REF = "The Eagle is a Japanese coffee shop near Burger King in the riverside area."

inst, dx = build_instance(parse_mr(MR), REF)
print("MR tokens :", " ".join(inst.mr_tokens))
print("delex map :", inst.delex_map)
print("tags      :", list(zip(inst.ref_tokens, inst.tags)))
for i, layer in enumerate(inst.layers, start=1):
    print(f"layer {i}   :", " ".join(layer))
print("containment holds:", inst.containment_ok())

# The synthetic generator produces rows of the same shape, with tags attached.
for mr, ref, _ in synth.toy_rows(n=3, seed=1):
    print()
    print(mr)
    print("  ", ref)
