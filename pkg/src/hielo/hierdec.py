"""Hierarchical decoder stack, flat baseline decoder, and the full encoder-decoder models.

A decoding layer ``i`` is a recurrent cell whose input at every step is the
embedding of its previous token concatenated with the embedding of a token
taken from the layer below (the reserved NONE token for layer 1). All layers
share one target embedding table and start from the same projected encoder
summary.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import BOS_ID, EOS_ID, NONE_ID, PAD_ID
from .numkernel import Parameter, cross_entropy_columns, log_mean_exp_columns, softmax_columns
from .recurrent import (Affine, BiGruEncoder, cell_backward, cell_forward, embed_backward,
                        make_cell, project_state)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    index: int
    pos_set: frozenset


DEFAULT_LAYER_SPECS = (
    LayerSpec(1, frozenset({"NOUNLIKE"})),
    LayerSpec(2, frozenset({"VERB"})),
    LayerSpec(3, frozenset({"ADJ_ADV"})),
    LayerSpec(4, frozenset({"OTHER"})),
)


@dataclass
class TeacherForcingConfig:
    p_inner: float = 0.5
    p_inter: float = 0.5
    decay: float = 0.9

    def __post_init__(self):
        for name in ("p_inner", "p_inter"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")

    def decayed(self, times: int = 1) -> "TeacherForcingConfig":
        f = self.decay ** times
        return TeacherForcingConfig(min(1.0, self.p_inner * f), min(1.0, self.p_inter * f), self.decay)


@dataclass
class ModelDims:
    mr_vocab: int
    tgt_vocab: int
    embed_dim: int = 100
    enc_hidden: int = 100
    dec_hidden: int = 100
    n_layers: int = 4
    cell: str = "gru"


@dataclass
class DecodeTrace:
    """Greedy output for one MR.

    ``emitted[i]`` holds every token layer ``i+1`` produced, including a final
    EOS unless the length cap was hit; ``pointer_history[i]`` holds the
    inter-layer token fed at each of those steps.
    """
    emitted: list = field(default_factory=list)
    pointer_history: list = field(default_factory=list)
    cap_hit: list = field(default_factory=list)

    @property
    def per_layer_outputs(self) -> list:
        return [[t for t in seq if t != EOS_ID] for seq in self.emitted]

    @property
    def lengths(self) -> list:
        return [len(seq) for seq in self.emitted]

    @property
    def output(self) -> list:
        return self.per_layer_outputs[-1]


def repeat_input_advance(pointer: int, lower, emitted: int) -> tuple[int, int]:
    """Advance the pointer into ``lower`` once the current layer emits the pointed token."""
    if pointer < len(lower) and emitted == lower[pointer]:
        pointer += 1
    nxt = lower[pointer] if pointer < len(lower) else EOS_ID
    return pointer, nxt


class DecoderLayer:
    def __init__(self, spec: LayerSpec, embed_dim: int, hidden: int, vocab: int,
                 rng: np.random.Generator, cell: str = "gru"):
        self.spec = spec
        prefix = f"dec.layer{spec.index}"
        self.cell = make_cell(cell, f"{prefix}.cell", 2 * embed_dim, hidden, rng)
        self.out = Affine(f"{prefix}.out", hidden, vocab, rng)

    def parameters(self) -> list[Parameter]:
        return [*self.cell.parameters(), *self.out.parameters()]


class DecoderStack:
    def __init__(self, vocab: int, embed_dim: int, hidden: int, summary_dim: int,
                 rng: np.random.Generator, layer_specs=DEFAULT_LAYER_SPECS, cell: str = "gru"):
        if len(layer_specs) < 1:
            raise ConfigError("a decoder stack needs at least one layer")
        self.embedding = Parameter.uniform("dec.embedding", (vocab, embed_dim), rng)
        self.state_projection = Affine("dec.state_projection", summary_dim, hidden, rng)
        self.layers = [DecoderLayer(s, embed_dim, hidden, vocab, rng, cell) for s in layer_specs]
        self.embed_dim = embed_dim

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def parameters(self) -> list[Parameter]:
        out = [self.embedding, *self.state_projection.parameters()]
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def layer(self, i: int) -> DecoderLayer:
        if not 1 <= i <= len(self.layers):
            raise ConfigError(f"layer index {i} out of range 1..{len(self.layers)}")
        return self.layers[i - 1]


class BaselineDecoder:
    """Single recurrent decoder fed only its previous token."""

    def __init__(self, vocab: int, embed_dim: int, hidden: int, summary_dim: int,
                 rng: np.random.Generator, cell: str = "gru"):
        self.embedding = Parameter.uniform("dec.embedding", (vocab, embed_dim), rng)
        self.state_projection = Affine("dec.state_projection", summary_dim, hidden, rng)
        self.cell = make_cell(cell, "dec.cell", embed_dim, hidden, rng)
        self.out = Affine("dec.out", hidden, vocab, rng)

    def parameters(self) -> list[Parameter]:
        return [self.embedding, *self.state_projection.parameters(),
                *self.cell.parameters(), *self.out.parameters()]


def _pad(seqs, fill: int, width: int | None = None) -> np.ndarray:
    width = max((len(s) for s in seqs), default=0) if width is None else width
    arr = np.full((len(seqs), width), fill, dtype=np.int64)
    for b, s in enumerate(seqs):
        arr[b, :len(s)] = s
    return arr


class _InterStreams:
    """Chooses, per example and step, the inter-layer token from the gold or decoded lower stream."""

    def __init__(self, lower_gold, lower_decoded, p_inter: float, repeat_input: bool, rng):
        B = len(lower_gold)
        if lower_decoded is None:
            lower_decoded = lower_gold
        self.gold_len = np.array([len(s) for s in lower_gold], dtype=np.int64)
        self.dec_len = np.array([len(s) for s in lower_decoded], dtype=np.int64)
        self.gold = _pad(lower_gold, EOS_ID, int(self.gold_len.max(initial=0)) + 1)
        self.dec = _pad(lower_decoded, EOS_ID, int(self.dec_len.max(initial=0)) + 1)
        self.ptr_gold = np.zeros(B, dtype=np.int64)
        self.ptr_dec = np.zeros(B, dtype=np.int64)
        self.p_inter = p_inter
        self.repeat_input = repeat_input
        self.rng = rng
        self.rows = np.arange(B)

    def current(self, t: int) -> np.ndarray:
        use_gold = self.rng.random(len(self.rows)) < self.p_inter
        if self.repeat_input:
            g = self.gold[self.rows, self.ptr_gold]
            d = self.dec[self.rows, self.ptr_dec]
        else:
            g = self.gold[:, min(t, self.gold.shape[1] - 1)]
            d = self.dec[:, min(t, self.dec.shape[1] - 1)]
        return np.where(use_gold, g, d)

    def advance(self, emitted: np.ndarray, gold_emitted: np.ndarray) -> None:
        """Gold pointers follow the gold tokens of this layer, decoded pointers the fed tokens."""
        if not self.repeat_input:
            return
        hit = (self.ptr_gold < self.gold_len) & (self.gold[self.rows, self.ptr_gold] == gold_emitted)
        self.ptr_gold += hit
        hit = (self.ptr_dec < self.dec_len) & (self.dec[self.rows, self.ptr_dec] == emitted)
        self.ptr_dec += hit


@dataclass
class LayerRun:
    """Everything a teacher-forced layer pass produced, including backward caches."""
    loss: float
    n_tokens: int
    logits: list
    prev_inputs: np.ndarray
    inter_inputs: np.ndarray | None
    predictions: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    caches: list
    hiddens: list
    dlogits: list

    def excess_loss(self) -> float:
        """The loss minus its constant ``log V`` part, from the stored logits.

        Equal to ``loss - log(V)`` up to rounding but computed without the
        large constant, so finite differences of it resolve much smaller
        gradients.
        """
        total = 0.0
        for t, logits in enumerate(self.logits):
            cols = np.arange(logits.shape[1])
            per = log_mean_exp_columns(logits) - logits[self.targets[:, t], cols]
            total += float((per * self.mask[:, t]).sum())
        return total / max(self.n_tokens, 1)

    @property
    def decoded(self) -> list:
        """Per-example argmax stream, cut at the first EOS and at the gold length."""
        out = []
        for b in range(self.predictions.shape[0]):
            seq = self.predictions[b, :int(self.mask[b].sum())].tolist()
            if EOS_ID in seq:
                seq = seq[:seq.index(EOS_ID)]
            out.append(seq)
        return out


def _teacher_forced_run(cell, out: Affine, embedding: Parameter, h0: np.ndarray, gold,
                        p_inner: float, rng, inter: _InterStreams | None,
                        first_layer: bool) -> LayerRun:
    B = len(gold)
    lengths = np.array([len(g) for g in gold], dtype=np.int64)
    T = int(lengths.max(initial=0))
    targets = _pad(gold, PAD_ID, T)
    mask = (np.arange(T)[None, :] < lengths[:, None]).astype(np.float64)
    n_tok = int(lengths.sum())
    prev_inputs = np.zeros((B, T), dtype=np.int64)
    inter_inputs = np.zeros((B, T), dtype=np.int64) if (inter is not None or first_layer) else None
    preds = np.zeros((B, T), dtype=np.int64)
    logits_all, caches, hiddens, dlogits = [], [], [], []
    total = 0.0
    h = h0
    prev = np.full(B, BOS_ID, dtype=np.int64)
    for t in range(T):
        prev_inputs[:, t] = prev
        x = embedding.value[prev].T
        if first_layer:
            inter_tok = np.full(B, NONE_ID, dtype=np.int64)
        elif inter is not None:
            inter_tok = inter.current(t)
        else:
            inter_tok = None
        if inter_tok is not None:
            inter_inputs[:, t] = inter_tok
            x = np.vstack([x, embedding.value[inter_tok].T])
        h, cache = cell_forward(cell, x, h)
        logits = out.forward(h)
        probs = softmax_columns(logits)
        w = mask[:, t] / max(n_tok, 1)
        loss_t, dlog = cross_entropy_columns(probs, targets[:, t], w)
        total += loss_t
        y = logits.argmax(axis=0)
        preds[:, t] = y
        logits_all.append(logits)
        caches.append(cache)
        hiddens.append(h)
        dlogits.append(dlog)
        forced = rng.random(B) < p_inner
        prev = np.where(forced, targets[:, t], y)
        if inter is not None:
            inter.advance(prev, targets[:, t])
    return LayerRun(total, n_tok, logits_all, prev_inputs, inter_inputs, preds, targets, mask,
                    caches, hiddens, dlogits)


def _teacher_forced_backward(run: LayerRun, out: Affine, embedding: Parameter) -> np.ndarray:
    T = len(run.caches)
    E = embedding.shape[1]
    if T == 0:
        return 0.0
    D = np.concatenate(run.dlogits, axis=1)
    Hs = np.concatenate(run.hiddens, axis=1)
    out.W.grad += D @ Hs.T
    out.b.grad += D.sum(axis=1, keepdims=True)
    dH = out.W.value.T @ D
    B = run.targets.shape[0]
    dh = np.zeros_like(run.hiddens[0])
    dprev = np.empty((E, B * T))
    dinter = np.empty((E, B * T)) if run.inter_inputs is not None else None
    for t in reversed(range(T)):
        dh = dh + dH[:, t * B:(t + 1) * B]
        dx, dh = cell_backward(run.caches[t], dh)
        dprev[:, t * B:(t + 1) * B] = dx[:E]
        if dinter is not None:
            dinter[:, t * B:(t + 1) * B] = dx[E:]
    embed_backward(embedding, run.prev_inputs.T.reshape(-1), dprev)
    if dinter is not None:
        embed_backward(embedding, run.inter_inputs.T.reshape(-1), dinter)
    return dh


def decode_layer_train(stack: DecoderStack, layer_i: int, h_init: np.ndarray, gold_this_layer,
                       lower_gold=None, lower_decoded=None,
                       tf: TeacherForcingConfig | None = None, rng=None,
                       repeat_input: bool = True) -> LayerRun:
    """Teacher-forced pass of one layer over a batch.

    ``gold_this_layer`` holds one EOS-terminated id list per column of
    ``h_init``; empty lists are skipped. ``lower_gold``/``lower_decoded`` are
    the lower layer's gold and decoded token streams (no EOS), ignored for
    layer 1. The loss is the mean per-token cross entropy.
    """
    layer = stack.layer(layer_i)
    tf = tf or TeacherForcingConfig(1.0, 1.0)
    rng = rng if rng is not None else np.random.default_rng(0)
    inter = None
    if layer_i > 1:
        if lower_gold is None:
            raise ConfigError(f"layer {layer_i} needs the lower layer's gold stream")
        inter = _InterStreams(lower_gold, lower_decoded, tf.p_inter, repeat_input, rng)
    return _teacher_forced_run(layer.cell, layer.out, stack.embedding, h_init, gold_this_layer,
                               tf.p_inner, rng, inter, first_layer=layer_i == 1)


def _check_active(active_layers, n_layers: int) -> list:
    active = sorted(set(active_layers))
    if not active or active != list(range(1, len(active) + 1)) or active[-1] > n_layers:
        raise ConfigError(f"active layers must be a nonempty contiguous range from 1, got {active}")
    return active


@dataclass
class StackLoss:
    total: float
    per_layer: dict
    runs: dict
    dh_enc: np.ndarray | None = None

    def excess(self) -> float:
        """``total`` minus ``log V`` per active layer; same gradient, less rounding."""
        return sum(run.excess_loss() for run in self.runs.values())


def stack_loss(stack: DecoderStack, h_enc: np.ndarray, layered_gold, tf: TeacherForcingConfig,
               active_layers, rng, repeat_input: bool = True, backward: bool = False) -> StackLoss:
    """Sum of per-layer mean token losses over the active layers.

    ``layered_gold[i]`` holds the layer-(i+1) targets of every example as id
    lists without EOS. With ``backward`` set, gradients are accumulated and
    the gradient with respect to ``h_enc`` is returned in the result.
    """
    active = _check_active(active_layers, stack.n_layers)
    h0 = project_state(h_enc, stack.state_projection)
    runs, per_layer = {}, {}
    lower_decoded = None
    for i in active:
        gold = [list(seq) + [EOS_ID] for seq in layered_gold[i - 1]]
        lower_gold = layered_gold[i - 2] if i > 1 else None
        run = decode_layer_train(stack, i, h0, gold, lower_gold, lower_decoded, tf, rng, repeat_input)
        lower_decoded = run.decoded
        runs[i] = run
        per_layer[i] = run.loss
    result = StackLoss(sum(per_layer.values()), per_layer, runs)
    if backward:
        dh0 = np.zeros_like(h0)
        for i in reversed(active):
            layer = stack.layer(i)
            dh0 += _teacher_forced_backward(runs[i], layer.out, stack.embedding)
        result.dh_enc = stack.state_projection.backward(h_enc, dh0)
    return result


def baseline_loss(dec: BaselineDecoder, h_enc: np.ndarray, gold, tf: TeacherForcingConfig, rng,
                  backward: bool = False) -> StackLoss:
    """Flat decoder loss; ``gold`` holds full target id lists without EOS."""
    h0 = project_state(h_enc, dec.state_projection)
    run = _teacher_forced_run(dec.cell, dec.out, dec.embedding, h0,
                              [list(g) + [EOS_ID] for g in gold], tf.p_inner, rng, None,
                              first_layer=False)
    result = StackLoss(run.loss, {1: run.loss}, {1: run})
    if backward:
        dh0 = _teacher_forced_backward(run, dec.out, dec.embedding)
        result.dh_enc = dec.state_projection.backward(h_enc, dh0)
    return result


def _greedy_layer(cell, out: Affine, embedding: Parameter, h0: np.ndarray, max_len: int,
                  lower=None, first_layer: bool = False, repeat_input: bool = True):
    B = h0.shape[1]
    rows = np.arange(B)
    emitted = [[] for _ in range(B)]
    history = [[] for _ in range(B)]
    done = np.zeros(B, dtype=bool)
    prev = np.full(B, BOS_ID, dtype=np.int64)
    if lower is not None:
        low_len = np.array([len(s) for s in lower], dtype=np.int64)
        low = _pad(lower, EOS_ID, int(low_len.max(initial=0)) + 1)
        ptr = np.zeros(B, dtype=np.int64)
    h = h0
    for t in range(max_len):
        x = embedding.value[prev].T
        inter_tok = None
        if first_layer:
            inter_tok = np.full(B, NONE_ID, dtype=np.int64)
        elif lower is not None:
            inter_tok = low[rows, ptr] if repeat_input else low[:, min(t, low.shape[1] - 1)]
        if inter_tok is not None:
            x = np.vstack([x, embedding.value[inter_tok].T])
        h, _ = cell_forward(cell, x, h)
        logits = out.forward(h)
        if lower is not None and repeat_input:
            # the layer may not stop before it has reproduced the whole lower output
            logits[EOS_ID, ptr < low_len] = -np.inf
        y = logits.argmax(axis=0)
        for b in np.flatnonzero(~done):
            emitted[b].append(int(y[b]))
            history[b].append(int(inter_tok[b]) if inter_tok is not None else NONE_ID)
        if lower is not None and repeat_input:
            ptr += (ptr < low_len) & (low[rows, ptr] == y)
        done |= y == EOS_ID
        prev = y
        if done.all():
            break
    return emitted, history, (~done).tolist()


def decode_stack_greedy(stack: DecoderStack, h_enc: np.ndarray, max_len: int = 60,
                        repeat_input: bool = True) -> list[DecodeTrace]:
    """Greedy layer-by-layer decoding; one trace per column of ``h_enc``."""
    if max_len < 1:
        raise ConfigError("max_len must be at least 1")
    h0 = project_state(h_enc, stack.state_projection)
    B = h0.shape[1]
    traces = [DecodeTrace() for _ in range(B)]
    lower = None
    for i, layer in enumerate(stack.layers, start=1):
        emitted, history, cap = _greedy_layer(layer.cell, layer.out, stack.embedding, h0, max_len,
                                              lower, first_layer=i == 1, repeat_input=repeat_input)
        for b in range(B):
            traces[b].emitted.append(emitted[b])
            traces[b].pointer_history.append(history[b])
            traces[b].cap_hit.append(cap[b])
        lower = [[t for t in seq if t != EOS_ID] for seq in emitted]
    return traces


def decode_baseline(dec: BaselineDecoder, h_enc: np.ndarray, max_len: int = 60) -> list[DecodeTrace]:
    h0 = project_state(h_enc, dec.state_projection)
    emitted, history, cap = _greedy_layer(dec.cell, dec.out, dec.embedding, h0, max_len)
    return [DecodeTrace([emitted[b]], [history[b]], [cap[b]]) for b in range(h0.shape[1])]


@dataclass
class Batch:
    """Padded MR ids plus per-layer target id lists (no EOS)."""
    mr_ids: np.ndarray
    mr_lengths: np.ndarray
    layers: list

    @property
    def size(self) -> int:
        return self.mr_ids.shape[0]

    @classmethod
    def from_ids(cls, mr_seqs, layer_seqs=None) -> "Batch":
        lengths = np.array([len(s) for s in mr_seqs], dtype=np.int64)
        layers = [list(col) for col in zip(*layer_seqs)] if layer_seqs else []
        return cls(_pad(mr_seqs, PAD_ID), lengths, layers)


class HierarchicalModel:
    variant = "hier"

    def __init__(self, dims: ModelDims, rng: np.random.Generator):
        self.dims = dims
        self.encoder = BiGruEncoder(dims.mr_vocab, dims.embed_dim, dims.enc_hidden, rng, dims.cell)
        specs = DEFAULT_LAYER_SPECS if dims.n_layers == 4 else tuple(
            LayerSpec(i, frozenset({f"L{i}"})) for i in range(1, dims.n_layers + 1))
        self.decoder = DecoderStack(dims.tgt_vocab, dims.embed_dim, dims.dec_hidden,
                                    self.encoder.output_dim, rng, specs, dims.cell)

    @property
    def n_layers(self) -> int:
        return self.decoder.n_layers

    def parameters(self) -> list[Parameter]:
        return [*self.encoder.parameters(), *self.decoder.parameters()]

    def loss(self, batch: Batch, tf: TeacherForcingConfig, rng, active_layers=None,
             repeat_input: bool = True, backward: bool = True) -> StackLoss:
        active = active_layers or range(1, self.n_layers + 1)
        h_enc, cache = self.encoder.forward(batch.mr_ids, batch.mr_lengths)
        res = stack_loss(self.decoder, h_enc, batch.layers, tf, active, rng, repeat_input, backward)
        if backward:
            self.encoder.backward(cache, res.dh_enc)
        return res

    def generate(self, batch: Batch, max_len: int = 60, repeat_input: bool = True) -> list[DecodeTrace]:
        h_enc, _ = self.encoder.forward(batch.mr_ids, batch.mr_lengths)
        return decode_stack_greedy(self.decoder, h_enc, max_len, repeat_input)


class BaselineModel:
    variant = "baseline"
    n_layers = 1

    def __init__(self, dims: ModelDims, rng: np.random.Generator):
        self.dims = dims
        self.encoder = BiGruEncoder(dims.mr_vocab, dims.embed_dim, dims.enc_hidden, rng, dims.cell)
        self.decoder = BaselineDecoder(dims.tgt_vocab, dims.embed_dim, dims.dec_hidden,
                                       self.encoder.output_dim, rng, dims.cell)

    def parameters(self) -> list[Parameter]:
        return [*self.encoder.parameters(), *self.decoder.parameters()]

    def loss(self, batch: Batch, tf: TeacherForcingConfig, rng, active_layers=None,
             repeat_input: bool = True, backward: bool = True) -> StackLoss:
        h_enc, cache = self.encoder.forward(batch.mr_ids, batch.mr_lengths)
        res = baseline_loss(self.decoder, h_enc, batch.layers[-1], tf, rng, backward)
        if backward:
            self.encoder.backward(cache, res.dh_enc)
        return res

    def generate(self, batch: Batch, max_len: int = 60, repeat_input: bool = True) -> list[DecodeTrace]:
        h_enc, _ = self.encoder.forward(batch.mr_ids, batch.mr_lengths)
        return decode_baseline(self.decoder, h_enc, max_len)


def build_model(variant: str, dims: ModelDims, seed: int):
    rng = np.random.default_rng(seed)
    if variant in ("hier", "hierarchical"):
        return HierarchicalModel(dims, rng)
    if variant == "baseline":
        return BaselineModel(dims, rng)
    raise ConfigError(f"unknown model variant {variant!r}")
