"""GRU / basic RNN cells with hand-derived backward passes and the BiGRU encoder."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numkernel import DimensionError, Parameter, StaleCacheError, sigmoid, tanh_


class GruCellParams:
    """Weights of one GRU cell: ``W_*`` are hidden x input, ``U_*`` hidden x hidden."""

    kind = "gru"

    def __init__(self, prefix: str, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        for gate in ("z", "r", "h"):
            setattr(self, f"W_{gate}", Parameter.uniform(f"{prefix}.W_{gate}", (hidden_dim, input_dim), rng))
            setattr(self, f"U_{gate}", Parameter.uniform(f"{prefix}.U_{gate}", (hidden_dim, hidden_dim), rng))
            setattr(self, f"b_{gate}", Parameter.uniform(f"{prefix}.b_{gate}", (hidden_dim, 1), rng))

    def parameters(self) -> list[Parameter]:
        return [getattr(self, f"{k}_{g}") for g in ("z", "r", "h") for k in ("W", "U", "b")]


class BasicRnnParams:
    """Elman cell ``h_t = tanh(W x + U h + b)``; kept for parameter-count comparisons."""

    kind = "basic-rnn"

    def __init__(self, prefix: str, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.W_h = Parameter.uniform(f"{prefix}.W_h", (hidden_dim, input_dim), rng)
        self.U_h = Parameter.uniform(f"{prefix}.U_h", (hidden_dim, hidden_dim), rng)
        self.b_h = Parameter.uniform(f"{prefix}.b_h", (hidden_dim, 1), rng)

    def parameters(self) -> list[Parameter]:
        return [self.W_h, self.U_h, self.b_h]


def make_cell(kind: str, prefix: str, input_dim: int, hidden_dim: int, rng: np.random.Generator):
    if kind == "gru":
        return GruCellParams(prefix, input_dim, hidden_dim, rng)
    if kind == "basic-rnn":
        return BasicRnnParams(prefix, input_dim, hidden_dim, rng)
    raise ValueError(f"unknown cell type {kind!r}")


def _check_shapes(p, x_t: np.ndarray, h_prev: np.ndarray) -> None:
    if x_t.ndim != 2 or x_t.shape[0] != p.input_dim:
        raise DimensionError(f"input has shape {x_t.shape}, cell expects ({p.input_dim}, B)")
    if h_prev.shape != (p.hidden_dim, x_t.shape[1]):
        raise DimensionError(
            f"state has shape {h_prev.shape}, cell expects ({p.hidden_dim}, {x_t.shape[1]})")


@dataclass
class CellCache:
    params: object
    versions: tuple
    x: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray | None = None
    r: np.ndarray | None = None
    rh: np.ndarray | None = None
    cand: np.ndarray | None = None

    def check(self) -> None:
        current = tuple(p.version for p in self.params.parameters())
        if current != self.versions:
            raise StaleCacheError("parameters changed since this forward pass")


def gru_cell_forward(p: GruCellParams, x_t: np.ndarray, h_prev: np.ndarray):
    _check_shapes(p, x_t, h_prev)
    z = sigmoid(p.W_z.value @ x_t + p.U_z.value @ h_prev + p.b_z.value)
    r = sigmoid(p.W_r.value @ x_t + p.U_r.value @ h_prev + p.b_r.value)
    rh = r * h_prev
    cand = tanh_(p.W_h.value @ x_t + p.U_h.value @ rh + p.b_h.value)
    h_t = h_prev + z * (cand - h_prev)
    versions = tuple(q.version for q in p.parameters())
    return h_t, CellCache(p, versions, x_t, h_prev, z, r, rh, cand)


def gru_cell_backward(cache: CellCache, dh_t: np.ndarray):
    """Return (dL/dx_t, dL/dh_prev); parameter gradients are accumulated in place."""
    cache.check()
    p: GruCellParams = cache.params
    x, h, z, r, rh, cand = cache.x, cache.h_prev, cache.z, cache.r, cache.rh, cache.cand

    da_h = dh_t * z * (1.0 - cand * cand)
    da_z = dh_t * (cand - h) * z * (1.0 - z)
    dh_prev = dh_t * (1.0 - z)

    drh = p.U_h.value.T @ da_h
    da_r = drh * h * r * (1.0 - r)
    dh_prev += drh * r
    dh_prev += p.U_z.value.T @ da_z
    dh_prev += p.U_r.value.T @ da_r

    p.W_h.grad += da_h @ x.T
    p.U_h.grad += da_h @ rh.T
    p.b_h.grad += da_h.sum(axis=1, keepdims=True)
    p.W_z.grad += da_z @ x.T
    p.U_z.grad += da_z @ h.T
    p.b_z.grad += da_z.sum(axis=1, keepdims=True)
    p.W_r.grad += da_r @ x.T
    p.U_r.grad += da_r @ h.T
    p.b_r.grad += da_r.sum(axis=1, keepdims=True)

    dx = p.W_z.value.T @ da_z + p.W_r.value.T @ da_r + p.W_h.value.T @ da_h
    return dx, dh_prev


def rnn_cell_forward(p: BasicRnnParams, x_t: np.ndarray, h_prev: np.ndarray):
    _check_shapes(p, x_t, h_prev)
    h_t = tanh_(p.W_h.value @ x_t + p.U_h.value @ h_prev + p.b_h.value)
    versions = tuple(q.version for q in p.parameters())
    return h_t, CellCache(p, versions, x_t, h_prev, cand=h_t)


def rnn_cell_backward(cache: CellCache, dh_t: np.ndarray):
    cache.check()
    p: BasicRnnParams = cache.params
    da = dh_t * (1.0 - cache.cand * cache.cand)
    p.W_h.grad += da @ cache.x.T
    p.U_h.grad += da @ cache.h_prev.T
    p.b_h.grad += da.sum(axis=1, keepdims=True)
    return p.W_h.value.T @ da, p.U_h.value.T @ da


def cell_forward(p, x_t, h_prev):
    if p.kind == "gru":
        return gru_cell_forward(p, x_t, h_prev)
    return rnn_cell_forward(p, x_t, h_prev)


def cell_backward(cache: CellCache, dh_t):
    if cache.params.kind == "gru":
        return gru_cell_backward(cache, dh_t)
    return rnn_cell_backward(cache, dh_t)


class Affine:
    """``y = W x + b`` with W of shape (out, in)."""

    def __init__(self, prefix: str, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.W = Parameter.uniform(f"{prefix}.W", (out_dim, in_dim), rng)
        self.b = Parameter.uniform(f"{prefix}.b", (out_dim, 1), rng)

    def parameters(self) -> list[Parameter]:
        return [self.W, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[0] != self.W.shape[1]:
            raise DimensionError(f"cannot project {x.shape} with weight {self.W.shape}")
        return self.W.value @ x + self.b.value

    def backward(self, x: np.ndarray, dy: np.ndarray) -> np.ndarray:
        self.W.grad += dy @ x.T
        self.b.grad += dy.sum(axis=1, keepdims=True)
        return self.W.value.T @ dy


def project_state(h_enc: np.ndarray, proj: Affine) -> np.ndarray:
    """Affine bridge from the encoder summary to the decoder hidden size."""
    return proj.forward(h_enc)


def embed_lookup(embed: Parameter, ids: np.ndarray) -> np.ndarray:
    """Columns of embeddings for token ids: shape (embed_dim, len(ids))."""
    return embed.value[ids].T


def embed_backward(embed: Parameter, ids: np.ndarray, d_cols: np.ndarray) -> None:
    np.add.at(embed.grad, ids, d_cols.T)


@dataclass
class EncoderOutput:
    h_enc: np.ndarray
    per_step_states: list = field(default_factory=list)


@dataclass
class _EncoderCache:
    ids: np.ndarray
    masks: list
    fwd_caches: list
    bwd_caches: list


class BiGruEncoder:
    """Embedding table plus forward and backward recurrent cells.

    The summary is the concatenation of the final forward and backward
    states, giving ``2 * hidden_dim`` rows.
    """

    def __init__(self, vocab_size: int, embed_dim: int, hidden_dim: int,
                 rng: np.random.Generator, cell: str = "gru"):
        self.embedding = Parameter.uniform("enc.embedding", (vocab_size, embed_dim), rng)
        self.fwd = make_cell(cell, "enc.fwd", embed_dim, hidden_dim, rng)
        self.bwd = make_cell(cell, "enc.bwd", embed_dim, hidden_dim, rng)
        self.hidden_dim = hidden_dim

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden_dim

    def parameters(self) -> list[Parameter]:
        return [self.embedding, *self.fwd.parameters(), *self.bwd.parameters()]

    def forward(self, ids: np.ndarray, lengths: np.ndarray):
        """Encode a padded batch ``ids`` of shape (B, T). Returns (h_enc, cache)."""
        B, T = ids.shape
        if B == 0 or np.any(lengths < 1):
            raise ValueError("cannot encode an empty sequence")
        H = self.hidden_dim
        masks = [(t < lengths).astype(np.float64)[None, :] for t in range(T)]
        h = np.zeros((H, B))
        fwd_caches = []
        for t in range(T):
            h_new, c = cell_forward(self.fwd, embed_lookup(self.embedding, ids[:, t]), h)
            fwd_caches.append(c)
            h = h + masks[t] * (h_new - h)
        h_f = h
        h = np.zeros((H, B))
        bwd_caches = [None] * T
        for t in reversed(range(T)):
            h_new, c = cell_forward(self.bwd, embed_lookup(self.embedding, ids[:, t]), h)
            bwd_caches[t] = c
            h = h + masks[t] * (h_new - h)
        h_enc = np.vstack([h_f, h])
        return h_enc, _EncoderCache(ids, masks, fwd_caches, bwd_caches)

    def backward(self, cache: _EncoderCache, dh_enc: np.ndarray) -> None:
        H = self.hidden_dim
        T = len(cache.masks)
        ids = cache.ids
        dh = dh_enc[:H].copy()
        for t in reversed(range(T)):
            m = cache.masks[t]
            dx, dh_prev = cell_backward(cache.fwd_caches[t], m * dh)
            embed_backward(self.embedding, ids[:, t], dx)
            dh = (1.0 - m) * dh + dh_prev
        dh = dh_enc[H:].copy()
        for t in range(T):
            m = cache.masks[t]
            dx, dh_prev = cell_backward(cache.bwd_caches[t], m * dh)
            embed_backward(self.embedding, ids[:, t], dx)
            dh = (1.0 - m) * dh + dh_prev


def encode_mr(fwd, bwd, embed: Parameter, seq) -> EncoderOutput:
    """Run a BiGRU over one token-id sequence from zero initial states."""
    seq = np.asarray(seq, dtype=np.int64)
    if seq.size == 0:
        raise ValueError("cannot encode an empty sequence")
    H = fwd.hidden_dim
    states = []
    h = np.zeros((H, 1))
    for tok in seq:
        h, _ = cell_forward(fwd, embed_lookup(embed, np.array([tok])), h)
        states.append(h)
    h_f = h
    h = np.zeros((H, 1))
    for tok in seq[::-1]:
        h, _ = cell_forward(bwd, embed_lookup(embed, np.array([tok])), h)
        states.append(h)
    return EncoderOutput(np.vstack([h_f, h]), states)
