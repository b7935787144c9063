"""Minibatch Adam training with scheduled-sampling decay and layer curriculum; checkpoints."""
from __future__ import annotations

import configparser
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .corpus import Vocabulary, atomic_write
from .hierdec import Batch, ConfigError, ModelDims, TeacherForcingConfig, build_model
from .numkernel import adam_step

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "HIELO-CKPT"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 20
    p_inner0: float = 0.5
    p_inter0: float = 0.5
    tf_decay: float = 0.9
    curriculum_stride: int = 5
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    model_variant: str = "hier"
    repeat_input: bool = True
    curriculum: bool = True
    embed_dim: int = 100
    enc_hidden: int = 100
    dec_hidden: int = 0  # 0 -> 100 per layer (hier) or 400 (baseline)
    n_layers: int = 4
    cell: str = "gru"
    min_count: int = 2
    max_len: int = 60

    def __post_init__(self):
        if self.model_variant == "hierarchical":
            self.model_variant = "hier"
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        for name in ("p_inner0", "p_inter0"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.model_variant not in ("hier", "baseline"):
            raise ConfigError(f"unknown model_variant {self.model_variant!r}")
        if self.curriculum_stride < 1:
            raise ConfigError("curriculum_stride must be >= 1")
        if not self.dec_hidden:
            self.dec_hidden = 100 if self.model_variant == "hier" else 400

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        """Parse flat ``key = value`` lines; keyword overrides win over file values."""
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read_string("[train]\n" + text)
        raw = dict(parser["train"])
        known = {f.name: f for f in fields(cls)}
        unknown = set(raw) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values = {k: _coerce(known[k].type, v) for k, v in raw.items()}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), **overrides)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    def dims(self, mr_vocab: int, tgt_vocab: int) -> ModelDims:
        return ModelDims(mr_vocab, tgt_vocab, self.embed_dim, self.enc_hidden, self.dec_hidden,
                         self.n_layers if self.model_variant == "hier" else 1, self.cell)


def _coerce(type_name, raw: str):
    t = type_name if isinstance(type_name, str) else type_name.__name__
    if t == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if t == "int":
        return int(raw)
    if t == "float":
        return float(raw)
    return raw.strip()


def schedule_tf_prob(p0: float, decay: float, epoch: int) -> float:
    if epoch < 1:
        raise ConfigError("epochs are numbered from 1")
    return p0 * decay ** (epoch - 1)


def curriculum_active_layers(epoch: int, stride: int, n_layers: int, enabled: bool = True) -> list[int]:
    if epoch < 1:
        raise ConfigError("epochs are numbered from 1")
    if not enabled:
        return list(range(1, n_layers + 1))
    return list(range(1, min(n_layers, math.ceil(epoch / stride)) + 1))


@dataclass
class EncodedInstance:
    mr_ids: list
    layers: list


def encode_instances(instances, mr_vocab: Vocabulary, tgt_vocab: Vocabulary) -> list[EncodedInstance]:
    return [EncodedInstance(mr_vocab.encode(inst.mr_tokens),
                            [tgt_vocab.encode(layer) for layer in inst.layers])
            for inst in instances]


def make_batch(items) -> Batch:
    return Batch.from_ids([it.mr_ids for it in items], [it.layers for it in items])


@dataclass
class EpochStats:
    epoch: int
    active_layers: list
    p_inner: float
    p_inter: float
    layer_loss: dict
    token_loss: float
    objective: float
    tokens_per_sec: float

    def csv_line(self) -> str:
        active = "-".join(str(i) for i in (self.active_layers[0], self.active_layers[-1])) \
            if len(self.active_layers) > 1 else str(self.active_layers[0])
        return f"{self.epoch},{active},{self.p_inner:.6f},{self.p_inter:.6f},{self.token_loss:.6f}"


STATS_HEADER = "epoch,active_layers,p_inner,p_inter,loss"


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def run_epoch(model, data, cfg: TrainConfig, epoch: int, rng: np.random.Generator | None = None) -> EpochStats:
    """One pass over ``data`` (EncodedInstance list) with Adam updates after every minibatch."""
    if not data:
        raise TrainingError("no training data")
    rng = rng if rng is not None else epoch_rng(cfg.seed, epoch)
    order = rng.permutation(len(data))
    tf = TeacherForcingConfig(schedule_tf_prob(cfg.p_inner0, cfg.tf_decay, epoch),
                              schedule_tf_prob(cfg.p_inter0, cfg.tf_decay, epoch), cfg.tf_decay)
    active = curriculum_active_layers(epoch, cfg.curriculum_stride, model.n_layers, cfg.curriculum)
    params = model.parameters()
    layer_ce: dict[int, float] = {i: 0.0 for i in active}
    layer_tok: dict[int, int] = {i: 0 for i in active}
    t0 = time.perf_counter()
    for k, start in enumerate(range(0, len(data), cfg.batch_size)):
        batch = make_batch([data[j] for j in order[start:start + cfg.batch_size]])
        res = model.loss(batch, tf, rng, active, cfg.repeat_input, backward=True)
        if not math.isfinite(res.total):
            for p in params:
                p.zero_grad()
            raise TrainingError(f"non-finite loss {res.total} in epoch {epoch}, batch {k}")
        for p in params:
            if p.grad.any():
                adam_step(p, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        for i, run in res.runs.items():
            layer_ce[i] += run.loss * run.n_tokens
            layer_tok[i] += run.n_tokens
    elapsed = time.perf_counter() - t0
    total_tok = sum(layer_tok.values())
    layer_loss = {i: layer_ce[i] / max(layer_tok[i], 1) for i in active}
    return EpochStats(epoch, active, tf.p_inner, tf.p_inter, layer_loss,
                      sum(layer_ce.values()) / max(total_tok, 1), sum(layer_loss.values()),
                      total_tok / max(elapsed, 1e-9))


@dataclass
class Checkpoint:
    model: object
    config: TrainConfig
    mr_vocab: Vocabulary
    tgt_vocab: Vocabulary
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


def new_checkpoint(cfg: TrainConfig, mr_vocab: Vocabulary, tgt_vocab: Vocabulary) -> Checkpoint:
    model = build_model(cfg.model_variant, cfg.dims(len(mr_vocab), len(tgt_vocab)), cfg.seed)
    return Checkpoint(model, cfg, mr_vocab, tgt_vocab)


def train(ckpt: Checkpoint, data, epochs: int | None = None, on_epoch=None) -> Checkpoint:
    """Continue training ``ckpt`` for ``epochs`` more epochs (default: up to cfg.epochs)."""
    cfg = ckpt.config
    last = cfg.epochs if epochs is None else ckpt.epoch + epochs
    for epoch in range(ckpt.epoch + 1, last + 1):
        rng = epoch_rng(cfg.seed, epoch)
        stats = run_epoch(ckpt.model, data, cfg, epoch, rng)
        ckpt.epoch = epoch
        ckpt.rng_state = rng.bit_generator.state
        ckpt.history.append(stats)
        log.info("epoch %d loss %.4f", epoch, stats.token_loss)
        if on_epoch is not None:
            on_epoch(stats)
    return ckpt


def count_parameters(model) -> int:
    return sum(p.size for p in model.parameters())


def parameter_table(model) -> list[tuple[str, tuple, int]]:
    return [(p.name, p.shape, p.size) for p in model.parameters()]


def _header(ckpt: Checkpoint) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "config": asdict(ckpt.config),
        "epoch": ckpt.epoch,
        "mr_vocab": ckpt.mr_vocab.itos,
        "tgt_vocab": ckpt.tgt_vocab.itos,
        "rng_state": ckpt.rng_state,
        "tensors": [{"name": p.name, "shape": list(p.shape), "step_count": p.step_count}
                    for p in ckpt.model.parameters()],
    }


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    head = json.dumps(_header(ckpt), ensure_ascii=False, sort_keys=True)
    blobs = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n".encode(), head.encode("utf-8"), b"\n"]
    for p in ckpt.model.parameters():
        for arr in (p.value, p.m, p.v):
            blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(blobs)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write(path, checkpoint_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        magic_end = data.index(b"\n")
        magic, version = data[:magic_end].decode().split(" ")
        head_end = data.index(b"\n", magic_end + 1)
        head = json.loads(data[magic_end + 1:head_end].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as err:
        raise CheckpointError(f"{path}: not a checkpoint ({err})") from err
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint")
    if int(version) != CHECKPOINT_VERSION or head.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version} is incompatible with "
                              f"version {CHECKPOINT_VERSION}")
    cfg = TrainConfig(**head["config"])
    ckpt = new_checkpoint(cfg, Vocabulary(head["mr_vocab"]), Vocabulary(head["tgt_vocab"]))
    params = ckpt.model.parameters()
    if len(params) != len(head["tensors"]):
        raise CheckpointError(f"{path}: {len(head['tensors'])} tensors, model expects {len(params)}")
    offset = head_end + 1
    for p, meta in zip(params, head["tensors"]):
        if meta["name"] != p.name or tuple(meta["shape"]) != p.shape:
            raise CheckpointError(f"{path}: tensor {meta['name']} {tuple(meta['shape'])} does not "
                                  f"match model tensor {p.name} {p.shape}")
        nbytes = p.size * 8
        for arr in (p.value, p.m, p.v):
            chunk = data[offset:offset + nbytes]
            if len(chunk) != nbytes:
                raise CheckpointError(f"{path}: truncated tensor data for {p.name}")
            arr[...] = np.frombuffer(chunk, dtype="<f8").reshape(p.shape)
            offset += nbytes
        p.step_count = int(meta["step_count"])
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    ckpt.epoch = int(head["epoch"])
    ckpt.rng_state = head["rng_state"]
    return ckpt
