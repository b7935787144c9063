"""E2E-style corpus ingestion: MR parsing, delexicalization, coarse POS tags, layer targets."""
from __future__ import annotations

import csv
import json
import logging
import os
import re
import string
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

log = logging.getLogger(__name__)

PAD, EOS, UNK, NONE, BOS = "<pad>", "<eos>", "<unk>", "<none>", "<bos>"
RESERVED = (PAD, EOS, UNK, NONE, BOS)
PAD_ID, EOS_ID, UNK_ID, NONE_ID, BOS_ID = range(5)

SLOT_INVENTORY = ("name", "eatType", "food", "priceRange", "customerRating", "area",
                  "familyFriendly", "near")
PLACEHOLDERS = {"name": "NAME_TOKEN", "near": "NEAR_TOKEN"}

COARSE_TAGS = ("NOUNLIKE", "VERB", "ADJ_ADV", "OTHER")
# coarse tag -> owning layer (1-based)
TAG_LAYER = {"NOUNLIKE": 1, "VERB": 2, "ADJ_ADV": 3, "OTHER": 4}

EXTERNAL_TAG_MAP = {
    # Universal Dependencies
    "NOUN": "NOUNLIKE", "PROPN": "NOUNLIKE", "PRON": "NOUNLIKE",
    "VERB": "VERB", "AUX": "VERB",
    "ADJ": "ADJ_ADV", "ADV": "ADJ_ADV",
    # Penn Treebank
    "NN": "NOUNLIKE", "NNS": "NOUNLIKE", "NNP": "NOUNLIKE", "NNPS": "NOUNLIKE",
    "PRP": "NOUNLIKE", "PRP$": "NOUNLIKE", "WP": "NOUNLIKE", "WP$": "NOUNLIKE", "EX": "NOUNLIKE",
    "VB": "VERB", "VBD": "VERB", "VBG": "VERB", "VBN": "VERB", "VBP": "VERB", "VBZ": "VERB",
    "MD": "VERB",
    "JJ": "ADJ_ADV", "JJR": "ADJ_ADV", "JJS": "ADJ_ADV",
    "RB": "ADJ_ADV", "RBR": "ADJ_ADV", "RBS": "ADJ_ADV", "WRB": "ADJ_ADV",
    # already coarse
    "NOUNLIKE": "NOUNLIKE", "ADJ_ADV": "ADJ_ADV", "OTHER": "OTHER",
}

_PUNCT = frozenset(string.punctuation)


class CorpusError(Exception):
    pass


class MRParseError(CorpusError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


# --------------------------------------------------------------------------- tokens

def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, peel leading/trailing punctuation into tokens."""
    out = []
    for chunk in text.lower().split():
        lead = []
        while chunk and chunk[0] in _PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail = []
        while chunk and chunk[-1] in _PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        out.extend(lead)
        if chunk:
            out.append(chunk)
        out.extend(reversed(trail))
    return out


def _is_punct(tok: str) -> bool:
    return bool(tok) and all(c in _PUNCT for c in tok)


def detokenize(tokens) -> str:
    parts: list[str] = []
    for tok in tokens:
        if parts and _is_punct(tok):
            parts[-1] += tok
        else:
            parts.append(tok)
    return " ".join(parts)


# --------------------------------------------------------------------------- MR

def normalize_slot(raw: str) -> str:
    words = raw.strip().split()
    if not words:
        return ""
    return words[0][0].lower() + words[0][1:] + "".join(w[0].upper() + w[1:] for w in words[1:])


@dataclass
class MeaningRepresentation:
    slots: list = field(default_factory=list)

    def get(self, slot: str):
        for name, value in self.slots:
            if name == slot:
                return value
        return None

    def __str__(self) -> str:
        return ", ".join(f"{k}[{v}]" for k, v in self.slots)


_SLOT_RE = re.compile(r"\s*([^\[\],]+?)\s*\[([^\[\]]*)\]\s*")


def parse_mr(raw: str) -> MeaningRepresentation:
    """Parse ``slot[value], slot[value]`` into an ordered slot list."""
    slots = []
    pos = 0
    n = len(raw)
    while True:
        m = _SLOT_RE.match(raw, pos)
        if not m:
            raise MRParseError("expected slot[value]", pos)
        name, value = normalize_slot(m.group(1)), m.group(2).strip()
        if not value:
            raise MRParseError(f"empty value for slot {name!r}", m.start(2))
        slots.append((name, value))
        pos = m.end()
        if pos >= n:
            break
        if raw[pos] != ",":
            raise MRParseError("expected ','", pos)
        pos += 1
    return MeaningRepresentation(slots)


def slot_token(slot: str) -> str:
    return f"<{slot}>"


# --------------------------------------------------------------------------- delexicalization

@dataclass
class DelexResult:
    mr_tokens: list
    ref_tokens: list
    delex_map: dict
    source_index: list
    unmatched: list

    def __iter__(self):
        return iter((self.mr_tokens, self.ref_tokens, self.delex_map))


def delexicalize(mr: MeaningRepresentation, reference_tokens=None, warn_unknown: bool = True) -> DelexResult:
    """Replace ``name``/``near`` values by placeholders in the MR stream and the reference.

    Matching on the reference is whole-token, case-insensitive and
    longest-value-first. ``source_index[k]`` gives the position in the input
    reference of output token ``k``, or -1 for a placeholder.
    """
    mr_tokens: list[str] = []
    delex_map: dict[str, str] = {}
    for slot, value in mr.slots:
        if slot not in SLOT_INVENTORY:
            if warn_unknown:
                log.warning("unknown MR slot %r skipped", slot)
            continue
        mr_tokens.append(slot_token(slot))
        ph = PLACEHOLDERS.get(slot)
        if ph is None:
            mr_tokens.extend(tokenize(value))
            continue
        mr_tokens.append(ph)
        if ph in delex_map:
            log.warning("duplicate %s slot; keeping first value %r", slot, delex_map[ph])
        else:
            delex_map[ph] = value

    ref = list(reference_tokens or [])
    tokens: list[str] = list(ref)
    index = list(range(len(ref)))
    unmatched = []
    patterns = sorted(((tokenize(v), ph) for ph, v in delex_map.items()), key=lambda p: -len(p[0]))
    for pat, ph in patterns:
        if not pat:
            continue
        new_tokens, new_index, k, found = [], [], 0, False
        while k < len(tokens):
            if tokens[k:k + len(pat)] == pat:
                new_tokens.append(ph)
                new_index.append(-1)
                k += len(pat)
                found = True
            else:
                new_tokens.append(tokens[k])
                new_index.append(index[k])
                k += 1
        tokens, index = new_tokens, new_index
        if not found and reference_tokens is not None:
            unmatched.append(ph)
    return DelexResult(mr_tokens, tokens, delex_map, index, unmatched)


def relexicalize(tokens, delex_map: dict) -> str:
    out = []
    for tok in tokens:
        if tok in delex_map:
            out.append(delex_map[tok])
        else:
            if tok.endswith("_TOKEN"):
                log.warning("placeholder %s has no value; left verbatim", tok)
            out.append(tok)
    return detokenize(out)


# --------------------------------------------------------------------------- POS

DEFAULT_SUFFIX_RULES = (
    ("ly", "ADJ_ADV"), ("ous", "ADJ_ADV"), ("ful", "ADJ_ADV"), ("ive", "ADJ_ADV"),
    ("able", "ADJ_ADV"), ("ible", "ADJ_ADV"), ("ish", "ADJ_ADV"), ("less", "ADJ_ADV"),
    ("est", "ADJ_ADV"), ("ical", "ADJ_ADV"),
    ("ing", "VERB"), ("ed", "VERB"), ("ize", "VERB"), ("ise", "VERB"),
    ("ness", "NOUNLIKE"), ("ment", "NOUNLIKE"), ("tion", "NOUNLIKE"), ("sion", "NOUNLIKE"),
    ("ity", "NOUNLIKE"), ("ship", "NOUNLIKE"), ("hood", "NOUNLIKE"), ("ism", "NOUNLIKE"),
    ("ist", "NOUNLIKE"), ("er", "NOUNLIKE"), ("ers", "NOUNLIKE"), ("ants", "NOUNLIKE"),
)


@dataclass
class PosLexicon:
    words: dict = field(default_factory=dict)
    suffix_rules: tuple = DEFAULT_SUFFIX_RULES
    default: str = "OTHER"

    def lookup(self, token: str) -> tuple[str, str]:
        """Return (coarse tag, source) where source is lexicon|suffix|default."""
        if token in self.words:
            return self.words[token], "lexicon"
        if token in PLACEHOLDERS.values():
            return "NOUNLIKE", "lexicon"
        if any(ch.isdigit() for ch in token) or _is_punct(token):
            return self.default, "default"
        for suffix, tag in self.suffix_rules:
            if len(token) >= len(suffix) + 3 and token.endswith(suffix):
                return tag, "suffix"
        return self.default, "default"

    @classmethod
    def seed(cls) -> "PosLexicon":
        text = resources.files("hielo").joinpath("data/seed_lexicon.tsv").read_text(encoding="utf-8")
        words = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            word, tag = line.split("\t")
            words[word] = tag
        return cls(words)

    @classmethod
    def from_tagged(cls, sentences, base: "PosLexicon | None" = None) -> "PosLexicon":
        """Majority coarse tag per word over externally tagged (token, tag) sentences."""
        counts: dict[str, Counter] = {}
        for sent in sentences:
            for tok, tag in sent:
                counts.setdefault(tok, Counter())[EXTERNAL_TAG_MAP.get(tag, "OTHER")] += 1
        words = dict(base.words) if base else {}
        for tok, c in counts.items():
            words[tok] = sorted(c.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        return cls(words)


def map_external_tag(tag: str) -> str:
    return EXTERNAL_TAG_MAP.get(tag, "OTHER")


def tag_pos(tokens, lexicon: PosLexicon | None = None, external=None, sources: list | None = None) -> list[str]:
    """Coarse tags: external tags (mapped) win, else lexicon, suffix rules, default."""
    if external is not None:
        if len(external) != len(tokens):
            raise CorpusError(f"{len(external)} external tags for {len(tokens)} tokens")
        if sources is not None:
            sources.extend(["external"] * len(tokens))
        return [map_external_tag(t) for t in external]
    lexicon = lexicon or PosLexicon.seed()
    tags = []
    for tok in tokens:
        tag, src = lexicon.lookup(tok)
        tags.append(tag)
        if sources is not None:
            sources.append(src)
    return tags


def assign_layers(tokens, coarse_tags, n_layers: int = 4) -> list[list[str]]:
    """Cumulative layer targets: layer i keeps tokens owned by layers 1..i, in order."""
    if len(tokens) != len(coarse_tags):
        raise CorpusError("tokens and tags differ in length")
    return [[tok for tok, tag in zip(tokens, coarse_tags) if TAG_LAYER[tag] <= i]
            for i in range(1, n_layers + 1)]


def is_subsequence(short, long) -> bool:
    it = iter(long)
    return all(any(x == y for y in it) for x in short)


# --------------------------------------------------------------------------- instances

@dataclass
class LayeredInstance:
    mr_tokens: list
    ref_tokens: list
    tags: list
    layers: list
    delex_map: dict

    FIELDS = ("mr_tokens", "ref_tokens", "tags", "layers", "delex_map")

    @property
    def mr(self) -> MeaningRepresentation:
        slots, cur, vals = [], None, []
        inverse = {ph: self.delex_map.get(ph, ph) for ph in PLACEHOLDERS.values()}
        for tok in self.mr_tokens + ["<>"]:
            if tok.startswith("<") and tok.endswith(">"):
                if cur is not None:
                    slots.append((cur, " ".join(inverse.get(v, v) for v in vals)))
                cur, vals = tok[1:-1], []
            else:
                vals.append(tok)
        return MeaningRepresentation(slots)

    @property
    def reference(self) -> str:
        return relexicalize(self.ref_tokens, self.delex_map)

    @property
    def group_key(self) -> tuple:
        return tuple(self.mr_tokens), tuple(sorted(self.delex_map.items()))

    def containment_ok(self) -> bool:
        layers = self.layers
        chain = all(is_subsequence(layers[i], layers[i + 1]) for i in range(len(layers) - 1))
        return chain and layers[-1] == self.ref_tokens

    def to_record(self) -> dict:
        return {k: getattr(self, k) for k in self.FIELDS}

    @classmethod
    def from_record(cls, rec: dict) -> "LayeredInstance":
        return cls(*(rec[k] for k in cls.FIELDS))


def build_instance(mr: MeaningRepresentation, reference: str, lexicon: PosLexicon | None = None,
                   external_tags=None, sources: list | None = None) -> tuple[LayeredInstance, DelexResult]:
    raw_tokens = tokenize(reference)
    raw_tags = tag_pos(raw_tokens, lexicon, external_tags, sources)
    dx = delexicalize(mr, raw_tokens)
    tags = ["NOUNLIKE" if k < 0 else raw_tags[k] for k in dx.source_index]
    inst = LayeredInstance(dx.mr_tokens, dx.ref_tokens, tags, assign_layers(dx.ref_tokens, tags),
                           dx.delex_map)
    return inst, dx


def read_tag_file(path) -> list[list[tuple[str, str]]]:
    """``token<TAB>tag`` lines, blank line between sentences."""
    sentences, cur = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                if cur:
                    sentences.append(cur)
                    cur = []
                continue
            tok, tag = line.split("\t")
            cur.append((tok, tag))
    if cur:
        sentences.append(cur)
    return sentences


@dataclass
class PrepareStats:
    rows: int = 0
    skipped: int = 0
    unmatched_delex: int = 0
    tag_sources: Counter = field(default_factory=Counter)


def read_e2e_csv(path, tags_path=None, lexicon: PosLexicon | None = None,
                 max_skip_fraction: float = 0.01) -> tuple[list[LayeredInstance], PrepareStats]:
    lexicon = lexicon or PosLexicon.seed()
    tag_sents = read_tag_file(tags_path) if tags_path else None
    stats = PrepareStats()
    instances = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return [], stats
        if [h.strip() for h in header[:2]] != ["mr", "ref"]:
            raise CorpusError(f"{path}: expected header 'mr,ref', got {header}")
        for row in reader:
            stats.rows += 1
            line = reader.line_num
            try:
                if len(row) != 2:
                    raise CorpusError(f"expected 2 columns, got {len(row)}")
                ext = None
                if tag_sents is not None:
                    if stats.rows > len(tag_sents):
                        raise CorpusError("no tag sentence for this row")
                    sent = tag_sents[stats.rows - 1]
                    if [t for t, _ in sent] != tokenize(row[1]):
                        raise CorpusError("tag sentence tokens differ from the reference")
                    ext = [tag for _, tag in sent]
                sources: list[str] = []
                inst, dx = build_instance(parse_mr(row[0]), row[1], lexicon, ext, sources)
            except CorpusError as err:
                log.warning("%s:%d skipped: %s", path, line, err)
                stats.skipped += 1
                continue
            stats.tag_sources.update(sources)
            if dx.unmatched:
                stats.unmatched_delex += 1
            instances.append(inst)
    if stats.rows and stats.skipped / stats.rows > max_skip_fraction:
        raise CorpusError(f"{path}: skipped {stats.skipped} of {stats.rows} rows (more than "
                          f"{max_skip_fraction:.0%})")
    return instances, stats


def load_corpus(path, format: str = "e2e-csv", tags_path=None,
                lexicon: PosLexicon | None = None) -> list[LayeredInstance]:
    if format == "e2e-csv":
        return read_e2e_csv(path, tags_path, lexicon)[0]
    if format == "prepared-jsonl":
        with open(path, encoding="utf-8") as fh:
            return [LayeredInstance.from_record(json.loads(line)) for line in fh if line.strip()]
    raise CorpusError(f"unknown corpus format {format!r}")


def atomic_write(path, data: str | bytes) -> None:
    """Write via a sibling temporary file and rename, so readers never see partial output."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_prepared(instances, path) -> None:
    lines = [json.dumps(inst.to_record(), ensure_ascii=False) + "\n" for inst in instances]
    atomic_write(path, "".join(lines))


def group_by_mr(instances) -> list[list[LayeredInstance]]:
    """Group instances sharing one MR, in first-occurrence order."""
    groups: dict[tuple, list] = {}
    for inst in instances:
        groups.setdefault(inst.group_key, []).append(inst)
    return list(groups.values())


# --------------------------------------------------------------------------- vocabulary

class Vocabulary:
    def __init__(self, tokens=()):
        self.itos = list(RESERVED)
        for tok in tokens:
            if tok not in RESERVED:
                self.itos.append(tok)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, tok) -> bool:
        return tok in self.stoi

    def id(self, tok: str) -> int:
        return self.stoi.get(tok, UNK_ID)

    def token(self, i: int) -> str:
        return self.itos[i]

    def encode(self, tokens) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.itos[i] for i in ids]

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos


def _vocab_from_counts(counts: Counter, min_count: int) -> Vocabulary:
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


def build_vocab(instances, min_count: int = 2) -> tuple[Vocabulary, Vocabulary]:
    mr_counts, tgt_counts = Counter(), Counter()
    for inst in instances:
        mr_counts.update(inst.mr_tokens)
        tgt_counts.update(inst.ref_tokens)
    return _vocab_from_counts(mr_counts, min_count), _vocab_from_counts(tgt_counts, min_count)
