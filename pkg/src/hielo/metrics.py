"""Multi-reference corpus BLEU-4 and ROUGE-1/2/L (F1, max over references, mean over instances)."""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

REPORT_HEADER = ("# bleu: corpus BLEU-4, clipped n-gram precision, closest-reference brevity "
                 "penalty\n# rouge: F1 per reference, max over references, mean over instances")
REPORT_FIELDS = ("bleu", "rouge1", "rouge2", "rougeL", "n_instances")


def ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_corpus(hypotheses, references, max_n: int = 4, smoothing: bool = False,
                epsilon: float = 0.1) -> float:
    """Corpus BLEU over token lists; ``references[k]`` is the reference set of hypothesis k.

    Without smoothing, a zero match count at any order yields 0. With
    ``smoothing`` the zero numerators of orders 2..4 are replaced by
    ``epsilon``; no unigram match still scores 0.
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} reference sets")
    if not hypotheses:
        log.warning("BLEU of an empty hypothesis set is defined as 0")
        return 0.0
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        if not refs:
            raise ValueError("every hypothesis needs at least one reference")
        hyp_len += len(hyp)
        ref_len += min((len(r) for r in refs), key=lambda L: (abs(L - len(hyp)), L))
        for n in range(1, max_n + 1):
            counts = ngrams(hyp, n)
            max_ref: Counter = Counter()
            for r in refs:
                max_ref |= ngrams(r, n)
            matches[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0 or matches[0] == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        if m == 0:
            if not smoothing:
                return 0.0
            m = epsilon
        log_p += math.log(m / max(t, 1)) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p)


def _f1(overlap: float, hyp_total: int, ref_total: int) -> float:
    if overlap == 0 or hyp_total == 0 or ref_total == 0:
        return 0.0
    p, r = overlap / hyp_total, overlap / ref_total
    return 2 * p * r / (p + r)


def rouge_n(hyp, refs, n: int = 1) -> float:
    h = ngrams(hyp, n)
    best = 0.0
    for ref in refs:
        r = ngrams(ref, n)
        overlap = sum((h & r).values())
        best = max(best, _f1(overlap, sum(h.values()), sum(r.values())))
    return best


def lcs_length(a, b) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(hyp, refs) -> float:
    return max((_f1(lcs_length(hyp, ref), len(hyp), len(ref)) for ref in refs), default=0.0)


@dataclass
class EvalReport:
    bleu: float
    rouge1: float
    rouge2: float
    rougeL: float
    n_instances: int
    per_instance: list = field(default_factory=list, repr=False)

    def to_text(self) -> str:
        lines = [REPORT_HEADER]
        for name in REPORT_FIELDS:
            value = getattr(self, name)
            lines.append(f"{name} = {value}" if name == "n_instances" else f"{name} = {value:.6f}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse(text: str) -> dict:
        out = {}
        for line in text.splitlines():
            if line.startswith("#") or "=" not in line:
                continue
            key, value = (s.strip() for s in line.split("=", 1))
            out[key] = int(value) if key == "n_instances" else float(value)
        return out


def evaluate(hypotheses, references, smoothing: bool = False) -> EvalReport:
    """Score token-list hypotheses against reference sets."""
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} reference sets")
    per = []
    for hyp, refs in zip(hypotheses, references):
        per.append({"rouge1": rouge_n(hyp, refs, 1), "rouge2": rouge_n(hyp, refs, 2),
                    "rougeL": rouge_l(hyp, refs)})
    n = len(per)

    def mean(key):
        return sum(p[key] for p in per) / n if n else 0.0

    return EvalReport(bleu_corpus(hypotheses, references, smoothing=smoothing),
                      mean("rouge1"), mean("rouge2"), mean("rougeL"), n, per)
