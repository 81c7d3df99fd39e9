"""Span-extraction head, QA loss, span decoding, and EM / word-F1 metrics.

An input pair packs as [CLS] question [SEP] context [SEP]; only the context
may be truncated.  The head projects each position to a start and an end
logit; training minimizes the sum of two cross-entropies at the gold span and
decoding takes the constrained argmax over (start, end) pairs.
"""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError, DataError
from .seeding import trunc_normal

DEFAULT_MAX_ANSWER_LENGTH = 30


@dataclass
class QAExample:
    id: str
    question_tokens: list[str]
    context_tokens: list[str]
    answer_text: str
    answer_span: tuple[int, int]
    domain: str
    answers: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.answers:
            self.answers = (self.answer_text,)

    def check_span(self) -> bool:
        s, e = self.answer_span
        if not 0 <= s <= e < len(self.context_tokens):
            return False
        got = normalize_answer(detokenize(self.context_tokens[s:e + 1]))
        return got == normalize_answer(self.answer_text)


@dataclass
class SpanPrediction:
    start: int
    end: int
    score: float
    text: str = ""


@dataclass
class PackedExample:
    example: QAExample
    token_ids: np.ndarray
    segment_ids: np.ndarray
    context_mask: np.ndarray        # bool per position, True on kept context tokens
    context_offset: int             # packed index of context token 0
    gold: tuple[int, int] | None    # gold span in packed coordinates; None if truncated away

    @property
    def length(self) -> int:
        return int(self.token_ids.shape[0])


def detokenize(tokens) -> str:
    return " ".join(tokens)


def encode_pair(question_tokens, context_tokens, vocab, max_len: int):
    """Pack [CLS] q [SEP] c [SEP]; context is cut to fit, the question never is.

    Returns (token_ids, segment_ids, context_mask, context_offset, kept_context).
    """
    n_q = len(question_tokens)
    if n_q > max_len - 3:
        raise DataError(f"question of {n_q} tokens exceeds max_len-3 = {max_len - 3}")
    budget = max_len - 3 - n_q
    kept = min(len(context_tokens), budget)
    ids = [vocab.cls_id] + vocab.encode(question_tokens) + [vocab.sep_id] \
        + vocab.encode(context_tokens[:kept]) + [vocab.sep_id]
    segs = [0] * (n_q + 2) + [1] * (kept + 1)
    offset = n_q + 2
    mask = np.zeros(len(ids), dtype=bool)
    mask[offset:offset + kept] = True
    return (np.asarray(ids, dtype=np.int64), np.asarray(segs, dtype=np.int64),
            mask, offset, kept)


def pack_example(ex: QAExample, vocab, max_len: int) -> PackedExample:
    ids, segs, mask, offset, kept = encode_pair(ex.question_tokens,
                                                ex.context_tokens, vocab, max_len)
    s, e = ex.answer_span
    gold = (offset + s, offset + e) if e < kept else None
    return PackedExample(example=ex, token_ids=ids, segment_ids=segs,
                         context_mask=mask, context_offset=offset, gold=gold)


def pack_dataset(examples, vocab, max_len: int, counters: dict | None = None,
                 keep_truncated: bool = False) -> list[PackedExample]:
    """Pack every example; for training, drop those whose gold got truncated."""
    out = []
    for ex in examples:
        packed = pack_example(ex, vocab, max_len)
        if packed.gold is None and not keep_truncated:
            if counters is not None:
                counters["gold_truncated"] = counters.get("gold_truncated", 0) + 1
            continue
        out.append(packed)
    return out


# ---------------------------------------------------------------------------
# head, loss, decoding


@dataclass
class HeadParams:
    w: Tensor   # 2 x d
    b: Tensor   # 2

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}/w": self.w, f"{prefix}/b": self.b}


def init_head(d: int, rng: np.random.Generator) -> HeadParams:
    return HeadParams(w=Tensor(trunc_normal(rng, (2, d)), requires_grad=True),
                      b=Tensor(np.zeros(2), requires_grad=True))


def span_logits(h: Tensor, head: HeadParams) -> tuple[Tensor, Tensor]:
    proj = ag.linear(h, head.w, head.b)
    return ag.getcol(proj, 0), ag.getcol(proj, 1)


def _mask_vector(context_mask: np.ndarray) -> Tensor:
    row = np.where(context_mask, 0.0, ag.MASK_NEG)
    return Tensor(row)


def qa_loss(start_logits: Tensor, end_logits: Tensor, gold: tuple[int, int],
            context_mask: np.ndarray) -> Tensor:
    """Cross-entropy at the gold start plus cross-entropy at the gold end."""
    s, e = gold
    if not (context_mask[s] and context_mask[e]):
        raise ContractError(f"gold span ({s}, {e}) lies outside the context mask")
    mask = _mask_vector(context_mask)
    return ag.add(ag.cross_entropy(ag.add(start_logits, mask), s),
                  ag.cross_entropy(ag.add(end_logits, mask), e))


def _masked_log_softmax(logits: np.ndarray, context_mask: np.ndarray) -> np.ndarray:
    x = np.where(context_mask, logits, -np.inf)
    m = x.max()
    lse = m + np.log(np.exp(x - m).sum())
    return x - lse


def predict_span(start_logits, end_logits, context_mask: np.ndarray,
                 max_answer_length: int = DEFAULT_MAX_ANSWER_LENGTH) -> SpanPrediction:
    """Constrained argmax: s <= e, e - s < max_answer_length, both in context.

    Ties break to the smaller start, then the smaller end.
    """
    start = start_logits.data if isinstance(start_logits, Tensor) else np.asarray(start_logits)
    end = end_logits.data if isinstance(end_logits, Tensor) else np.asarray(end_logits)
    valid = np.flatnonzero(context_mask)
    if valid.size == 0:
        raise DataError("no context positions available for span prediction")
    ls = _masked_log_softmax(start, context_mask)
    le = _masked_log_softmax(end, context_mask)
    best: SpanPrediction | None = None
    for s in valid:
        hi = min(s + max_answer_length, valid[-1] + 1)
        for e in range(s, hi):
            if not context_mask[e]:
                continue
            score = ls[s] + le[e]
            if best is None or score > best.score:
                best = SpanPrediction(int(s), int(e), float(score))
    return best


def resolve_text(pred: SpanPrediction, packed: PackedExample) -> SpanPrediction:
    lo = pred.start - packed.context_offset
    hi = pred.end - packed.context_offset
    pred.text = detokenize(packed.example.context_tokens[lo:hi + 1])
    return pred


# ---------------------------------------------------------------------------
# metrics

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(s: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace."""
    s = s.lower().translate(_PUNCT_TABLE)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def em_score(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


def f1_score(pred: str, gold: str) -> float:
    """Bag-of-words overlap F1 on normalized tokens, duplicates with multiplicity."""
    p = normalize_answer(pred).split()
    g = normalize_answer(gold).split()
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    overlap = sum((Counter(p) & Counter(g)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(p)
    recall = overlap / len(g)
    return 2 * precision * recall / (precision + recall)


def max_over_golds(metric, pred: str, golds) -> float:
    return max(metric(pred, g) for g in golds)


def evaluate_examples(forward_fn, packed: list[PackedExample],
                      max_answer_length: int = DEFAULT_MAX_ANSWER_LENGTH):
    """Score packed examples with forward_fn(packed) -> (start, end) logits.

    Returns (mean EM x100, mean F1 x100, prediction records).  Means use an
    exactly rounded summation, so example order cannot change the result.
    """
    if not packed:
        raise DataError("cannot evaluate an empty dataset")
    ems, f1s, records = [], [], []
    for p in packed:
        start, end = forward_fn(p)
        pred = resolve_text(predict_span(start, end, p.context_mask,
                                         max_answer_length), p)
        golds = p.example.answers
        ems.append(max_over_golds(em_score, pred.text, golds))
        f1s.append(max_over_golds(f1_score, pred.text, golds))
        records.append({"id": p.example.id, "text": pred.text, "start": pred.start,
                        "end": pred.end, "score": pred.score})
    n = len(packed)
    return 100.0 * math.fsum(ems) / n, 100.0 * math.fsum(f1s) / n, records
