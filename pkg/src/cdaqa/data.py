"""Corpus ingestion, tokenization, domain construction, and synthetic data.

Input format is the MRQA shared-task line format: an optional header line,
then one JSON object per line holding a context and its nested qas.  Domain
files written by this package use the same shape plus a mandatory header line
identifying the domain and split.
"""

from __future__ import annotations

import json
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .qa import QAExample, detokenize, normalize_answer
from .seeding import derive_rng

PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3
RESERVED = ("[pad]", "[unk]", "[cls]", "[sep]")

QUESTION_WORDS = ("what", "which", "where", "when", "how", "why", "who")
CDA_Q_ORDER = ("what", "which", "where", "when", "how", "why", "other", "who")
CDA_C_ORDER = ("wiki", "news", "scripts", "book", "tweet")

_PUNCT = set(string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, peel edge punctuation into own tokens."""
    out: list[str] = []
    for chunk in text.lower().split():
        lead: list[str] = []
        while chunk and chunk[0] in _PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail: list[str] = []
        while chunk and chunk[-1] in _PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        out.extend(lead)
        if chunk:
            out.append(chunk)
        out.extend(reversed(trail))
    return out


def tokenize_with_offsets(text: str) -> tuple[list[str], list[tuple[int, int]]]:
    """tokenize() plus [start, end) character offsets into the original text."""
    tokens: list[str] = []
    offsets: list[tuple[int, int]] = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        lo, hi = i, j
        while lo < hi and text[lo] in _PUNCT:
            tokens.append(text[lo].lower())
            offsets.append((lo, lo + 1))
            lo += 1
        trail: list[tuple[str, tuple[int, int]]] = []
        while hi > lo and text[hi - 1] in _PUNCT:
            trail.append((text[hi - 1].lower(), (hi - 1, hi)))
            hi -= 1
        if hi > lo:
            tokens.append(text[lo:hi].lower())
            offsets.append((lo, hi))
        for tok, span in reversed(trail):
            tokens.append(tok)
            offsets.append(span)
        i = j
    return tokens, offsets


def question_type(question: str) -> str:
    """First question word among the first three tokens, else a question-word
    last token, else "other"."""
    toks = tokenize(question)
    for t in toks[:3]:
        if t in QUESTION_WORDS:
            return t
    if toks and toks[-1] in QUESTION_WORDS:
        return toks[-1]
    return "other"


# ---------------------------------------------------------------------------
# vocabulary


class Vocabulary:
    """Dense token-to-id map with the four reserved ids fixed at 0..3."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(RESERVED) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise DataError("vocabulary contains duplicate tokens")

    pad_id, unk_id, cls_id, sep_id = PAD_ID, UNK_ID, CLS_ID, SEP_ID

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.id_to_token[4:]), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))


def build_vocab(domains, min_count: int = 1) -> Vocabulary:
    """Count tokens over all training splits; order by (-count, token).

    The result is frozen before any training starts, mimicking a fixed
    pre-trained vocabulary, and is invariant to record order.
    """
    counts: Counter = Counter()
    for dom in domains:
        for ex in dom.train.examples:
            counts.update(ex.question_tokens)
            counts.update(ex.context_tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_count),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


# ---------------------------------------------------------------------------
# records and domain construction


@dataclass
class RawRecord:
    context: str
    question: str
    answers: list        # (text, ("char"|"token", start, end) | None) pairs
    qid: str
    source_tag: str = ""


@dataclass
class DomainSpec:
    name: str
    split: str           # train | test
    examples: list[QAExample] = field(default_factory=list)


@dataclass
class DomainData:
    name: str
    train: DomainSpec
    test: DomainSpec


def load_jsonl(path, counters: dict | None = None, source_tag: str = "") -> list[RawRecord]:
    """Read MRQA-format lines; malformed lines raise, answerless qas are counted."""
    counters = counters if counters is not None else {}
    records: list[RawRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            if "header" in obj:
                if lineno == 1 and not source_tag:
                    hdr = obj["header"]
                    source_tag = str(hdr.get("dataset", hdr.get("domain", "")))
                continue
            if "context" not in obj or "qas" not in obj:
                raise DataError(f"{path}:{lineno}: record needs context and qas")
            for qa in obj["qas"]:
                question = qa.get("question")
                if not question:
                    raise DataError(f"{path}:{lineno}: qa without question")
                answers = []
                for det in qa.get("detected_answers", []):
                    text = det.get("text", "")
                    span = None
                    if det.get("token_spans"):
                        s, e = det["token_spans"][0]
                        span = ("token", int(s), int(e))
                    elif det.get("char_spans"):
                        s, e = det["char_spans"][0]
                        span = ("char", int(s), int(e))
                    answers.append((text, span))
                for extra in qa.get("answers", []):
                    answers.append((extra, None))
                if not answers:
                    counters["missing_answers"] = counters.get("missing_answers", 0) + 1
                    continue
                records.append(RawRecord(context=obj["context"], question=question,
                                         answers=answers,
                                         qid=str(qa.get("qid", qa.get("id", f"{lineno}"))),
                                         source_tag=source_tag))
    return records


def _char_span_to_tokens(offsets, lo: int, hi: int) -> tuple[int, int] | None:
    """Indices of tokens overlapping the inclusive character range [lo, hi]."""
    touched = [i for i, (s, e) in enumerate(offsets) if s <= hi and e > lo]
    if not touched:
        return None
    return touched[0], touched[-1]


def _find_sublist(haystack: list[str], needle: list[str]) -> tuple[int, int] | None:
    if not needle or len(needle) > len(haystack):
        return None
    for i in range(len(haystack) - len(needle) + 1):
        if haystack[i:i + len(needle)] == needle:
            return i, i + len(needle) - 1
    return None


def records_to_examples(records: list[RawRecord], domain: str,
                        counters: dict | None = None) -> list[QAExample]:
    """Tokenize and align answers to token spans; misaligned records are dropped."""
    counters = counters if counters is not None else {}
    out: list[QAExample] = []
    for idx, rec in enumerate(records):
        ctx_tokens, offsets = tokenize_with_offsets(rec.context)
        q_tokens = tokenize(rec.question)
        span = None
        primary = rec.answers[0][0]
        for text, located in rec.answers:
            if located is None:
                continue
            kind, s, e = located
            cand = (s, e) if kind == "token" else _char_span_to_tokens(offsets, s, e)
            if cand is None or not 0 <= cand[0] <= cand[1] < len(ctx_tokens):
                continue
            got = normalize_answer(detokenize(ctx_tokens[cand[0]:cand[1] + 1]))
            if got == normalize_answer(text):
                span, primary = cand, text
                break
        if span is None:
            # fall back to the earliest exact token-subsequence match
            for text, _ in rec.answers:
                cand = _find_sublist(ctx_tokens, tokenize(text))
                if cand is not None:
                    span, primary = cand, text
                    break
        if span is None:
            counters["unaligned"] = counters.get("unaligned", 0) + 1
            continue
        golds = tuple(dict.fromkeys(t for t, _ in rec.answers if t))
        ex = QAExample(id=rec.qid or f"{domain}-{idx}", question_tokens=q_tokens,
                       context_tokens=ctx_tokens, answer_text=primary,
                       answer_span=span, domain=domain, answers=golds)
        if not ex.check_span():
            counters["unaligned"] = counters.get("unaligned", 0) + 1
            continue
        out.append(ex)
    return out


def _split_examples(examples: list[QAExample], test_fraction: float,
                    rng: np.random.Generator) -> tuple[list[QAExample], list[QAExample]]:
    order = rng.permutation(len(examples))
    n_test = int(round(test_fraction * len(examples)))
    test_idx = set(order[:n_test].tolist())
    train = [ex for i, ex in enumerate(examples) if i not in test_idx]
    test = [ex for i, ex in enumerate(examples) if i in test_idx]
    return train, test


def _retag(examples: list[QAExample], domain: str) -> list[QAExample]:
    for ex in examples:
        ex.domain = domain
    return examples


def build_cda_q(examples: list[QAExample], test_examples: list[QAExample] | None = None,
                test_fraction: float = 0.25, seed: int = 0) -> list[DomainData]:
    """Partition by question type into the fixed 8-domain sequence."""
    def partition(items):
        groups: dict[str, list[QAExample]] = {name: [] for name in CDA_Q_ORDER}
        for ex in items:
            groups[question_type(detokenize(ex.question_tokens))].append(ex)
        return groups

    train_groups = partition(examples)
    if test_examples is not None:
        test_groups = partition(test_examples)
    else:
        test_groups = {}
        for name in CDA_Q_ORDER:
            rng = derive_rng(seed, "cda-q-split", name)
            train_groups[name], test_groups[name] = _split_examples(
                train_groups[name], test_fraction, rng)
    return [DomainData(name=name,
                       train=DomainSpec(name, "train", _retag(train_groups[name], name)),
                       test=DomainSpec(name, "test", _retag(test_groups[name], name)))
            for name in CDA_Q_ORDER]


def build_cda_c(collections: dict[str, tuple[list[QAExample], list[QAExample]]],
                n_train: int = 500, seed: int = 0,
                order: tuple[str, ...] | None = None) -> list[DomainData]:
    """One domain per source tag; train split sampled down to n_train."""
    if order is None:
        known = [t for t in CDA_C_ORDER if t in collections]
        order = tuple(known + sorted(set(collections) - set(CDA_C_ORDER)))
    out = []
    for name in order:
        if name not in collections:
            raise ConfigError(f"no collection tagged {name!r}")
        train, test = collections[name]
        if len(train) > n_train:
            rng = derive_rng(seed, "cda-c-sample", name)
            idx = sorted(rng.choice(len(train), size=n_train, replace=False).tolist())
            train = [train[i] for i in idx]
        out.append(DomainData(name=name,
                              train=DomainSpec(name, "train", _retag(list(train), name)),
                              test=DomainSpec(name, "test", _retag(list(test), name))))
    return out


def dataset_stats(spec: DomainSpec) -> dict:
    n = len(spec.examples)
    if n == 0:
        return {"count": 0, "mean_question_words": 0.0, "mean_answer_words": 0.0,
                "mean_context_words": 0.0}
    return {
        "count": n,
        "mean_question_words": sum(len(e.question_tokens) for e in spec.examples) / n,
        "mean_answer_words": sum(len(tokenize(e.answer_text)) for e in spec.examples) / n,
        "mean_context_words": sum(len(e.context_tokens) for e in spec.examples) / n,
    }


# ---------------------------------------------------------------------------
# domain files


def save_domain_file(spec: DomainSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"header": {"domain": spec.name, "split": spec.split,
                                        "count": len(spec.examples)}},
                            sort_keys=True) + "\n")
        for ex in spec.examples:
            rec = {"context": detokenize(ex.context_tokens),
                   "qas": [{"qid": ex.id,
                            "question": detokenize(ex.question_tokens),
                            "detected_answers": [{"text": ex.answer_text,
                                                  "token_spans": [list(ex.answer_span)]}],
                            "answers": list(ex.answers)}]}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_domain_file(path) -> DomainSpec:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
    try:
        header = json.loads(first)["header"]
        name, split = header["domain"], header["split"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: missing or bad domain header line") from exc
    counters: dict = {}
    records = load_jsonl(path, counters, source_tag=name)
    examples = records_to_examples(records, name, counters)
    if counters.get("unaligned") or counters.get("missing_answers"):
        raise DataError(f"{path}: {counters} records unusable in a package-written file")
    return DomainSpec(name=name, split=split, examples=examples)


def load_domain_dir(path) -> list[DomainData]:
    """Read <domain>.train.jsonl / <domain>.test.jsonl pairs, ordered by index file."""
    base = Path(path)
    order_file = base / "domains.json"
    if not order_file.exists():
        raise DataError(f"{base}: missing domains.json index")
    names = json.loads(order_file.read_text(encoding="utf-8"))
    out = []
    for name in names:
        train = load_domain_file(base / f"{name}.train.jsonl")
        test = load_domain_file(base / f"{name}.test.jsonl")
        out.append(DomainData(name=name, train=train, test=test))
    return out


def save_domain_dir(domains: list[DomainData], path) -> None:
    base = Path(path)
    base.mkdir(parents=True, exist_ok=True)
    (base / "domains.json").write_text(
        json.dumps([d.name for d in domains]), encoding="utf-8")
    for d in domains:
        save_domain_file(d.train, base / f"{d.name}.train.jsonl")
        save_domain_file(d.test, base / f"{d.name}.test.jsonl")


# ---------------------------------------------------------------------------
# synthetic benchmark


@dataclass(frozen=True)
class SyntheticConfig:
    n_domains: int = 3
    n_train: int = 200
    n_test: int = 100
    n_slots: int = 3
    n_entities: int = 40
    n_values: int = 30
    mode: str = "interference"   # interference | cued

    def __post_init__(self):
        if min(self.n_domains, self.n_train, self.n_test, self.n_slots) < 1:
            raise ConfigError("synthetic sizes must be positive")
        if self.mode not in ("interference", "cued"):
            raise ConfigError(f"unknown synthetic mode {self.mode!r}")


def _synthetic_example(cfg: SyntheticConfig, domain_idx: int, name: str,
                       split: str, idx: int, rng: np.random.Generator) -> QAExample:
    entity = f"ent{int(rng.integers(cfg.n_entities)):03d}"
    values = rng.choice(cfg.n_values, size=cfg.n_slots, replace=False)
    slot = domain_idx % cfg.n_slots
    ctx: list[str] = []
    for i in range(cfg.n_slots):
        ctx.extend([entity, f"rel{i}", f"val{int(values[i]):03d}", "."])
    answer = f"val{int(values[slot]):03d}"
    if cfg.mode == "cued":
        q = ["what", "does", entity, f"rel{slot}", "?"]
    else:
        q = ["what", "does", entity, "hold", "?"]
    start = 4 * slot + 2
    return QAExample(id=f"{name}-{split}-{idx:05d}", question_tokens=q,
                     context_tokens=ctx, answer_text=answer,
                     answer_span=(start, start), domain=name)


def make_synthetic_cda(cfg: SyntheticConfig, seed: int = 0) -> list[DomainData]:
    """Template QA domains that share question surface but move the answer slot.

    Every domain asks the same kind of question; which relation holds the
    answer rotates with the domain index, so a single shared model must
    overwrite earlier mappings (forgetting is guaranteed by construction)
    while per-domain routing keeps them intact.
    """
    out = []
    for t in range(cfg.n_domains):
        name = f"dom{t}"
        train_rng = derive_rng(seed, "synthetic", name, "train")
        test_rng = derive_rng(seed, "synthetic", name, "test")
        train = [_synthetic_example(cfg, t, name, "train", i, train_rng)
                 for i in range(cfg.n_train)]
        test = [_synthetic_example(cfg, t, name, "test", i, test_rng)
                for i in range(cfg.n_test)]
        out.append(DomainData(name=name, train=DomainSpec(name, "train", train),
                              test=DomainSpec(name, "test", test)))
    return out
