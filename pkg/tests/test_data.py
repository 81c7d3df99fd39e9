"""Tokenizer, splitter, ingestion, vocabulary, and synthetic-benchmark tests."""

import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdaqa import data as dt
from cdaqa.errors import ConfigError, DataError
from cdaqa.qa import QAExample, detokenize

from fixtures_scoring import EXPECTED_QUESTION_COUNTS, QUESTION_FIXTURE


def test_tokenize_rule_examples():
    assert dt.tokenize("What is X?") == ["what", "is", "x", "?"]
    assert dt.tokenize("") == []
    assert dt.tokenize("don't stop") == ["don't", "stop"]
    assert dt.tokenize("'Hello,' she said...") == \
        ["'", "hello", ",", "'", "she", "said", ".", ".", "."]


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet=st.sampled_from("abc '.,?!-\tA"), max_size=30))
def test_property_tokenize_idempotent_through_detokenize(text):
    once = dt.tokenize(text)
    assert dt.tokenize(detokenize(once)) == once


def test_tokenize_with_offsets_slices_match():
    text = "The cat, (once) sat."
    tokens, offsets = dt.tokenize_with_offsets(text)
    assert tokens == dt.tokenize(text)
    for tok, (s, e) in zip(tokens, offsets):
        assert text[s:e].lower() == tok


def test_question_type_rule_examples():
    assert dt.question_type("what is the capital of france") == "what"
    assert dt.question_type("the capital of france is where") == "where"
    assert dt.question_type("name the capital of france") == "other"
    # first hit in the first three tokens wins, left to right
    assert dt.question_type("which is what") == "which"
    # the last-token branch only applies when the first three miss
    assert dt.question_type("tell us the reason why") == "why"
    # a question word in the middle of the question does not count
    assert dt.question_type("is it true what they say") == "other"


def test_question_fixture_labels_and_counts():
    got = Counter()
    for question, label in QUESTION_FIXTURE:
        assert dt.question_type(question) == label
        got[label] += 1
    assert dict(got) == EXPECTED_QUESTION_COUNTS
    assert sum(got.values()) == 40


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet=st.sampled_from("abc what?which "), min_size=1, max_size=40))
def test_property_question_type_total(q):
    assert dt.question_type(q) in dt.CDA_Q_ORDER


def make_example(question, context, answer, span, eid, domain="x"):
    return QAExample(id=eid, question_tokens=dt.tokenize(question),
                     context_tokens=dt.tokenize(context), answer_text=answer,
                     answer_span=span, domain=domain)


def fixture_examples(n=40):
    out = []
    for i, (question, _) in enumerate(QUESTION_FIXTURE[:n]):
        ctx = f"item{i} is the answer piece ."
        out.append(make_example(question, ctx, f"item{i}", (0, 0), f"q{i}"))
    return out


def test_build_cda_q_partitions_and_orders():
    domains = dt.build_cda_q(fixture_examples(), test_fraction=0.25, seed=3)
    assert [d.name for d in domains] == list(dt.CDA_Q_ORDER)
    for d in domains:
        n = len(d.train.examples) + len(d.test.examples)
        assert n == EXPECTED_QUESTION_COUNTS[d.name]
        for ex in d.train.examples + d.test.examples:
            assert ex.domain == d.name
    all_ids = [ex.id for d in domains for ex in d.train.examples + d.test.examples]
    assert sorted(all_ids) == sorted(f"q{i}" for i in range(40))


def test_build_cda_q_with_explicit_test_examples():
    train = fixture_examples(30)
    test = fixture_examples(40)[30:]
    domains = dt.build_cda_q(train, test_examples=test)
    assert sum(len(d.train.examples) for d in domains) == 30
    assert sum(len(d.test.examples) for d in domains) == 10


def test_build_cda_c_samples_without_replacement_reproducibly():
    train = [make_example("what is it ?", f"tok{i} holds thing{i} .", f"tok{i}",
                          (0, 0), f"w{i}") for i in range(50)]
    test = train[:10]
    coll = {"wiki": (train, test), "news": (train[:10], test)}
    a = dt.build_cda_c(coll, n_train=15, seed=9)
    b = dt.build_cda_c(coll, n_train=15, seed=9)
    assert [d.name for d in a] == ["wiki", "news"]
    ids_a = [ex.id for ex in a[0].train.examples]
    assert ids_a == [ex.id for ex in b[0].train.examples]
    assert len(ids_a) == 15 and len(set(ids_a)) == 15
    assert len(a[1].train.examples) == 10   # under n_train, kept whole
    c = dt.build_cda_c(coll, n_train=15, seed=10)
    assert ids_a != [ex.id for ex in c[0].train.examples]
    with pytest.raises(ConfigError):
        dt.build_cda_c(coll, order=("wiki", "missing"))


def test_dataset_stats():
    empty = dt.DomainSpec("e", "train", [])
    assert dt.dataset_stats(empty)["count"] == 0
    ex1 = make_example("what is it ?", "a b c", "b", (1, 1), "s1")
    ex2 = make_example("where is the cat now ?", "a b c d", "c", (2, 2), "s2")
    stats = dt.dataset_stats(dt.DomainSpec("s", "train", [ex1, ex2]))
    assert stats["count"] == 2
    assert stats["mean_question_words"] == 5.0
    assert stats["mean_context_words"] == 3.5
    assert stats["mean_answer_words"] == 1.0


def test_build_vocab_order_invariant_and_reserved():
    exs = fixture_examples(12)
    doms = dt.build_cda_q(exs, test_fraction=0.0)
    vocab1 = dt.build_vocab(doms)
    doms_rev = dt.build_cda_q(exs[::-1], test_fraction=0.0)
    vocab2 = dt.build_vocab(doms_rev)
    assert vocab1.id_to_token == vocab2.id_to_token
    assert vocab1.id_to_token[:4] == list(dt.RESERVED)
    assert vocab1.encode(["definitely-unknown-token"]) == [dt.UNK_ID]
    ids = vocab1.encode(["is", "the"])
    assert all(i >= 4 for i in ids)


def test_build_vocab_min_count_maps_rare_to_unk():
    ex = make_example("what is it ?", "rare common common", "common", (1, 1), "v0")
    dom = dt.DomainData("x", dt.DomainSpec("x", "train", [ex]),
                        dt.DomainSpec("x", "test", []))
    vocab = dt.build_vocab([dom], min_count=2)
    assert vocab.encode(["rare"]) == [dt.UNK_ID]
    assert vocab.encode(["common"]) != [dt.UNK_ID]


def test_load_jsonl_and_alignment(tmp_path):
    lines = [
        {"header": {"dataset": "toy"}},
        {"context": "The cat sat on the mat.",
         "qas": [{"qid": "a1", "question": "Where did the cat sit?",
                  "detected_answers": [{"text": "the mat",
                                        "char_spans": [[15, 21]]}]}]},
        {"context": "Paris is the capital of France.",
         "qas": [{"qid": "a2", "question": "What is the capital of France?",
                  "detected_answers": [{"text": "Paris", "token_spans": [[0, 0]]}],
                  "answers": ["Paris"]},
                 {"qid": "a3", "question": "Name something.",
                  "detected_answers": []}]},
    ]
    path = tmp_path / "toy.jsonl"
    path.write_text("\n".join(json.dumps(x) for x in lines), encoding="utf-8")
    counters = {}
    records = dt.load_jsonl(path, counters)
    assert counters["missing_answers"] == 1
    assert [r.qid for r in records] == ["a1", "a2"]
    assert records[0].source_tag == "toy"
    examples = dt.records_to_examples(records, "toy", counters)
    assert len(examples) == 2
    assert examples[0].context_tokens[examples[0].answer_span[0]:
                                      examples[0].answer_span[1] + 1] == ["the", "mat"]
    assert examples[1].answer_span == (0, 0)
    assert all(ex.check_span() for ex in examples)


def test_load_jsonl_malformed_line_reports_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"context": "x", "qas": []}\n{broken\n', encoding="utf-8")
    with pytest.raises(DataError, match="2"):
        dt.load_jsonl(path)
    path2 = tmp_path / "bad2.jsonl"
    path2.write_text('{"qas": []}\n', encoding="utf-8")
    with pytest.raises(DataError):
        dt.load_jsonl(path2)


def test_records_to_examples_sublist_fallback_and_drop():
    recs = [dt.RawRecord(context="alpha beta gamma", question="what is it ?",
                         answers=[("beta gamma", None)], qid="f1"),
            dt.RawRecord(context="alpha beta", question="what is it ?",
                         answers=[("delta", None)], qid="f2")]
    counters = {}
    got = dt.records_to_examples(recs, "d", counters)
    assert [ex.id for ex in got] == ["f1"]
    assert got[0].answer_span == (1, 2)
    assert counters["unaligned"] == 1


def test_domain_file_round_trip(tmp_path):
    exs = fixture_examples(6)
    spec = dt.DomainSpec("what", "train", exs)
    path = tmp_path / "what.train.jsonl"
    dt.save_domain_file(spec, path)
    loaded = dt.load_domain_file(path)
    assert loaded.name == "what" and loaded.split == "train"
    assert [e.id for e in loaded.examples] == [e.id for e in exs]
    assert [e.answer_span for e in loaded.examples] == [e.answer_span for e in exs]
    bad = tmp_path / "noheader.jsonl"
    bad.write_text('{"context": "x", "qas": []}\n', encoding="utf-8")
    with pytest.raises(DataError):
        dt.load_domain_file(bad)


def test_domain_dir_round_trip(tmp_path):
    domains = dt.make_synthetic_cda(dt.SyntheticConfig(n_domains=2, n_train=5,
                                                       n_test=3), seed=1)
    dt.save_domain_dir(domains, tmp_path / "out")
    loaded = dt.load_domain_dir(tmp_path / "out")
    assert [d.name for d in loaded] == ["dom0", "dom1"]
    for orig, back in zip(domains, loaded):
        assert [e.id for e in back.train.examples] == [e.id for e in orig.train.examples]
        assert [e.answer_text for e in back.test.examples] == \
            [e.answer_text for e in orig.test.examples]
    with pytest.raises(DataError):
        dt.load_domain_dir(tmp_path / "nowhere")


def test_synthetic_deterministic_and_span_valid():
    cfg = dt.SyntheticConfig(n_domains=3, n_train=20, n_test=10)
    a = dt.make_synthetic_cda(cfg, seed=5)
    b = dt.make_synthetic_cda(cfg, seed=5)
    for da, db in zip(a, b):
        assert [e.answer_text for e in da.train.examples] == \
            [e.answer_text for e in db.train.examples]
    for dom in a:
        for ex in dom.train.examples + dom.test.examples:
            assert ex.check_span()
    c = dt.make_synthetic_cda(cfg, seed=6)
    assert [e.answer_text for e in a[0].train.examples] != \
        [e.answer_text for e in c[0].train.examples]


def test_synthetic_interference_rotates_answer_slot():
    cfg = dt.SyntheticConfig(n_domains=3, n_train=10, n_test=5, n_slots=3)
    domains = dt.make_synthetic_cda(cfg, seed=2)
    for t, dom in enumerate(domains):
        for ex in dom.train.examples:
            s, e = ex.answer_span
            assert s == e == 4 * (t % cfg.n_slots) + 2
            assert ex.question_tokens[0] == "what"
            assert ex.question_tokens[3] == "hold"   # no slot cue in the question
    cued = dt.make_synthetic_cda(dt.SyntheticConfig(n_domains=2, n_train=4,
                                                    n_test=2, mode="cued"), seed=2)
    assert cued[1].train.examples[0].question_tokens[3] == "rel1"
    with pytest.raises(ConfigError):
        dt.SyntheticConfig(mode="bogus")
    with pytest.raises(ConfigError):
        dt.SyntheticConfig(n_domains=0)
