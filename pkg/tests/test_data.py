"""Vocabulary, loaders, synthetic generators, and batching."""

import numpy as np
import pytest

from ctdistill.data import (
    CLS,
    MASK,
    NUM_RESERVED,
    PAD,
    RESERVED,
    SEP,
    UNK,
    Dataset,
    Example,
    SyntheticSpec,
    Vocab,
    build_synthetic_vocab,
    detokenize,
    generate_synthetic,
    iter_batches,
    load_corpus_lines,
    load_tsv_classification,
    pad_batch,
    tokenize,
    write_corpus,
    write_tsv,
)
from ctdistill.errors import InputError, ParameterError


# ------------------------------------------------------------ vocab

def test_reserved_ids_are_stable():
    assert (PAD, UNK, CLS, SEP, MASK) == (0, 1, 2, 3, 4)
    v = Vocab(["apple", "pear"])
    for i, tok in enumerate(RESERVED):
        assert v.id_of(tok) == i
        assert v.token_of(i) == tok
        assert v.is_special(i)
    assert v.id_of("apple") == NUM_RESERVED
    assert not v.is_special(NUM_RESERVED)


def test_vocab_unknown_token_maps_to_unk():
    v = Vocab(["apple"])
    assert v.id_of("durian") == UNK
    assert "durian" not in v
    assert "apple" in v


def test_vocab_rejects_duplicates_and_reserved_collisions():
    with pytest.raises(InputError):
        Vocab(["a", "b", "a"])
    with pytest.raises(InputError):
        Vocab(["[MASK]"])


def test_vocab_token_of_range_check():
    v = Vocab(["a"])
    with pytest.raises(InputError):
        v.token_of(len(v))
    with pytest.raises(InputError):
        v.token_of(-1)


def test_vocab_save_load_round_trip(tmp_path):
    v = Vocab(["zeta", "alpha", "mid"])
    p = tmp_path / "vocab.txt"
    v.save(p)
    w = Vocab.load(p)
    assert len(w) == len(v)
    for i in range(len(v)):
        assert w.token_of(i) == v.token_of(i)


def test_vocab_load_requires_reserved_prefix(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("apple\npear\n", encoding="utf-8")
    with pytest.raises(InputError):
        Vocab.load(p)


def test_vocab_load_missing_file_is_input_error():
    with pytest.raises(InputError):
        Vocab.load("/nonexistent/vocab.txt")


def test_vocab_from_texts_keeps_first_appearance_order():
    v = Vocab.from_texts(["the cat sat", "the mat"])
    assert v.token_of(NUM_RESERVED) == "the"
    assert v.token_of(NUM_RESERVED + 1) == "cat"
    assert v.token_of(NUM_RESERVED + 3) == "mat"


# ------------------------------------------------------------ tokenize

def test_tokenize_prefixes_cls_and_lowercases():
    v = Vocab(["hello", "world"])
    ids = tokenize("Hello WORLD", v)
    assert ids[0] == CLS
    assert ids[1:] == [v.id_of("hello"), v.id_of("world")]


def test_tokenize_empty_text_is_an_error():
    v = Vocab(["a"])
    for text in ("", "   ", "\n"):
        with pytest.raises(InputError):
            tokenize(text, v)


def test_tokenize_detokenize_round_trip():
    v = Vocab(["red", "green", "blue"])
    text = "red blue blue green"
    ids = tokenize(text, v)
    assert detokenize(ids[1:], v) == text


def test_tokenize_oov_becomes_unk():
    v = Vocab(["known"])
    ids = tokenize("known stranger", v)
    assert ids == [CLS, v.id_of("known"), UNK]


# ------------------------------------------------------------ tsv loader

def test_tsv_loader_single_and_pair_sentences(tmp_path):
    v = Vocab(["nice", "day", "bad", "night"])
    p = tmp_path / "d.tsv"
    p.write_text("1\tnice day\n0\tbad\tnight\n", encoding="utf-8")
    ds = load_tsv_classification(p, v)
    assert len(ds) == 2 and ds.num_classes == 2
    assert ds.examples[0].ids.tolist() == [CLS, v.id_of("nice"), v.id_of("day")]
    assert ds.examples[1].ids.tolist() == [
        CLS, v.id_of("bad"), SEP, v.id_of("night")]
    assert ds.examples[0].label == 1 and ds.examples[1].label == 0
    assert [e.index for e in ds.examples] == [0, 1]


def test_tsv_loader_errors_name_the_line(tmp_path):
    v = Vocab(["x"])
    cases = [
        ("1\tx\nnope\tx\n", "line 2"),
        ("x\n", "line 1"),
        ("1\tx\n2\tx\textra\ttoomany\n", "line 2"),
        ("-1\tx\n", "line 1"),
    ]
    for content, needle in cases:
        p = tmp_path / "bad.tsv"
        p.write_text(content, encoding="utf-8")
        with pytest.raises(InputError, match=needle):
            load_tsv_classification(p, v)


def test_tsv_loader_skips_blank_lines_and_rejects_empty(tmp_path):
    v = Vocab(["x"])
    p = tmp_path / "gap.tsv"
    p.write_text("\n1\tx\n\n0\tx\n", encoding="utf-8")
    ds = load_tsv_classification(p, v)
    assert len(ds) == 2
    empty = tmp_path / "empty.tsv"
    empty.write_text("\n\n", encoding="utf-8")
    with pytest.raises(InputError):
        load_tsv_classification(empty, v)


def test_tsv_loader_missing_file_is_input_error():
    with pytest.raises(InputError):
        load_tsv_classification("/nonexistent/data.tsv", Vocab([]))


def test_tsv_write_then_load_round_trip(tmp_path):
    spec = SyntheticSpec(kind="classification")
    ds, vocab = generate_synthetic(spec, 40, seed=0)
    p = tmp_path / "round.tsv"
    write_tsv(ds, vocab, p)
    back = load_tsv_classification(p, vocab)
    assert len(back) == len(ds)
    assert back.num_classes == ds.num_classes
    for a, b in zip(ds.examples, back.examples):
        assert np.array_equal(a.ids, b.ids)
        assert a.label == b.label


# ------------------------------------------------------------ corpus loader

def test_corpus_loader_splits_documents_on_blank_lines(tmp_path):
    v = Vocab(["a", "b", "c"])
    p = tmp_path / "c.txt"
    p.write_text("a b\nb c\n\nc\n\n\na a\n", encoding="utf-8")
    ds = load_corpus_lines(p, v)
    assert len(ds) == 4
    assert ds.num_classes == 0
    assert all(e.label == -1 for e in ds.examples)
    assert ds.doc_bounds == [(0, 2), (2, 3), (3, 4)]


def test_corpus_loader_rejects_empty(tmp_path):
    p = tmp_path / "nothing.txt"
    p.write_text("\n\n", encoding="utf-8")
    with pytest.raises(InputError):
        load_corpus_lines(p, Vocab([]))


def test_corpus_write_then_load_round_trip(tmp_path):
    spec = SyntheticSpec(kind="corpus")
    ds, vocab = generate_synthetic(spec, 25, seed=1)
    p = tmp_path / "round.txt"
    write_corpus(ds, vocab, p)
    back = load_corpus_lines(p, vocab)
    assert len(back) == len(ds)
    assert back.doc_bounds == ds.doc_bounds
    for a, b in zip(ds.examples, back.examples):
        assert np.array_equal(a.ids, b.ids)


# ------------------------------------------------------------ synthetic

def test_synthetic_spec_validation():
    with pytest.raises(ParameterError):
        SyntheticSpec(kind="images")
    with pytest.raises(ParameterError):
        SyntheticSpec(num_classes=1)
    with pytest.raises(ParameterError):
        SyntheticSpec(min_len=0)
    with pytest.raises(ParameterError):
        SyntheticSpec(min_len=9, max_len=5)
    with pytest.raises(ParameterError):
        SyntheticSpec(marker_prob=1.5)
    with pytest.raises(ParameterError):
        SyntheticSpec(num_topics=0)


def test_synthetic_spec_from_mapping_coerces_types():
    spec = SyntheticSpec.from_mapping(
        {"kind": "corpus", "num_topics": "6", "marker_prob": "0.5"})
    assert spec.kind == "corpus"
    assert spec.num_topics == 6
    assert spec.marker_prob == 0.5


def test_synthetic_generation_is_deterministic():
    spec = SyntheticSpec()
    a, va = generate_synthetic(spec, 30, seed=5)
    b, vb = generate_synthetic(spec, 30, seed=5)
    c, _ = generate_synthetic(spec, 30, seed=6)
    assert len(va) == len(vb)
    for x, y in zip(a.examples, b.examples):
        assert np.array_equal(x.ids, y.ids) and x.label == y.label
    assert any(not np.array_equal(x.ids, y.ids)
               for x, y in zip(a.examples, c.examples))


def test_synthetic_rejects_tiny_n():
    with pytest.raises(ParameterError):
        generate_synthetic(SyntheticSpec(), 1, seed=0)


def test_synthetic_labels_are_balanced():
    ds, _ = generate_synthetic(SyntheticSpec(num_classes=4), 100, seed=7)
    counts = np.bincount(ds.labels, minlength=4)
    np.testing.assert_array_equal(counts, [25, 25, 25, 25])


def test_synthetic_marker_rule_recovers_most_labels():
    # predicting by which class marker appears should score close to
    # marker_prob plus chance on the remainder
    spec = SyntheticSpec(num_classes=2, marker_prob=0.9)
    ds, vocab = generate_synthetic(spec, 500, seed=8)
    markers = {vocab.id_of("mark%d" % c): c for c in range(2)}
    correct = 0
    for e in ds.examples:
        present = [markers[i] for i in e.ids.tolist() if i in markers]
        guess = present[0] if present else 0
        correct += int(guess == e.label)
    assert correct / len(ds) >= 0.9


def test_synthetic_marker_tokens_exist_in_vocab():
    spec = SyntheticSpec(num_classes=3)
    vocab = build_synthetic_vocab(spec)
    for c in range(3):
        assert "mark%d" % c in vocab
    assert "t0w0" in vocab


def test_synthetic_corpus_documents_partition_the_examples():
    ds, _ = generate_synthetic(SyntheticSpec(kind="corpus"), 50, seed=9)
    assert ds.num_classes == 0
    assert ds.doc_bounds[0][0] == 0
    assert ds.doc_bounds[-1][1] == 50
    for (a0, a1), (b0, b1) in zip(ds.doc_bounds, ds.doc_bounds[1:]):
        assert a1 == b0
        assert a0 < a1


def test_synthetic_lengths_respect_bounds():
    spec = SyntheticSpec(min_len=5, max_len=12)
    ds, _ = generate_synthetic(spec, 200, seed=10)
    for e in ds.examples:
        body = e.valid_len - 1  # drop [CLS]
        assert 5 <= body <= 13  # marker insertion can add one token


# ------------------------------------------------------------ batching

def test_pad_batch_layout():
    exs = [Example(np.array([2, 7, 8]), 1, 0),
           Example(np.array([2, 9]), 0, 1)]
    b = pad_batch(exs)
    np.testing.assert_array_equal(b.ids, [[2, 7, 8], [2, 9, PAD]])
    np.testing.assert_array_equal(b.valid_lens, [3, 2])
    np.testing.assert_array_equal(b.labels, [1, 0])
    np.testing.assert_array_equal(b.indices, [0, 1])
    assert b.size == 2


def test_pad_batch_unlabeled_has_no_labels():
    exs = [Example(np.array([2, 7]), -1, 0)]
    assert pad_batch(exs).labels is None


def test_pad_batch_pad_to_forces_extra_columns():
    exs = [Example(np.array([2, 7]), 1, 0)]
    b = pad_batch(exs, pad_to=5)
    np.testing.assert_array_equal(b.ids, [[2, 7, PAD, PAD, PAD]])
    np.testing.assert_array_equal(b.valid_lens, [2])
    # shorter than the longest member: no effect
    b2 = pad_batch(exs, pad_to=1)
    assert b2.ids.shape == (1, 2)


def test_pad_batch_rejects_empty():
    with pytest.raises(ParameterError):
        pad_batch([])


def test_iter_batches_covers_each_example_once():
    ds, _ = generate_synthetic(SyntheticSpec(), 23, seed=11)
    seen = []
    for b in iter_batches(ds, 5, rng=np.random.default_rng(0)):
        seen.extend(b.indices.tolist())
    assert sorted(seen) == list(range(23))
    assert len(seen) == 23


def test_iter_batches_unshuffled_is_contiguous():
    ds, _ = generate_synthetic(SyntheticSpec(kind="corpus"), 10, seed=12)
    batches = list(iter_batches(ds, 4, shuffle=False))
    assert [b.indices.tolist() for b in batches] == [
        [0, 1, 2, 3], [4, 5, 6, 7], [8, 9]]


def test_iter_batches_validation():
    ds, _ = generate_synthetic(SyntheticSpec(), 6, seed=13)
    with pytest.raises(ParameterError):
        list(iter_batches(ds, 0, rng=np.random.default_rng(0)))
    with pytest.raises(ParameterError):
        list(iter_batches(ds, 2, rng=None, shuffle=True))


def test_iter_batches_shuffle_permutes_but_preserves_contents():
    ds, _ = generate_synthetic(SyntheticSpec(), 16, seed=14)
    a = [b.indices.tolist() for b in
         iter_batches(ds, 4, rng=np.random.default_rng(1))]
    b = [x.indices.tolist() for x in
         iter_batches(ds, 4, rng=np.random.default_rng(2))]
    flat_a = [i for chunk in a for i in chunk]
    flat_b = [i for chunk in b for i in chunk]
    assert sorted(flat_a) == sorted(flat_b)
    assert flat_a != flat_b


def test_example_valid_len_and_dataset_labels():
    e = Example(np.array([2, 5, 6, 7]), 3, 9)
    assert e.valid_len == 4
    ds = Dataset([e, Example(np.array([2]), 1, 1)], num_classes=4)
    np.testing.assert_array_equal(ds.labels, [3, 1])
    assert len(ds) == 2
