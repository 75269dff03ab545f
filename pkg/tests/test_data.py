from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topic_convs2s import data, lda
from topic_convs2s.data import BOS, EOS, PAD, UNK


def write(tmp_path, text, name="corpus.tsv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# -- corpus files -------------------------------------------------------------------

def test_load_single_pair(tmp_path):
    assert data.load_corpus(write(tmp_path, "a b\tc d\n")) == [(["a", "b"], ["c", "d"])]


def test_load_empty_file(tmp_path):
    assert data.load_corpus(write(tmp_path, "")) == []


def test_two_tabs_rejected_with_line_number(tmp_path):
    with pytest.raises(data.CorpusFormatError, match=":2:"):
        data.load_corpus(write(tmp_path, "a\tb\nc\td\te\n"))


def test_blank_lines_skipped(tmp_path):
    assert len(data.load_corpus(write(tmp_path, "a\tb\n\n  \nc\td\n"))) == 2


def test_corpus_round_trip(tmp_path):
    pairs = data.toy_corpus(0, 5).pairs
    data.save_corpus(pairs, tmp_path / "c.tsv")
    assert data.load_corpus(tmp_path / "c.tsv") == pairs


# -- vocabulary ---------------------------------------------------------------------

def test_vocab_size_includes_reserved():
    v = data.build_vocab([(["a", "b"], ["c", "a"])], max_size=100)
    assert len(v) == 7
    assert v.itos[:4] == list(data.SPECIALS)


def test_min_count_drops_singletons():
    v = data.build_vocab([(["a", "a", "b"], ["a"])], min_count=2)
    assert "b" not in v
    assert v.encode(["b"]) == [UNK]


def test_max_size_keeps_most_frequent_with_lexicographic_ties():
    v = data.build_vocab([(["c", "b", "a", "a"], ["b"])], max_size=6)
    assert v.itos[4:] == ["a", "b"]


def test_vocab_deterministic_and_persistent(tmp_path):
    pairs = data.toy_corpus(2, 20).pairs
    a, b = data.build_vocab(pairs), data.build_vocab(pairs)
    assert a.itos == b.itos and a.hash() == b.hash()
    a.save(tmp_path / "v.txt")
    back = data.Vocabulary.load(tmp_path / "v.txt")
    assert back.itos == a.itos and back.hash() == a.hash()


@given(st.lists(st.sampled_from(["x", "y", "zz", "w"]), max_size=10))
def test_encode_decode_round_trip(tokens):
    v = data.Vocabulary(["x", "y", "zz", "w"])
    assert v.decode(v.encode(tokens)) == tokens


def test_decode_stops_at_eos():
    v = data.Vocabulary(["x"])
    assert v.decode([BOS, 4, EOS, 4]) == ["x"]


# -- batching -----------------------------------------------------------------------

def test_batch_sizes():
    pairs = [(["a"] * (i + 1), ["b"]) for i in range(5)]
    v = data.build_vocab(pairs)
    assert sorted(len(b) for b in data.make_batches(pairs, v, batch_size=2)) == [1, 2, 2]


def test_equal_lengths_need_no_padding():
    pairs = [(["a", "b"], ["c"]), (["b", "a"], ["a"])]
    v = data.build_vocab(pairs)
    (b,) = data.make_batches(pairs, v, batch_size=2)
    assert not (b.source == PAD).any() and not (b.target == PAD).any()


def test_same_seed_same_order():
    pairs = data.toy_corpus(1, 30).pairs
    v = data.build_vocab(pairs)
    a = data.make_batches(pairs, v, batch_size=4, seed=9)
    b = data.make_batches(pairs, v, batch_size=4, seed=9)
    assert [x.pairs for x in a] == [x.pairs for x in b]


def test_targets_are_framed():
    b = data.make_batch([([4], [4, 4])])
    np.testing.assert_array_equal(b.target[0], [BOS, 4, 4, EOS])
    np.testing.assert_array_equal(b.decoder_input[0], [BOS, 4, 4])
    np.testing.assert_array_equal(b.decoder_output[0], [4, 4, EOS])


def test_overlong_pairs_truncated_with_warning():
    pairs = [(["a"] * 10, ["b"] * 10)]
    v = data.build_vocab(pairs)
    with pytest.warns(UserWarning, match="truncated"):
        (b,) = data.make_batches(pairs, v, max_source_len=4, max_target_len=3)
    assert b.source.shape == (1, 4) and b.target.shape == (1, 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 7))
def test_batches_reconstruct_pairs_and_topic_mask(seed, batch_size):
    tc = data.toy_corpus(seed, 15)
    v = data.build_vocab(tc.pairs)
    tv = lda.TopicVocabulary(list(tc.topic_words[0][:4]), [list(tc.topic_words[0][:4])])
    batches = data.make_batches(tc.pairs, v, tv, batch_size=batch_size, seed=seed)
    seen = Counter()
    for b in batches:
        for row, (src, tgt) in enumerate(b.pairs):
            seen[(tuple(src), tuple(tgt))] += 1
            assert v.decode(b.source[row]) == src
            assert v.decode(b.target[row]) == tgt
            for j, tok in enumerate(src):
                assert b.topic_mask[row, j] == (tok in tv)
        assert not b.topic_mask[b.source == PAD].any()
    assert seen == Counter((tuple(s), tuple(t)) for s, t in tc.pairs)


# -- toy corpus -----------------------------------------------------------------------

def test_single_pair_is_reproducible():
    assert data.toy_corpus(5, 1).pairs == data.toy_corpus(5, 1).pairs
    assert len(data.toy_corpus(5, 1).pairs) == 1


def test_target_words_come_from_source():
    for src, tgt in data.toy_corpus(0, 50).pairs:
        assert set(tgt) <= set(src)


def test_toy_topics_recoverable():
    tc = data.toy_corpus(0, 100)
    docs = tc.sources()
    universal = lda.universal_words(docs)
    m = lda.fit_lda([[w for w in d if w not in universal] for d in docs], 2, iterations=200)
    assert lda.topic_purity(m.dominant_topics(), tc.labels) > 0.9
