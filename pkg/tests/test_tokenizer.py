import re
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxembed.tokenizer import Tokenizer, bpe_train


def first_merge_oracle(corpus):
    """Most frequent adjacent byte pair inside whitespace chunks, smallest pair on ties."""
    counts = Counter()
    for text in corpus:
        for chunk in re.findall(rb" ?\S+|\s+", text.encode()):
            for a, b in zip(chunk, chunk[1:]):
                counts[(a, b)] += 1
    top = max(counts.values())
    return min(p for p, c in counts.items() if c == top)


def test_byte_fallback_only():
    tok = bpe_train(["hello world"], 256 + 4)
    assert tok.merges == [] and tok.vocab_size == 260
    assert tok.encode("hi") == [ord("h"), ord("i")]


def test_repeated_letter_merges_aa_first():
    tok = bpe_train(["aaaaaaaa"], 265)
    assert tok.merges[0] == (ord("a"), ord("a"))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.text(alphabet="abc d", min_size=2, max_size=30), min_size=1, max_size=6))
def test_first_merge_matches_frequency_count(corpus):
    counts_exist = any(len(c) > 1 for t in corpus for c in re.findall(rb" ?\S+|\s+", t.encode()))
    if not counts_exist:
        return
    tok = bpe_train(corpus, 261)
    oracle_counts = Counter()
    for text in corpus:
        for chunk in re.findall(rb" ?\S+|\s+", text.encode()):
            oracle_counts.update(zip(chunk, chunk[1:]))
    if max(oracle_counts.values()) < 2:
        assert tok.merges == []
    else:
        assert tok.merges[0] == first_merge_oracle(corpus)


def test_deterministic():
    corpus = ["the cat sat on the mat", "the dog sat on the log"] * 3
    assert bpe_train(corpus, 300, seed=0).merges == bpe_train(corpus, 300, seed=0).merges


def test_special_ids_distinct_and_outside_merges():
    tok = bpe_train(["abab abab abab"], 280)
    specials = tok.special_ids
    assert len(set(specials)) == 4
    assert all(256 <= s < tok.first_merge_id for s in specials)
    assert not any(s in m for m in tok.merges for s in specials)


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=64))
def test_round_trip_arbitrary_bytes(data):
    tok = bpe_train(["the quick brown fox jumps over the lazy dog " * 3, "\x00\xff bytes"], 320)
    assert tok.decode_bytes(tok.encode(data)) == data


def test_save_load_and_fingerprint(tmp_path):
    tok = bpe_train(["banana bandana"] * 4, 270)
    tok.save(tmp_path / "t.json")
    back = Tokenizer.load(tmp_path / "t.json")
    assert back.merges == tok.merges
    assert back.fingerprint() == tok.fingerprint()
    assert bpe_train(["other text here"] * 4, 270).fingerprint() != tok.fingerprint()


def test_errors():
    with pytest.raises(ValueError):
        bpe_train([], 300)
    with pytest.raises(ValueError):
        bpe_train(["abc"], 259)


def test_unicode_text_round_trip():
    tok = bpe_train(["naïve café"], 270)
    assert tok.decode(tok.encode("naïve café → 東京")) == "naïve café → 東京"
