from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from realit.errors import EmptyCorpus
from realit.subtok import BpeVocab, bpe_train


def naive_bpe(texts, size):
    """Recount every pair from scratch each round."""
    words = Counter(t for t in texts if t)
    segs = {w: list(w) for w in words}
    symbols = {ch for w in words for ch in w}
    merges = []
    while len(symbols) < size:
        counts = Counter()
        for w, c in words.items():
            s = segs[w]
            for a, b in zip(s, s[1:]):
                counts[(a, b)] += c
        if not counts or max(counts.values()) < 2:
            break
        top = max(counts.values())
        pair = min(p for p, c in counts.items() if c == top)
        merges.append(pair)
        symbols.add(pair[0] + pair[1])
        for w, s in segs.items():
            out, j = [], 0
            while j < len(s):
                if j + 1 < len(s) and (s[j], s[j + 1]) == pair:
                    out.append(s[j] + s[j + 1])
                    j += 2
                else:
                    out.append(s[j])
                    j += 1
            segs[w] = out
    return merges


def test_first_merge():
    vocab = bpe_train(["aaab", "aab"], 10)
    assert vocab.merges[0] == ("a", "a")


def test_alphabet_size_no_merges():
    vocab = bpe_train(["aaab", "aab"], 2)
    assert vocab.merges == []
    assert vocab.size == 4   # pad, unk, a, b


def test_deterministic():
    texts = ["return", "retry", "result", "results", "self", "value", "values"] * 3
    assert bpe_train(texts, 30).merges == bpe_train(texts, 30).merges


def test_ids_dense_and_specials():
    vocab = bpe_train(["items", "item", "idx"], 12)
    assert sorted(vocab.id_table.values()) == list(range(vocab.size))
    assert (vocab.pad_id, vocab.unk_id) == (0, 1)
    seen = set(vocab.symbols()[2:2 + len(set("itemsdx"))])
    for a, b in vocab.merges:
        assert a in vocab.id_table and b in vocab.id_table
    assert seen


def test_encode_decode():
    vocab = bpe_train(["items", "item", "idx", "index"], 20)
    for text in ["items", "index", "mix"]:
        assert vocab.decode(vocab.encode(text)) == text
    assert vocab.encode("") == []
    assert vocab.encode("zz") == [vocab.unk_id, vocab.unk_id]


def test_errors():
    with pytest.raises(EmptyCorpus):
        bpe_train([], 10)
    with pytest.raises(EmptyCorpus):
        bpe_train([""], 10)
    with pytest.raises(ValueError):
        bpe_train(["abc"], 2)


def test_persistence(tmp_path):
    vocab = bpe_train(["self", "selected", "select"], 15)
    vocab.save(tmp_path / "v.json")
    back = BpeVocab.load(tmp_path / "v.json")
    assert back == vocab and back.digest() == vocab.digest()
    assert back.encode("selects") == vocab.encode("selects")


@settings(max_examples=80, deadline=None)
@given(st.lists(st.text(alphabet="abcd_", min_size=1, max_size=8), min_size=1, max_size=25),
       st.integers(0, 20))
def test_property_matches_naive(texts, extra):
    size = len({ch for t in texts for ch in t}) + extra
    vocab = bpe_train(texts, size)
    assert vocab.merges == naive_bpe(texts, size)
    for t in texts:
        assert vocab.decode(vocab.encode(t)) == t
