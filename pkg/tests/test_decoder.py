import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import HAND_FUNCS
from oracles import exhaustive, random_output, rigged_output
from realit.decoder import (NO_MEANINGFUL_REPAIR, DecodeConfig, best_legal_repair, decode,
                            greedy_decode, repair_distribution)
from realit.errors import ConfigError
from realit.mutgen import MutationConfig, external_vocab, is_legal
from realit.pytok import tokenize
from realit.synth import generate_functions

VOCAB = external_vocab()
RULES = MutationConfig()


def saturating(seq):
    return DecodeConfig(k_loc=len(seq) + 1, k_rep=len(seq) + len(VOCAB))


SRC = "def f(a, b):\n    return a == b\n"


def test_noop_mass():
    seq = tokenize(SRC)
    out = rigged_output(seq, {0: 0.97}, {})
    assert decode(out, seq).edit.is_noop
    assert greedy_decode(out, seq).edit.is_noop


def test_rigged_filtering_and_greedy_divergence():
    seq = tokenize(SRC)
    n = len(seq)
    eq = seq.texts.index("==")
    b_last = n - 1 - seq.texts[::-1].index("b")
    a_col = seq.texts.index("a")
    # top location "==" wants to be repaired by "==" itself, which is not meaningful
    out = rigged_output(seq, {eq + 1: 0.6, b_last + 1: 0.3, 0: 0.05},
                        {eq + 1: {eq: 0.9, n + VOCAB.index("!="): 0.05},
                         b_last + 1: {a_col: 0.9}})
    res = decode(out, seq, DecodeConfig(k_loc=3, k_rep=1))
    assert res.edit.key() == ("replace", b_last, "a")
    a_cols = [j for j, t in enumerate(seq.texts) if t == "a"]
    assert res.p_joint == pytest.approx(0.3 * out.repair_probs[b_last, a_cols].sum())
    greedy = greedy_decode(out, seq)
    assert greedy.edit.key() == ("replace", eq, "!=")
    assert greedy.edit != res.edit


def test_no_survivor_flag():
    seq = tokenize(SRC)
    eq = seq.texts.index("==")
    out = rigged_output(seq, {eq + 1: 0.9}, {eq + 1: {eq: 0.99}})
    res = decode(out, seq, DecodeConfig(k_loc=1, k_rep=1))
    assert res.edit.is_noop and res.flag == NO_MEANINGFUL_REPAIR
    assert res.p_joint == pytest.approx(out.loc_probs[0])


def test_greedy_noop_fallback():
    seq = tokenize(SRC)
    paren = seq.texts.index("(")
    out = rigged_output(seq, {paren + 1: 0.9}, {})
    res = greedy_decode(out, seq)
    assert res.edit.is_noop and res.flag == NO_MEANINGFUL_REPAIR


def test_unimodal_greedy_equals_beam():
    seq = tokenize(SRC)
    eq = seq.texts.index("==")
    out = rigged_output(seq, {eq + 1: 0.9}, {eq + 1: {len(seq) + VOCAB.index("!="): 0.95}})
    assert decode(out, seq).edit == greedy_decode(out, seq).edit
    assert decode(out, seq).edit.key() == ("replace", eq, "!=")


def test_pooling_by_text():
    seq = tokenize("def f(a, b):\n    c = a + b\n    return c - b\n")
    rng = np.random.default_rng(0)
    out = random_output(seq, rng)
    pooled = repair_distribution(out, seq, 3, VOCAB)
    cols = [j for j, t in enumerate(seq.texts) if t == "b"]
    assert pooled["b"] == pytest.approx(out.repair_probs[2, cols].sum())
    assert sum(pooled.values()) == pytest.approx(1.0)


def test_oracle_equivalence_100():
    rng = np.random.default_rng(123)
    funcs = HAND_FUNCS + generate_functions(40, seed=3)
    for trial in range(100):
        seq = tokenize(funcs[trial % len(funcs)])
        out = random_output(seq, rng, temp=float(rng.choice([0.5, 3.0, 8.0])))
        res = decode(out, seq, saturating(seq))
        edit, p = exhaustive(out, seq)
        assert res.edit.key() == edit.key()
        assert res.p_joint == pytest.approx(p, rel=1e-12)


def test_legality_of_results():
    rng = np.random.default_rng(5)
    for src in HAND_FUNCS:
        seq = tokenize(src)
        for _ in range(5):
            res = decode(random_output(seq, rng), seq)
            if res.edit.is_noop:
                continue
            assert is_legal(seq, res.edit, RULES)
            tok = seq.tokens[res.edit.loc]
            if res.edit.action == "replace":
                assert res.edit.payload != tok.text
            if res.edit.bug_type == "var_misuse":
                assert res.edit.payload in seq.scope_vars[res.edit.loc]


def test_best_legal_repair():
    seq = tokenize(SRC)
    eq = seq.texts.index("==")
    out = rigged_output(seq, {}, {eq + 1: {eq: 0.8, len(seq) + VOCAB.index(">="): 0.15}})
    assert best_legal_repair(out, seq, eq + 1) == ">="
    assert best_legal_repair(out, seq, seq.texts.index("(") + 1) is None


def test_config_errors():
    with pytest.raises(ConfigError):
        DecodeConfig(k_loc=0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 4),
       st.integers(0, 4), st.sampled_from(range(len(HAND_FUNCS))))
def test_property_monotone_beam(seed, kl, kr, dl, dr, which):
    seq = tokenize(HAND_FUNCS[which])
    out = random_output(seq, np.random.default_rng(seed))
    small = decode(out, seq, DecodeConfig(k_loc=kl, k_rep=kr))
    large = decode(out, seq, DecodeConfig(k_loc=kl + dl, k_rep=kr + dr))
    assert large.p_joint >= small.p_joint
