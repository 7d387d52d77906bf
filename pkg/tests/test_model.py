import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import HAND_FUNCS, VARMISUSE_BUGGY
from gradcheck import model_gradients
from realit import nnkernel as K
from realit.edits import EditOp
from realit.errors import CheckpointMismatch, ConfigError, QueryIsNoop, TargetUnreachable, TooLong
from realit.model import (Batch, Model, ModelConfig, embed, joint_prob, prepare, repair_scores,
                          repair_target)
from realit.pytok import Token, TokenSeq, tokenize
from realit.subtok import bpe_train

TEXTS = ["def", "return", "patch", "patches", "applied", "self", "a", "b", "x", "+", "==", "(",
         ")", ":", "for", "in", "if"]


@pytest.fixture(scope="module")
def bpe():
    return bpe_train(TEXTS, 30)


def tiny_cfg(**kw):
    base = dict(layers=1, d=4, ff=6, heads=2, dropout=0.0, max_tokens=64, max_rel=2)
    base.update(kw)
    return ModelConfig(**base)


def randomize(model, seed=0, std=0.5):
    rng = np.random.default_rng(seed)
    for p in model.params.values():
        p.data[...] = rng.normal(0.0, std, size=p.data.shape)
    return model


def three_tokens(texts=("a", "+", "b")):
    toks = tuple(Token(t, "identifier", 1, i, (i, i)) for i, t in enumerate(texts))
    return TokenSeq(toks, " ".join(texts))


# -- oracle forward, written with explicit loops --------------------------------

def ln(x, g, b, eps=1e-5):
    mu = sum(x) / len(x)
    var = sum((v - mu) ** 2 for v in x) / len(x)
    return np.array([(v - mu) / math.sqrt(var + eps) * gi + bi for v, gi, bi in zip(x, g, b)])


def oracle_forward(model, seq):
    P = {k: v.data for k, v in model.params.items()}
    cfg = model.cfg
    d, H = cfg.d, cfg.heads
    dh = d // H
    rows = [P["embed.noop"]]
    for t in seq.tokens:
        ids = model.bpe.encode(t.text)
        rows.append(sum(P["embed.subtok"][i] for i in ids) / len(ids))
    e = np.array(rows)
    N = len(e)
    x = e.copy()
    for l in range(cfg.layers):
        p = f"enc{l}."
        h = np.array([ln(x[i], P[p + "ln1.g"], P[p + "ln1.b"]) for i in range(N)])
        q = h @ P[p + "q.w"] + P[p + "q.b"]
        k = h @ P[p + "k.w"] + P[p + "k.b"]
        v = h @ P[p + "v.w"] + P[p + "v.b"]
        ctx = np.zeros((N, d))
        for hd in range(H):
            sl = slice(hd * dh, (hd + 1) * dh)
            for i in range(N):
                logits = []
                for j in range(N):
                    off = max(-cfg.max_rel, min(cfg.max_rel, j - i)) + cfg.max_rel
                    a = P[p + "rel_k"][off]
                    logits.append((q[i, sl] @ k[j, sl] + q[i, sl] @ a) / math.sqrt(dh))
                w = np.exp(np.array(logits) - max(logits))
                w /= w.sum()
                ctx[i, sl] = sum(w[j] * v[j, sl] for j in range(N))
        x = x + ctx @ P[p + "o.w"] + P[p + "o.b"]
        h2 = np.array([ln(x[i], P[p + "ln2.g"], P[p + "ln2.b"]) for i in range(N)])
        x = x + np.maximum(h2 @ P[p + "ff1.w"] + P[p + "ff1.b"], 0) @ P[p + "ff2.w"] + P[p + "ff2.b"]
    r = np.array([ln(x[i], P["enc.lnf.g"], P["enc.lnf.b"]) for i in range(N)])
    loc = np.array([np.maximum(np.concatenate([r[i], e[i], r[i] - e[i]]) @ P["loc.w1"], 0)
                    @ P["loc.w2"][:, 0] for i in range(N)])
    n = N - 1
    rep = np.zeros((n, n + len(cfg.vocab)))
    for i in range(n):
        qi = r[i + 1] @ P["rep.wq"]
        for j in range(n):
            rep[i, j] = qi @ (r[j + 1] @ P["rep.wk"]) / math.sqrt(d)
        for v_ in range(len(cfg.vocab)):
            rep[i, n + v_] = qi @ P["rep.vocab"][v_] / math.sqrt(d)
    return loc, rep


def test_hand_oracle_three_tokens(bpe):
    model = randomize(Model(tiny_cfg(), bpe))
    seq = three_tokens()
    out = model.predict([seq], with_mask=False)[0]
    loc, rep = oracle_forward(model, seq)
    np.testing.assert_allclose(out.loc_logits, loc, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(out.repair_logits, rep, rtol=1e-10, atol=1e-12)


def test_oracle_real_function_two_layers(bpe):
    model = randomize(Model(tiny_cfg(layers=2, d=8, heads=2, max_rel=3), bpe), seed=4, std=0.3)
    seq = tokenize("def f(a, b):\n    return a + b\n")
    out = model.predict([seq], with_mask=False)[0]
    loc, rep = oracle_forward(model, seq)
    np.testing.assert_allclose(out.loc_logits, loc, rtol=1e-9, atol=1e-11)
    np.testing.assert_allclose(out.repair_logits, rep, rtol=1e-9, atol=1e-11)


def test_batching_matches_single(bpe):
    model = randomize(Model(tiny_cfg(d=8), bpe), seed=2, std=0.3)
    seqs = [tokenize(s) for s in HAND_FUNCS[:4]]
    together = model.predict(seqs)
    for seq, out in zip(seqs, together):
        alone = model.predict([seq])[0]
        np.testing.assert_allclose(out.loc_logits, alone.loc_logits, atol=1e-10)
        np.testing.assert_allclose(out.repair_logits, alone.repair_logits, atol=1e-10)


def test_repair_scores_matches_predict(bpe):
    model = randomize(Model(tiny_cfg(d=8), bpe), seed=3, std=0.3)
    seq = tokenize(HAND_FUNCS[1])
    prep = model.prepare(seq)
    _, _, r, _ = model.forward([prep])
    out = model.predict([seq])[0]
    r0 = K.Tensor(r.data[0])
    for slot in (1, 5, prep.n):
        np.testing.assert_allclose(repair_scores(r0, slot, model.params, model.cfg).data,
                                   out.repair_logits[slot - 1], atol=1e-10)
    with pytest.raises(QueryIsNoop):
        repair_scores(r0, 0, model.params, model.cfg)


# -- embedding -------------------------------------------------------------------

def test_embedding_mean(bpe):
    model = randomize(Model(tiny_cfg(), bpe))
    seq = three_tokens(("patches", "a", "patches"))
    prep = model.prepare(seq)
    e = embed(Batch.of([prep]), model.params).data[0]
    E = model.params["embed.subtok"].data
    ids = bpe.encode("patches")
    assert len(ids) >= 1
    np.testing.assert_allclose(e[1], E[ids].mean(axis=0))
    np.testing.assert_allclose(e[1], e[3])
    np.testing.assert_allclose(e[2], E[bpe.encode("a")[0]])
    np.testing.assert_allclose(e[0], model.params["embed.noop"].data)


def test_embedding_three_subtokens():
    vocab = bpe_train(["ab", "ab", "cd", "cd", "ef", "ef"], 9)
    assert vocab.split("abcdef") == ["ab", "cd", "ef"]
    model = randomize(Model(tiny_cfg(), vocab))
    e = embed(Batch.of([model.prepare(three_tokens(("abcdef", "ab", "x")))]), model.params).data[0]
    E = model.params["embed.subtok"].data
    manual = (E[vocab.id_table["ab"]] + E[vocab.id_table["cd"]] + E[vocab.id_table["ef"]]) / 3
    np.testing.assert_allclose(e[1], manual)
    np.testing.assert_allclose(e[3], E[vocab.unk_id])


# -- heads -------------------------------------------------------------------------

def test_zero_w2_uniform_loc(bpe):
    model = randomize(Model(tiny_cfg(), bpe))
    model.params["loc.w2"].data[...] = 0.0
    out = model.predict([tokenize(HAND_FUNCS[0])])[0]
    np.testing.assert_allclose(out.loc_probs, 1.0 / (out.n + 1))


def test_zero_wq_uniform_repair(bpe):
    model = randomize(Model(tiny_cfg(), bpe))
    model.params["rep.wq"].data[...] = 0.0
    out = model.predict([tokenize(HAND_FUNCS[0])])[0]
    np.testing.assert_allclose(out.repair_probs, 1.0 / out.repair_probs.shape[1])


def test_loc_head_hand_computation(bpe):
    cfg = tiny_cfg(d=2, heads=1, ff=2)
    model = Model(cfg, bpe, seed=0)
    model.params["loc.w1"].data[...] = np.array([[1, 0], [0, 1], [1, 1], [0, 0], [1, -1], [2, 0]])
    model.params["loc.w2"].data[...] = np.array([[1.0], [-2.0]])
    seq = three_tokens(("a", "b"))
    prep = model.prepare(seq)
    batch, e, r, s = model.forward([prep])
    for i in range(3):
        ri, ei = r.data[0, i], e.data[0, i]
        f = np.concatenate([ri, ei, ri - ei])
        h = np.maximum(f @ model.params["loc.w1"].data, 0)
        assert s.data[0, i] == pytest.approx(h[0] - 2 * h[1])


def test_normalization_and_factorization(bpe, fixture_corpus):
    model = Model(ModelConfig(d=16, ff=32, heads=2), bpe, seed=1)
    outs = model.predict([tokenize(s) for s in fixture_corpus[:30]])
    for out in outs:
        assert np.all(np.isfinite(out.loc_logits)) and np.all(np.isfinite(out.repair_logits))
        assert out.loc_probs.sum() == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_allclose(out.repair_probs.sum(axis=1), 1.0, atol=1e-6)
        assert joint_prob(out, 0, 0) == out.loc_probs[0]
        assert joint_prob(out, 2, 1) == pytest.approx(out.loc_probs[2] * out.repair_probs[1, 1])


def test_single_token_and_determinism(bpe):
    model = Model(tiny_cfg(dropout=0.3), bpe, seed=0)
    seq = three_tokens(("a",))
    a = model.predict([seq])[0]
    b = model.predict([seq])[0]
    assert np.array_equal(a.loc_logits, b.loc_logits) and np.all(np.isfinite(a.repair_logits))
    assert a.repair_logits.shape == (1, 1 + len(model.cfg.vocab))


# -- loss ----------------------------------------------------------------------------

def test_loss_matches_probabilities(bpe):
    model = randomize(Model(tiny_cfg(d=8), bpe), seed=5, std=0.3)
    src = "def f(a, b):\n    x = a + b\n    return b - x\n"
    seq = tokenize(src)
    loc = seq.texts.index("a", 5)
    truth = EditOp("replace", loc, "b", "var_misuse")
    out = model.predict([seq], with_mask=False)[0]
    cols = [j for j, t in enumerate(seq.texts) if t == "b"]
    assert len(cols) == 3
    expect = -math.log(out.loc_probs[loc + 1]) - math.log(out.repair_probs[loc, cols].sum())
    got = model.loss([model.prepare(seq)], [truth]).item()
    assert got == pytest.approx(expect, rel=1e-10)
    noop = model.loss([model.prepare(seq)], [EditOp.noop()]).item()
    assert noop == pytest.approx(-math.log(out.loc_probs[0]), rel=1e-10)
    both = model.loss([model.prepare(seq), model.prepare(seq)], [truth, EditOp.noop()]).item()
    assert both == pytest.approx((expect + noop) / 2, rel=1e-10)


def test_marginal_arithmetic():
    logits = K.Tensor(np.log(np.array([[0.3, 0.2, 0.5]])))
    target = np.array([[True, True, False]])
    assert K.cross_entropy(logits, target).item() == pytest.approx(-math.log(0.5))


def test_repair_target_includes_vocab(bpe):
    seq = tokenize("def f(a):\n    return a < 1\n")
    truth = EditOp("replace", seq.texts.index("<"), "<=", "wrong_binop")
    vocab = ModelConfig().vocab
    mask = repair_target(seq, truth, vocab, len(seq) + 2)
    assert mask.sum() == 1 and mask[len(seq) + 2 + vocab.index("<=")]
    unary = repair_target(seq, EditOp("insert_before", 5, "-", "wrong_unary"), vocab, len(seq))
    assert unary[len(seq) + vocab.index("<insert:->")]
    with pytest.raises(TargetUnreachable):
        repair_target(seq, EditOp("replace", 5, "zzz", "var_misuse"), vocab, len(seq))


def test_gradient_two_layer(bpe):
    cfg = ModelConfig(layers=2, d=8, ff=16, heads=2, dropout=0.1, max_rel=4)
    model = Model(cfg, bpe, seed=0)
    randomize(model, seed=1, std=0.3)
    seqs = [tokenize("def f(a, b):\n    return a + b\n"), tokenize(VARMISUSE_BUGGY)]
    preps = [model.prepare(s) for s in seqs]
    i = next(i for i, t in enumerate(seqs[1].tokens) if t.text == "applied" and t.line == 5)
    truths = [EditOp.noop(), EditOp("replace", i, "patch", "var_misuse")]
    worst, where = model_gradients(model, preps, truths)
    assert worst < 1e-3, where


# -- config and persistence ---------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(d=10, heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(vocab=("+", "+"))
    with pytest.raises(ConfigError):
        ModelConfig(ff_act="tanh")
    big = ModelConfig.paper_scale()
    assert (big.layers, big.d, big.ff, big.heads, big.max_tokens) == (6, 512, 2048, 8, 1024)
    assert ModelConfig.from_json(big.to_json()) == big


def test_too_long(bpe):
    with pytest.raises(TooLong):
        prepare(tokenize(HAND_FUNCS[1]), bpe, tiny_cfg(max_tokens=5))


def test_checkpoint_roundtrip(tmp_path, bpe):
    model = randomize(Model(tiny_cfg(d=8), bpe), seed=9, std=0.2)
    model.save(tmp_path / "m.ckpt")
    back = Model.load(tmp_path / "m.ckpt", bpe)
    seq = tokenize(HAND_FUNCS[2])
    assert np.array_equal(model.predict([seq])[0].repair_logits, back.predict([seq])[0].repair_logits)
    with pytest.raises(CheckpointMismatch):
        Model.load(tmp_path / "m.ckpt", bpe_train(TEXTS, 25))
    with pytest.raises(CheckpointMismatch):
        Model.load(tmp_path / "m.ckpt", bpe, cfg=tiny_cfg(d=4))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(range(len(HAND_FUNCS))))
def test_property_probabilities(seed, which):
    bpe = bpe_train(TEXTS, 30)
    model = randomize(Model(tiny_cfg(d=8), bpe), seed=seed, std=1.0)
    out = model.predict([tokenize(HAND_FUNCS[which])])[0]
    assert out.loc_probs.sum() == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(out.repair_probs.sum(axis=1), 1.0, atol=1e-6)
