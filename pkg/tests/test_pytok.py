import io
import tokenize as pytokenize

import pytest
from hypothesis import given, settings, strategies as st

from conftest import HAND_FUNCS, NEGATION_BUGGY, VARMISUSE_BUGGY, VARMISUSE_FIXED
from realit.edits import EditOp
from realit.errors import InvalidEdit, TokenizeError, UnsupportedSyntax
from realit.pytok import CONDITION_KEYWORDS, KINDS, render, tag_contexts, tokenize


def reference_tokens(src):
    """(text, line) from the standard library lexer; synthetic tokens carry no line."""
    out = []
    for t in pytokenize.generate_tokens(io.StringIO(src).readline):
        if t.type in (pytokenize.NL, pytokenize.COMMENT, pytokenize.ENDMARKER):
            continue
        if t.type == pytokenize.NEWLINE:
            out.append(("<newline>", None))
        elif t.type == pytokenize.INDENT:
            out.append(("<indent>", None))
        elif t.type == pytokenize.DEDENT:
            out.append(("<dedent>", None))
        else:
            out.append((t.string, t.start[0]))
    return out


def our_tokens(src):
    out = []
    for t in tokenize(src).tokens:
        if t.synthetic:
            out.append((f"<{t.kind}>", None))
        elif t.kind == "literal_int" and t.text.startswith("-"):
            # folded signed literal: the reference lexer sees two tokens
            out += [("-", t.line), (t.text[1:], t.line)]
        else:
            out.append((t.text, t.line))
    return out


def index_of(seq, text, line):
    return next(i for i, t in enumerate(seq.tokens) if t.text == text and t.line == line)


def test_reference_lexer_agrees(fixture_corpus):
    for src in fixture_corpus:
        assert our_tokens(src) == reference_tokens(src), src


def test_small_function_token_count():
    seq = tokenize("def f(x):\n    return x")
    assert [t.text for t in seq.tokens if not t.synthetic] == ["def", "f", "(", "x", ")", ":",
                                                               "return", "x"]
    assert [t.kind for t in seq.tokens if t.synthetic] == ["newline", "indent", "newline",
                                                           "dedent"]
    assert len(seq) == len(reference_tokens("def f(x):\n    return x")) == 12


def test_trailing_newline_irrelevant():
    a, b = tokenize("def f():\n    pass\n"), tokenize("def f():\n    pass")
    assert a.texts == b.texts
    assert [(t.kind, t.line, t.col) for t in a.tokens] == [(t.kind, t.line, t.col) for t in b.tokens]
    assert a.context_tags == b.context_tags and a.scope_vars == b.scope_vars


def test_table_varmisuse_scope():
    seq = tokenize(VARMISUSE_BUGGY)
    i = index_of(seq, "applied", 5)
    assert seq.tokens[i].kind == "identifier"
    assert {"applied", "patch", "patches"} <= seq.scope_vars[i]
    assert seq.is_usage_site(i)


def test_token_invariants(fixture_corpus):
    for src in fixture_corpus:
        seq = tokenize(src)
        data = src.encode("utf-8")
        prev_end = 0
        for t in seq.tokens:
            assert t.kind in KINDS
            if t.synthetic:
                assert t.byte_span[0] == t.byte_span[1]
                continue
            assert t.byte_span[0] >= prev_end
            assert data[t.byte_span[0]:t.byte_span[1]].decode("utf-8") == t.text
            prev_end = t.byte_span[1]
            if t.kind == "literal_int":
                int(t.text.replace("_", ""), 0)
        kinds = [t.kind for t in seq.tokens]
        assert kinds.count("indent") == kinds.count("dedent")
        assert len(set(seq.scope_vars)) == 1


def test_attribute_names_not_locals():
    seq = tokenize("def f(self, x):\n    self.x = x\n    return self.x\n")
    attrs = [i for i, t in enumerate(seq.tokens) if t.text == "x" and seq.tokens[i - 1].text == "."]
    assert attrs and not any(seq.is_usage_site(i) for i in attrs)


def test_scope_soundness(fixture_corpus):
    for src in fixture_corpus:
        seq = tokenize(src)
        bound = {seq.tokens[i].text for i in seq.binding_sites}
        assert seq.local_names == bound
        for i in seq.binding_sites:
            assert seq.tokens[i].kind == "identifier"


def test_signed_literal_folding():
    seq = tokenize("def f(a):\n    b = -1\n    c = a - 1\n    return [b, -2, c]\n")
    texts = seq.texts
    assert "-1" in texts and "-2" in texts
    i = index_of(seq, "-", 3)
    assert seq.tokens[i].kind == "binary_op"


# -- context tags ------------------------------------------------------------

def tags_of(src, line):
    seq = tokenize(src)
    return {t.text: seq.context_tags[i] for i, t in enumerate(seq.tokens) if t.line == line}


def test_condition_tags_negation():
    src = NEGATION_BUGGY.replace("if namespace:", "if not namespace:")
    tags = tags_of(src, 2)
    assert "in_condition" in tags["not"] and "in_condition" in tags["namespace"]
    assert "in_condition" not in tags["if"] and "in_condition" not in tags[":"]


def test_arith_tags():
    tags = tags_of("def f(a, b):\n    x = a + b\n    return x\n", 2)
    assert "in_arith_expr" in tags["a"] and "in_arith_expr" in tags["b"]
    assert not tags["x"]


def test_no_tags_on_plain_return():
    seq = tokenize("def f(y):\n    return y\n")
    assert all(not tags for tags in seq.context_tags)


def test_ternary_condition():
    seq = tokenize("def f(a, b):\n    return a if b else 0\n")
    i = len(seq.texts) - 1 - seq.texts[::-1].index("b")
    assert "in_condition" in seq.context_tags[i]
    assert "in_condition" not in seq.context_tags[seq.texts.index("0")]


def test_tag_contexts_idempotent(fixture_corpus):
    for src in fixture_corpus[:40]:
        seq = tokenize(src)
        assert tag_contexts(seq) == seq


def test_condition_tags_rescan(fixture_corpus):
    """Every in_condition token sits after a condition keyword at no lower bracket depth."""
    for src in fixture_corpus:
        seq = tokenize(src)
        depth, d = [], 0
        for t in seq.tokens:
            if t.kind == "punct" and t.text in ")]}":
                d -= 1
            depth.append(d)
            if t.kind == "punct" and t.text in "([{":
                d += 1
        for i, tags in enumerate(seq.context_tags):
            if "in_condition" not in tags:
                continue
            j = i - 1
            while j >= 0 and not (seq.tokens[j].kind == "keyword"
                                  and seq.tokens[j].text in CONDITION_KEYWORDS
                                  and depth[j] <= depth[i]):
                assert seq.tokens[j].kind != "newline"
                j -= 1
            assert j >= 0


# -- render ------------------------------------------------------------------

def test_render_varmisuse_fix():
    seq = tokenize(VARMISUSE_BUGGY)
    i = index_of(seq, "applied", 5)
    assert render(seq, EditOp("replace", i, "patch", "var_misuse")) == VARMISUSE_FIXED


def test_render_insert_not():
    seq = tokenize(NEGATION_BUGGY)
    i = index_of(seq, "namespace", 2)
    out = render(seq, EditOp("insert_before", i, "not", "wrong_unary"))
    assert "    if not namespace:\n" in out


def test_render_noop_roundtrip(fixture_corpus):
    for src in fixture_corpus:
        assert render(tokenize(src), EditOp.noop()) == src


def test_render_errors():
    seq = tokenize("def f(a):\n    return a\n")
    with pytest.raises(InvalidEdit):
        render(seq, EditOp("replace", 99, "b", "var_misuse"))
    with pytest.raises(InvalidEdit):
        render(seq, EditOp("delete", 1, None, "wrong_unary"))


def test_errors():
    with pytest.raises(UnsupportedSyntax) as exc:
        tokenize("def f(a):\n    class C:\n        pass\n")
    assert exc.value.line == 2
    with pytest.raises(TokenizeError):
        tokenize("def f(a):\n    return 'abc\n")
    with pytest.raises(TokenizeError):
        tokenize("def f(a):\n    return (a\n")


def test_hand_funcs_tokenize():
    for src in HAND_FUNCS:
        assert len(tokenize(src)) > 0


# -- properties --------------------------------------------------------------

NAMES = st.sampled_from(["a", "b", "total", "item", "x1", "val_2"])
OPS = st.sampled_from(["+", "-", "*", "<", "==", "and", "or", "%"])


@st.composite
def functions(draw):
    params = draw(st.lists(NAMES, min_size=1, max_size=3, unique=True))
    lines = []
    for _ in range(draw(st.integers(1, 4))):
        target = draw(NAMES)
        expr = draw(NAMES)
        for _ in range(draw(st.integers(0, 3))):
            expr = f"{expr} {draw(OPS)} {draw(st.one_of(NAMES, st.sampled_from(['1', '0', '-1', 'True'])))}"
        if draw(st.booleans()):
            lines.append(f"    if {expr}:\n        {target} = {draw(NAMES)}\n")
        else:
            lines.append(f"    {target} = {expr}{draw(st.sampled_from(['', '  # note']))}\n")
    ending = draw(st.sampled_from(["", "\n"]))
    return f"def fn({', '.join(params)}):\n" + "".join(lines) + f"    return {params[0]}" + ending


@settings(max_examples=150, deadline=None)
@given(functions())
def test_property_roundtrip_and_oracle(src):
    seq = tokenize(src)
    assert render(seq, EditOp.noop()) == src
    assert our_tokens(src) == reference_tokens(src)
    bound = {seq.tokens[i].text for i in seq.binding_sites}
    assert seq.local_names == bound
