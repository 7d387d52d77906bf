"""Single-token mutation operators and mutant sampling.

The same table of legal edits drives both directions: mutating correct
code, and deciding which repairs are meaningful on (possibly) buggy code.
Every legal edit has a legal inverse on the edited program.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .edits import BUG_TYPES, DELETE, INSERT_NEG, INSERT_NOT, BugExample, EditOp
from .errors import ConfigError, InvalidEdit, InvalidFix, TokenizeError
from .pytok import TokenSeq, render, tokenize

DEFAULT_OPERATOR_CLASSES = {
    "arithmetic": ("+", "-", "*", "/", "//", "%", "**"),
    "comparison": ("==", "!=", "<", "<=", ">", ">="),
    "boolean": ("and", "or"),
    "bitwise": ("&", "|", "^", "<<", ">>"),
    "assign": ("+=", "-=", "*=", "/=", "//=", "%=", "**=", "&=", "|=", "^=", "<<=", ">>="),
}
DEFAULT_LITERAL_SETS = {
    "bool": ("True", "False"),
    "int": ("-2", "-1", "0", "1", "2"),
}
# tokens after which a logical negation may be inserted
_NOT_ANCHORS = frozenset({"if", "elif", "while", "assert", "and", "or"})


@dataclass(frozen=True)
class MutationConfig:
    k: int = 100
    enabled_types: tuple = BUG_TYPES
    seed: int = 0
    operator_classes: dict = field(default_factory=lambda: dict(DEFAULT_OPERATOR_CLASSES))
    literal_sets: dict = field(default_factory=lambda: dict(DEFAULT_LITERAL_SETS))

    def __post_init__(self):
        if not isinstance(self.k, int) or self.k < 1:
            raise ConfigError(f"mutation k must be a positive integer, got {self.k!r}")
        unknown = set(self.enabled_types) - set(BUG_TYPES)
        if unknown:
            raise ConfigError(f"unknown bug types {sorted(unknown)}")
        for table in (self.operator_classes, self.literal_sets):
            seen: set = set()
            for members in table.values():
                if seen & set(members):
                    raise ConfigError("operator classes / literal sets must be disjoint")
                seen |= set(members)
        if "assign" in self.operator_classes:
            binop = {m for c, ms in self.operator_classes.items() if c != "assign" for m in ms}
            if binop & set(self.operator_classes["assign"]):
                raise ConfigError("assign-op class overlaps a binary operator class")

    def class_of(self, text: str, category: str) -> Optional[tuple]:
        if category == "literal":
            for members in self.literal_sets.values():
                if text in members:
                    return tuple(members)
            return None
        for name, members in self.operator_classes.items():
            if (name == "assign") == (category == "assign") and text in members:
                return tuple(members)
        return None


def _is_arith(seq: TokenSeq, i: int) -> bool:
    if not 0 <= i < len(seq.tokens):
        return False
    t = seq.tokens[i]
    return t.kind == "binary_op" and t.text in DEFAULT_OPERATOR_CLASSES["arithmetic"]


def _not_insertable(seq: TokenSeq, i: int) -> bool:
    if i not in seq.load_sites or i == 0:
        return False
    prev = seq.tokens[i - 1]
    return ("in_condition" in seq.context_tags[i] and prev.text in _NOT_ANCHORS
            and prev.kind in ("keyword", "binary_op"))


def _neg_insertable(seq: TokenSeq, i: int) -> bool:
    if i not in seq.load_sites or i == 0:
        return False
    return ("in_arith_expr" in seq.context_tags[i]
            and seq.tokens[i - 1].kind != "unary_op")


def edits_at(seq: TokenSeq, i: int, cfg: MutationConfig) -> list[EditOp]:
    """All legal single-token edits at token ``i``, ordered by payload."""
    tok = seq.tokens[i]
    types = set(cfg.enabled_types)
    out: list[EditOp] = []
    if tok.kind == "identifier":
        if "var_misuse" in types and seq.is_usage_site(i):
            for name in sorted(seq.local_names - {tok.text}):
                out.append(EditOp("replace", i, name, "var_misuse"))
        if "wrong_unary" in types:
            if _not_insertable(seq, i):
                out.append(EditOp("insert_before", i, "not", "wrong_unary"))
            if _neg_insertable(seq, i):
                out.append(EditOp("insert_before", i, "-", "wrong_unary"))
    elif tok.kind == "binary_op":
        members = cfg.class_of(tok.text, "binary")
        if "wrong_binop" in types and members:
            out.extend(EditOp("replace", i, m, "wrong_binop") for m in sorted(members)
                       if m != tok.text)
    elif tok.kind == "assign_op":
        members = cfg.class_of(tok.text, "assign")
        if "wrong_assign_op" in types and members:
            out.extend(EditOp("replace", i, m, "wrong_assign_op") for m in sorted(members)
                       if m != tok.text)
    elif tok.kind in ("literal_bool", "literal_int"):
        members = cfg.class_of(tok.text, "literal")
        if "wrong_literal" in types and members:
            out.extend(EditOp("replace", i, m, "wrong_literal") for m in sorted(members)
                       if m != tok.text)
    elif tok.kind == "unary_op" and "wrong_unary" in types and i + 1 < len(seq.tokens):
        nxt = i + 1
        if tok.text == "not" and nxt in seq.load_sites and i > 0:
            prev = seq.tokens[i - 1]
            if "in_condition" in seq.context_tags[i] and prev.text in _NOT_ANCHORS \
                    and prev.kind in ("keyword", "binary_op"):
                out.append(EditOp("delete", i, None, "wrong_unary"))
        elif tok.text == "-" and nxt in seq.load_sites and i > 0 \
                and seq.tokens[i - 1].kind != "unary_op":
            if _is_arith(seq, i - 1) or _is_arith(seq, i + 2):
                out.append(EditOp("delete", i, None, "wrong_unary"))
    out.sort(key=lambda e: e.payload or "")
    return out


def enumerate_mutations(seq: TokenSeq, cfg: MutationConfig) -> list[EditOp]:
    """Exhaustive, duplicate-free list of legal mutations, by (loc, payload)."""
    out = []
    for i in range(len(seq.tokens)):
        out.extend(edits_at(seq, i, cfg))
    return out


def is_legal(seq: TokenSeq, edit: EditOp, cfg: MutationConfig) -> bool:
    if edit.is_noop:
        return True
    if not 0 <= edit.loc < len(seq.tokens):
        return False
    return any(e.key() == edit.key() for e in edits_at(seq, edit.loc, cfg))


def classify_edit(seq: TokenSeq, edit: EditOp, cfg: MutationConfig) -> Optional[str]:
    """Bug type of a legal edit, re-derived from the code (None if illegal)."""
    if edit.is_noop or not 0 <= edit.loc < len(seq.tokens):
        return None
    for e in edits_at(seq, edit.loc, cfg):
        if e.key() == edit.key():
            return e.bug_type
    return None


def inverse(seq: TokenSeq, edit: EditOp) -> EditOp:
    """The edit that undoes ``edit`` on the rendered result."""
    if edit.action == "replace":
        return EditOp("replace", edit.loc, seq.tokens[edit.loc].text, edit.bug_type)
    if edit.action == "insert_before":
        return EditOp("delete", edit.loc, None, edit.bug_type)
    if edit.action == "delete":
        return EditOp("insert_before", edit.loc, seq.tokens[edit.loc].text, edit.bug_type)
    return edit


def snippet_seed(seed: int, source: str) -> int:
    digest = hashlib.sha256(source.encode("utf-8")).digest()
    return (int(seed) ^ int.from_bytes(digest[:8], "little")) & (2**64 - 1)


def mutant_from(seq: TokenSeq, mutation: EditOp) -> BugExample:
    code = render(seq, mutation)
    return BugExample(code, inverse(seq, mutation), "mutant")


def sample_mutants(seq: TokenSeq, cfg: MutationConfig,
                   weights: Optional[Iterable[float]] = None) -> list[BugExample]:
    """Up to ``cfg.k`` distinct mutants, drawn without replacement.

    ``weights`` optionally skews the draw over ``enumerate_mutations`` order.
    """
    muts = enumerate_mutations(seq, cfg)
    if not muts:
        return []
    rng = np.random.default_rng(snippet_seed(cfg.seed, seq.source))
    m = min(cfg.k, len(muts))
    p = None
    if weights is not None:
        w = np.asarray(list(weights), dtype=np.float64)
        m = min(m, int(np.count_nonzero(w)))
        if m == 0:
            return []
        p = w / w.sum()
    picks = rng.choice(len(muts), size=m, replace=False, p=p)
    return [mutant_from(seq, muts[j]) for j in sorted(picks)]


def postfix_mutants(fix: BugExample, cfg: MutationConfig) -> list[BugExample]:
    """Mutants of the fixed version of a real bug fix."""
    try:
        fixed = render(tokenize(fix.code), fix.truth_edit)
        seq = tokenize(fixed)
    except (InvalidEdit, TokenizeError) as exc:
        raise InvalidFix(f"fix {fix.id} does not apply: {exc}") from exc
    return sample_mutants(seq, cfg)


def external_vocab(cfg: Optional[MutationConfig] = None) -> tuple[str, ...]:
    """Repair symbols that need not occur in the function itself."""
    cfg = cfg or MutationConfig()
    out: list[str] = []
    for name in sorted(cfg.operator_classes):
        out.extend(cfg.operator_classes[name])
    for name in sorted(cfg.literal_sets):
        out.extend(cfg.literal_sets[name])
    out.extend([INSERT_NOT, INSERT_NEG, DELETE])
    return tuple(dict.fromkeys(out))


def legal_repairs(seq: TokenSeq, i: int, cfg: MutationConfig) -> set[str]:
    """Repair symbols that are meaningful at token ``i``."""
    return {e.repair_text() for e in edits_at(seq, i, cfg)}


def repair_mask(seq: TokenSeq, vocab: Sequence[str], cfg: MutationConfig) -> np.ndarray:
    """Boolean (n, n + |V|) legality of every repair candidate at every token."""
    n = len(seq.tokens)
    texts = seq.texts
    mask = np.zeros((n, n + len(vocab)), dtype=bool)
    for i in range(n):
        legal = legal_repairs(seq, i, cfg)
        if not legal:
            continue
        for j, t in enumerate(texts):
            if t in legal:
                mask[i, j] = True
        for v, sym in enumerate(vocab):
            if sym in legal:
                mask[i, n + v] = True
    return mask
