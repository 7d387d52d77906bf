"""Tokenizer for a supported subset of Python function definitions.

Produces a :class:`TokenSeq`: the token stream (with synthetic newline /
indent / dedent tokens), per-token context tags, the function-level set of
bound local names, and the positions where identifiers are read.
"""
from __future__ import annotations

import keyword
import re
from dataclasses import dataclass
from typing import Optional

from .edits import EditOp
from .errors import InvalidEdit, TokenizeError, UnsupportedSyntax

KINDS = (
    "identifier", "keyword", "binary_op", "assign_op", "unary_op",
    "literal_bool", "literal_int", "literal_str", "literal_other",
    "punct", "indent", "dedent", "newline",
)
SYNTHETIC = frozenset({"indent", "dedent", "newline"})
LITERAL_KINDS = frozenset({"literal_bool", "literal_int", "literal_str", "literal_other"})

ARITHMETIC_OPS = frozenset({"+", "-", "*", "/", "//", "%", "**"})
COMPARISON_OPS = frozenset({"==", "!=", "<", "<=", ">", ">="})
BITWISE_OPS = frozenset({"&", "|", "^", "<<", ">>"})
BINARY_OPS = ARITHMETIC_OPS | COMPARISON_OPS | BITWISE_OPS | {"@"}
AUG_ASSIGN_OPS = frozenset({"+=", "-=", "*=", "/=", "//=", "%=", "**=", "&=", "|=", "^=",
                            "<<=", ">>=", "@="})

CONDITION_KEYWORDS = frozenset({"if", "elif", "while", "assert"})
UNSUPPORTED_KEYWORDS = frozenset({"class", "async", "await"})

_OPERATORS = sorted(
    ["...", "**=", "//=", ">>=", "<<=", "->", ":=", "**", "//", "<<", ">>", "<=", ">=", "==",
     "!=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@=", "+", "-", "*", "/", "%",
     "&", "|", "^", "~", "<", ">", "=", "(", ")", "[", "]", "{", "}", ",", ":", ".", ";", "@"],
    key=len, reverse=True,
)
_OPEN = {"(": ")", "[": "]", "{": "}"}
_CLOSE = {v: k for k, v in _OPEN.items()}

_NAME_RE = re.compile(r"[^\W\d]\w*")
_DIGITS = r"\d(?:_?\d)*"
_EXP = rf"[eE][+-]?{_DIGITS}"
_NUMBER_RE = re.compile(
    rf"0[xX](?:_?[0-9a-fA-F])+|0[bB](?:_?[01])+|0[oO](?:_?[0-7])+"
    rf"|(?:{_DIGITS})?\.{_DIGITS}(?:{_EXP})?[jJ]?"
    rf"|{_DIGITS}\.(?:{_DIGITS})?(?:{_EXP})?[jJ]?"
    rf"|{_DIGITS}{_EXP}[jJ]?"
    rf"|{_DIGITS}[jJ]?"
)
_INT_RE = re.compile(rf"{_DIGITS}")
_STRING_START_RE = re.compile(r"(?i:rb|br|fr|rf|r|b|u|f)?('''|\"\"\"|'|\")")
_WS_RE = re.compile(r"[ \t\f]*")

# minus signs that fold into the following integer literal
_FOLDABLE = frozenset({"1", "2"})


@dataclass(frozen=True)
class Token:
    text: str
    kind: str
    line: int
    col: int
    byte_span: tuple[int, int]

    @property
    def synthetic(self) -> bool:
        return self.kind in SYNTHETIC


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[Token, ...]
    source: str
    context_tags: tuple[frozenset, ...] = ()
    scope_vars: tuple[frozenset, ...] = ()
    # identifier positions that bind a name (params, targets, ``as`` names)
    binding_sites: frozenset = frozenset()
    # identifier positions in load context (excludes attributes, bindings,
    # keyword-argument names and the function header)
    load_sites: frozenset = frozenset()

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def texts(self) -> list[str]:
        return [t.text for t in self.tokens]

    @property
    def local_names(self) -> frozenset:
        return self.scope_vars[0] if self.scope_vars else frozenset()

    def is_usage_site(self, i: int) -> bool:
        """True where a local variable is read (variable-misuse location)."""
        return i in self.load_sites and self.tokens[i].text in self.local_names

    def same_tokens(self, other: "TokenSeq") -> bool:
        return (self.tokens == other.tokens and self.context_tags == other.context_tags
                and self.scope_vars == other.scope_vars)


def _operand_end(tok: Optional[Token]) -> bool:
    if tok is None:
        return False
    return (tok.kind == "identifier" or tok.kind in LITERAL_KINDS
            or tok.text in (")", "]", "}"))


class _Lexer:
    def __init__(self, source: str) -> None:
        self.src = source
        self.ascii = source.isascii()
        self.line_starts = [0] + [m.end() for m in re.finditer(r"\r\n|\r|\n", source)]
        self.tokens: list[Token] = []
        self._byte_cache: Optional[list[int]] = None

    def byte(self, pos: int) -> int:
        if self.ascii:
            return pos
        if self._byte_cache is None:
            acc, cache = 0, []
            for ch in self.src:
                cache.append(acc)
                acc += len(ch.encode("utf-8"))
            cache.append(acc)
            self._byte_cache = cache
        return self._byte_cache[pos]

    def line_col(self, pos: int) -> tuple[int, int]:
        lo, hi = 0, len(self.line_starts) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.line_starts[mid] <= pos:
                lo = mid
            else:
                hi = mid - 1
        return lo + 1, pos - self.line_starts[lo]

    def emit(self, text: str, kind: str, start: int, end: int) -> None:
        line, col = self.line_col(start)
        self.tokens.append(Token(text, kind, line, col, (self.byte(start), self.byte(end))))

    def run(self) -> list[Token]:
        src = self.src
        n = len(src)
        pos = 0
        indents = [0]
        brackets: list[str] = []
        at_line_start = True
        last_newline: Optional[int] = None
        while pos < n:
            if at_line_start and not brackets:
                m = _WS_RE.match(src, pos)
                end = m.end()
                if end >= n or src[end] in "#\r\n":
                    nl = src.find("\n", end)
                    cr = src.find("\r", end)
                    if nl < 0 and cr < 0:
                        pos = n
                        break
                    stop = min(x for x in (nl, cr) if x >= 0)
                    pos = stop + (2 if src.startswith("\r\n", stop) else 1)
                    continue
                width = 0
                for ch in src[pos:end]:
                    width = (width // 8 + 1) * 8 if ch == "\t" else width + 1
                if width > indents[-1]:
                    indents.append(width)
                    self.emit("<indent>", "indent", end, end)
                else:
                    while width < indents[-1]:
                        indents.pop()
                        self.emit("<dedent>", "dedent", end, end)
                    if width != indents[-1]:
                        raise TokenizeError("unindent does not match any outer level",
                                            self.line_col(end)[0])
                pos = end
                at_line_start = False
                continue
            ch = src[pos]
            if ch in " \t\f":
                pos = _WS_RE.match(src, pos).end()
            elif ch == "#":
                m = re.compile(r"[^\r\n]*").match(src, pos)
                pos = m.end()
            elif ch == "\\" and src[pos + 1:pos + 2] in ("\n", "\r"):
                pos += 3 if src.startswith("\r\n", pos + 1) else 2
            elif ch in "\r\n":
                if not brackets:
                    self.emit("<newline>", "newline", pos, pos)
                    last_newline = pos
                    at_line_start = True
                pos += 2 if src.startswith("\r\n", pos) else 1
            else:
                pos = self._lex_token(pos, brackets)
        if brackets:
            raise TokenizeError(f"unclosed {brackets[-1]!r}", self.line_col(n)[0])
        if not at_line_start:
            self.emit("<newline>", "newline", n, n)
            last_newline = n
        eof = last_newline if last_newline is not None else n
        eof_line = self.line_col(eof)[0] + 1
        while len(indents) > 1:
            indents.pop()
            b = self.byte(eof)
            self.tokens.append(Token("<dedent>", "dedent", eof_line, 0, (b, b)))
        return self.tokens

    def _lex_token(self, pos: int, brackets: list[str]) -> int:
        src = self.src
        ch = src[pos]
        m = _STRING_START_RE.match(src, pos)
        if m:
            return self._lex_string(pos, m)
        if ch.isdigit() or (ch == "." and src[pos + 1:pos + 2].isdigit()):
            m = _NUMBER_RE.match(src, pos)
            if m is None:
                raise TokenizeError("bad number literal", self.line_col(pos)[0])
            self.emit(m.group(), "number", pos, m.end())
            return m.end()
        m = _NAME_RE.match(src, pos)
        if m:
            self.emit(m.group(), "name", pos, m.end())
            return m.end()
        for op in _OPERATORS:
            if src.startswith(op, pos):
                if op in _OPEN:
                    brackets.append(op)
                elif op in _CLOSE:
                    if not brackets or brackets[-1] != _CLOSE[op]:
                        raise TokenizeError(f"unmatched {op!r}", self.line_col(pos)[0])
                    brackets.pop()
                self.emit(op, "op", pos, pos + len(op))
                return pos + len(op)
        raise TokenizeError(f"invalid character {ch!r}", self.line_col(pos)[0])

    def _lex_string(self, pos: int, m: re.Match) -> int:
        src = self.src
        quote = m.group(1)
        i = m.end()
        triple = len(quote) == 3
        while i < len(src):
            c = src[i]
            if c == "\\":
                i += 2
                continue
            if src.startswith(quote, i):
                end = i + len(quote)
                self.emit(src[pos:end], "string", pos, end)
                return end
            if not triple and c in "\r\n":
                break
            i += 1
        raise TokenizeError("unterminated string literal", self.line_col(pos)[0])


def _classify(raw: list[Token], source: str) -> list[Token]:
    out: list[Token] = []
    pending_for: dict[int, int] = {}
    depth = 0
    i = 0
    while i < len(raw):
        t = raw[i]
        prev = out[-1] if out else None
        nxt = raw[i + 1] if i + 1 < len(raw) else None
        kind = t.kind
        text = t.text
        if kind == "name":
            if text in ("True", "False"):
                kind = "literal_bool"
            elif text == "None":
                kind = "literal_other"
            elif text in UNSUPPORTED_KEYWORDS:
                raise UnsupportedSyntax(f"unsupported construct {text!r}", t.line)
            elif text in ("and", "or", "is"):
                kind = "binary_op"
            elif text == "not":
                if prev is not None and prev.text == "is":
                    kind = "binary_op"
                elif nxt is not None and nxt.text == "in" and _operand_end(prev):
                    kind = "binary_op"
                else:
                    kind = "unary_op"
            elif text == "in":
                if pending_for.get(depth, 0) > 0:
                    pending_for[depth] -= 1
                    kind = "keyword"
                else:
                    kind = "binary_op"
            elif keyword.iskeyword(text):
                kind = "keyword"
                if text == "for":
                    pending_for[depth] = pending_for.get(depth, 0) + 1
            else:
                kind = "identifier"
        elif kind == "number":
            kind = "literal_int" if _INT_RE.fullmatch(text) else "literal_other"
        elif kind == "string":
            kind = "literal_str"
        elif kind == "op":
            unary_pos = not _operand_end(prev)
            if text in _OPEN:
                depth += 1
                kind = "punct"
            elif text in _CLOSE:
                pending_for.pop(depth, None)
                depth -= 1
                kind = "punct"
            elif text == "-" and unary_pos and nxt is not None and nxt.kind == "number" \
                    and nxt.text in _FOLDABLE and nxt.byte_span[0] == t.byte_span[1]:
                out.append(Token("-" + nxt.text, "literal_int", t.line, t.col,
                                 (t.byte_span[0], nxt.byte_span[1])))
                i += 2
                continue
            elif text in ("-", "+", "~") and unary_pos:
                kind = "unary_op"
            elif text in ("*", "**") and unary_pos:
                kind = "punct"
            elif text == "@" and (prev is None or prev.kind in SYNTHETIC):
                kind = "punct"
            elif text in BINARY_OPS:
                kind = "binary_op"
            elif text == "=" or text == ":=" or text in AUG_ASSIGN_OPS:
                kind = "assign_op"
            elif text == "...":
                kind = "literal_other"
            else:
                kind = "punct"
        if kind == "newline":
            pending_for.clear()
        out.append(Token(text, kind, t.line, t.col, t.byte_span))
        i += 1
    return out


def _depths(tokens) -> list[int]:
    """Bracket depth in effect *before* each token."""
    depths, d = [], 0
    for t in tokens:
        if t.kind == "punct" and t.text in _CLOSE:
            d -= 1
        depths.append(d)
        if t.kind == "punct" and t.text in _OPEN:
            d += 1
    return depths


def _logical_lines(tokens) -> list[list[int]]:
    lines, cur = [], []
    for i, t in enumerate(tokens):
        if t.kind in ("indent", "dedent"):
            continue
        if t.kind == "newline":
            if cur:
                lines.append(cur)
            cur = []
        else:
            cur.append(i)
    if cur:
        lines.append(cur)
    return lines


def _matching(tokens, start: int) -> int:
    """Index of the bracket closing the one opened at ``start``."""
    d = 0
    for j in range(start, len(tokens)):
        t = tokens[j]
        if t.kind == "punct" and t.text in _OPEN:
            d += 1
        elif t.kind == "punct" and t.text in _CLOSE:
            d -= 1
            if d == 0:
                return j
    return len(tokens) - 1


class _Scopes:
    """Binding analysis over the token stream of one function."""

    def __init__(self, tokens: list[Token]) -> None:
        self.tokens = tokens
        self.depth = _depths(tokens)
        self.bindings: set[int] = set()
        self.excluded: set[int] = set()
        self.func_name: Optional[int] = None

    def pure_names(self, idxs: list[int]) -> list[int]:
        """Identifiers in a target region that bind a plain name."""
        toks = self.tokens
        out = []
        base = self.depth[idxs[0]] if idxs else 0
        # brackets opened right after an operand are subscripts/calls
        blocked: list[bool] = []
        for j in idxs:
            t = toks[j]
            if t.kind == "punct" and t.text in _OPEN:
                blocked.append(j > 0 and _operand_end(toks[j - 1]) and j != idxs[0]
                               or bool(blocked and blocked[-1]))
                continue
            if t.kind == "punct" and t.text in _CLOSE:
                if blocked:
                    blocked.pop()
                continue
            if t.kind != "identifier" or (blocked and blocked[-1]):
                continue
            if self.depth[j] < base:
                continue
            prev = toks[j - 1] if j > 0 else None
            nxt = toks[j + 1] if j + 1 < len(toks) else None
            if prev is not None and prev.text == ".":
                continue
            if nxt is not None and nxt.text in (".", "(", "["):
                continue
            out.append(j)
        return out

    def run(self) -> None:
        toks = self.tokens
        for line in _logical_lines(toks):
            self.statement(line)
        for i, t in enumerate(toks):
            if t.kind == "keyword" and t.text == "for" and self.depth[i] > 0:
                self.for_targets(i)
            elif t.kind == "keyword" and t.text == "lambda":
                self.lambda_params(i)
            elif t.kind == "assign_op" and t.text == ":=" and i > 0 \
                    and toks[i - 1].kind == "identifier":
                self.bindings.add(i - 1)

    def for_targets(self, i: int) -> int:
        toks, d = self.tokens, self.depth[i]
        j = i + 1
        region = []
        while j < len(toks) and not (toks[j].kind == "keyword" and toks[j].text == "in"
                                     and self.depth[j] == d):
            region.append(j)
            j += 1
        self.bindings.update(self.pure_names(region))
        return j

    def lambda_params(self, i: int) -> None:
        toks, d = self.tokens, self.depth[i]
        expect = True
        j = i + 1
        while j < len(toks) and not (toks[j].text == ":" and self.depth[j] == d):
            t = toks[j]
            if self.depth[j] == d:
                if t.text == ",":
                    expect = True
                elif t.text in ("*", "**"):
                    pass
                elif t.kind == "identifier" and expect:
                    self.bindings.add(j)
                    expect = False
                else:
                    expect = False
            j += 1

    def header_colon(self, idxs: list[int]) -> int:
        """Position within ``idxs`` of the colon closing a compound header."""
        d0 = self.depth[idxs[0]]
        lambdas = 0
        for k, j in enumerate(idxs):
            t = self.tokens[j]
            if self.depth[j] != d0:
                continue
            if t.kind == "keyword" and t.text == "lambda":
                lambdas += 1
            elif t.text == ":" and t.kind == "punct":
                if lambdas:
                    lambdas -= 1
                else:
                    return k
        raise TokenizeError("compound statement without ':'", self.tokens[idxs[0]].line)

    def body_after_header(self, idxs: list[int]) -> None:
        k = self.header_colon(idxs)
        rest = idxs[k + 1:]
        if rest:
            self.statement(rest)

    def statement(self, idxs: list[int]) -> None:
        if not idxs:
            return
        toks = self.tokens
        # split simple statements on ';'
        parts, cur = [], []
        for j in idxs:
            if toks[j].text == ";" and self.depth[j] == self.depth[idxs[0]]:
                parts.append(cur)
                cur = []
            else:
                cur.append(j)
        parts.append(cur)
        if len(parts) > 1:
            for p in parts:
                self.statement(p)
            return
        first = toks[idxs[0]]
        head = first.text if first.kind in ("keyword", "punct", "unary_op", "binary_op") else None
        if head == "@":
            if any(toks[j].text == "(" for j in idxs):
                raise UnsupportedSyntax("decorators with arguments", first.line)
            self.excluded.update(idxs)
        elif head == "def":
            self.define(idxs)
        elif head == "for":
            self.for_targets(idxs[0])
            self.body_after_header(idxs)
        elif head in ("if", "elif", "while", "else", "try", "finally"):
            self.body_after_header(idxs)
        elif head in ("except", "with"):
            k = self.header_colon(idxs)
            for a, j in enumerate(idxs[:k]):
                if toks[j].kind == "keyword" and toks[j].text == "as":
                    region = []
                    for jj in idxs[a + 1:k]:
                        if toks[jj].text == "," and self.depth[jj] == self.depth[j]:
                            break
                        region.append(jj)
                    self.bindings.update(self.pure_names(region))
            if idxs[k + 1:]:
                self.statement(idxs[k + 1:])
        elif head in ("import", "from"):
            self.imports(idxs)
        elif head in ("global", "nonlocal"):
            self.excluded.update(idxs)
        else:
            self.simple(idxs)

    def define(self, idxs: list[int]) -> None:
        toks = self.tokens
        if len(idxs) < 3 or toks[idxs[1]].kind != "identifier" or toks[idxs[2]].text != "(":
            raise TokenizeError("malformed def", toks[idxs[0]].line)
        name = idxs[1]
        top = self.func_name is None
        if top:
            self.func_name = name
        else:
            self.bindings.add(name)
        open_i = idxs[2]
        close_i = _matching(toks, open_i)
        d = self.depth[open_i] + 1
        expect = True
        for j in range(open_i + 1, close_i):
            t = toks[j]
            if self.depth[j] != d:
                continue
            if t.text == ",":
                expect = True
            elif t.text in ("*", "**", "/"):
                pass
            elif t.kind == "identifier" and expect:
                self.bindings.add(j)
                expect = False
            else:
                expect = False
        k = self.header_colon(idxs)
        if top:
            self.excluded.update(idxs[:k + 1])
        rest = idxs[k + 1:]
        if rest:
            self.statement(rest)

    def imports(self, idxs: list[int]) -> None:
        toks = self.tokens
        self.excluded.update(idxs)
        names = idxs
        if toks[idxs[0]].text == "from":
            for a, j in enumerate(idxs):
                if toks[j].text == "import" and toks[j].kind == "keyword":
                    names = idxs[a + 1:]
                    break
            groups, cur = [], []
            for j in names:
                if toks[j].text == ",":
                    groups.append(cur)
                    cur = []
                elif toks[j].text not in ("(", ")"):
                    cur.append(j)
            groups.append(cur)
            for g in groups:
                if g:
                    self.bindings.add(g[-1])
        else:
            groups, cur = [], []
            for j in names[1:]:
                if toks[j].text == ",":
                    groups.append(cur)
                    cur = []
                else:
                    cur.append(j)
            groups.append(cur)
            for g in groups:
                if not g:
                    continue
                as_pos = [j for j in g if toks[j].text == "as"]
                self.bindings.add(g[-1] if as_pos else g[0])

    def simple(self, idxs: list[int]) -> None:
        toks = self.tokens
        d0 = self.depth[idxs[0]]
        assigns = [k for k, j in enumerate(idxs)
                   if toks[j].kind == "assign_op" and self.depth[j] == d0 and toks[j].text != ":="]
        if not assigns:
            return
        if toks[idxs[assigns[0]]].text != "=":
            # augmented assignment: single target
            self.bindings.update(self.pure_names(idxs[:assigns[0]]))
            return
        start = 0
        for k in assigns:
            region = idxs[start:k]
            colon = [a for a, j in enumerate(region)
                     if toks[j].text == ":" and self.depth[j] == d0]
            if colon:
                region = region[:colon[0]]
            self.bindings.update(self.pure_names(region))
            start = k + 1


def _load_sites(tokens: list[Token], scopes: _Scopes) -> frozenset:
    depth = scopes.depth
    out = set()
    for i, t in enumerate(tokens):
        if t.kind != "identifier":
            continue
        if i in scopes.bindings or i in scopes.excluded or i == scopes.func_name:
            continue
        prev = tokens[i - 1] if i > 0 else None
        nxt = tokens[i + 1] if i + 1 < len(tokens) else None
        if prev is not None and prev.text == ".":
            continue
        if nxt is not None and nxt.text == "=" and depth[i] > 0:
            continue
        out.add(i)
    return frozenset(out)


def _check_single_function(tokens: list[Token]) -> None:
    sig = [t for t in tokens if not t.synthetic]
    if not sig:
        raise UnsupportedSyntax("empty source", 1)
    k = 0
    while k < len(sig) and sig[k].text == "@":
        line = sig[k].line
        while k < len(sig) and sig[k].line == line:
            k += 1
    if k >= len(sig) or sig[k].text != "def" or sig[k].col != 0:
        first = sig[k] if k < len(sig) else sig[0]
        raise UnsupportedSyntax("expected a top-level function definition", first.line)
    level = 0
    header_done = False
    for i, t in enumerate(tokens):
        if t.kind == "indent":
            level += 1
        elif t.kind == "dedent":
            level -= 1
        elif t.kind == "newline":
            if t.byte_span[0] >= sig[k].byte_span[0]:
                header_done = True
        elif header_done and level == 0:
            prev = tokens[i - 1] if i > 0 else None
            if prev is None or prev.synthetic:
                raise UnsupportedSyntax("code after the function body", t.line)


def tag_contexts(seq: TokenSeq) -> TokenSeq:
    """Recompute ``in_condition`` / ``in_arith_expr`` tags for every token."""
    toks = seq.tokens
    n = len(toks)
    depth = _depths(toks)
    tags: list[set] = [set() for _ in range(n)]

    # innermost enclosing bracket has seen a comprehension 'for'
    comp_for = [False] * n
    stack: list[bool] = [False]
    for i, t in enumerate(toks):
        if t.kind == "punct" and t.text in _CLOSE:
            stack.pop()
        comp_for[i] = stack[-1]
        if t.kind == "punct" and t.text in _OPEN:
            stack.append(False)
        elif t.kind == "keyword" and t.text == "for" and depth[i] > 0:
            stack[-1] = True
        elif t.kind == "newline":
            stack = [False]

    for i, t in enumerate(toks):
        if t.kind != "keyword" or t.text not in CONDITION_KEYWORDS:
            continue
        d0 = depth[i]
        prev = toks[i - 1] if i > 0 else None
        statement_level = prev is None or prev.synthetic
        j = i + 1
        while j < n:
            u = toks[j]
            if depth[j] < d0 or u.kind == "newline":
                break
            if depth[j] == d0:
                if t.text == "assert" and u.text == ",":
                    break
                if statement_level and t.text != "assert" and u.text == ":" and u.kind == "punct":
                    break
                if not statement_level:
                    if comp_for[i] and u.kind == "keyword" and u.text in ("for", "if"):
                        break
                    if not comp_for[i] and u.kind == "keyword" and u.text == "else":
                        break
            tags[j].add("in_condition")
            j += 1

    def arith(k: int) -> bool:
        return 0 <= k < n and toks[k].kind == "binary_op" and toks[k].text in ARITHMETIC_OPS

    for i, t in enumerate(toks):
        if t.kind != "identifier" and t.kind not in LITERAL_KINDS:
            continue
        if i > 0 and toks[i - 1].text == ".":
            continue
        if arith(i - 1) or arith(i + 1) or (i > 0 and toks[i - 1].kind == "unary_op"
                                             and arith(i - 2)):
            tags[i].add("in_arith_expr")

    return TokenSeq(seq.tokens, seq.source, tuple(frozenset(s) for s in tags), seq.scope_vars,
                    seq.binding_sites, seq.load_sites)


def tokenize(source: str) -> TokenSeq:
    """Tokenize one top-level function definition."""
    raw = _Lexer(source).run()
    tokens = _classify(raw, source)
    _check_single_function(tokens)
    scopes = _Scopes(tokens)
    scopes.run()
    names = frozenset(tokens[i].text for i in scopes.bindings)
    seq = TokenSeq(tuple(tokens), source, (), tuple(names for _ in tokens),
                   frozenset(scopes.bindings), _load_sites(tokens, scopes))
    return tag_contexts(seq)


def render(seq: TokenSeq, edit: EditOp) -> str:
    """Apply a single token edit to the source text."""
    if edit.action == "noop":
        return seq.source
    if edit.loc is None or not 0 <= edit.loc < len(seq.tokens):
        raise InvalidEdit(f"location {edit.loc} out of range for {len(seq.tokens)} tokens")
    tok = seq.tokens[edit.loc]
    if tok.synthetic:
        raise InvalidEdit(f"cannot edit synthetic {tok.kind} token at {edit.loc}")
    data = seq.source.encode("utf-8")
    start, end = tok.byte_span
    if edit.action == "replace":
        out = data[:start] + edit.payload.encode("utf-8") + data[end:]
    elif edit.action == "insert_before":
        ins = "not " if edit.payload == "not" else edit.payload
        out = data[:start] + ins.encode("utf-8") + data[start:]
    else:
        if tok.kind != "unary_op" or tok.text not in ("not", "-"):
            raise InvalidEdit(f"delete requires a unary 'not' or '-', got {tok.text!r}")
        stop = end
        while stop < len(data) and data[stop:stop + 1] in (b" ", b"\t"):
            stop += 1
        out = data[:start] + data[stop:]
    return out.decode("utf-8")
