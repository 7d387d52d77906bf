"""Template-generated Python functions for the small end-to-end experiment.

The generator produces short, idiomatic functions with meaningful names
(a loop variable is the singular of the collection it walks, counters are
compared against limits, and so on), which gives a model something to
learn from a few hundred examples.  ``realistic_bugs`` then picks a narrow,
skewed slice of the mutation space to stand in for real bug fixes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .edits import BugExample
from .mutgen import MutationConfig, enumerate_mutations, mutant_from
from .pytok import TokenSeq, tokenize

PAIRS = [("items", "item"), ("values", "value"), ("nums", "num"), ("records", "record"),
         ("words", "word"), ("nodes", "node"), ("entries", "entry"), ("files", "path"),
         ("users", "user"), ("rows", "row"), ("tasks", "task"), ("points", "point")]
ACC = ["total", "count", "acc", "result", "score", "size"]
LIMITS = ["limit", "threshold", "bound", "cap", "low", "minimum"]
INDEX = ["i", "j", "k", "idx", "pos"]
VERBS = ["sum", "count", "find", "clamp", "pick", "collect", "check", "scan", "merge", "build"]
NOUNS = ["items", "values", "scores", "data", "entries", "rows", "batch", "tokens"]


def _fn(rng) -> str:
    return f"{rng.choice(VERBS)}_{rng.choice(NOUNS)}"


def _t_accumulate(rng):
    xs, x = PAIRS[rng.integers(len(PAIRS))]
    acc, lim = rng.choice(ACC), rng.choice(LIMITS)
    cmp = rng.choice(["<", ">", "<=", ">="])
    return (f"def {_fn(rng)}({xs}, {lim}):\n"
            f"    {acc} = 0\n"
            f"    for {x} in {xs}:\n"
            f"        if {x} {cmp} {lim}:\n"
            f"            {acc} += {x}\n"
            f"    return {acc}\n")


def _t_find(rng):
    xs, x = PAIRS[rng.integers(len(PAIRS))]
    i = rng.choice(INDEX)
    return (f"def {_fn(rng)}({xs}, target):\n"
            f"    {i} = 0\n"
            f"    while {i} < len({xs}):\n"
            f"        if {xs}[{i}] == target:\n"
            f"            return {i}\n"
            f"        {i} += 1\n"
            f"    return -1\n")


def _t_clamp(rng):
    v = rng.choice(["value", "x", "level", "speed", "ratio"])
    return (f"def {_fn(rng)}({v}, low, high):\n"
            f"    if {v} < low:\n"
            f"        return low\n"
            f"    if {v} > high:\n"
            f"        return high\n"
            f"    return {v}\n")


def _t_best(rng):
    xs, x = PAIRS[rng.integers(len(PAIRS))]
    best = rng.choice(["best", "top", "largest", "winner"])
    cmp = rng.choice([">", "<"])
    return (f"def {_fn(rng)}({xs}):\n"
            f"    {best} = None\n"
            f"    for {x} in {xs}:\n"
            f"        if {best} is None or {x} {cmp} {best}:\n"
            f"            {best} = {x}\n"
            f"    return {best}\n")


def _t_range_mean(rng):
    xs, _ = PAIRS[rng.integers(len(PAIRS))]
    i, acc = rng.choice(INDEX), rng.choice(ACC)
    return (f"def {_fn(rng)}({xs}, start, end):\n"
            f"    {acc} = 0\n"
            f"    for {i} in range(start, end):\n"
            f"        {acc} += {xs}[{i}]\n"
            f"    return {acc} / (end - start)\n")


def _t_all_valid(rng):
    xs, x = PAIRS[rng.integers(len(PAIRS))]
    lim = rng.choice(LIMITS)
    return (f"def {_fn(rng)}({xs}, {lim}):\n"
            f"    for {x} in {xs}:\n"
            f"        if not {x}:\n"
            f"            return False\n"
            f"        if len({x}) > {lim}:\n"
            f"            return False\n"
            f"    return True\n")


def _t_filter(rng):
    xs, x = PAIRS[rng.integers(len(PAIRS))]
    out = rng.choice(["out", "kept", "selected", "result"])
    lim = rng.choice(LIMITS)
    cmp = rng.choice([">=", "<", ">"])
    k = rng.choice(["2", "1"])
    return (f"def {_fn(rng)}({xs}, {lim}):\n"
            f"    {out} = []\n"
            f"    for {x} in {xs}:\n"
            f"        if {x} {cmp} {lim}:\n"
            f"            {out}.append({x} * {k})\n"
            f"    return {out}\n")


def _t_histogram(rng):
    xs, x = PAIRS[rng.integers(len(PAIRS))]
    counts = rng.choice(["counts", "freq", "seen", "tally"])
    return (f"def {_fn(rng)}({xs}):\n"
            f"    {counts} = {{}}\n"
            f"    for {x} in {xs}:\n"
            f"        {counts}[{x}] = {counts}.get({x}, 0) + 1\n"
            f"    return {counts}\n")


def _t_bisect(rng):
    arr = rng.choice(["arr", "keys", "sorted_items", "table"])
    return (f"def {_fn(rng)}({arr}, x):\n"
            f"    lo = 0\n"
            f"    hi = len({arr}) - 1\n"
            f"    while lo <= hi:\n"
            f"        mid = (lo + hi) // 2\n"
            f"        if {arr}[mid] < x:\n"
            f"            lo = mid + 1\n"
            f"        else:\n"
            f"            hi = mid - 1\n"
            f"    return lo\n")


def _t_join(rng):
    xs, x = PAIRS[rng.integers(len(PAIRS))]
    res, i = rng.choice(["text", "line", "out", "buf"]), rng.choice(INDEX)
    return (f"def {_fn(rng)}({xs}, sep):\n"
            f"    {res} = ''\n"
            f"    for {i}, {x} in enumerate({xs}):\n"
            f"        if {i} > 0:\n"
            f"            {res} += sep\n"
            f"        {res} += str({x})\n"
            f"    return {res}\n")


def _t_retry(rng):
    job, tries = rng.choice(["job", "task", "request", "client"]), rng.choice(["tries", "attempts"])
    return (f"def {_fn(rng)}({job}, max_{tries}):\n"
            f"    done = False\n"
            f"    {tries} = 0\n"
            f"    while not done and {tries} < max_{tries}:\n"
            f"        {tries} += 1\n"
            f"        done = {job}.run()\n"
            f"    return done\n")


def _t_apply(rng):
    xs, x = PAIRS[rng.integers(len(PAIRS))]
    done = rng.choice(["applied", "handled", "processed", "finished"])
    attr = rng.choice(["ready", "enabled", "valid", "active"])
    return (f"def {_fn(rng)}(self, {xs}):\n"
            f"    {done} = []\n"
            f"    for {x} in {xs}:\n"
            f"        if {x}.{attr}:\n"
            f"            self.handle({x})\n"
            f"            {done}.append({x})\n"
            f"    return {done}\n")


def _t_window(rng):
    xs, _ = PAIRS[rng.integers(len(PAIRS))]
    i = rng.choice(INDEX)
    size = rng.choice(["width", "size", "span"])
    return (f"def {_fn(rng)}({xs}, {size}):\n"
            f"    out = []\n"
            f"    for {i} in range(len({xs}) - {size} + 1):\n"
            f"        out.append(sum({xs}[{i}:{i} + {size}]))\n"
            f"    return out\n")


TEMPLATES: list[Callable] = [_t_accumulate, _t_find, _t_clamp, _t_best, _t_range_mean,
                             _t_all_valid, _t_filter, _t_histogram, _t_bisect, _t_join,
                             _t_retry, _t_apply, _t_window]


def _guard(rng, src: str) -> str:
    """Occasionally prepend an early-exit guard on the first parameter."""
    if rng.random() >= 0.3:
        return src
    head, body = src.split("\n", 1)
    first = head[head.index("(") + 1:].split(",")[0].split(")")[0].strip()
    if first == "self":
        return src
    return f"{head}\n    if not {first}:\n        return None\n{body}"


def generate_functions(n: int, seed: int = 0, exclude: Optional[set] = None) -> list[str]:
    """``n`` distinct generated functions (none in ``exclude``)."""
    rng = np.random.default_rng(seed)
    seen = set(exclude or ())
    out: list[str] = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 200 * n + 1000:
            raise RuntimeError(f"could only generate {len(out)} distinct functions")
        src = _guard(rng, TEMPLATES[rng.integers(len(TEMPLATES))](rng))
        if src in seen:
            continue
        seen.add(src)
        out.append(src)
    return out


# ---------------------------------------------------------------------------
# skewed "realistic" bugs

_OFF_BY_ONE = {"<": "<=", "<=": "<", ">": ">=", ">=": ">"}
_PLURAL = {a: b for a, b in PAIRS} | {b: a for a, b in PAIRS}


def realistic_weight(seq: TokenSeq, mutation) -> float:
    """Sampling weight of a mutation under the skewed bug distribution.

    Favoured: comparisons shifted by one, a loop element confused with its
    collection, and a dropped ``not``.  Every other mutation gets weight 0.
    """
    tok = seq.tokens[mutation.loc]
    if mutation.bug_type == "wrong_binop":
        return 1.0 if _OFF_BY_ONE.get(tok.text) == mutation.payload else 0.0
    if mutation.bug_type == "var_misuse":
        return 1.0 if _PLURAL.get(tok.text) == mutation.payload else 0.0
    if mutation.action == "delete" and tok.text == "not":
        return 1.0
    return 0.0


def realistic_bugs(functions: list[str], seed: int = 0,
                   cfg: Optional[MutationConfig] = None) -> list[BugExample]:
    """At most one skewed bug per function, labelled as a real fix."""
    cfg = cfg or MutationConfig()
    out = []
    for src in functions:
        seq = tokenize(src)
        muts = enumerate_mutations(seq, cfg)
        w = np.array([realistic_weight(seq, m) for m in muts])
        if not w.sum():
            continue
        rng = np.random.default_rng([seed, len(out), len(src)])
        m = muts[int(rng.choice(len(muts), p=w / w.sum()))]
        ex = mutant_from(seq, m)
        out.append(BugExample(ex.code, ex.truth_edit, "real-fix"))
    return out


@dataclass
class ToyData:
    pretrain_functions: list
    pretrain_val: list          # mutants + correct from held-out generator functions
    fix_train: list
    fix_val: list
    fix_test: list              # realistic bugs plus the corresponding correct functions
    correct_fix_side: list      # correct functions paired with the fine-tuning fixes


def toy_data(n_pretrain: int = 200, n_fix_train: int = 200, n_fix_val: int = 50,
             n_fix_test: int = 120, n_pre_val: int = 40, k: int = 5,
             seed: int = 0) -> ToyData:
    """Everything the end-to-end experiment needs; the fix splits use fresh functions."""
    from .trainer import make_mutants

    pre = generate_functions(n_pretrain, seed)
    val_src = generate_functions(n_pre_val, seed + 1, exclude=set(pre))
    pre_val = [BugExample.correct(s) for s in val_src] + \
        make_mutants(val_src, MutationConfig(k=2, seed=seed + 1))
    used = set(pre) | set(val_src)
    need = n_fix_train + n_fix_val + n_fix_test
    pool = generate_functions(3 * need, seed + 2, exclude=used)
    bugs = realistic_bugs(pool, seed + 2)
    if len(bugs) < need:
        raise RuntimeError(f"only {len(bugs)} realistic bugs for {need} requested")
    train, val = bugs[:n_fix_train], bugs[n_fix_train:n_fix_train + n_fix_val]
    test = bugs[n_fix_train + n_fix_val:need]

    def fixed(ex):
        from .pytok import render
        return BugExample.correct(render(tokenize(ex.code), ex.truth_edit))

    test_set = test + [fixed(ex) for ex in test]
    val_set = val + [fixed(ex) for ex in val]
    return ToyData(pre, pre_val, train, val_set, test_set, [fixed(ex) for ex in train])
