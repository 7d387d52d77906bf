"""Dataset layer: JSONL exchange, real-fix ingestion, splitting and epoch plans."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .edits import BugExample, EditOp
from .errors import DataError, EmptySet, InvalidEdit, MalformedRecord, TokenizeError
from .mutgen import MutationConfig, classify_edit
from .pytok import TokenSeq, render, tokenize

log = logging.getLogger(__name__)

__all__ = ["BugExample", "EpochPlan", "derive_edit", "ingest_fixes", "normalized_hash",
           "plan_epoch", "read_examples", "read_jsonl", "split", "write_examples",
           "write_jsonl"]


def read_jsonl(path) -> Iterator[tuple[int, Optional[dict], Optional[str]]]:
    """Yield ``(line_no, record, error)``; malformed lines carry an error string."""
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                yield n, None, f"bad json: {exc.msg}"
                continue
            if not isinstance(rec, dict):
                yield n, None, "record is not an object"
                continue
            yield n, rec, None


def write_jsonl(path, records: Iterable[dict]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=False, ensure_ascii=False))
            fh.write("\n")
            count += 1
    return count


def write_examples(path, examples: Iterable[BugExample]) -> int:
    return write_jsonl(path, (ex.to_record() for ex in examples))


def read_examples(path) -> list[BugExample]:
    out = []
    for n, rec, err in read_jsonl(path):
        if err:
            raise MalformedRecord(f"{path}:{n}: {err}")
        try:
            out.append(BugExample.from_record(rec))
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedRecord(f"{path}:{n}: {exc}") from exc
    return out


def derive_edit(before: TokenSeq, after: TokenSeq) -> Optional[EditOp]:
    """The single token edit turning ``before`` into ``after`` (None if there is none)."""
    a, b = before.texts, after.texts
    if len(a) == len(b):
        diff = [i for i, (x, y) in enumerate(zip(a, b)) if x != y]
        if len(diff) != 1:
            return None
        return EditOp("replace", diff[0], b[diff[0]])
    if abs(len(a) - len(b)) != 1:
        return None
    p = 0
    while p < min(len(a), len(b)) and a[p] == b[p]:
        p += 1
    if len(a) > len(b):
        if a[p + 1:] == b[p:]:
            return EditOp("delete", p)
        return None
    if b[p + 1:] == a[p:] and b[p] in ("not", "-"):
        return EditOp("insert_before", p, b[p])
    return None


def _validate_fix(before_src: str, after_src: str, cfg: MutationConfig) -> BugExample:
    try:
        before = tokenize(before_src)
        after = tokenize(after_src)
    except TokenizeError as exc:
        raise DataError(f"does not tokenize: {exc}") from exc
    edit = derive_edit(before, after)
    if edit is None:
        raise DataError("not a single-token edit")
    bug_type = classify_edit(before, edit, cfg)
    if bug_type is None:
        raise DataError(f"unsupported edit {edit.key()}")
    edit = EditOp(edit.action, edit.loc, edit.payload, bug_type)
    try:
        fixed = tokenize(render(before, edit))
    except (InvalidEdit, TokenizeError) as exc:
        raise DataError(f"edit does not apply: {exc}") from exc
    if fixed.texts != after.texts:
        raise DataError("rendered fix differs from the recorded fixed code")
    return BugExample(before_src, edit, "real-fix")


def ingest_fixes(path, cfg: Optional[MutationConfig] = None,
                 stats: Optional[dict] = None) -> list[BugExample]:
    """Load, validate and deduplicate real bug fixes from JSONL.

    Accepts ``{"before", "after", "meta"?}`` records as well as already
    ingested example records (which are re-validated).  Rejected records
    are logged and counted in ``stats`` when given.
    """
    cfg = cfg or MutationConfig()
    counts: Counter = Counter()
    seen: set[str] = set()
    out: list[BugExample] = []
    for n, rec, err in read_jsonl(path):
        if err is None:
            try:
                if "before" in rec:
                    before, after = rec["before"], rec["after"]
                else:
                    if rec.get("origin") != "real-fix":
                        raise KeyError("before")
                    ex = BugExample.from_record(rec)
                    before, after = ex.code, render(tokenize(ex.code), ex.truth_edit)
                if not isinstance(before, str) or not isinstance(after, str):
                    raise TypeError("before/after must be strings")
            except (KeyError, TypeError, ValueError) as exc:
                err = f"missing or bad field {exc}"
            except (DataError,) as exc:
                counts["invalid"] += 1
                log.info("%s:%d rejected: %s", path, n, exc)
                continue
        if err is not None:
            counts["malformed"] += 1
            log.warning("%s:%d malformed record: %s", path, n, err)
            continue
        try:
            ex = _validate_fix(before, after, cfg)
        except DataError as exc:
            counts["invalid"] += 1
            log.info("%s:%d rejected: %s", path, n, exc)
            continue
        if ex.id in seen:
            counts["duplicate"] += 1
            continue
        seen.add(ex.id)
        out.append(ex)
        counts["accepted"] += 1
    if stats is not None:
        stats.update(counts)
    return out


def normalized_hash(code: str) -> str:
    """Hash of the token stream with identifiers renamed by first occurrence."""
    try:
        seq = tokenize(code)
        names: dict[str, str] = {}
        parts = []
        for t in seq.tokens:
            if t.kind == "identifier":
                parts.append(names.setdefault(t.text, f"v{len(names)}"))
            else:
                parts.append(t.text)
    except TokenizeError:
        parts = code.split()
    return hashlib.sha1("\x1f".join(parts).encode("utf-8")).hexdigest()


def split(examples: Sequence[BugExample], ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Disjoint, id-stable (train, validation, test) partition.

    Bug types are interleaved after a per-type shuffle so every prefix is
    roughly stratified; train examples whose normalized token stream matches
    a test example are dropped.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    uniq = {ex.id: ex for ex in examples}
    rng = np.random.default_rng(seed)
    strata = defaultdict(list)
    for ex_id in sorted(uniq):
        strata[uniq[ex_id].bug_type or ""].append(ex_id)
    queues = []
    for key in sorted(strata):
        ids = strata[key]
        queues.append([ids[j] for j in rng.permutation(len(ids))])
    # proportional interleave: always draw from the stratum furthest behind its share
    order: list[str] = []
    taken = [0] * len(queues)
    total = len(uniq)
    while len(order) < total:
        best, best_gap = -1, None
        for q, ids in enumerate(queues):
            if taken[q] >= len(ids):
                continue
            gap = (taken[q] + 1) / len(ids)
            if best_gap is None or gap < best_gap:
                best, best_gap = q, gap
        order.append(queues[best][taken[best]])
        taken[best] += 1
    n_val = int(math.floor(ratios[1] * total + 1e-9))
    n_test = int(math.floor(ratios[2] * total + 1e-9))
    val_ids = order[:n_val]
    test_ids = order[n_val:n_val + n_test]
    train_ids = order[n_val + n_test:]
    test_hashes = {normalized_hash(uniq[i].code) for i in test_ids}
    train = [uniq[i] for i in train_ids if normalized_hash(uniq[i].code) not in test_hashes]
    dropped = len(train_ids) - len(train)
    if dropped:
        log.info("dropped %d train examples colliding with the test split", dropped)
    return train, [uniq[i] for i in val_ids], [uniq[i] for i in test_ids]


@dataclass
class EpochPlan:
    ids: list[str]
    is_buggy: list[bool]
    stats: dict = field(default_factory=dict)

    def batches(self, size: int) -> Iterator[list[int]]:
        for start in range(0, len(self.ids), size):
            yield list(range(start, min(start + size, len(self.ids))))


def _cycle_draw(ids: list[str], count: int, rng: np.random.Generator) -> list[str]:
    """``count`` uniform draws that revisit every id once per pass."""
    out: list[str] = []
    while len(out) < count:
        perm = rng.permutation(len(ids))
        out.extend(ids[j] for j in perm[:count - len(out)])
    return out


def plan_epoch(correct, buggy, epoch_size: int, seed: int) -> EpochPlan:
    """Alternate correct and buggy examples so both appear equally often.

    ``correct`` and ``buggy`` are collections of ids or of BugExample; the
    smaller side is supersampled.
    """
    def ids_of(items):
        ids = [x.id if isinstance(x, BugExample) else str(x) for x in items]
        return sorted(set(ids))

    c_ids, b_ids = ids_of(correct), ids_of(buggy)
    if not c_ids or not b_ids:
        raise EmptySet("both the correct and the buggy set must be non-empty")
    if epoch_size < 1:
        raise ValueError("epoch_size must be positive")
    rng = np.random.default_rng(seed)
    n_c = (epoch_size + 1) // 2
    n_b = epoch_size // 2
    c_draw = _cycle_draw(c_ids, n_c, rng)
    b_draw = _cycle_draw(b_ids, n_b, rng)
    ids, flags = [], []
    for i in range(n_c):
        ids.append(c_draw[i])
        flags.append(False)
        if i < n_b:
            ids.append(b_draw[i])
            flags.append(True)
    origins = Counter()
    by_id = {x.id: x for x in list(correct) + list(buggy) if isinstance(x, BugExample)}
    for ex_id, flag in zip(ids, flags):
        if ex_id in by_id:
            origins[by_id[ex_id].origin] += 1
        else:
            origins["buggy" if flag else "correct"] += 1
    return EpochPlan(ids, flags, dict(origins))
