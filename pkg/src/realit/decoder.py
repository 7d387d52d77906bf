"""Turn model scores into a single edit.

Repair probabilities are pooled by symbol: two copies of the same name in
the function are one repair.  Only meaningful (legal) repairs survive the
beam; the NOOP location is always meaningful.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .edits import EditOp
from .errors import ConfigError
from .model import ModelOutput
from .mutgen import MutationConfig, edits_at, external_vocab
from .pytok import TokenSeq

NO_MEANINGFUL_REPAIR = "NoMeaningfulRepair"


@dataclass(frozen=True)
class DecodeConfig:
    k_loc: int = 5
    k_rep: int = 5
    rules: MutationConfig = field(default_factory=MutationConfig)
    vocab: tuple = field(default_factory=external_vocab)

    def __post_init__(self):
        if self.k_loc < 1 or self.k_rep < 1:
            raise ConfigError("beam widths must be at least 1")
        object.__setattr__(self, "vocab", tuple(self.vocab))


@dataclass
class DecodeResult:
    edit: EditOp
    p_joint: float
    p_loc: float
    p_repair: float
    flag: Optional[str] = None

    @property
    def slot(self) -> int:
        return 0 if self.edit.is_noop else self.edit.loc + 1


def repair_distribution(out: ModelOutput, seq: TokenSeq, slot: int,
                        vocab: Sequence[str]) -> dict[str, float]:
    """Repair probability at ``slot`` pooled over candidates sharing a symbol."""
    texts = list(seq.texts) + list(vocab)
    probs = out.repair_probs[slot - 1]
    if len(probs) != len(texts):
        raise ValueError(f"repair vector has {len(probs)} entries, expected {len(texts)}")
    pooled: dict[str, float] = {}
    for t, p in zip(texts, probs):
        pooled[t] = pooled.get(t, 0.0) + float(p)
    return pooled


def legal_edits(seq: TokenSeq, slot: int, rules: MutationConfig) -> dict[str, EditOp]:
    """Meaningful repairs at ``slot`` keyed by repair symbol."""
    return {e.repair_text(): e for e in edits_at(seq, slot - 1, rules)}


def _ranked(pooled: dict[str, float]) -> list[tuple[str, float]]:
    return sorted(pooled.items(), key=lambda kv: (-kv[1], kv[0]))


def _better(a: tuple, b: Optional[tuple]) -> bool:
    """Candidates are (p_joint, slot, symbol); higher p wins, then lower slot, then symbol."""
    if b is None:
        return True
    if a[0] != b[0]:
        return a[0] > b[0]
    return (a[1], a[2]) < (b[1], b[2])


def _noop(out: ModelOutput, flag: Optional[str] = None) -> DecodeResult:
    p = float(out.loc_probs[0])
    return DecodeResult(EditOp.noop(), p, p, 1.0, flag)


def decode(out: ModelOutput, seq: TokenSeq, cfg: Optional[DecodeConfig] = None) -> DecodeResult:
    """Most probable meaningful (location, repair) pair within the beam.

    NOOP is always meaningful and always a candidate, so widening the beam
    can only raise the returned joint probability.  The NoMeaningfulRepair
    flag marks a NOOP that wins only because no beam pair survived.
    """
    cfg = cfg or DecodeConfig()
    loc = np.asarray(out.loc_probs)
    order = sorted(range(len(loc)), key=lambda s: (-loc[s], s))[:cfg.k_loc]
    best, best_res = (float(loc[0]), 0, ""), None
    survivor = 0 in order
    for slot in order:
        if slot == 0:
            continue
        legal = legal_edits(seq, slot, cfg.rules)
        if not legal:
            continue
        pooled = repair_distribution(out, seq, slot, cfg.vocab)
        for sym, p in _ranked(pooled)[:cfg.k_rep]:
            if sym not in legal:
                continue
            survivor = True
            cand = (float(loc[slot]) * p, slot, sym)
            if _better(cand, best):
                best = cand
                best_res = DecodeResult(legal[sym], cand[0], float(loc[slot]), p)
    if best_res is None:
        return _noop(out, None if survivor else NO_MEANINGFUL_REPAIR)
    return best_res


def greedy_decode(out: ModelOutput, seq: TokenSeq,
                  cfg: Optional[DecodeConfig] = None) -> DecodeResult:
    """Top location, then its most probable repair among the legal ones."""
    cfg = cfg or DecodeConfig()
    loc = np.asarray(out.loc_probs)
    slot = int(np.argmax(loc))
    if slot == 0:
        return _noop(out)
    legal = legal_edits(seq, slot, cfg.rules)
    pooled = repair_distribution(out, seq, slot, cfg.vocab)
    for sym, p in _ranked(pooled):
        if sym in legal:
            return DecodeResult(legal[sym], float(loc[slot]) * p, float(loc[slot]), p)
    return _noop(out, NO_MEANINGFUL_REPAIR)


def best_legal_repair(out: ModelOutput, seq: TokenSeq, slot: int,
                      cfg: Optional[DecodeConfig] = None) -> Optional[str]:
    """Highest-probability meaningful repair symbol at a given location."""
    cfg = cfg or DecodeConfig()
    legal = legal_edits(seq, slot, cfg.rules)
    for sym, _ in _ranked(repair_distribution(out, seq, slot, cfg.vocab)):
        if sym in legal:
            return sym
    return None
