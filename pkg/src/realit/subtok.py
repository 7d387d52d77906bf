"""Byte-pair-encoding subtoken vocabulary trained per code token."""
from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from .errors import EmptyCorpus

PAD = "<pad>"
UNK = "<unk>"


@dataclass
class BpeVocab:
    merges: list[tuple[str, str]]
    id_table: dict[str, int]
    specials: dict[str, int] = field(default_factory=lambda: {"pad": 0, "unk": 1})
    _ranks: dict = field(default=None, init=False, repr=False, compare=False)
    _cache: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self._ranks = {tuple(m): r for r, m in enumerate(self.merges)}
        self._cache = {}

    @property
    def size(self) -> int:
        return len(self.id_table)

    @property
    def pad_id(self) -> int:
        return self.specials["pad"]

    @property
    def unk_id(self) -> int:
        return self.specials["unk"]

    def symbols(self) -> list[str]:
        inv = [""] * self.size
        for sym, i in self.id_table.items():
            inv[i] = sym
        return inv

    def split(self, text: str) -> list[str]:
        """Apply merges in training order to one token text."""
        parts = list(text)
        ranks = self._ranks
        while len(parts) > 1:
            best, best_rank = None, None
            for j in range(len(parts) - 1):
                r = ranks.get((parts[j], parts[j + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = j, r
            if best is None:
                break
            pair = (parts[best], parts[best + 1])
            merged, j = [], 0
            while j < len(parts):
                if j < len(parts) - 1 and (parts[j], parts[j + 1]) == pair:
                    merged.append(parts[j] + parts[j + 1])
                    j += 2
                else:
                    merged.append(parts[j])
                    j += 1
            parts = merged
        return parts

    def encode(self, text: str) -> list[int]:
        hit = self._cache.get(text)
        if hit is None:
            unk = self.unk_id
            hit = [self.id_table.get(p, unk) for p in self.split(text)]
            self._cache[text] = hit
        return list(hit)

    def decode(self, ids: Iterable[int]) -> str:
        inv = self.symbols()
        return "".join(inv[i] for i in ids if i not in (self.pad_id, self.unk_id))

    def to_json(self) -> dict:
        return {"size": self.size, "merges": [list(m) for m in self.merges],
                "ids": dict(self.id_table), "specials": dict(self.specials)}

    @classmethod
    def from_json(cls, obj: dict) -> "BpeVocab":
        vocab = cls([tuple(m) for m in obj["merges"]], dict(obj["ids"]), dict(obj["specials"]))
        if vocab.size != obj["size"]:
            raise ValueError(f"vocab size {obj['size']} does not match {vocab.size} ids")
        return vocab

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, ensure_ascii=False, indent=1)

    @classmethod
    def load(cls, path) -> "BpeVocab":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def bpe_train(token_texts: Iterable[str], size: int) -> BpeVocab:
    """Greedy BPE over a multiset of token texts.

    ``size`` counts learned symbols (alphabet plus merged symbols); the PAD
    and UNK specials come on top.  Equal pair counts are broken by taking
    the lexicographically smallest pair.
    """
    words = Counter(t for t in token_texts if t)
    if not words:
        raise EmptyCorpus("BPE training needs at least one non-empty token")
    alphabet = sorted({ch for w in words for ch in w})
    if size < len(alphabet):
        raise ValueError(f"size {size} is below the alphabet size {len(alphabet)}")
    ids = {PAD: 0, UNK: 1}
    for ch in alphabet:
        ids[ch] = len(ids)
    learned = set(alphabet)
    segs = {w: list(w) for w in words}
    merges: list[tuple[str, str]] = []

    pair_counts: Counter = Counter()
    for w, c in words.items():
        s = segs[w]
        for j in range(len(s) - 1):
            pair_counts[(s[j], s[j + 1])] += c

    while len(learned) < size and pair_counts:
        top = max(pair_counts.values())
        if top < 2:
            break
        pair = min(p for p, c in pair_counts.items() if c == top)
        merges.append(pair)
        sym = pair[0] + pair[1]
        if sym not in ids:
            ids[sym] = len(ids)
            learned.add(sym)
        for w, c in words.items():
            s = segs[w]
            if len(s) < 2 or sym not in w:
                continue
            hit = any(s[j] == pair[0] and s[j + 1] == pair[1] for j in range(len(s) - 1))
            if not hit:
                continue
            for j in range(len(s) - 1):
                pair_counts[(s[j], s[j + 1])] -= c
            merged, j = [], 0
            while j < len(s):
                if j < len(s) - 1 and s[j] == pair[0] and s[j + 1] == pair[1]:
                    merged.append(sym)
                    j += 2
                else:
                    merged.append(s[j])
                    j += 1
            segs[w] = merged
            for j in range(len(merged) - 1):
                pair_counts[(merged[j], merged[j + 1])] += c
        pair_counts = +pair_counts
    return BpeVocab(merges, ids)
