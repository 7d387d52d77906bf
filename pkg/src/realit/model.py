"""Localization-and-repair network.

Tokens are embedded as the mean of their BPE subtoken rows, contextualized
by a pre-norm Transformer with clipped relative-position key biases, then
scored by two heads: an MLP giving one bugginess logit per location (slot 0
is the NOOP sentinel) and a pointer-style attention giving repair logits
over every in-sequence token plus an external vocabulary of symbols.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import nnkernel as K
from .edits import EditOp
from .errors import (CheckpointMismatch, ConfigError, QueryIsNoop, TargetUnreachable,
                     TooLong)
from .mutgen import MutationConfig, external_vocab, repair_mask
from .nnkernel import Tensor
from .pytok import TokenSeq
from .subtok import BpeVocab

NEG = -1e9


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    d: int = 64
    ff: int = 256
    heads: int = 4
    dropout: float = 0.1
    max_tokens: int = 128
    max_rel: int = 32
    vocab: tuple = field(default_factory=external_vocab)
    loc_act: str = "relu"
    ff_act: str = "relu"
    init_std: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "vocab", tuple(self.vocab))
        if min(self.layers, self.d, self.ff, self.heads, self.max_tokens, self.max_rel) < 1:
            raise ConfigError("model sizes must be positive")
        if self.d % self.heads:
            raise ConfigError(f"hidden size {self.d} is not divisible by {self.heads} heads")
        if len(set(self.vocab)) != len(self.vocab):
            raise ConfigError("external vocabulary entries must be unique")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        for act in (self.loc_act, self.ff_act):
            if act not in ("relu", "gelu"):
                raise ConfigError(f"unknown nonlinearity {act!r}")

    @classmethod
    def paper_scale(cls, **kw) -> "ModelConfig":
        base = dict(layers=6, d=512, ff=2048, heads=8, dropout=0.1, max_tokens=1024, max_rel=128,
                    ff_act="gelu")
        base.update(kw)
        return cls(**base)

    def to_json(self) -> dict:
        out = asdict(self)
        out["vocab"] = list(self.vocab)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


@dataclass
class ModelOutput:
    """Per-function scores.  Slot 0 of the location vectors is NOOP; row ``i``
    of the repair matrices belongs to token ``i`` (slot ``i + 1``), with
    columns ``j < n`` pointing at token ``j`` and ``j >= n`` at ``vocab[j - n]``."""
    loc_logits: np.ndarray
    loc_probs: np.ndarray
    repair_logits: np.ndarray
    repair_probs: np.ndarray
    candidate_mask: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return len(self.loc_logits) - 1


def _softmax(x: np.ndarray, axis=-1) -> np.ndarray:
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def init_params(cfg: ModelConfig, n_subtokens: int, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    d, s = cfg.d, cfg.init_std
    dh = d // cfg.heads

    def w(*shape, std=s):
        return K.parameter(rng.normal(0.0, std, size=shape))

    p = {"embed.subtok": w(n_subtokens, d), "embed.noop": w(d)}
    for l in range(cfg.layers):
        pre = f"enc{l}."
        p[pre + "ln1.g"] = K.parameter(np.ones(d))
        p[pre + "ln1.b"] = K.parameter(np.zeros(d))
        for nm in ("q", "k", "v", "o"):
            p[pre + nm + ".w"] = w(d, d)
            p[pre + nm + ".b"] = K.parameter(np.zeros(d))
        p[pre + "rel_k"] = w(2 * cfg.max_rel + 1, dh)
        p[pre + "ln2.g"] = K.parameter(np.ones(d))
        p[pre + "ln2.b"] = K.parameter(np.zeros(d))
        p[pre + "ff1.w"] = w(d, cfg.ff)
        p[pre + "ff1.b"] = K.parameter(np.zeros(cfg.ff))
        p[pre + "ff2.w"] = w(cfg.ff, d)
        p[pre + "ff2.b"] = K.parameter(np.zeros(d))
    p["enc.lnf.g"] = K.parameter(np.ones(d))
    p["enc.lnf.b"] = K.parameter(np.zeros(d))
    # localization MLP s_l = W2 act(W1 [r; e; r - e]), stored for right-multiplication
    p["loc.w1"] = w(3 * d, d, std=1.0 / math.sqrt(3 * d))
    p["loc.w2"] = w(d, 1, std=1.0 / math.sqrt(d))
    p["rep.wq"] = w(d, d, std=1.0 / math.sqrt(d))
    p["rep.wk"] = w(d, d, std=1.0 / math.sqrt(d))
    p["rep.vocab"] = w(len(cfg.vocab), d, std=1.0)
    return p


# ---------------------------------------------------------------------------
# batch preparation

@dataclass
class Prepared:
    """Subtoken layout of one function, cached across epochs."""
    seq: TokenSeq
    n: int
    sub_ids: np.ndarray
    sub_tok: np.ndarray
    sub_w: np.ndarray


def prepare(seq: TokenSeq, vocab: BpeVocab, cfg: ModelConfig) -> Prepared:
    n = len(seq.tokens)
    if n + 1 > cfg.max_tokens:
        raise TooLong(f"{n} tokens plus the NOOP slot exceed max_tokens={cfg.max_tokens}")
    ids, tok, wts = [], [], []
    for i, t in enumerate(seq.tokens):
        sub = vocab.encode(t.text) or [vocab.unk_id]
        ids.extend(sub)
        tok.extend([i] * len(sub))
        wts.extend([1.0 / len(sub)] * len(sub))
    return Prepared(seq, n, np.asarray(ids, np.int64), np.asarray(tok, np.int64),
                    np.asarray(wts, dtype=np.float64))


@dataclass
class Batch:
    preps: list
    lengths: np.ndarray  # tokens per function (without NOOP)
    width: int           # padded slot count, NOOP included

    @classmethod
    def of(cls, preps: Sequence[Prepared]) -> "Batch":
        lengths = np.array([p.n for p in preps], dtype=np.int64)
        return cls(list(preps), lengths, int(lengths.max()) + 1)

    def slot_valid(self) -> np.ndarray:
        return np.arange(self.width)[None, :] <= self.lengths[:, None]


def _rel_index(n: int, max_rel: int) -> np.ndarray:
    pos = np.arange(n)
    return np.clip(pos[None, :] - pos[:, None], -max_rel, max_rel) + max_rel


# ---------------------------------------------------------------------------
# forward pieces

def embed(batch: Batch, params: dict) -> Tensor:
    """(B, N, d) embeddings; slot 0 holds the learned NOOP sentinel."""
    B, N = len(batch.preps), batch.width
    E = params["embed.subtok"]
    ids = np.concatenate([p.sub_ids for p in batch.preps])
    seg = np.concatenate([b * N + 1 + p.sub_tok for b, p in enumerate(batch.preps)])
    wts = np.concatenate([p.sub_w for p in batch.preps])
    rows = K.mul(K.gather(E, ids), wts[:, None])
    tok = K.scatter_add(rows, seg, B * N)
    noop_mask = np.zeros((B * N, 1))
    noop_mask[np.arange(B) * N] = 1.0
    e = K.add(tok, K.mul(noop_mask, params["embed.noop"]))
    return K.reshape(e, (B, N, E.shape[1]))


def _split_heads(x: Tensor, B: int, N: int, H: int) -> Tensor:
    return K.transpose(K.reshape(x, (B, N, H, x.shape[-1] // H)), (0, 2, 1, 3))


def encode(e: Tensor, params: dict, cfg: ModelConfig, key_valid: Optional[np.ndarray] = None,
           training: bool = False, seed=(0,)) -> Tensor:
    """Pre-norm Transformer with relative-position key biases; (B, N, d) in and out."""
    B, N, d = e.shape
    H = cfg.heads
    dh = d // H
    if key_valid is None:
        key_valid = np.ones((B, N), dtype=bool)
    attn_bias = np.where(key_valid, 0.0, NEG)[:, None, None, :]
    rel = _rel_index(N, cfg.max_rel)
    scale = 1.0 / math.sqrt(dh)
    x = e
    drop = 0

    def dp(t):
        nonlocal drop
        drop += 1
        return K.dropout(t, cfg.dropout, tuple(seed) + (drop,), training)

    for l in range(cfg.layers):
        pre = f"enc{l}."
        h = K.layer_norm(x, params[pre + "ln1.g"], params[pre + "ln1.b"])
        q = _split_heads(h @ params[pre + "q.w"] + params[pre + "q.b"], B, N, H)
        k = _split_heads(h @ params[pre + "k.w"] + params[pre + "k.b"], B, N, H)
        v = _split_heads(h @ params[pre + "v.w"] + params[pre + "v.b"], B, N, H)
        scores = q @ K.transpose(k, (0, 1, 3, 2))
        # q_i . a_ij with a_ij the clipped relative key embedding
        rel_scores = K.rel_logits(q, params[pre + "rel_k"], rel)
        logits = K.mul(K.add(scores, rel_scores), scale) + attn_bias
        att = dp(K.softmax(logits, axis=-1))
        ctx = K.reshape(K.transpose(att @ v, (0, 2, 1, 3)), (B, N, d))
        x = x + dp(ctx @ params[pre + "o.w"] + params[pre + "o.b"])
        h2 = K.layer_norm(x, params[pre + "ln2.g"], params[pre + "ln2.b"])
        ff = K.gelu_or_relu(h2 @ params[pre + "ff1.w"] + params[pre + "ff1.b"], cfg.ff_act)
        x = x + dp(ff @ params[pre + "ff2.w"] + params[pre + "ff2.b"])
    return K.layer_norm(x, params["enc.lnf.g"], params["enc.lnf.b"])


def loc_scores(r: Tensor, e: Tensor, params: dict, act: str = "relu",
               slot_valid: Optional[np.ndarray] = None) -> Tensor:
    """One logit per slot: W2 act(W1 [r; e; r - e])."""
    feat = K.concat([r, e, r - e], axis=-1)
    hid = K.gelu_or_relu(feat @ params["loc.w1"], act)
    s = hid @ params["loc.w2"]
    s = K.reshape(s, s.shape[:-1])
    if slot_valid is not None:
        s = s + np.where(slot_valid, 0.0, NEG)
    return s


def repair_scores(r: Tensor, l, params: dict, cfg: ModelConfig) -> Tensor:
    """Repair logits for one function at slot ``l``: n token candidates then |V|.

    ``r`` is the (n + 1, d) encoder output including the NOOP slot.
    """
    l = int(l)
    if l == 0:
        raise QueryIsNoop("the NOOP slot has no repair distribution")
    if not 0 < l < r.shape[0]:
        raise IndexError(f"location slot {l} out of range")
    inv = 1.0 / math.sqrt(cfg.d)
    q = K.index(r, (slice(l, l + 1),)) @ params["rep.wq"]          # (1, d)
    keys = K.index(r, (slice(1, None),)) @ params["rep.wk"]         # (n, d)
    cand = K.concat([keys, params["rep.vocab"]], axis=0)           # (n + |V|, d)
    out = K.mul(q @ K.transpose(cand, (1, 0)), inv)
    return K.reshape(out, (out.shape[1],))


def _repair_rows(r: Tensor, rows_b: np.ndarray, rows_l: np.ndarray, params: dict,
                 cfg: ModelConfig, lengths: np.ndarray) -> Tensor:
    """Batched repair logits for selected (function, slot) pairs: (M, N-1 + |V|)."""
    N = r.shape[1]
    inv = 1.0 / math.sqrt(cfg.d)
    q = K.index(r, (rows_b, rows_l)) @ params["rep.wq"]                      # (M, d)
    keys = K.index(r, (rows_b, slice(1, None))) @ params["rep.wk"]           # (M, N-1, d)
    seq_logits = K.reshape(K.reshape(q, (q.shape[0], 1, cfg.d)) @ K.transpose(keys, (0, 2, 1)),
                           (q.shape[0], N - 1))
    voc_logits = q @ K.transpose(params["rep.vocab"], (1, 0))
    pad = np.where(np.arange(N - 1)[None, :] < lengths[rows_b][:, None], 0.0, NEG)
    return K.mul(K.concat([seq_logits + pad, voc_logits], axis=-1), inv)


def repair_target(seq: TokenSeq, truth: EditOp, vocab: Sequence[str], width: int) -> np.ndarray:
    """Mask over ``width`` token columns plus V marking every copy of the fix symbol."""
    text = truth.repair_text()
    mask = np.zeros(width + len(vocab), dtype=bool)
    for j, t in enumerate(seq.texts):
        if t == text:
            mask[j] = True
    for v, sym in enumerate(vocab):
        if sym == text:
            mask[width + v] = True
    if not mask.any():
        raise TargetUnreachable(f"repair {text!r} is neither in the function nor in V")
    return mask


# ---------------------------------------------------------------------------

class Model:
    """Parameters plus configuration; ``forward`` works on batches of functions."""

    def __init__(self, cfg: ModelConfig, bpe: BpeVocab, seed: int = 0,
                 params: Optional[dict] = None, mut_cfg: Optional[MutationConfig] = None):
        self.cfg = cfg
        self.bpe = bpe
        self.mut_cfg = mut_cfg or MutationConfig()
        self.params = params if params is not None else init_params(cfg, bpe.size, seed)

    def prepare(self, seq: TokenSeq) -> Prepared:
        return prepare(seq, self.bpe, self.cfg)

    def forward(self, preps: Sequence[Prepared], training: bool = False, seed=(0,)):
        batch = Batch.of(preps)
        valid = batch.slot_valid()
        e = embed(batch, self.params)
        r = encode(e, self.params, self.cfg, valid, training, seed)
        s = loc_scores(r, e, self.params, self.cfg.loc_act, valid)
        return batch, e, r, s

    def loss(self, preps: Sequence[Prepared], truths: Sequence[EditOp],
             training: bool = False, seed=(0,)) -> Tensor:
        """Mean over functions of -log p_loc(l*) - log sum_{j ~ r*} p_repair(j | l*)."""
        batch, _, r, s = self.forward(preps, training, seed)
        B = len(preps)
        slots = np.array([0 if t.is_noop else t.loc + 1 for t in truths], dtype=np.int64)
        total = K.cross_entropy(s, slots, reduction="sum")
        buggy = [b for b, t in enumerate(truths) if not t.is_noop]
        if buggy:
            rows_b = np.array(buggy, dtype=np.int64)
            logits = _repair_rows(r, rows_b, slots[rows_b], self.params, self.cfg, batch.lengths)
            width = batch.width - 1
            target = np.stack([repair_target(preps[b].seq, truths[b], self.cfg.vocab, width)
                               for b in buggy])
            total = total + K.cross_entropy(logits, target, reduction="sum")
        return K.mul(total, 1.0 / B)

    def predict(self, seqs: Sequence[TokenSeq], with_mask: bool = True) -> list[ModelOutput]:
        preps = [self.prepare(s) for s in seqs]
        batch, _, r, s = self.forward(preps)
        outs = []
        for b, p in enumerate(preps):
            n = p.n
            loc = s.data[b, :n + 1]
            if n:
                rb = r.data[b, :n + 1]
                q = rb[1:] @ self.params["rep.wq"].data
                cand = np.concatenate([rb[1:] @ self.params["rep.wk"].data,
                                       self.params["rep.vocab"].data], axis=0)
                rep = q @ cand.T / math.sqrt(self.cfg.d)
            else:
                rep = np.zeros((0, len(self.cfg.vocab)))
            mask = repair_mask(p.seq, self.cfg.vocab, self.mut_cfg) if with_mask else None
            outs.append(ModelOutput(loc, _softmax(loc), rep,
                                    _softmax(rep, axis=-1) if n else rep.copy(), mask))
        return outs

    # -- persistence ---------------------------------------------------------
    def state_arrays(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, arrays: dict) -> None:
        for k, v in arrays.items():
            if k not in self.params or self.params[k].shape != v.shape:
                raise CheckpointMismatch(f"parameter {k} does not match the model")
            self.params[k].data[...] = v

    def save(self, path, extra: Optional[dict] = None) -> None:
        header = {"model": self.cfg.to_json(), "bpe_digest": self.bpe.digest(),
                  "bpe_size": self.bpe.size}
        if extra:
            header.update(extra)
        K.save_arrays(path, self.state_arrays(), header)

    @classmethod
    def load(cls, path, bpe: BpeVocab, cfg: Optional[ModelConfig] = None,
             mut_cfg: Optional[MutationConfig] = None) -> "Model":
        arrays, header = K.load_arrays(path)
        stored = ModelConfig.from_json(header["model"])
        if cfg is not None and cfg != stored:
            raise CheckpointMismatch("checkpoint model config differs from the requested one")
        if header.get("bpe_digest") != bpe.digest():
            raise CheckpointMismatch("checkpoint was trained with a different BPE vocabulary")
        model = cls(stored, bpe, 0, mut_cfg=mut_cfg)
        model.load_state(arrays)
        return model


def joint_prob(out: ModelOutput, slot: int, column: int) -> float:
    """p_loc(slot) * p_repair(column | slot); NOOP has probability p_loc(0)."""
    if slot == 0:
        return float(out.loc_probs[0])
    return float(out.loc_probs[slot] * out.repair_probs[slot - 1, column])
