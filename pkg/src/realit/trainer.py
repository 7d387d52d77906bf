"""Two-phase training: mutants first, then real bug fixes, with early stopping."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import nnkernel as K
from .corpus import EpochPlan, plan_epoch
from .edits import BugExample
from .errors import ConfigError, EmptyAfterSubsample, EmptySet, NonFiniteLoss
from .evalharness import evaluate
from .model import Model, Prepared
from .mutgen import MutationConfig, sample_mutants
from .pytok import tokenize

log = logging.getLogger(__name__)

PHASES = ("pretrain", "finetune")
METRIC_FIELDS = ("phase", "epoch", "train_loss", "val_joint", "val_loc", "val_repair",
                 "val_fpr", "lr", "seed")


@dataclass(frozen=True)
class TrainConfig:
    phase: str = "pretrain"
    epochs: int = 10
    steps_per_epoch: Optional[int] = 100  # None: one pass over the buggy side, paired
    batch_size: int = 16          # examples per step, kept even so pairs stay whole
    batch_tokens: int = 12500     # padded token budget per step
    patience: int = 5
    seed: int = 0
    k: int = 5
    fraction: float = 1.0
    lr: float = 1e-4
    warmup_steps: int = 800
    clip_norm: float = 1.0
    weight_decay: float = 0.1
    bucket_window: int = 32       # pairs sorted by length together

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}")
        if self.epochs < 0 or (self.steps_per_epoch is not None and self.steps_per_epoch < 0):
            raise ConfigError("epochs and steps_per_epoch must be non-negative")
        if self.batch_size < 2 or self.batch_tokens < 2 or self.bucket_window < 1:
            raise ConfigError("batch budgets must be positive (batch_size >= 2)")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"fraction must lie in (0, 1], got {self.fraction}")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.lr < 0 or self.warmup_steps < 0:
            raise ConfigError("learning rate and warm-up must be non-negative")

    def adam(self) -> K.AdamState:
        return K.AdamState(lr=self.lr, warmup_steps=self.warmup_steps, clip_norm=self.clip_norm,
                           weight_decay=self.weight_decay)


@dataclass
class TrainResult:
    model: Model
    metrics: list
    best_epoch: int
    best_val_joint: Optional[float]
    steps: int


# ---------------------------------------------------------------------------
# batching

def pack_batches(plan: EpochPlan, lengths: dict, cfg: TrainConfig,
                 rng: np.random.Generator) -> list[list[int]]:
    """Group plan positions into token-budgeted batches of whole (correct, buggy) pairs.

    Pairs are length-sorted within windows of ``bucket_window`` pairs so the
    padding stays small; every batch therefore holds equally many correct
    and buggy examples, except possibly one trailing unpaired example.
    """
    units = [list(range(i, min(i + 2, len(plan.ids)))) for i in range(0, len(plan.ids), 2)]
    batches: list[list[int]] = []
    for w in range(0, len(units), cfg.bucket_window):
        window = sorted(units[w:w + cfg.bucket_window],
                        key=lambda u: max(lengths[plan.ids[j]] for j in u))
        cur: list[int] = []
        cur_max = 0
        for u in window:
            ulen = max(lengths[plan.ids[j]] for j in u) + 1
            m = max(cur_max, ulen)
            if cur and (len(cur) + len(u) > cfg.batch_size
                        or (len(cur) + len(u)) * m > cfg.batch_tokens):
                batches.append(cur)
                cur, m = [], ulen
            cur = cur + u
            cur_max = m
        if cur:
            batches.append(cur)
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def epoch_batches(cfg: TrainConfig, epoch: int, c_ids: Sequence[str], b_ids: Sequence[str],
                  lengths: dict, steps: int) -> tuple[EpochPlan, list[list[int]]]:
    """The balanced plan and the batches actually trained on in one epoch."""
    rng = np.random.default_rng([cfg.seed, epoch])
    plan = plan_epoch(c_ids, b_ids, steps * cfg.batch_size, int(rng.integers(2**63)))
    return plan, pack_batches(plan, lengths, cfg, rng)[:steps]


def steps_for(cfg: TrainConfig, n_buggy: int) -> int:
    if cfg.steps_per_epoch is not None:
        return cfg.steps_per_epoch
    return math.ceil(2 * n_buggy / cfg.batch_size)


def batch_balance(plan: EpochPlan, batch: Sequence[int]) -> int:
    buggy = sum(plan.is_buggy[j] for j in batch)
    return abs((len(batch) - buggy) - buggy)


# ---------------------------------------------------------------------------

class _Data:
    """Examples by id with their prepared tensors cached."""

    def __init__(self, model: Model, examples: Sequence[BugExample]):
        self.by_id = {}
        self.prep: dict[str, Prepared] = {}
        for ex in examples:
            if ex.id in self.by_id:
                continue
            self.by_id[ex.id] = ex
            self.prep[ex.id] = model.prepare(tokenize(ex.code))
        self.lengths = {i: p.n for i, p in self.prep.items()}


def _metrics_line(rec: dict) -> str:
    return json.dumps({k: rec[k] for k in METRIC_FIELDS})


def train_loop(model: Model, correct: Sequence[BugExample], buggy: Sequence[BugExample],
               val: Sequence[BugExample], cfg: TrainConfig,
               metrics_path=None, checkpoint_path=None) -> TrainResult:
    """Balanced training with per-epoch validation and best-checkpoint retention."""
    if not correct or not buggy:
        raise EmptySet("training needs both correct and buggy examples")
    data = _Data(model, list(correct) + list(buggy))
    c_ids = sorted({ex.id for ex in correct})
    b_ids = sorted({ex.id for ex in buggy})
    state = cfg.adam()
    names = list(model.params)
    metrics: list[dict] = []
    best_val, best_epoch = None, 0
    best_state = model.state_arrays()
    stale = 0
    step = 0
    if metrics_path is not None:
        Path(metrics_path).write_text("")

    def save_best():
        if checkpoint_path is not None:
            snapshot = model.state_arrays()
            model.load_state(best_state)
            model.save(checkpoint_path, {"train": asdict(cfg), "best_epoch": best_epoch})
            model.load_state(snapshot)

    steps = steps_for(cfg, len(b_ids))
    for epoch in range(1, cfg.epochs + 1):
        if steps == 0:
            break
        plan, batches = epoch_batches(cfg, epoch, c_ids, b_ids, data.lengths, steps)
        losses = []
        for batch in batches:
            ids = [plan.ids[j] for j in batch]
            preps = [data.prep[i] for i in ids]
            truths = [data.by_id[i].truth_edit for i in ids]
            for p in model.params.values():
                p.grad = None
            loss = model.loss(preps, truths, training=True, seed=(cfg.seed, step))
            value = loss.item()
            if not math.isfinite(value):
                model.load_state(best_state)
                save_best()
                raise NonFiniteLoss(f"loss became {value} at step {step}")
            loss.backward()
            grads = {n: model.params[n].grad for n in names}
            try:
                K.adam_step(model.params, grads, state)
            except Exception:
                model.load_state(best_state)
                save_best()
                raise
            losses.append(value)
            step += 1
        report = evaluate(model, val) if val else None
        rec = {"phase": cfg.phase, "epoch": epoch,
               "train_loss": round(float(np.mean(losses)), 6) if losses else None,
               "val_joint": report.joint if report else None,
               "val_loc": report.loc if report else None,
               "val_repair": report.repair if report else None,
               "val_fpr": report.fpr if report else None,
               "lr": state.effective_lr(), "seed": cfg.seed}
        metrics.append(rec)
        if metrics_path is not None:
            with open(metrics_path, "a", encoding="utf-8") as fh:
                fh.write(_metrics_line(rec) + "\n")
        joint = rec["val_joint"]
        if joint is None:
            # nothing to select on: keep the latest parameters
            best_epoch, best_state = epoch, model.state_arrays()
            continue
        if best_val is None or joint > best_val:
            best_val, best_epoch, stale = joint, epoch, 0
            best_state = model.state_arrays()
        else:
            stale += 1
            if stale >= cfg.patience:
                log.info("early stop after epoch %d (best %d)", epoch, best_epoch)
                break
    model.load_state(best_state)
    save_best()
    return TrainResult(model, metrics, best_epoch, best_val, step)


# ---------------------------------------------------------------------------
# phases

def make_mutants(functions: Sequence[str], mut_cfg: MutationConfig) -> list[BugExample]:
    out = []
    for src in functions:
        out.extend(sample_mutants(tokenize(src), mut_cfg))
    return out


def pretrain(model: Model, corpus: Sequence[str], cfg: TrainConfig,
             val: Optional[Sequence[BugExample]] = None,
             mut_cfg: Optional[MutationConfig] = None,
             metrics_path=None, checkpoint_path=None) -> TrainResult:
    """Train on ``k`` mutants per function against the functions themselves."""
    if cfg.phase != "pretrain":
        cfg = replace(cfg, phase="pretrain")
    mut_cfg = mut_cfg or MutationConfig(k=cfg.k, seed=cfg.seed)
    correct = [BugExample.correct(src) for src in corpus]
    buggy = make_mutants(corpus, mut_cfg)
    if not buggy:
        raise EmptySet("no function in the corpus admits a mutation")
    return train_loop(model, correct, buggy, val or [], cfg, metrics_path, checkpoint_path)


def subsample(fixes: Sequence[BugExample], fraction: float, seed: int) -> list[BugExample]:
    """A seeded ``fraction`` of the fixes, in id order."""
    fixes = sorted(fixes, key=lambda ex: ex.id)
    n = int(round(fraction * len(fixes)))
    if n == 0:
        raise EmptyAfterSubsample(f"fraction {fraction} of {len(fixes)} fixes leaves nothing")
    if n < 10:
        log.warning("fine-tuning on only %d real fixes", n)
    rng = np.random.default_rng([seed, int(round(fraction * 1e6))])
    pick = np.sort(rng.choice(len(fixes), size=n, replace=False))
    return [fixes[i] for i in pick]


def finetune(model: Model, fixes: Sequence[BugExample], correct: Sequence[BugExample],
             cfg: TrainConfig, val: Optional[Sequence[BugExample]] = None,
             metrics_path=None, checkpoint_path=None) -> TrainResult:
    """Continue training with real fixes as the buggy side; the optimizer starts fresh."""
    if cfg.phase != "finetune":
        cfg = replace(cfg, phase="finetune")
    if not fixes:
        raise EmptySet("no real fixes to fine-tune on")
    chosen = subsample(fixes, cfg.fraction, cfg.seed) if cfg.fraction < 1.0 else list(fixes)
    return train_loop(model, correct, chosen, val or [], cfg, metrics_path, checkpoint_path)
