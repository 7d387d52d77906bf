"""Small end-to-end comparison: pre-train+fine-tune vs. each phase alone."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from .evalharness import EvalReport, evaluate
from .model import Model, ModelConfig
from .pytok import tokenize
from .subtok import BpeVocab, bpe_train
from .synth import ToyData, toy_data
from .trainer import TrainConfig, TrainResult, finetune, pretrain

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ToyProfile:
    """Desk-scale settings; the learning rate is raised because runs are short."""
    model: ModelConfig = field(default_factory=ModelConfig)
    bpe_size: int = 200
    pre: TrainConfig = TrainConfig(phase="pretrain", epochs=10, steps_per_epoch=200,
                                   batch_size=16, lr=1e-3, warmup_steps=200, patience=4, k=5)
    fine: TrainConfig = TrainConfig(phase="finetune", epochs=12, steps_per_epoch=None,
                                    batch_size=16, lr=5e-4, warmup_steps=50, patience=3)
    scratch_lr: float = 1e-3


def build_vocab(data: ToyData, size: int) -> BpeVocab:
    texts = [t.text for src in data.pretrain_functions for t in tokenize(src).tokens]
    return bpe_train(texts, size)


@dataclass
class ArmResult:
    name: str
    seed: int
    report: EvalReport
    train: Optional[TrainResult] = None


def run_pretrain(data: ToyData, bpe: BpeVocab, profile: ToyProfile, seed: int,
                 out_dir: Optional[Path] = None) -> TrainResult:
    model = Model(profile.model, bpe, seed=seed)
    cfg = replace(profile.pre, seed=seed)
    return pretrain(model, data.pretrain_functions, cfg, val=data.pretrain_val,
                    metrics_path=None if out_dir is None else out_dir / f"pretrain_s{seed}.jsonl")


def run_finetune(model: Model, data: ToyData, cfg: TrainConfig,
                 metrics_path=None) -> TrainResult:
    return finetune(model, data.fix_train, data.correct_fix_side, cfg, val=data.fix_val,
                    metrics_path=metrics_path)


def clone(model: Model) -> Model:
    twin = Model(model.cfg, model.bpe, 0, mut_cfg=model.mut_cfg)
    twin.load_state(model.state_arrays())
    return twin


def three_arms(data: ToyData, bpe: BpeVocab, profile: ToyProfile, seed: int,
               out_dir: Optional[Path] = None, fractions: Sequence[float] = ()) -> dict:
    """Evaluate pre-train only, pre-train + fine-tune, and fine-tune from scratch.

    Extra ``fractions`` fine-tune the same pre-trained model on subsamples.
    """
    def path(name):
        return None if out_dir is None else out_dir / f"{name}_s{seed}.jsonl"

    pre = run_pretrain(data, bpe, profile, seed, out_dir)
    base = pre.model
    arms = {"pretrain_only": ArmResult("pretrain_only", seed, evaluate(base, data.fix_test), pre)}
    fcfg = replace(profile.fine, seed=seed)
    ft = run_finetune(clone(base), data, fcfg, path("finetune"))
    arms["finetuned"] = ArmResult("finetuned", seed, evaluate(ft.model, data.fix_test), ft)
    scratch_cfg = replace(fcfg, lr=profile.scratch_lr)
    sc = run_finetune(Model(profile.model, bpe, seed=seed), data, scratch_cfg, path("scratch"))
    arms["scratch"] = ArmResult("scratch", seed, evaluate(sc.model, data.fix_test), sc)
    for frac in fractions:
        if frac >= 1.0:
            arms["frac_1.0"] = arms["finetuned"]
            continue
        fr = run_finetune(clone(base), data, replace(fcfg, fraction=frac), path(f"frac{frac}"))
        arms[f"frac_{frac}"] = ArmResult(f"frac_{frac}", seed, evaluate(fr.model, data.fix_test), fr)
    for name, arm in arms.items():
        log.info("seed %d %-14s %s", seed, name, arm.report.summary())
    return arms


def run_experiment(seeds: Sequence[int] = (0, 1, 2), profile: Optional[ToyProfile] = None,
                   out_dir=None, fractions: Sequence[float] = (), data_seed: int = 0) -> dict:
    """All arms over several training seeds on one shared toy dataset."""
    profile = profile or ToyProfile()
    data = toy_data(seed=data_seed, k=profile.pre.k)
    bpe = build_vocab(data, profile.bpe_size)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    return {s: three_arms(data, bpe, profile, s, out_dir, fractions) for s in seeds}


def mean_joint(results: dict, arm: str) -> float:
    vals = [r[arm].report.joint or 0.0 for r in results.values()]
    return sum(vals) / len(vals)
