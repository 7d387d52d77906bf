"""Joint / localization / repair accuracy and false positive rate."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Protocol, Sequence

from .decoder import DecodeConfig, best_legal_repair, decode, greedy_decode
from .edits import BUG_TYPES, BugExample
from .errors import EmptyDataset
from .model import ModelOutput
from .pytok import TokenSeq, tokenize


class Predictor(Protocol):
    def predict(self, seqs: Sequence[TokenSeq]) -> list[ModelOutput]: ...


@dataclass
class TypeStats:
    count: int = 0
    joint: Optional[float] = None
    loc: Optional[float] = None
    repair: Optional[float] = None


@dataclass
class EvalReport:
    """Percentages with two decimals; ``None`` when the relevant subset is empty."""
    joint: Optional[float]
    loc: Optional[float]
    repair: Optional[float]
    fpr: Optional[float]
    n_buggy: int
    n_correct: int
    per_type: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = asdict(self)
        out["per_type"] = {k: asdict(v) for k, v in self.per_type.items()}
        return out

    def summary(self) -> str:
        def f(x):
            return "  n/a" if x is None else f"{x:6.2f}"
        return (f"joint {f(self.joint)}  loc {f(self.loc)}  repair {f(self.repair)}  "
                f"fpr {f(self.fpr)}  (buggy={self.n_buggy}, correct={self.n_correct})")


PRED_FIELDS = ("id", "origin", "bug_type", "truth_action", "truth_loc", "truth_payload",
               "pred_action", "pred_loc", "pred_payload", "p_joint", "flag",
               "joint_ok", "loc_ok", "repair_ok")


def _pct(hits: int, total: int) -> Optional[float]:
    return None if total == 0 else round(100.0 * hits / total, 2)


def score_example(ex: BugExample, seq: TokenSeq, out: ModelOutput,
                  cfg: DecodeConfig, greedy: bool = False) -> dict:
    """Per-example prediction record (the row format of the predictions CSV)."""
    res = (greedy_decode if greedy else decode)(out, seq, cfg)
    truth, pred = ex.truth_edit, res.edit
    rec = {"id": ex.id, "origin": ex.origin, "bug_type": ex.bug_type or "",
           "truth_action": truth.action, "truth_loc": truth.loc, "truth_payload": truth.payload,
           "pred_action": pred.action, "pred_loc": pred.loc, "pred_payload": pred.payload,
           "p_joint": res.p_joint, "flag": res.flag or ""}
    if ex.is_buggy:
        rec["joint_ok"] = pred.key() == truth.key()
        rec["loc_ok"] = pred.loc == truth.loc and not pred.is_noop
        rec["repair_ok"] = best_legal_repair(out, seq, truth.loc + 1, cfg) == truth.repair_text()
    else:
        rec["joint_ok"] = pred.is_noop
        rec["loc_ok"] = pred.is_noop
        rec["repair_ok"] = None
    return rec


def aggregate(records: Iterable[dict]) -> EvalReport:
    """Build the report from per-example records (also used on a reloaded CSV)."""
    records = list(records)
    if not records:
        raise EmptyDataset("nothing to evaluate")
    buggy = [r for r in records if r["origin"] != "correct"]
    correct = [r for r in records if r["origin"] == "correct"]
    per_type = {}
    for bt in BUG_TYPES:
        rows = [r for r in buggy if r["bug_type"] == bt]
        if rows:
            per_type[bt] = TypeStats(len(rows),
                                     _pct(sum(bool(r["joint_ok"]) for r in rows), len(rows)),
                                     _pct(sum(bool(r["loc_ok"]) for r in rows), len(rows)),
                                     _pct(sum(bool(r["repair_ok"]) for r in rows), len(rows)))
    false_pos = sum(1 for r in correct if r["pred_action"] != "noop")
    return EvalReport(
        joint=_pct(sum(bool(r["joint_ok"]) for r in buggy), len(buggy)),
        loc=_pct(sum(bool(r["loc_ok"]) for r in buggy), len(buggy)),
        repair=_pct(sum(bool(r["repair_ok"]) for r in buggy), len(buggy)),
        fpr=_pct(false_pos, len(correct)),
        n_buggy=len(buggy), n_correct=len(correct), per_type=per_type)


def default_decode_config(model) -> DecodeConfig:
    """Decode settings matching a model's repair vocabulary and legality rules."""
    cfg = getattr(model, "cfg", None)
    rules = getattr(model, "mut_cfg", None)
    if cfg is None or rules is None:
        return DecodeConfig()
    return DecodeConfig(rules=rules, vocab=cfg.vocab)


def predict_records(model: Predictor, dataset: Sequence[BugExample],
                    cfg: Optional[DecodeConfig] = None, greedy: bool = False,
                    batch_size: int = 32) -> list[dict]:
    cfg = cfg or DecodeConfig()
    records = []
    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start:start + batch_size]
        seqs = [tokenize(ex.code) for ex in chunk]
        outs = model.predict(seqs)
        for ex, seq, out in zip(chunk, seqs, outs):
            records.append(score_example(ex, seq, out, cfg, greedy))
    return records


def evaluate(model: Predictor, dataset: Sequence[BugExample],
             decode_cfg: Optional[DecodeConfig] = None, greedy: bool = False,
             batch_size: int = 32, records_out: Optional[list] = None) -> EvalReport:
    if not dataset:
        raise EmptyDataset("evaluation dataset is empty")
    if decode_cfg is None:
        decode_cfg = default_decode_config(model)
    records = predict_records(model, list(dataset), decode_cfg, greedy, batch_size)
    if records_out is not None:
        records_out.extend(records)
    return aggregate(records)


# ---------------------------------------------------------------------------
# files

def write_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_predictions(records: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=PRED_FIELDS)
        w.writeheader()
        for r in records:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in PRED_FIELDS})


def read_predictions(path) -> list[dict]:
    def parse_bool(s):
        return None if s == "" else s == "True"
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            for k in ("joint_ok", "loc_ok", "repair_ok"):
                row[k] = parse_bool(row[k])
            out.append(row)
    return out


def write_fraction_curve(rows: Sequence[dict], path) -> None:
    """Plot-ready CSV: fine-tune fraction against accuracy."""
    fields = ("fraction", "seed", "joint", "loc", "repair", "fpr")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in fields})
