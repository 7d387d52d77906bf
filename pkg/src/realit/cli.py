"""``realit`` command line: one thin subcommand per pipeline stage."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from . import __version__
from .corpus import ingest_fixes, read_examples, read_jsonl, write_examples, write_jsonl
from .decoder import DecodeConfig, decode
from .edits import BUG_TYPES, BugExample
from .errors import ConfigError, DataError, MalformedRecord, NumericError, RealitError
from .evalharness import evaluate, write_predictions, write_report
from .model import Model, ModelConfig
from .mutgen import MutationConfig, sample_mutants
from .pytok import tokenize
from .subtok import BpeVocab, bpe_train
from .trainer import TrainConfig, finetune, pretrain

log = logging.getLogger("realit")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

_MODEL_KEYS = [f.name for f in fields(ModelConfig) if f.name != "vocab"]
_TRAIN_KEYS = [f.name for f in fields(TrainConfig) if f.name != "phase"]


def default_settings(paper_scale: bool = False) -> dict:
    """Flat dotted defaults for every tunable; the desk-scale profile unless asked."""
    mcfg = ModelConfig.paper_scale() if paper_scale else ModelConfig()
    tcfg = TrainConfig()
    out = {f"model.{k}": getattr(mcfg, k) for k in _MODEL_KEYS}
    out.update({f"train.{k}": getattr(tcfg, k) for k in _TRAIN_KEYS})
    if not paper_scale:
        # short desk runs need a faster schedule than the large-scale one
        out.update({"train.lr": 1e-3, "train.warmup_steps": 200})
    out.update({"mutate.k": 100 if paper_scale else 5, "mutate.types": list(BUG_TYPES),
                "decode.k_loc": 5, "decode.k_rep": 5, "bpe.vocab_size": 10000 if paper_scale else 512})
    return out


@dataclass
class RunConfig:
    settings: dict
    seed: int = 0
    paths: dict = field(default_factory=dict)
    command: str = ""

    def get(self, key):
        return self.settings[key]

    def model_config(self) -> ModelConfig:
        return ModelConfig(**{k: self.settings[f"model.{k}"] for k in _MODEL_KEYS})

    def train_config(self, phase: str) -> TrainConfig:
        kw = {k: self.settings[f"train.{k}"] for k in _TRAIN_KEYS}
        kw["seed"] = self.seed
        return TrainConfig(phase=phase, **kw)

    def mutation_config(self) -> MutationConfig:
        return MutationConfig(k=int(self.settings["mutate.k"]),
                              enabled_types=tuple(self.settings["mutate.types"]), seed=self.seed)

    def decode_config(self, model: Model) -> DecodeConfig:
        return DecodeConfig(int(self.settings["decode.k_loc"]), int(self.settings["decode.k_rep"]),
                            model.mut_cfg, model.cfg.vocab)

    def to_json(self) -> dict:
        return {"version": __version__, "command": self.command, "seed": self.seed,
                "paths": self.paths, "settings": self.settings}

    def write(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "run_config.json", "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def resolve(args: argparse.Namespace) -> RunConfig:
    settings = default_settings(args.paper_scale)
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object of dotted keys")
        unknown = sorted(set(loaded) - set(settings) - {"seed"})
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        seed = loaded.pop("seed", None)
        settings.update(loaded)
        if seed is not None and args.seed is None:
            args.seed = seed
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep or key not in settings:
            raise ConfigError(f"bad override {item!r}; expected KEY=VALUE with a known key")
        try:
            settings[key] = json.loads(raw)
        except json.JSONDecodeError:
            settings[key] = raw
    overrides = {"k": "mutate.k", "types": "mutate.types", "vocab_size": "bpe.vocab_size",
                 "fraction": "train.fraction", "epochs": "train.epochs",
                 "steps_per_epoch": "train.steps_per_epoch", "k_loc": "decode.k_loc",
                 "k_rep": "decode.k_rep"}
    for attr, key in overrides.items():
        val = getattr(args, attr, None)
        if val is not None:
            settings[key] = val.split(",") if attr == "types" else val
    paths = {k: str(v) for k, v in vars(args).items()
             if k in ("input", "vocab", "checkpoint", "corpus", "fixes", "correct", "val",
                      "dataset", "file", "out") and v is not None}
    rc = RunConfig(settings, int(args.seed or 0), paths, args.command)
    # validate eagerly so nothing runs on a half-resolved configuration
    rc.model_config()
    rc.train_config("pretrain")
    rc.mutation_config()
    return rc


# ---------------------------------------------------------------------------
# input helpers

def read_functions(path) -> list[str]:
    """Function sources from a JSONL file (``code`` field) or a single .py file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"input {path} does not exist")
    if path.suffix == ".py":
        return [path.read_text(encoding="utf-8")]
    out = []
    for n, rec, err in read_jsonl(path):
        if err or "code" not in rec:
            raise MalformedRecord(f"{path}:{n}: {err or 'missing code field'}")
        out.append(rec["code"])
    return out


def load_vocab(path) -> BpeVocab:
    try:
        return BpeVocab.load(path)
    except OSError as exc:
        raise DataError(f"cannot read vocabulary {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad vocabulary file {path}: {exc}") from exc


def load_model(rc: RunConfig, ckpt, vocab_path) -> Model:
    if not Path(ckpt).exists():
        raise DataError(f"checkpoint {ckpt} does not exist")
    return Model.load(ckpt, load_vocab(vocab_path), mut_cfg=rc.mutation_config())


# ---------------------------------------------------------------------------
# subcommands

def cmd_tokenize(rc: RunConfig, args) -> int:
    out = Path(args.out)
    rc.write(out)
    rows = []
    for fi, src in enumerate(read_functions(args.input)):
        seq = tokenize(src)
        for i, t in enumerate(seq.tokens):
            rows.append({"function": fi, "index": i, "text": t.text, "kind": t.kind,
                         "line": t.line, "col": t.col, "tags": sorted(seq.context_tags[i])})
    write_jsonl(out / "tokens.jsonl", rows)
    print(json.dumps({"tokens": len(rows), "output": str(out / "tokens.jsonl")}))
    return EXIT_OK


def cmd_mutate(rc: RunConfig, args) -> int:
    out = Path(args.out)
    rc.write(out)
    cfg = rc.mutation_config()
    mutants, correct = [], []
    for src in read_functions(args.input):
        correct.append(BugExample.correct(src))
        mutants.extend(sample_mutants(tokenize(src), cfg))
    write_examples(out / "mutants.jsonl", mutants)
    write_examples(out / "correct.jsonl", correct)
    print(json.dumps({"functions": len(correct), "mutants": len(mutants),
                      "output": str(out / "mutants.jsonl")}))
    return EXIT_OK


def cmd_bpe_train(rc: RunConfig, args) -> int:
    out = Path(args.out)
    rc.write(out)
    texts = [t.text for src in read_functions(args.input) for t in tokenize(src).tokens]
    vocab = bpe_train(texts, int(rc.get("bpe.vocab_size")))
    vocab.save(out / "vocab.json")
    print(json.dumps({"size": vocab.size, "merges": len(vocab.merges),
                      "output": str(out / "vocab.json")}))
    return EXIT_OK


def cmd_pretrain(rc: RunConfig, args) -> int:
    out = Path(args.out)
    rc.write(out)
    vocab = load_vocab(args.vocab)
    model = Model(rc.model_config(), vocab, seed=rc.seed, mut_cfg=rc.mutation_config())
    val = read_examples(args.val) if args.val else None
    res = pretrain(model, read_functions(args.corpus), rc.train_config("pretrain"), val=val,
                   mut_cfg=rc.mutation_config(), metrics_path=out / "metrics.jsonl",
                   checkpoint_path=out / "model.ckpt")
    print(json.dumps({"steps": res.steps, "best_epoch": res.best_epoch,
                      "best_val_joint": res.best_val_joint, "checkpoint": str(out / "model.ckpt")}))
    return EXIT_OK


def _read_fixes(path) -> list[BugExample]:
    stats: dict = {}
    fixes = ingest_fixes(path, stats=stats)
    log.info("fixes: %s", stats)
    return fixes


def cmd_finetune(rc: RunConfig, args) -> int:
    out = Path(args.out)
    rc.write(out)
    model = load_model(rc, args.checkpoint, args.vocab)
    fixes = _read_fixes(args.fixes)
    if args.correct:
        correct = read_examples(args.correct)
    else:
        from .pytok import render
        correct = [BugExample.correct(render(tokenize(f.code), f.truth_edit)) for f in fixes]
    val = read_examples(args.val) if args.val else None
    res = finetune(model, fixes, correct, rc.train_config("finetune"), val=val,
                   metrics_path=out / "metrics.jsonl", checkpoint_path=out / "model.ckpt")
    print(json.dumps({"steps": res.steps, "best_epoch": res.best_epoch,
                      "best_val_joint": res.best_val_joint, "checkpoint": str(out / "model.ckpt")}))
    return EXIT_OK


def cmd_eval(rc: RunConfig, args) -> int:
    out = Path(args.out)
    rc.write(out)
    model = load_model(rc, args.checkpoint, args.vocab)
    data = read_examples(args.dataset)
    records: list = []
    report = evaluate(model, data, rc.decode_config(model), greedy=args.greedy,
                      records_out=records)
    write_report(report, out / "report.json")
    write_predictions(records, out / "predictions.csv")
    print(json.dumps(report.to_json(), sort_keys=True))
    return EXIT_OK


def cmd_fix(rc: RunConfig, args) -> int:
    model = load_model(rc, args.checkpoint, args.vocab)
    try:
        src = Path(args.file).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {args.file}: {exc}") from exc
    seq = tokenize(src)
    res = decode(model.predict([seq])[0], seq, rc.decode_config(model))
    edit = res.edit
    tok = None if edit.is_noop else seq.tokens[edit.loc]
    print(json.dumps({"action": edit.action, "loc": edit.loc,
                      "line": None if tok is None else tok.line,
                      "col": None if tok is None else tok.col,
                      "payload": edit.payload, "p_joint": res.p_joint, "p_loc": res.p_loc,
                      "p_repair": res.p_repair, "flag": res.flag}))
    if args.out:
        rc.write(Path(args.out))
    return EXIT_OK


def cmd_synth(rc: RunConfig, args) -> int:
    """Write the toy corpus and its realistic-bug splits as JSONL files."""
    from .synth import toy_data
    out = Path(args.out)
    rc.write(out)
    data = toy_data(n_pretrain=args.functions, seed=rc.seed)
    write_jsonl(out / "functions.jsonl", ({"code": s} for s in data.pretrain_functions))
    write_examples(out / "pretrain_val.jsonl", data.pretrain_val)
    write_examples(out / "fixes_train.jsonl", data.fix_train)
    write_examples(out / "correct_train.jsonl", data.correct_fix_side)
    write_examples(out / "fixes_val.jsonl", data.fix_val)
    write_examples(out / "test.jsonl", data.fix_test)
    print(json.dumps({"functions": len(data.pretrain_functions), "fixes": len(data.fix_train),
                      "output": str(out)}))
    return EXIT_OK


COMMANDS = {"tokenize": cmd_tokenize, "mutate": cmd_mutate, "bpe-train": cmd_bpe_train,
            "pretrain": cmd_pretrain, "finetune": cmd_finetune, "eval": cmd_eval,
            "fix": cmd_fix, "synth": cmd_synth}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="realit", description="Single-token bug localization and repair.")
    p.add_argument("--config", help="JSON file of dotted keys, e.g. {\"model.d\": 64}")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--paper-scale", action="store_true", help="large-scale hyperparameter profile")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_, out_default=True):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--out", default=f"realit-out/{name}" if out_default else None)
        return sp

    sp = add("tokenize", "tokenize functions and dump the token stream")
    sp.add_argument("input")
    sp = add("mutate", "sample mutants of every function")
    sp.add_argument("input")
    sp.add_argument("--k", type=int)
    sp.add_argument("--types", help="comma separated bug types")
    sp = add("bpe-train", "learn the subtoken vocabulary")
    sp.add_argument("input")
    sp.add_argument("--vocab-size", dest="vocab_size", type=int)
    sp = add("pretrain", "train on mutants of a corpus of functions")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--val")
    sp.add_argument("--k", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)
    sp = add("finetune", "continue training on real bug fixes")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--fixes", required=True)
    sp.add_argument("--correct")
    sp.add_argument("--val")
    sp.add_argument("--fraction", type=float)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)
    sp = add("eval", "score a labelled dataset")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--greedy", action="store_true")
    sp.add_argument("--k-loc", dest="k_loc", type=int)
    sp.add_argument("--k-rep", dest="k_rep", type=int)
    sp = add("fix", "propose a single-token fix for one function", out_default=False)
    sp.add_argument("file")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--k-loc", dest="k_loc", type=int)
    sp.add_argument("--k-rep", dest="k_rep", type=int)
    sp = add("synth", "write the synthetic toy corpus")
    sp.add_argument("--functions", type=int, default=200)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return EXIT_DATA


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = resolve(args)
        return COMMANDS[args.command](rc, args)
    except (RealitError, OSError) as exc:
        code = _exit_code(exc)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}),
              file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
