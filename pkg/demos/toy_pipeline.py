"""Pre-train, fine-tune and evaluate on the synthetic toy corpus, then fix three buggy snippets.

    python demos/toy_pipeline.py [--seeds 0] [--out toy-run]

One seed takes a few minutes on a single core.  Per-epoch metrics logs land in ``--out``.
"""
import argparse
import logging
from pathlib import Path

from realit.decoder import decode
from realit.evalharness import default_decode_config
from realit.experiment import ToyProfile, build_vocab, mean_joint, three_arms
from realit.pytok import tokenize
from realit.synth import toy_data

BUGGY = {
    "variable misuse": """def remove_applied(self, patches):
    applied = self.db.applied_patches()
    for patch in applied:
        if patch in patches:
            patches.remove(applied)
""",
    "binary operator": """def updateRefractionParameters(self):
    if self.ui.checkRefracNone.isChecked():
        return False
    if self.checkRefracNoTrack.isChecked():
        if self.app.mount.status != 0:
            return False
    return True
""",
    "negation": """def set_filter(self, namespace):
    if namespace:
        self.namespacesFilter = ["prymatex", "user"]
    else:
        self.namespacesFilter = namespace.split()
""",
}
ARMS = ("scratch", "pretrain_only", "finetuned")


def show_fix(model, title, src):
    seq = tokenize(src)
    res = decode(model.predict([seq])[0], seq, default_decode_config(model))
    if res.edit.is_noop:
        print(f"  {title:16s} no bug reported (p_noop={res.p_joint:.3g}, flag={res.flag})")
        return
    tok = seq.tokens[res.edit.loc]
    print(f"  {title:16s} line {tok.line}: {res.edit.action} {tok.text!r} -> {res.edit.payload!r} "
          f"(p_loc={res.p_loc:.3f}, p_repair={res.p_repair:.3f})")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--out", default="toy-run")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    profile = ToyProfile()
    data = toy_data(seed=0, k=profile.pre.k)
    bpe = build_vocab(data, profile.bpe_size)
    print(f"toy data: {len(data.pretrain_functions)} pre-training functions, "
          f"{len(data.fix_train)} real fixes, test {len(data.fix_test)} examples")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = {s: three_arms(data, bpe, profile, s, out_dir=out) for s in args.seeds}

    print("\nmean joint accuracy over seeds", args.seeds)
    for arm in ARMS:
        print(f"  {arm:14s} {mean_joint(results, arm):6.2f}")

    model = results[args.seeds[0]]["finetuned"].train.model
    print("\nproposed fixes from the fine-tuned model:")
    for title, src in BUGGY.items():
        show_fix(model, title, src)


if __name__ == "__main__":
    main()
