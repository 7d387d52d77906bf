"""Tokenize a few real-world style functions and show the mutants drawn from each.

    python demos/mutations.py [--k 3] [--seed 0]
"""
import argparse

from realit.mutgen import MutationConfig, enumerate_mutations, sample_mutants
from realit.pytok import render, tokenize

SNIPPETS = {
    "variable misuse (fixed)": """def remove_applied(self, patches):
    applied = self.db.applied_patches()
    for patch in applied:
        if patch in patches:
            patches.remove(patch)
""",
    "binary operator (fixed)": """def updateRefractionParameters(self):
    if self.ui.checkRefracNone.isChecked():
        return False
    if self.checkRefracNoTrack.isChecked():
        if self.app.mount.status == 0:
            return False
    return True
""",
    "negation (fixed)": """def set_filter(self, namespace):
    if not namespace:
        self.namespacesFilter = ["prymatex", "user"]
    else:
        self.namespacesFilter = namespace.split()
""",
}


def describe(edit, text):
    if edit.action == "replace":
        return f"{text!r} -> {edit.payload!r}"
    if edit.action == "delete":
        return f"delete {text!r}"
    return f"insert {edit.payload!r} before {text!r}"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = MutationConfig(k=args.k, seed=args.seed)
    for title, src in SNIPPETS.items():
        seq = tokenize(src)
        print(f"== {title}: {len(seq)} tokens, {len(enumerate_mutations(seq, cfg))} candidate mutations")
        for ex in sample_mutants(seq, cfg):
            edit = ex.truth_edit
            tok = tokenize(ex.code).tokens[edit.loc]
            print(f"  [{edit.bug_type}] line {tok.line}: fix is {describe(edit, tok.text)}")
            # applying the stored truth edit recovers the original
            assert render(tokenize(ex.code), edit) == src
        print()


if __name__ == "__main__":
    main()
