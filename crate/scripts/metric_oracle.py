#!/usr/bin/env python3
"""Recompute accuracy and macro-F1 from prediction dumps.

Reads JSONL lines with string fields ``gold`` and ``predicted`` (the format
written by ``edu-attention eval --out DIR``) and prints one JSON object per
input file. Per-class F1 is 0 when precision and recall are both 0.
"""

import json
import sys
from fractions import Fraction

CLASSES = ("negative", "neutral", "positive")


def score(path):
    pairs = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rec = json.loads(line)
                pairs.append((rec["gold"], rec["predicted"]))
    if not pairs:
        raise SystemExit(f"{path}: no predictions")
    # exact rational arithmetic, converted once at the end
    correct = sum(1 for g, p in pairs if g == p)
    f1s = []
    for c in CLASSES:
        tp = sum(1 for g, p in pairs if g == c and p == c)
        n_pred = sum(1 for _, p in pairs if p == c)
        n_gold = sum(1 for g, _ in pairs if g == c)
        prec = Fraction(tp, n_pred) if n_pred else Fraction(0)
        rec = Fraction(tp, n_gold) if n_gold else Fraction(0)
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else Fraction(0))
    return {
        "file": path,
        "pairs": len(pairs),
        "accuracy": float(Fraction(correct, len(pairs))),
        "macro_f1": float(sum(f1s) / len(CLASSES)),
    }


def main(argv):
    if len(argv) < 2:
        raise SystemExit("usage: metric_oracle.py PREDICTIONS.jsonl [...]")
    for path in argv[1:]:
        print(json.dumps(score(path)))


if __name__ == "__main__":
    main(sys.argv)
