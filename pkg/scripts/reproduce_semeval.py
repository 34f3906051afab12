#!/usr/bin/env python3
"""Dataset statistics and GCAE accuracy on the SemEval restaurant/laptop data.

Needs the SemEval 2014-2016 XML files renamed as listed in
``gcae.experiments.SEMEVAL_FILES`` inside one directory, and for the accuracy
runs a 300-d GloVe-format text file.

    python3 scripts/reproduce_semeval.py --semeval data/semeval --stats-only
    python3 scripts/reproduce_semeval.py --semeval data/semeval --embeddings glove.840B.300d.txt \
        --dataset acsa/restaurant-2014 --out runs/r14.json

The full protocol (5-fold CV early stopping, five runs, 100 filters per width,
D=300) is slow on a CPU; ``--runs``/``--max-epochs`` trade fidelity for time.
"""
import argparse
import dataclasses
import json
import sys
from pathlib import Path

from gcae.experiments import (
    ACCURACY_TARGETS,
    ACCURACY_TOLERANCE,
    SEMEVAL_FILES,
    reproduce_semeval,
    semeval_available,
    semeval_statistics,
)
from gcae.train import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--semeval", type=Path, required=True)
    ap.add_argument("--embeddings", type=Path)
    ap.add_argument("--dataset", choices=sorted(ACCURACY_TARGETS), action="append")
    ap.add_argument("--stats-only", action="store_true")
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--max-epochs", type=int, default=30)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    if not semeval_available(args.semeval):
        sys.exit(f"{args.semeval} must contain: {', '.join(SEMEVAL_FILES.values())}")
    out = {"statistics": semeval_statistics(args.semeval)}
    for name, r in out["statistics"].items():
        status = "match" if not r["mismatches"] else f"{len(r['mismatches'])} mismatches"
        print(f"{name:28s} {status}")
        for m in r["mismatches"]:
            print(f"    {m['split']}/{m['polarity']}: got {m['got']}, published {m['expected']}")

    if not args.stats_only:
        if args.embeddings is None:
            sys.exit("--embeddings is required unless --stats-only")
        out["accuracy"] = {}
        for dataset in args.dataset or sorted(ACCURACY_TARGETS):
            config = TrainConfig(class_count=3 if dataset == "acsa/restaurant-large" else 4)
            config = dataclasses.replace(config, runs=args.runs, max_epochs=args.max_epochs)
            report = reproduce_semeval(args.semeval, args.embeddings, dataset, config)
            got, target = 100 * report.mean, ACCURACY_TARGETS[dataset]
            verdict = "within" if abs(got - target) <= ACCURACY_TOLERANCE else "outside"
            print(f"{dataset}: {got:.2f} +- {100 * report.std:.2f} (published {target}, {verdict} +-{ACCURACY_TOLERANCE})")
            out["accuracy"][dataset] = report.to_json()
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
