#!/usr/bin/env python3
"""Labeling-function development report.

Applies an LF set to a notes file and prints per-LF coverage, overlap,
conflict, and (when a gold CSV is supplied) empirical accuracy, plus the
soft-majority-vote label distribution. This is the inner loop for iterating
on labeling functions before fitting the label model.

Usage:
    python3 scripts/lf_report.py --notes notes.jsonl [--gold gold.csv]
        [--relation-type pain-anatomy] [--lf-set starter|benchmark]
"""

import argparse
import csv
from collections import Counter

from devicesurv import lf_lib, synth, weaksup
from devicesurv.corpus import ingest_notes, preprocess
from devicesurv.defaults import default_dictionaries, default_trigger_lexicon
from devicesurv.extraction import extract_candidates


def load_gold(path):
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["candidate_id"]] = int(row["label"])
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--notes", required=True)
    ap.add_argument("--gold", default=None, help="CSV with candidate_id,label columns.")
    ap.add_argument("--relation-type", default="pain-anatomy")
    ap.add_argument("--lf-set", choices=["starter", "benchmark"], default="starter")
    args = ap.parse_args()

    dictionaries = default_dictionaries()
    lexicon = default_trigger_lexicon()
    candidates = []
    for note in ingest_notes(args.notes):
        doc = preprocess(note)
        candidates.extend(
            extract_candidates(doc, dictionaries, lexicon, relation_types=(args.relation_type,))
        )
    print(f"{len(candidates)} candidates from {args.notes}")

    lfs = (lf_lib.starter_lfs(args.relation_type) if args.lf_set == "starter"
           else synth.benchmark_lfs())
    matrix = weaksup.apply_lfs(candidates, lfs)
    gold = load_gold(args.gold) if args.gold else None
    if gold is not None:
        gold = {cid: lab for cid, lab in gold.items() if cid in set(matrix.candidate_ids)}
    stats = weaksup.lf_statistics(matrix, gold)

    header = f"{'lf_id':<28}{'coverage':>10}{'overlap':>10}{'conflict':>10}"
    if gold is not None:
        header += f"{'accuracy':>10}"
    print(header)
    for lf_id, st in stats.per_lf.items():
        row = f"{lf_id:<28}{st.coverage:>10.4f}{st.overlap:>10.4f}{st.conflict:>10.4f}"
        if gold is not None:
            row += f"{'':>10}" if st.accuracy is None else f"{st.accuracy:>10.4f}"
        print(row)

    dist = Counter(round(l.p_true, 2) for l in weaksup.soft_majority_vote(matrix))
    print("\nsoft-majority-vote label distribution:")
    for p in sorted(dist):
        print(f"  p_true={p:.2f}: {dist[p]}")


if __name__ == "__main__":
    main()
