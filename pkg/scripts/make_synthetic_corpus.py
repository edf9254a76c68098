#!/usr/bin/env python3
"""Generate the synthetic two-language dialogue corpus.

Writes train/valid/test splits, a translated target-language test split, a
partial training lexicon, the full reference lexicon, word vectors for the
embedding metrics, and an extra-vocabulary list for the trainer.
"""

import argparse
from pathlib import Path

from crossdial.synthetic import build_synthetic_corpus


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("data/synthetic"))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--covered-fraction", type=float, default=0.7,
        help="fraction of source words the training lexicon covers",
    )
    parser.add_argument("--valid-size", type=int, default=100)
    parser.add_argument("--test-size", type=int, default=100)
    args = parser.parse_args()

    paths = build_synthetic_corpus(
        args.out,
        seed=args.seed,
        covered_fraction=args.covered_fraction,
        valid_size=args.valid_size,
        test_size=args.test_size,
    )
    print(f"corpus: {paths.n_pairs} pairs under {paths.root}")
    print(f"lexicon coverage of the word list: {paths.coverage_fraction:.4f}")
    for name in ("train", "valid", "test", "target_test", "lexicon",
                 "true_lexicon", "vectors", "extra_vocab"):
        print(f"  {name}: {getattr(paths, name)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
