"""Synthetic two-language dialogue corpus for end-to-end desk runs.

A small template grammar over an artificial source language produces a few
thousand history/response pairs. A deterministic letter mapping defines the
"true" target language; the training lexicon covers only part of the
vocabulary so zero-shot behaviour is measurable against held-out truth.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import PSEUDO_TARGET_TAG, split_text

FUNCTION_WORDS = ("ko", "si", "lu", "na", "po", "mi")

NOUNS = (
    "balu", "domi", "feka", "gilo", "kanu",
    "lemi", "nofa", "pori", "ruka", "sedo",
    "tavi", "vemu", "zika", "bora", "dufe",
)

ADJECTIVES = (
    "gavi", "kelo", "mura", "nipo", "rasu", "tebi",
    "voka", "zumi", "bedo", "fanu", "gori", "lupa",
)

# (history turns, response); {n} and {a} range over nouns and adjectives
TEMPLATES = (
    (("ko si lu {n} na {a} ?",), "lu {n} si {a} ."),
    (("mi na po {n} si {a} .",), "po {n} si na {a} ."),
    (("ko si {n} na {a} ?",), "si , lu {n} si {a} ."),
    (("lu {a} {n} si po ?",), "na , lu {n} si mi {a} ."),
    (("mi lu {n} .", "ko si po {a} ?"), "po {n} si {a} ."),
    (("ko na {n} si {a} ?",), "na {n} si lu {a} ."),
    (("po {n} si mi {a} ?",), "mi po {n} si {a} ."),
    (("lu {n} na po {a} .",), "ko lu {n} si {a} ?"),
    (("mi si lu {a} {n} .",), "lu {a} {n} si po ."),
    (("ko po {n} na {a} si ?",), "po {n} na {a} si lu ."),
    (("na lu {n} .", "mi si {a} ?"), "lu {n} si na {a} ."),
    (("po si mi {n} na {a} ?",), "mi {n} si po {a} ."),
)

_LETTER_MAP = str.maketrans("bdfgklmnprstvzaeiou", "pgvkdrnmbtzsfcoaeui")


def _source_vocabulary() -> tuple[str, ...]:
    return tuple(sorted(set(FUNCTION_WORDS) | set(NOUNS) | set(ADJECTIVES)))


def true_word_mapping() -> dict[str, str]:
    """Deterministic source-to-target word mapping defining the target language."""
    source = _source_vocabulary()
    mapping: dict[str, str] = {}
    taken = set(source)
    for word in source:
        target = word.translate(_LETTER_MAP)
        while target in taken:
            target += "x"
        mapping[word] = target
        taken.add(target)
    if len(set(mapping.values())) != len(mapping):
        raise AssertionError("target word mapping is not injective")
    return mapping


def _translate_text(text: str, mapping: dict[str, str]) -> str:
    return " ".join(mapping.get(tok, tok) for tok in text.split())


@dataclass
class SyntheticCorpus:
    root: Path
    train: Path
    valid: Path
    test: Path
    target_test: Path
    lexicon: Path
    true_lexicon: Path
    vectors: Path
    extra_vocab: Path
    coverage_fraction: float
    n_pairs: int


def _write_jsonl(path: Path, records: list[dict]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def build_synthetic_corpus(
    out_dir,
    seed: int = 0,
    covered_fraction: float = 0.7,
    alt_candidate_fraction: float = 0.1,
    valid_size: int = 100,
    test_size: int = 100,
) -> SyntheticCorpus:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mapping = true_word_mapping()

    records = []
    idx = 0
    for t_i, (turns, response) in enumerate(TEMPLATES):
        for noun in NOUNS:
            for adj in ADJECTIVES:
                idx += 1
                records.append(
                    {
                        "id": f"syn-{idx:05d}",
                        "history": [t.format(n=noun, a=adj) for t in turns],
                        "response": response.format(n=noun, a=adj),
                        "lang": "<En>",
                        "template": t_i,
                    }
                )
    rng = random.Random(f"synthetic|{seed}")
    rng.shuffle(records)
    test = records[:test_size]
    valid = records[test_size : test_size + valid_size]
    train = records[test_size + valid_size :]

    target_test = [
        {
            "id": rec["id"],
            "history": [_translate_text(t, mapping) for t in rec["history"]],
            "response": _translate_text(rec["response"], mapping),
            "lang": PSEUDO_TARGET_TAG,
            "template": rec["template"],
        }
        for rec in test
    ]

    words = _source_vocabulary()
    n_covered = round(covered_fraction * len(words))
    # Closed-class words come first, as in real bilingual dictionaries; the
    # uncovered remainder is drawn from open-class words only.
    closed = sorted(FUNCTION_WORDS)[:n_covered]
    open_class = sorted(set(words) - set(FUNCTION_WORDS))
    covered = sorted(
        closed + rng.sample(open_class, max(0, n_covered - len(closed)))
    )
    n_alt = max(1, round(alt_candidate_fraction * n_covered))
    alt_words = set(rng.sample(covered, n_alt))
    taken = set(words) | set(mapping.values())
    pairs = []
    for word in covered:
        pairs.append((word, mapping[word]))
        if word in alt_words:
            alt = mapping[word] + "w"
            while alt in taken:
                alt += "w"
            taken.add(alt)
            pairs.append((word, alt))
    # Punctuation is shared between the two languages; identity entries keep
    # it out of the placeholder pool without touching content-word coverage.
    pairs.extend((p, p) for p in (".", ",", "?"))

    paths = SyntheticCorpus(
        root=out_dir,
        train=out_dir / "train.jsonl",
        valid=out_dir / "valid.jsonl",
        test=out_dir / "test.jsonl",
        target_test=out_dir / "target_test.jsonl",
        lexicon=out_dir / "lexicon.txt",
        true_lexicon=out_dir / "true_lexicon.txt",
        vectors=out_dir / "vectors.txt",
        extra_vocab=out_dir / "extra_vocab.txt",
        coverage_fraction=n_covered / len(words),
        n_pairs=len(records),
    )
    _write_jsonl(paths.train, train)
    _write_jsonl(paths.valid, valid)
    _write_jsonl(paths.test, test)
    _write_jsonl(paths.target_test, target_test)
    paths.lexicon.write_text(
        "".join(f"{s} {t}\n" for s, t in pairs), encoding="utf-8"
    )
    paths.true_lexicon.write_text(
        "".join(f"{s} {t}\n" for s, t in sorted(mapping.items())), encoding="utf-8"
    )
    paths.extra_vocab.write_text(
        "".join(f"{t}\n" for t in sorted(mapping.values())), encoding="utf-8"
    )

    all_tokens = sorted(
        set(words)
        | set(mapping.values())
        | {t for _, t in pairs}
        | {".", ",", "?"}
        | {tok for rec in records for t in rec["history"] for tok in split_text(t)}
    )
    vec_rng = np.random.default_rng(12345)
    lines = []
    for token in all_tokens:
        vec = vec_rng.normal(size=16)
        vec = vec / np.linalg.norm(vec)
        lines.append(token + " " + " ".join(f"{x:.6f}" for x in vec))
    paths.vectors.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths
