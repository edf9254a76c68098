"""Bilingual dictionaries: MUSE-format parsing, lookup, and corpus coverage."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import TURN, Corpus, LanguageTag, _is_punct_char
from .errors import DegenerateInputError, ParseError

# Small built-in English stop-word list; callers may pass their own set.
DEFAULT_STOPWORDS = frozenset(
    """a an the and or but if then than so as of to in on at by for with from up
    down out off is are was were be been being am do does did have has had i you
    he she it we they me him her us them my your his its our their this that
    these those not no nor can will would should could may might must what which
    who whom when where why how there here all any both each few more most other
    some such only own same s t don very too just about into over under again""".split()
)


@dataclass(frozen=True)
class BilingualLexicon:
    """Source-token -> candidate-target-token mapping with lower-cased keys."""

    source_language: LanguageTag
    target_language: LanguageTag
    entries: dict[str, tuple[str, ...]]

    def __post_init__(self):
        for key, candidates in self.entries.items():
            if not candidates:
                raise DegenerateInputError(f"entry {key!r} has no candidates")
            if len(set(candidates)) != len(candidates):
                raise DegenerateInputError(f"entry {key!r} has duplicate candidates")

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, token: str) -> bool:
        return token.lower() in self.entries


@dataclass(frozen=True)
class CoverageReport:
    covered: int
    total: int

    @property
    def f(self) -> float:
        return self.covered / self.total

    def render(self) -> str:
        return f"covered = {self.covered}\ntotal = {self.total}\nf = {self.f:.6f}\n"


def make_lexicon(
    pairs: Iterable[tuple[str, str]], src: LanguageTag, tgt: LanguageTag
) -> BilingualLexicon:
    """Merge (source, target) pairs into entries, first-appearance order kept."""
    entries: dict[str, list[str]] = {}
    for source_tok, target_tok in pairs:
        key = source_tok.lower()
        candidates = entries.setdefault(key, [])
        if target_tok not in candidates:
            candidates.append(target_tok)
    return BilingualLexicon(
        source_language=src,
        target_language=tgt,
        entries={k: tuple(v) for k, v in entries.items()},
    )


def load_lexicon(path, src: LanguageTag, tgt: LanguageTag) -> BilingualLexicon:
    """Load a MUSE-style dictionary: one whitespace-separated "src tgt" pair per line."""
    path = Path(path)
    pairs = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 2:
                raise ParseError(path, line_no, f"expected 2 fields, got {len(fields)}")
            pairs.append((fields[0], fields[1]))
    return make_lexicon(pairs, src, tgt)


def lookup(lex: BilingualLexicon, token: str) -> tuple[str, ...] | None:
    """All candidate translations for the case-normalized token, or None."""
    return lex.entries.get(token.lower())


def _is_punct_token(token: str) -> bool:
    return bool(token) and all(_is_punct_char(ch) for ch in token)


def corpus_content_tokens(corpus: Corpus, stopwords: frozenset[str] | set[str]) -> list[str]:
    """Lower-cased history+response tokens with stop words and punctuation removed."""
    kept = []
    for ex in corpus:
        for tok in list(ex.history) + list(ex.response):
            low = tok.lower()
            if low in stopwords or _is_punct_token(tok) or tok == TURN:
                continue
            kept.append(low)
    return kept


def coverage(
    lex: BilingualLexicon,
    corpus: Corpus,
    stopwords: frozenset[str] | set[str] = DEFAULT_STOPWORDS,
) -> CoverageReport:
    """Fraction of distinct filtered corpus tokens present in the lexicon."""
    distinct = set(corpus_content_tokens(corpus, stopwords))
    if not distinct:
        raise DegenerateInputError("no corpus tokens left after filtering")
    covered = sum(1 for tok in distinct if tok in lex.entries)
    return CoverageReport(covered=covered, total=len(distinct))
