"""Automatic evaluation: perplexity, Distinct-n, BLEU, ROUGE-L, embedding
similarity, and zero-shot-vs-supervised percentage tables.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .corpus import SEP, Corpus
from .errors import DegenerateInputError, ParseError
from .model import Seq2SeqModel

METRIC_ORDER = (
    "ppl",
    "dist1",
    "dist2",
    "bleu1",
    "bleu2",
    "rouge_l",
    "emb_average",
    "emb_extrema",
    "emb_greedy",
)


class WordVectorTable:
    """Fixed-dimension word vectors; unknown tokens map to the zero vector."""

    def __init__(self, vectors: dict[str, np.ndarray]):
        if not vectors:
            raise DegenerateInputError("vector table is empty")
        dims = {v.shape for v in vectors.values()}
        if len(dims) != 1:
            raise ParseError("<vectors>", 0, f"inconsistent dimensions: {sorted(dims)}")
        self.vectors = {t: np.asarray(v, dtype=np.float64) for t, v in vectors.items()}
        self.dim = next(iter(self.vectors.values())).shape[0]

    @classmethod
    def load(cls, path) -> "WordVectorTable":
        path = Path(path)
        vectors: dict[str, np.ndarray] = {}
        dim = None
        with path.open(encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) < 2:
                    raise ParseError(path, line_no, "expected token plus numbers")
                try:
                    vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
                except ValueError as exc:
                    raise ParseError(path, line_no, f"bad number: {exc}") from exc
                if dim is None:
                    dim = vec.shape[0]
                elif vec.shape[0] != dim:
                    raise ParseError(
                        path, line_no, f"dimension {vec.shape[0]} != expected {dim}"
                    )
                vectors[parts[0]] = vec
        return cls(vectors)

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def get(self, token: str) -> np.ndarray:
        vec = self.vectors.get(token)
        if vec is None:
            return np.zeros(self.dim, dtype=np.float64)
        return vec


def _cos(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


# ----------------------------------------------------------------------
# model-based metric
# ----------------------------------------------------------------------


def perplexity(model: Seq2SeqModel, corpus: Corpus, batch_size: int = 64) -> float:
    """exp(mean negative log-likelihood) of gold responses, teacher-forced.

    Targets are the tagged response plus the end marker; padding never
    enters the average. Accumulation runs in float64.
    """
    if not corpus.examples:
        raise DegenerateInputError("cannot evaluate perplexity on an empty split")
    was_training = model.training
    model.eval()
    nll = 0.0
    count = 0
    with torch.no_grad():
        for start in range(0, len(corpus.examples), batch_size):
            chunk = corpus.examples[start : start + batch_size]
            enc = model.encode_batch([ex.tagged_history() for ex in chunk])
            targets = [list(ex.tagged_response()) + [SEP] for ex in chunk]
            logits, tgt_ids, tgt_mask = model.decode_batch(enc, targets)
            log_probs = torch.log_softmax(logits.double(), dim=-1)
            picked = log_probs.gather(-1, tgt_ids.unsqueeze(-1)).squeeze(-1)
            nll -= float((picked * tgt_mask).sum())
            count += int(tgt_mask.sum())
    if was_training:
        model.train()
    return math.exp(nll / count)


# ----------------------------------------------------------------------
# text-overlap metrics
# ----------------------------------------------------------------------


def _ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def distinct_n(responses: Sequence[Sequence[str]], n: int) -> float:
    """Distinct n-grams over total n-grams across the whole response set."""
    grams: list[tuple[str, ...]] = []
    for response in responses:
        grams.extend(_ngrams(response, n))
    if not grams:
        raise DegenerateInputError(f"no {n}-grams in the response set")
    return len(set(grams)) / len(grams)


def bleu_n(
    candidates: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    n: int,
    smooth: bool = False,
) -> float:
    """Corpus-level BLEU with clipped precision and brevity penalty."""
    if not candidates:
        raise DegenerateInputError("empty candidate set")
    if len(candidates) != len(references):
        raise DegenerateInputError(
            f"{len(candidates)} candidates vs {len(references)} references"
        )
    log_precisions = []
    for order in range(1, n + 1):
        clipped = 0
        total = 0
        for cand, ref in zip(candidates, references):
            cand_counts = Counter(_ngrams(cand, order))
            ref_counts = Counter(_ngrams(ref, order))
            clipped += sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
            total += max(len(cand) - order + 1, 0)
        if smooth:
            clipped += 1
            total += 1
        if clipped == 0 or total == 0:
            return 0.0
        log_precisions.append(math.log(clipped / total))
    c = sum(len(cand) for cand in candidates)
    r = sum(len(ref) for ref in references)
    if c == 0:
        return 0.0
    brevity = 1.0 if c > r else math.exp(1.0 - r / c)
    return brevity * math.exp(sum(log_precisions) / n)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l(
    candidates: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    beta: float = 1.0,
) -> float:
    """Mean longest-common-subsequence F-score over aligned pairs."""
    if not candidates or len(candidates) != len(references):
        raise DegenerateInputError("candidate/reference sets empty or misaligned")
    scores = []
    for cand, ref in zip(candidates, references):
        lcs = _lcs_length(cand, ref)
        if lcs == 0 or not cand or not ref:
            scores.append(0.0)
            continue
        precision = lcs / len(cand)
        recall = lcs / len(ref)
        b2 = beta * beta
        scores.append((1 + b2) * precision * recall / (recall + b2 * precision))
    return sum(scores) / len(scores)


# ----------------------------------------------------------------------
# embedding-based metrics
# ----------------------------------------------------------------------


def _known_vectors(tokens: Sequence[str], table: WordVectorTable) -> list[np.ndarray]:
    return [table.get(t) for t in tokens if t in table]


def _pair_average(c: list[np.ndarray], r: list[np.ndarray]) -> float:
    return _cos(np.mean(c, axis=0), np.mean(r, axis=0))


def _extrema_vector(vecs: list[np.ndarray]) -> np.ndarray:
    stack = np.stack(vecs)
    idx = np.argmax(np.abs(stack), axis=0)
    return stack[idx, np.arange(stack.shape[1])]


def _pair_extrema(c: list[np.ndarray], r: list[np.ndarray]) -> float:
    return _cos(_extrema_vector(c), _extrema_vector(r))


def _pair_greedy(c: list[np.ndarray], r: list[np.ndarray]) -> float:
    def directed(src: list[np.ndarray], dst: list[np.ndarray]) -> float:
        return sum(max(_cos(u, v) for v in dst) for u in src) / len(src)

    return 0.5 * (directed(c, r) + directed(r, c))


def embedding_metric(
    candidates: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    table: WordVectorTable,
    mode: str,
) -> float:
    """Average/extrema/greedy word-vector similarity, averaged over pairs.

    Tokens missing from the table are dropped; a pair where either side
    empties scores 0 (zero-vector convention) with a warning.
    """
    pair_fn = {
        "average": _pair_average,
        "extrema": _pair_extrema,
        "greedy": _pair_greedy,
    }.get(mode)
    if pair_fn is None:
        raise DegenerateInputError(f"unknown embedding metric mode {mode!r}")
    if not candidates or len(candidates) != len(references):
        raise DegenerateInputError("candidate/reference sets empty or misaligned")
    scores = []
    for cand, ref in zip(candidates, references):
        c_vecs = _known_vectors(cand, table)
        r_vecs = _known_vectors(ref, table)
        if not c_vecs or not r_vecs:
            warnings.warn(
                "sentence with no known tokens scores 0 in embedding metrics",
                RuntimeWarning,
            )
            scores.append(0.0)
            continue
        scores.append(pair_fn(c_vecs, r_vecs))
    return sum(scores) / len(scores)


# ----------------------------------------------------------------------
# reports
# ----------------------------------------------------------------------


@dataclass
class MetricsReport:
    ppl: float | None = None
    dist1: float | None = None
    dist2: float | None = None
    bleu1: float | None = None
    bleu2: float | None = None
    rouge_l: float | None = None
    emb_average: float | None = None
    emb_extrema: float | None = None
    emb_greedy: float | None = None
    counts: dict = field(default_factory=dict)

    def values(self) -> dict[str, float | None]:
        return {name: getattr(self, name) for name in METRIC_ORDER}

    def render(self) -> str:
        lines = []
        for name, value in self.values().items():
            shown = "NA" if value is None else f"{value:.6f}"
            lines.append(f"{name} = {shown}")
        for key in sorted(self.counts):
            lines.append(f"count.{key} = {self.counts[key]}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {**self.values(), "counts": self.counts}
        return json.dumps(payload, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        data = json.loads(text)
        kwargs = {name: data.get(name) for name in METRIC_ORDER}
        return cls(counts=data.get("counts", {}), **kwargs)


def compute_report(
    candidates: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    vectors: WordVectorTable | None = None,
    model: Seq2SeqModel | None = None,
    corpus: Corpus | None = None,
    smooth_bleu: bool = False,
) -> MetricsReport:
    def guarded(name: str, fn):
        # A report over degenerate output (say, single-token responses with
        # no bigrams) should mark the metric NA rather than abort the rest.
        try:
            return fn()
        except DegenerateInputError as exc:
            warnings.warn(f"{name} unavailable: {exc}", RuntimeWarning, stacklevel=3)
            return None

    report = MetricsReport(
        dist1=guarded("dist1", lambda: distinct_n(candidates, 1)),
        dist2=guarded("dist2", lambda: distinct_n(candidates, 2)),
        bleu1=guarded("bleu1", lambda: bleu_n(candidates, references, 1, smooth_bleu)),
        bleu2=guarded("bleu2", lambda: bleu_n(candidates, references, 2, smooth_bleu)),
        rouge_l=guarded("rouge_l", lambda: rouge_l(candidates, references)),
        counts={
            "pairs": len(candidates),
            "candidate_tokens": sum(len(c) for c in candidates),
            "reference_tokens": sum(len(r) for r in references),
        },
    )
    if vectors is not None:
        report.emb_average = embedding_metric(candidates, references, vectors, "average")
        report.emb_extrema = embedding_metric(candidates, references, vectors, "extrema")
        report.emb_greedy = embedding_metric(candidates, references, vectors, "greedy")
    if model is not None and corpus is not None:
        report.ppl = perplexity(model, corpus)
    return report


@dataclass
class ComparisonReport:
    percentages: dict[str, float | None]
    average: float | None

    def render(self) -> str:
        lines = [f"{'metric':<12} {'per':>10}"]
        for name in METRIC_ORDER:
            if name not in self.percentages:
                continue
            value = self.percentages[name]
            shown = "NA" if value is None else f"{value:.2f}"
            lines.append(f"{name:<12} {shown:>10}")
        ave = "NA" if self.average is None else f"{self.average:.2f}"
        lines.append(f"{'AVE':<12} {ave:>10}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {"percentages": self.percentages, "average": self.average},
            sort_keys=True,
            ensure_ascii=False,
        )


def zero_sup_percentage(
    zero: MetricsReport, sup: MetricsReport
) -> ComparisonReport:
    """Per-metric 100*zero/sup, plus the average excluding perplexity.

    A metric with a zero or missing supervised denominator is reported as
    undefined and excluded from the average, with a warning.
    """
    percentages: dict[str, float | None] = {}
    contributing = []
    for name in METRIC_ORDER:
        z = getattr(zero, name)
        s = getattr(sup, name)
        if z is None and s is None:
            continue
        if z is None or s is None or s == 0:
            warnings.warn(
                f"metric {name} undefined in comparison (missing or zero baseline)",
                RuntimeWarning,
            )
            percentages[name] = None
            continue
        pct = 100.0 * z / s
        percentages[name] = pct
        if name != "ppl":
            contributing.append(pct)
    average = sum(contributing) / len(contributing) if contributing else None
    return ComparisonReport(percentages=percentages, average=average)
