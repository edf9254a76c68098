"""Beam-search decoding and placeholder re-prediction.

Decoding starts from a language tag so the response language is steered by
the tag alone. Generated responses may contain placeholder tokens; a
pluggable mask filler replaces them afterwards.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import torch

from .corpus import CLS, MASK, PAD, SEP, TURN, UNK, Corpus, is_language_tag
from .errors import ConfigError, DegenerateInputError
from .lexicon import BilingualLexicon, lookup
from .model import Seq2SeqModel


@dataclass(frozen=True)
class GenerationConfig:
    beam_size: int = 6
    max_len: int = 50
    min_len: int = 1
    length_norm_exponent: float = 0.0

    def __post_init__(self):
        if self.beam_size < 1:
            raise ConfigError("beam_size must be at least 1")
        if self.max_len < 1:
            raise ConfigError("max_len must be at least 1")
        if not 0 <= self.min_len <= self.max_len:
            raise ConfigError("min_len must lie in [0, max_len]")


@dataclass(frozen=True)
class BeamCandidate:
    tokens: tuple[str, ...]
    score: float
    log_prob: float


def _normalized(log_prob: float, length: int, exponent: float) -> float:
    return log_prob / (max(length, 1) ** exponent)


def beam_search(
    model: Seq2SeqModel,
    history: Sequence[str],
    cfg: GenerationConfig,
    response_tag: str | None = None,
) -> list[BeamCandidate]:
    """Top-scoring responses for a tagged history, best first.

    Scores are length-normalized log probabilities (exponent 0 leaves raw
    sums). Ties break on token-id order. The greedy rollout is always kept
    in the candidate pool, so the top beam never scores below greedy.
    """
    tag = response_tag if response_tag is not None else history[0]
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            candidates = _beam_search_inner(model, history, cfg, tag)
    finally:
        if was_training:
            model.train()
    return candidates


def _beam_search_inner(
    model: Seq2SeqModel, history: Sequence[str], cfg: GenerationConfig, tag: str
) -> list[BeamCandidate]:
    enc = model.encode(history)
    sep_id = model.sep_id

    # Structural tokens never appear inside a response; placeholders do.
    banned = [
        model.vocab[t]
        for t in (PAD, CLS, UNK, TURN)
        if t in model.vocab
    ]
    banned.extend(i for t, i in model.vocab.items() if is_language_tag(t))

    def step_log_probs(generated: tuple[str, ...]) -> torch.Tensor:
        dist = model.decode_distribution(enc, [tag, *generated])
        row = torch.log(dist.P[-1]).clone()
        row[banned] = float("-inf")
        if len(generated) < cfg.min_len:
            row[sep_id] = float("-inf")
        return row

    def ids(tokens: tuple[str, ...]) -> tuple[int, ...]:
        return tuple(model.token_ids(tokens))

    def sort_key(item: tuple[float, tuple[str, ...]]):
        return (-item[0], ids(item[1]))

    # beams: (cumulative log prob, generated tokens); finished: + SEP flag
    beams: list[tuple[float, tuple[str, ...]]] = [(0.0, ())]
    finished: dict[tuple[str, ...], tuple[float, int]] = {}

    def finish(log_prob: float, tokens: tuple[str, ...], length: int) -> None:
        if tokens not in finished or finished[tokens][0] < log_prob:
            finished[tokens] = (log_prob, length)

    for _ in range(cfg.max_len):
        expansions: list[tuple[float, tuple[str, ...]]] = []
        for log_prob, tokens in beams:
            row = step_log_probs(tokens)
            top = torch.topk(row, min(cfg.beam_size + 1, row.shape[0]))
            for value, idx in zip(top.values.tolist(), top.indices.tolist()):
                if value == float("-inf"):
                    continue
                token = model.inv_vocab[idx]
                new_lp = log_prob + value
                if idx == sep_id:
                    finish(new_lp, tokens, len(tokens) + 1)
                else:
                    expansions.append((new_lp, (*tokens, token)))
        if not expansions:
            break
        expansions.sort(key=sort_key)
        beams = expansions[: cfg.beam_size]
        # Raw log probs only shrink along a path, so once every live beam
        # scores below every finished candidate nothing can improve. The
        # shortcut is unsound under length normalization, so skip it there.
        if (
            cfg.length_norm_exponent == 0
            and len(finished) >= cfg.beam_size
            and beams[0][0] <= min(lp for lp, _ in finished.values())
        ):
            break
    for log_prob, tokens in beams:
        finish(log_prob, tokens, len(tokens))

    # Greedy insurance: the pure argmax rollout always joins the pool.
    g_tokens: tuple[str, ...] = ()
    g_lp = 0.0
    for _ in range(cfg.max_len):
        row = step_log_probs(g_tokens)
        idx = int(torch.argmax(row))
        g_lp += float(row[idx])
        if idx == sep_id:
            break
        g_tokens = (*g_tokens, model.inv_vocab[idx])
    finish(g_lp, g_tokens, len(g_tokens) + 1)

    ranked = sorted(
        (
            (_normalized(lp, length, cfg.length_norm_exponent), lp, tokens)
            for tokens, (lp, length) in finished.items()
        ),
        key=lambda item: (-item[0], ids(item[2])),
    )
    return [
        BeamCandidate(tokens=tokens, score=score, log_prob=lp)
        for score, lp, tokens in ranked[: cfg.beam_size]
    ]


class MaskFiller(Protocol):
    def fill(
        self, history: Sequence[str], response: Sequence[str]
    ) -> Sequence[str]: ...


class IdentityFiller:
    """Leaves placeholders untouched (ablation baseline)."""

    def fill(self, history: Sequence[str], response: Sequence[str]) -> list[str]:
        return list(response)


class UnigramFrequencyFiller:
    """Fills every placeholder with the most frequent target-side token.

    Frequencies count each lexicon candidate once per covered token
    occurrence in the training split. Ties break lexicographically.
    """

    def __init__(self, counts: dict[str, int], placeholder: str = MASK):
        self.counts = dict(counts)
        self.placeholder = placeholder
        if self.counts:
            top = max(self.counts.values())
            self.best = min(tok for tok, c in self.counts.items() if c == top)
        else:
            self.best = None

    @classmethod
    def from_corpus(
        cls, corpus: Corpus, lex: BilingualLexicon, placeholder: str = MASK
    ) -> "UnigramFrequencyFiller":
        counts: Counter[str] = Counter()
        for ex in corpus.examples:
            for token in (*ex.history, *ex.response):
                candidates = lookup(lex, token)
                if candidates:
                    counts.update(candidates)
        return cls(dict(counts), placeholder)

    @classmethod
    def from_json(cls, text: str) -> "UnigramFrequencyFiller":
        data = json.loads(text)
        return cls(data["counts"], data.get("placeholder", MASK))

    def to_json(self) -> str:
        return json.dumps(
            {"counts": self.counts, "placeholder": self.placeholder},
            sort_keys=True,
            ensure_ascii=False,
        )

    def fill(self, history: Sequence[str], response: Sequence[str]) -> list[str]:
        if self.best is None:
            return list(response)
        return [self.best if t == self.placeholder else t for t in response]


class ExternalMLMFiller:
    """Adapter around an external masked-LM predictor.

    The callable receives (history tokens, response tokens with
    placeholders) and returns the filled response tokens.
    """

    def __init__(self, predict: Callable[[Sequence[str], Sequence[str]], Sequence[str]]):
        self.predict = predict

    def fill(self, history: Sequence[str], response: Sequence[str]) -> list[str]:
        return list(self.predict(history, response))


def fill_placeholders(
    filler: MaskFiller,
    history: Sequence[str],
    response: Sequence[str],
    placeholder: str = MASK,
) -> list[str]:
    """Replace placeholders via the filler, guarding its output contract.

    Output length and non-placeholder tokens are enforced; a misbehaving or
    failing filler degrades to leaving placeholders in place with a warning.
    """
    original = list(response)
    if placeholder not in original:
        return original
    try:
        out = list(filler.fill(history, response))
    except Exception as exc:  # degrade, never fail generation
        warnings.warn(f"mask filler raised {exc!r}; placeholders left", RuntimeWarning)
        return original
    if len(out) != len(original):
        warnings.warn(
            f"mask filler changed length {len(original)} -> {len(out)}; "
            "placeholders left",
            RuntimeWarning,
        )
        return original
    result = [
        out[i] if original[i] == placeholder else original[i]
        for i in range(len(original))
    ]
    if any(out[i] != original[i] for i in range(len(out)) if original[i] != placeholder):
        warnings.warn(
            "mask filler modified non-placeholder tokens; changes reverted",
            RuntimeWarning,
        )
    if placeholder in result:
        warnings.warn("some placeholders were left unfilled", RuntimeWarning)
    return result


def placeholder_ratio(
    responses: Sequence[Sequence[str]], placeholder: str = MASK
) -> float:
    """Placeholder tokens divided by all tokens, over the whole set."""
    total = sum(len(r) for r in responses)
    if total == 0:
        raise DegenerateInputError("no tokens to compute a placeholder ratio over")
    masked = sum(1 for r in responses for t in r if t == placeholder)
    return masked / total


def generate_responses(
    model: Seq2SeqModel,
    corpus: Corpus,
    cfg: GenerationConfig,
    filler: MaskFiller | None = None,
    response_tag: str | None = None,
    placeholder: str = MASK,
) -> list[dict]:
    """Beam-decode every example; returns one serializable record each."""
    records = []
    filler = filler if filler is not None else IdentityFiller()
    for ex in corpus.examples:
        history = ex.tagged_history()
        candidates = beam_search(model, history, cfg, response_tag)
        top = list(candidates[0].tokens) if candidates else []
        positions = [i for i, t in enumerate(top) if t == placeholder]
        filled = fill_placeholders(filler, history, top, placeholder)
        records.append(
            {
                "id": ex.id,
                "tag": response_tag if response_tag is not None else ex.language_tag.value,
                "candidates": [
                    {"tokens": " ".join(c.tokens), "score": c.score}
                    for c in candidates
                ],
                "response": " ".join(filled),
                "placeholder_positions": positions,
            }
        )
    return records


def write_generation_file(records: Sequence[dict], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def read_generation_file(path) -> list[dict]:
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
