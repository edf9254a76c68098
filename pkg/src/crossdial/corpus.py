"""Dialogue corpus loading, tokenization, language tagging, and serialization.

Corpus files are UTF-8 JSON lines, one record per line with fields
``{id, history: [turn text, ...], response: text, lang: tag}``.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import ConfigError, DegenerateInputError, DoubleTagError, ParseError

PAD = "[PAD]"
UNK = "[UNK]"
CLS = "[CLS]"
SEP = "[SEP]"
MASK = "[MASK]"
TURN = "<turn>"

LANGUAGE_TAGS = ("<En>", "<Zh>", "<De>", "<Es>", "<Fr>", "<It>", "<Ru>", "[Cs]", "<Pt>")
CODE_SWITCH_TAG = "[Cs]"
PSEUDO_TARGET_TAG = "<Pt>"

# lowercase shorthand accepted in corpus files: "en" -> "<En>"
_SHORT_TAGS = {t.strip("<>[]").lower(): t for t in LANGUAGE_TAGS}

SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK, TURN) + LANGUAGE_TAGS

DEFAULT_MAX_HISTORY_LEN = 512
DEFAULT_MAX_RESPONSE_LEN = 50


@dataclass(frozen=True)
class LanguageTag:
    """One of the fixed language identification tokens."""

    value: str

    def __post_init__(self):
        if self.value not in LANGUAGE_TAGS:
            raise ConfigError(
                f"unknown language tag {self.value!r}; expected one of {LANGUAGE_TAGS}"
            )

    @classmethod
    def parse(cls, text: str) -> "LanguageTag":
        """Accept either the full tag ("<En>") or a short code ("en")."""
        if text in LANGUAGE_TAGS:
            return cls(text)
        short = text.strip().lower()
        if short in _SHORT_TAGS:
            return cls(_SHORT_TAGS[short])
        raise ConfigError(f"unknown language tag {text!r}")


def is_language_tag(token: str) -> bool:
    return token in LANGUAGE_TAGS


def _is_punct_char(ch: str) -> bool:
    # ASCII symbol ranges count as punctuation even where Unicode disagrees
    # (backtick, caret, dollar, ...), matching common wordpiece pre-splitting.
    cp = ord(ch)
    if (33 <= cp <= 47) or (58 <= cp <= 64) or (91 <= cp <= 96) or (123 <= cp <= 126):
        return True
    return unicodedata.category(ch).startswith("P")


def split_text(text: str, split_punctuation: bool = True) -> list[str]:
    """Split raw text on Unicode whitespace; punctuation chars become their own tokens."""
    tokens: list[str] = []
    word: list[str] = []

    def flush():
        if word:
            tokens.append("".join(word))
            word.clear()

    for ch in text:
        if ch.isspace():
            flush()
        elif split_punctuation and _is_punct_char(ch):
            flush()
            tokens.append(ch)
        else:
            word.append(ch)
    flush()
    return tokens


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


@dataclass
class TokenizerSpec:
    """Tokenizer mode plus the vocabulary and special-token inventory.

    ``subword`` mode delegates to a user-supplied callable; the built-in
    default covers whitespace mode only.
    """

    mode: str = "whitespace"
    vocabulary: dict[str, int] = field(default_factory=dict)
    split_punctuation: bool = True
    subword_fn: Callable[[str], list[str]] | None = None

    def __post_init__(self):
        if self.mode not in ("whitespace", "subword"):
            raise ConfigError(f"unknown tokenizer mode {self.mode!r}")
        if self.mode == "subword" and self.subword_fn is None:
            raise ConfigError("subword mode requires a subword_fn")
        if self.vocabulary:
            special_ids = {}
            for tok in (MASK, CLS, SEP, PAD) + LANGUAGE_TAGS:
                if tok in self.vocabulary:
                    special_ids[tok] = self.vocabulary[tok]
            if len(set(special_ids.values())) != len(special_ids):
                raise ConfigError("special tokens must have distinct ids")

    def token_id(self, token: str) -> int:
        if token in self.vocabulary:
            return self.vocabulary[token]
        return self.vocabulary[UNK]


def build_vocabulary(token_sources: Iterable[Sequence[str]]) -> dict[str, int]:
    """Deterministic vocabulary: special tokens first, then sorted corpus tokens."""
    seen: set[str] = set()
    for tokens in token_sources:
        seen.update(tokens)
    vocab = {tok: i for i, tok in enumerate(SPECIAL_TOKENS)}
    for tok in sorted(seen - set(SPECIAL_TOKENS)):
        vocab[tok] = len(vocab)
    return vocab


def tokenize(text: str, spec: TokenizerSpec) -> list[str]:
    """Tokenize raw text per the configured mode. Empty text yields an empty list."""
    if not spec.vocabulary:
        raise ConfigError("tokenizer vocabulary is empty")
    if spec.mode == "subword":
        return spec.subword_fn(text)
    return split_text(text, split_punctuation=spec.split_punctuation)


def tokens_to_ids(tokens: Sequence[str], spec: TokenizerSpec) -> list[int]:
    return [spec.token_id(t) for t in tokens]


def attach_language_tag(tokens: Sequence[str], tag: LanguageTag) -> list[str]:
    """Prefix a token sequence with a language tag. Re-tagging is an error."""
    if tokens and is_language_tag(tokens[0]):
        raise DoubleTagError(f"sequence already tagged with {tokens[0]!r}")
    return [tag.value, *tokens]


def strip_language_tag(tokens: Sequence[str]) -> list[str]:
    if tokens and is_language_tag(tokens[0]):
        return list(tokens[1:])
    return list(tokens)


@dataclass(frozen=True)
class DialogueExample:
    """One history/response pair; history turns are joined into one sequence."""

    id: str
    history: tuple[str, ...]
    response: tuple[str, ...]
    language_tag: LanguageTag

    def __post_init__(self):
        if not self.history or not self.response:
            raise DegenerateInputError(f"example {self.id!r}: empty history or response")

    def tagged_history(self) -> list[str]:
        return attach_language_tag(self.history, self.language_tag)

    def tagged_response(self) -> list[str]:
        return attach_language_tag(self.response, self.language_tag)


@dataclass(frozen=True)
class Corpus:
    split: str
    examples: tuple[DialogueExample, ...]

    def __post_init__(self):
        if self.split not in ("train", "valid", "test"):
            raise ConfigError(f"unknown split {self.split!r}")
        ids = [ex.id for ex in self.examples]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ParseError("<corpus>", 0, f"duplicate example ids: {dupes}")

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)


def make_example(
    rec_id: str,
    turns: Sequence[str],
    response_text: str,
    tag: LanguageTag,
    split_punctuation: bool = True,
    max_history_len: int = DEFAULT_MAX_HISTORY_LEN,
    max_response_len: int = DEFAULT_MAX_RESPONSE_LEN,
) -> DialogueExample:
    """Tokenize turns, join with the turn separator, truncate, and build the example."""
    history: list[str] = []
    for i, turn in enumerate(turns):
        if i > 0:
            history.append(TURN)
        history.extend(split_text(turn, split_punctuation))
    response = split_text(response_text, split_punctuation)
    if len(history) > max_history_len:
        history = history[-max_history_len:]
    if len(response) > max_response_len:
        response = response[:max_response_len]
    return DialogueExample(
        id=rec_id, history=tuple(history), response=tuple(response), language_tag=tag
    )


def load_corpus(
    path,
    split: str,
    split_punctuation: bool = True,
    max_history_len: int = DEFAULT_MAX_HISTORY_LEN,
    max_response_len: int = DEFAULT_MAX_RESPONSE_LEN,
) -> Corpus:
    """Load a JSONL dialogue file into a validated, tokenized Corpus."""
    path = Path(path)
    examples = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"invalid JSON: {exc.msg}") from exc
            for field_name in ("id", "history", "response", "lang"):
                if field_name not in rec:
                    raise ParseError(path, line_no, f"missing field {field_name!r}")
            turns = rec["history"]
            if isinstance(turns, str):
                turns = [turns]
            if not isinstance(turns, list) or not all(isinstance(t, str) for t in turns):
                raise ParseError(path, line_no, "history must be a list of turn texts")
            try:
                tag = LanguageTag.parse(rec["lang"])
                ex = make_example(
                    str(rec["id"]),
                    turns,
                    rec["response"],
                    tag,
                    split_punctuation=split_punctuation,
                    max_history_len=max_history_len,
                    max_response_len=max_response_len,
                )
            except (ConfigError, DegenerateInputError) as exc:
                raise ParseError(path, line_no, str(exc)) from exc
            examples.append(ex)
    if not examples:
        raise DegenerateInputError(f"{path}: empty corpus")
    return Corpus(split=split, examples=tuple(examples))


def split_turns(history: Sequence[str]) -> list[list[str]]:
    """Split a joined history back into per-turn token lists at the separator."""
    turns: list[list[str]] = [[]]
    for tok in history:
        if tok == TURN:
            turns.append([])
        else:
            turns[-1].append(tok)
    return turns


def save_corpus(corpus: Corpus, path) -> None:
    """Write a corpus back to JSONL; load(save(c)) == c field-for-field."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for ex in corpus:
            rec = {
                "id": ex.id,
                "history": [detokenize(t) for t in split_turns(ex.history)],
                "response": detokenize(ex.response),
                "lang": ex.language_tag.value,
            }
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def load_config(path) -> dict[str, str]:
    """Flat ``key = value`` config file; '#' starts a comment line."""
    path = Path(path)
    out: dict[str, str] = {}
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(path, line_no, "expected 'key = value'")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out
