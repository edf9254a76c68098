"""Pseudo-target and code-switching view construction.

Each dialogue example yields 2k+1 mutually positive views: the source view,
k pseudo-target views (every lexicon-covered token replaced by a candidate,
everything else masked by the placeholder), and k code-switch views (covered
tokens replaced with probability 1-tau, everything else kept).
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import (
    CODE_SWITCH_TAG,
    MASK,
    PSEUDO_TARGET_TAG,
    DialogueExample,
    LanguageTag,
    attach_language_tag,
)
from .errors import ConfigError, ParseError
from .lexicon import BilingualLexicon, lookup

KEPT = "kept"
REPLACED = "replaced"
MASKED = "masked"


@dataclass(frozen=True)
class SwitchConfig:
    k: int = 2
    tau: float = 0.4
    placeholder: str = MASK
    seed: int = 0
    # Literal pseudocode behavior: the code-switch keep branch appends the
    # whole candidate set and out-of-lexicon tokens become placeholders.
    # Breaks 1:1 token alignment; off by default.
    strict_algorithm1: bool = False
    resample_per_epoch: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must be in [0, 1], got {self.tau}")


@dataclass(frozen=True)
class View:
    kind: str  # source | pseudo_target | code_switch
    iteration: int  # 0 for the source view, 1..k otherwise
    history: tuple[str, ...]  # tagged
    response: tuple[str, ...]  # tagged
    history_provenance: tuple[str, ...]
    response_provenance: tuple[str, ...]


@dataclass(frozen=True)
class ViewSet:
    source: View
    pseudo_targets: tuple[View, ...]
    code_switches: tuple[View, ...]

    def __iter__(self):
        yield self.source
        yield from self.pseudo_targets
        yield from self.code_switches

    def __len__(self) -> int:
        return 1 + len(self.pseudo_targets) + len(self.code_switches)


def pseudo_target_pass(
    tokens: Sequence[str],
    lex: BilingualLexicon,
    rng: random.Random,
    placeholder: str = MASK,
) -> tuple[list[str], list[str]]:
    """Replace every covered token by a random candidate, mask the rest.

    Returns (tokens, provenance); output length equals input length.
    """
    out, prov = [], []
    for tok in tokens:
        candidates = lookup(lex, tok)
        if candidates is not None:
            out.append(rng.choice(candidates))
            prov.append(REPLACED)
        else:
            out.append(placeholder)
            prov.append(MASKED)
    return out, prov


def code_switch_pass(
    tokens: Sequence[str],
    lex: BilingualLexicon,
    tau: float,
    rng: random.Random,
    strict_algorithm1: bool = False,
    placeholder: str = MASK,
) -> tuple[list[str], list[str]]:
    """Mix source and target tokens.

    A covered token is replaced by a random candidate when a uniform draw
    exceeds tau (replacement probability 1-tau), otherwise kept. Tokens
    outside the lexicon are kept. ``strict_algorithm1`` instead appends the
    full candidate set on the keep branch and masks out-of-lexicon tokens.
    """
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must be in [0, 1], got {tau}")
    out, prov = [], []
    for tok in tokens:
        candidates = lookup(lex, tok)
        if candidates is not None:
            if rng.random() > tau:
                out.append(rng.choice(candidates))
                prov.append(REPLACED)
            elif strict_algorithm1:
                out.extend(candidates)
                prov.extend([KEPT] * len(candidates))
            else:
                out.append(tok)
                prov.append(KEPT)
        elif strict_algorithm1:
            out.append(placeholder)
            prov.append(MASKED)
        else:
            out.append(tok)
            prov.append(KEPT)
    return out, prov


def derive_rng(seed: int, example_id: str, epoch: int = 0) -> random.Random:
    """Stable per-example random source: seed xor a digest of the example id."""
    digest = hashlib.sha256(f"{example_id}|{epoch}".encode("utf-8")).digest()
    return random.Random(seed ^ int.from_bytes(digest[:8], "big"))


def build_views(
    example: DialogueExample,
    lex: BilingualLexicon,
    cfg: SwitchConfig,
    epoch: int = 0,
) -> ViewSet:
    """Construct the 2k+1 views of one example, deterministic given cfg.seed."""
    rng = derive_rng(cfg.seed, example.id, epoch if cfg.resample_per_epoch else 0)
    src_tag = example.language_tag
    kept_h = tuple([KEPT] * len(example.history))
    kept_r = tuple([KEPT] * len(example.response))
    source = View(
        kind="source",
        iteration=0,
        history=tuple(attach_language_tag(example.history, src_tag)),
        response=tuple(attach_language_tag(example.response, src_tag)),
        history_provenance=kept_h,
        response_provenance=kept_r,
    )
    pt_tag = LanguageTag(PSEUDO_TARGET_TAG)
    cs_tag = LanguageTag(CODE_SWITCH_TAG)
    pseudo_targets, code_switches = [], []
    for i in range(1, cfg.k + 1):
        h, hp = pseudo_target_pass(example.history, lex, rng, cfg.placeholder)
        r, rp = pseudo_target_pass(example.response, lex, rng, cfg.placeholder)
        pseudo_targets.append(
            View(
                kind="pseudo_target",
                iteration=i,
                history=tuple(attach_language_tag(h, pt_tag)),
                response=tuple(attach_language_tag(r, pt_tag)),
                history_provenance=tuple(hp),
                response_provenance=tuple(rp),
            )
        )
        h, hp = code_switch_pass(
            example.history, lex, cfg.tau, rng, cfg.strict_algorithm1, cfg.placeholder
        )
        r, rp = code_switch_pass(
            example.response, lex, cfg.tau, rng, cfg.strict_algorithm1, cfg.placeholder
        )
        code_switches.append(
            View(
                kind="code_switch",
                iteration=i,
                history=tuple(attach_language_tag(h, cs_tag)),
                response=tuple(attach_language_tag(r, cs_tag)),
                history_provenance=tuple(hp),
                response_provenance=tuple(rp),
            )
        )
    return ViewSet(
        source=source,
        pseudo_targets=tuple(pseudo_targets),
        code_switches=tuple(code_switches),
    )


def view_record(example_id: str, view: View) -> dict:
    """Line-record form of one view for the augmented-corpus file."""
    return {
        "id": example_id,
        "view_kind": view.kind,
        "iteration": view.iteration,
        "tag": view.history[0],
        "history": " ".join(view.history[1:]),
        "response": " ".join(view.response[1:]),
    }


def write_view_file(view_sets: Sequence[tuple[str, ViewSet]], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for example_id, vs in view_sets:
            for view in vs:
                fh.write(
                    json.dumps(view_record(example_id, view), ensure_ascii=False, sort_keys=True)
                    + "\n"
                )


def read_view_file(path) -> list[dict]:
    """Read augmented-view records; token fields split on single spaces."""
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"invalid JSON: {exc.msg}") from exc
            rec["history"] = rec["history"].split(" ") if rec["history"] else []
            rec["response"] = rec["response"].split(" ") if rec["response"] else []
            records.append(rec)
    return records
