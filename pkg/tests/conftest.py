"""Shared fixtures: tiny corpora, lexicons, and models."""

import pytest
import torch

from crossdial.corpus import Corpus, DialogueExample, LanguageTag, build_vocabulary
from crossdial.lexicon import make_lexicon
from crossdial.model import ModelConfig, Seq2SeqModel

EN = LanguageTag("<En>")
DE = LanguageTag("<De>")


def example(ex_id: str, history: str, response: str, tag: LanguageTag = EN) -> DialogueExample:
    return DialogueExample(
        id=ex_id,
        history=tuple(history.split()),
        response=tuple(response.split()),
        language_tag=tag,
    )


@pytest.fixture
def tiny_lexicon():
    return make_lexicon(
        [
            ("here", "hier"),
            ("an", "ein"),
            ("good", "gut"),
            ("example", "beispiel"),
            ("bank", "bank"),
            ("bank", "ufer"),
        ],
        EN,
        DE,
    )


@pytest.fixture
def tiny_corpus():
    return Corpus(
        split="train",
        examples=(
            example("ex-1", "here is an example", "good example here"),
            example("ex-2", "is this good ?", "an example is here"),
            example("ex-3", "here here again", "good good good"),
            example("ex-4", "a bank by the river", "the bank is good"),
        ),
    )


def build_tiny_model(
    corpus: Corpus,
    extra_tokens=(),
    seed: int = 0,
    **config_overrides,
) -> Seq2SeqModel:
    tokens = set(extra_tokens)
    for ex in corpus.examples:
        tokens.update(ex.history)
        tokens.update(ex.response)
    vocab = build_vocabulary([sorted(tokens)])
    defaults = dict(layers=1, heads=2, hidden_dim=16, dropout=0.0, max_positions=64)
    defaults.update(config_overrides)
    torch.manual_seed(seed)
    return Seq2SeqModel(ModelConfig(**defaults), vocab)


@pytest.fixture
def tiny_model(tiny_corpus):
    return build_tiny_model(tiny_corpus)
