"""Beam decoding against an enumeration oracle, and placeholder filling."""

import itertools
import json
import math

import pytest
import torch

from crossdial.corpus import MASK, SEP, Corpus, build_vocabulary
from crossdial.errors import ConfigError, DegenerateInputError
from crossdial.generation import (
    BeamCandidate,
    GenerationConfig,
    IdentityFiller,
    UnigramFrequencyFiller,
    beam_search,
    fill_placeholders,
    generate_responses,
    placeholder_ratio,
    read_generation_file,
    write_generation_file,
)
from tests.conftest import example


class StubModel:
    """Hand-specified conditional distributions over a three-token language."""

    CONTENT = ("a", "b", "c")

    # P(next | generated so far); unlisted prefixes fall back to DEFAULT
    TABLE = {
        (): {"a": 0.5, "b": 0.3, "c": 0.1, SEP: 0.1},
        ("a",): {"b": 0.6, SEP: 0.3, "a": 0.05, "c": 0.05},
        ("b",): {"c": 0.5, "a": 0.3, SEP: 0.2},
        ("a", "b"): {SEP: 0.8, "c": 0.15, "a": 0.05},
    }
    DEFAULT = {SEP: 0.7, "a": 0.1, "b": 0.1, "c": 0.1}

    def __init__(self):
        self.vocab = build_vocabulary([list(self.CONTENT)])
        self.inv_vocab = {i: t for t, i in self.vocab.items()}
        self.sep_id = self.vocab[SEP]
        self.training = False

    def eval(self):
        return self

    def train(self):
        return self

    def token_ids(self, tokens):
        return [self.vocab[t] for t in tokens]

    def encode(self, tokens):
        return None

    def row(self, generated: tuple) -> torch.Tensor:
        spec = self.TABLE.get(tuple(generated), self.DEFAULT)
        probs = torch.zeros(len(self.vocab))  # unlisted tokens are unreachable
        for tok, p in spec.items():
            probs[self.vocab[tok]] = p
        return probs

    def decode_distribution(self, enc, prefix):
        generated = tuple(prefix[1:])  # drop the language tag
        rows = [self.row(generated[:i]) for i in range(len(generated) + 1)]

        class Dist:
            P = torch.stack(rows)

        return Dist()

    def log_p(self, generated: tuple, token: str) -> float:
        # same float32 log the decoder applies, so sums match bitwise
        return float(torch.log(self.row(generated)[self.vocab[token]]))


def enumerate_candidates(model: StubModel, cfg: GenerationConfig):
    """All reachable finished sequences with the decoder's own semantics."""
    entries = {}

    def record(tokens, log_prob, length):
        if tokens not in entries or entries[tokens][0] < log_prob:
            entries[tokens] = (log_prob, length)

    for n in range(cfg.max_len + 1):
        for seq in itertools.product(StubModel.CONTENT, repeat=n):
            lp = 0.0
            for i, tok in enumerate(seq):
                lp += model.log_p(seq[:i], tok)
            if lp == float("-inf"):
                continue  # a zero-probability step makes it unreachable
            if n == cfg.max_len:
                record(seq, lp, n)  # still alive when the step budget ends
            elif n >= cfg.min_len:
                sep_lp = model.log_p(seq, SEP)
                if sep_lp > float("-inf"):
                    record(seq, lp + sep_lp, n + 1)
    ranked = sorted(
        (
            (lp / max(length, 1) ** cfg.length_norm_exponent, lp, tokens)
            for tokens, (lp, length) in entries.items()
        ),
        key=lambda item: (-item[0], tuple(model.token_ids(item[2]))),
    )
    return [
        BeamCandidate(tokens=tokens, score=score, log_prob=lp)
        for score, lp, tokens in ranked[: cfg.beam_size]
    ]


class TestGenerationConfig:
    def test_defaults_are_valid(self):
        cfg = GenerationConfig()
        assert cfg.beam_size == 6 and cfg.max_len == 50

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"beam_size": 0},
            {"max_len": 0},
            {"min_len": -1},
            {"min_len": 5, "max_len": 4},
        ],
    )
    def test_bad_values_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            GenerationConfig(**kwargs)


class TestBeamSearchOracle:
    @pytest.mark.parametrize("min_len", [0, 2])
    @pytest.mark.parametrize("exponent", [0.0, 1.0])
    def test_wide_beam_matches_enumeration(self, min_len, exponent):
        model = StubModel()
        cfg = GenerationConfig(
            beam_size=64, max_len=3, min_len=min_len, length_norm_exponent=exponent
        )
        got = beam_search(model, ("<En>",), cfg)
        expect = enumerate_candidates(model, cfg)
        assert len(got) == len(expect)
        for g, e in zip(got, expect):
            assert g.tokens == e.tokens
            assert g.log_prob == pytest.approx(e.log_prob, abs=1e-9)
            assert g.score == pytest.approx(e.score, abs=1e-9)

    def test_top_beam_is_the_most_likely_sequence(self):
        model = StubModel()
        cfg = GenerationConfig(beam_size=6, max_len=3)
        got = beam_search(model, ("<En>",), cfg)
        # by hand: "a b" then end = 0.5 * 0.6 * 0.8
        assert got[0].tokens == ("a", "b")
        assert got[0].log_prob == pytest.approx(math.log(0.5 * 0.6 * 0.8), abs=1e-6)

    def test_scores_never_increase(self):
        got = beam_search(StubModel(), ("<En>",), GenerationConfig(beam_size=6, max_len=3))
        scores = [c.score for c in got]
        assert scores == sorted(scores, reverse=True)

    def test_min_len_suppresses_short_sequences(self):
        got = beam_search(
            StubModel(), ("<En>",), GenerationConfig(beam_size=8, max_len=3, min_len=2)
        )
        assert all(len(c.tokens) >= 2 for c in got)


class TestBeamSearchOnModel:
    def test_beam_one_equals_greedy_rollout(self, tiny_model):
        history = ("<En>", "here", "is", "an", "example")
        cfg = GenerationConfig(beam_size=1, max_len=6)
        got = beam_search(tiny_model, history, cfg)
        enc = tiny_model.encode(history)
        greedy = []
        banned = {
            t
            for t in tiny_model.vocab
            if t.startswith("[") or t.startswith("<")
            if t not in (SEP, MASK)
        }
        for _ in range(6):
            dist = tiny_model.decode_distribution(enc, ("<En>", *greedy))
            order = torch.argsort(dist.P[-1], descending=True)
            token = next(
                tiny_model.inv_vocab[int(i)]
                for i in order
                if tiny_model.inv_vocab[int(i)] not in banned
            )
            if token == SEP:
                break
            greedy.append(token)
        assert list(got[0].tokens) == greedy

    def test_candidates_avoid_structural_tokens(self, tiny_model):
        history = ("<En>", "good", "example")
        got = beam_search(tiny_model, history, GenerationConfig(beam_size=6, max_len=5))
        assert 1 <= len(got) <= 6
        for cand in got:
            for tok in cand.tokens:
                assert tok not in ("[PAD]", "[CLS]", "[UNK]", "<turn>", "<En>", "<Pt>")

    def test_deterministic_in_eval_mode(self, tiny_model):
        history = ("<En>", "here", "is", "an", "example")
        cfg = GenerationConfig(beam_size=4, max_len=5)
        a = beam_search(tiny_model, history, cfg)
        b = beam_search(tiny_model, history, cfg)
        assert a == b

    def test_min_len_holds_even_for_greedy_insurance(self, tiny_model):
        history = ("<En>", "good",)
        cfg = GenerationConfig(beam_size=3, max_len=6, min_len=3)
        got = beam_search(tiny_model, history, cfg)
        assert all(len(c.tokens) >= 3 for c in got)


class TestUnigramFrequencyFiller:
    def test_counts_candidates_per_covered_occurrence(self, tiny_corpus, tiny_lexicon):
        filler = UnigramFrequencyFiller.from_corpus(tiny_corpus, tiny_lexicon)
        assert filler.counts == {
            "hier": 5,
            "ein": 2,
            "gut": 6,
            "beispiel": 3,
            "bank": 2,
            "ufer": 2,
        }
        assert filler.best == "gut"

    def test_best_breaks_ties_lexicographically(self):
        assert UnigramFrequencyFiller({"b": 3, "a": 3, "c": 1}).best == "a"

    def test_fill_replaces_every_placeholder(self):
        filler = UnigramFrequencyFiller({"x": 3, "y": 1})
        out = filler.fill(["h"], ["a", MASK, "b", MASK])
        assert out == ["a", "x", "b", "x"]

    def test_empty_counts_leave_placeholders(self):
        filler = UnigramFrequencyFiller({})
        assert filler.best is None
        assert filler.fill(["h"], [MASK]) == [MASK]

    def test_json_round_trip(self, tiny_corpus, tiny_lexicon):
        filler = UnigramFrequencyFiller.from_corpus(tiny_corpus, tiny_lexicon)
        clone = UnigramFrequencyFiller.from_json(filler.to_json())
        assert clone.counts == filler.counts
        assert clone.best == filler.best
        assert clone.placeholder == filler.placeholder


class _RaisingFiller:
    def fill(self, history, response):
        raise RuntimeError("backend down")


class _ShrinkingFiller:
    def fill(self, history, response):
        return [t for t in response if t != MASK]


class _VandalFiller:
    def fill(self, history, response):
        return ["zap" for _ in response]


class _LazyFiller:
    def fill(self, history, response):
        return list(response)


class TestFillPlaceholders:
    def test_fills_in_place(self):
        out = fill_placeholders(
            UnigramFrequencyFiller({"w": 1}), ["h"], ["a", MASK, "b"]
        )
        assert out == ["a", "w", "b"]

    def test_without_placeholders_filler_is_not_consulted(self):
        out = fill_placeholders(_RaisingFiller(), ["h"], ["a", "b"])
        assert out == ["a", "b"]

    def test_raising_filler_degrades_with_warning(self):
        with pytest.warns(RuntimeWarning, match="backend down"):
            out = fill_placeholders(_RaisingFiller(), ["h"], ["a", MASK])
        assert out == ["a", MASK]

    def test_length_change_degrades_with_warning(self):
        with pytest.warns(RuntimeWarning, match="length"):
            out = fill_placeholders(_ShrinkingFiller(), ["h"], ["a", MASK])
        assert out == ["a", MASK]

    def test_non_placeholder_edits_are_reverted(self):
        with pytest.warns(RuntimeWarning, match="reverted"):
            out = fill_placeholders(_VandalFiller(), ["h"], ["a", MASK, "b"])
        assert out == ["a", "zap", "b"]

    def test_unfilled_placeholder_warns(self):
        with pytest.warns(RuntimeWarning, match="unfilled"):
            out = fill_placeholders(_LazyFiller(), ["h"], ["a", MASK])
        assert out == ["a", MASK]


class TestPlaceholderRatio:
    def test_counts_over_all_tokens(self):
        assert placeholder_ratio([["a", MASK], ["b"]]) == pytest.approx(1 / 3)

    def test_extremes(self):
        assert placeholder_ratio([[MASK, MASK]]) == 1.0
        assert placeholder_ratio([["a"], ["b"]]) == 0.0

    def test_no_tokens_rejected(self):
        with pytest.raises(DegenerateInputError):
            placeholder_ratio([[], []])


class TestGenerateResponses:
    @pytest.fixture
    def records(self, tiny_model, tiny_corpus):
        corpus = Corpus(split="test", examples=tiny_corpus.examples[:2])
        filler = UnigramFrequencyFiller({"gut": 5})
        cfg = GenerationConfig(beam_size=3, max_len=4)
        return generate_responses(tiny_model, corpus, cfg, filler)

    def test_one_record_per_example(self, records, tiny_corpus):
        assert [r["id"] for r in records] == ["ex-1", "ex-2"]
        for rec in records:
            assert rec["tag"] == "<En>"
            assert 1 <= len(rec["candidates"]) <= 3
            assert MASK not in rec["response"].split()

    def test_response_is_filled_top_candidate(self, records):
        for rec in records:
            top = rec["candidates"][0]["tokens"].split()
            filled = [
                "gut" if t == MASK else t for t in top
            ]
            assert rec["response"].split() == filled
            assert rec["placeholder_positions"] == [
                i for i, t in enumerate(top) if t == MASK
            ]

    def test_file_round_trip_is_stable(self, records, tmp_path):
        path_a, path_b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_generation_file(records, path_a)
        write_generation_file(read_generation_file(path_a), path_b)
        assert path_a.read_bytes() == path_b.read_bytes()
        loaded = read_generation_file(path_a)
        assert loaded == json.loads(json.dumps(loaded))
