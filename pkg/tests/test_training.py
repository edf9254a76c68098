"""Batch wiring, loss assembly, and the fit loop."""

import json

import pytest
import torch

import crossdial.training as training
from crossdial.corpus import Corpus
from crossdial.errors import ConfigError, DegenerateInputError, NonFiniteLossError
from crossdial.model import ModelConfig, load_checkpoint
from crossdial.switching import SwitchConfig, build_views
from crossdial.training import (
    TrainConfig,
    _chunk_indices,
    assemble_batch,
    build_batch,
    compute_losses,
    fit,
    train_step,
    validation_perplexity,
)
from tests.conftest import build_tiny_model, example


def small_train_config(**overrides):
    defaults = dict(
        batch_size=2,
        learning_rate=1e-3,
        epochs=1,
        seed=0,
        switch=SwitchConfig(k=2, seed=0),
        model=ModelConfig(layers=1, heads=2, hidden_dim=16, dropout=0.0),
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


@pytest.fixture
def batch(tiny_corpus, tiny_lexicon):
    return build_batch(tiny_corpus.examples, tiny_lexicon, SwitchConfig(k=2, seed=0))


class TestTrainConfig:
    def test_tiny_batch_rejected(self):
        with pytest.raises(ConfigError):
            small_train_config(batch_size=1)

    def test_zero_epochs_rejected(self):
        with pytest.raises(ConfigError):
            small_train_config(epochs=0)

    def test_nonpositive_lr_rejected(self):
        with pytest.raises(ConfigError):
            small_train_config(learning_rate=0.0)


class TestAssembleBatch:
    def test_two_examples_k2_give_ten_views_one_negative_each(self, batch):
        two = assemble_batch(batch.examples[:2], batch.view_sets[:2])
        assert sum(len(vs) for vs in two.view_sets) == 10
        assert two.negative_indices == ((1,), (0,))

    def test_sixty_four_examples_give_320_views_63_negatives(self, tiny_lexicon):
        examples = tuple(
            example(f"e{i}", "here is an example", "good example") for i in range(64)
        )
        b = build_batch(examples, tiny_lexicon, SwitchConfig(k=2, seed=0))
        assert sum(len(vs) for vs in b.view_sets) == 320
        assert all(len(n) == 63 for n in b.negative_indices)
        assert all(i not in n for i, n in enumerate(b.negative_indices))

    def test_mean_response_length(self, tiny_lexicon):
        examples = (
            example("a", "here is", "good example"),
            example("b", "an example", "an example is here"),
        )
        b = build_batch(examples, tiny_lexicon, SwitchConfig(k=1, seed=0))
        assert b.t_avg == 3.0

    def test_single_example_rejected(self, batch):
        with pytest.raises(DegenerateInputError):
            assemble_batch(batch.examples[:1], batch.view_sets[:1])

    def test_misaligned_views_rejected(self, batch):
        with pytest.raises(ConfigError):
            assemble_batch(batch.examples[:3], batch.view_sets[:2])


class TestChunkIndices:
    def test_trailing_singleton_merges_into_previous_chunk(self):
        assert _chunk_indices(list(range(9)), 4) == [[0, 1, 2, 3], [4, 5, 6, 7, 8]]

    def test_even_split_left_alone(self):
        assert _chunk_indices(list(range(8)), 4) == [[0, 1, 2, 3], [4, 5, 6, 7]]

    def test_single_chunk_passes_through(self):
        assert _chunk_indices([0], 4) == [[0]]


class TestComputeLosses:
    def test_breakdown_totals_are_consistent(self, tiny_corpus, batch):
        model = build_tiny_model(tiny_corpus)
        cfg = small_train_config()
        gen = torch.Generator().manual_seed(1)
        total, bd = compute_losses(model, batch, cfg, gen)
        contrastive = (
            bd.negative_encoder
            + bd.negative_decoder
            - bd.positive_decoder
            - bd.positive_encoder
        )
        expect = bd.generation + contrastive / (4 * batch.t_avg)
        assert float(total.detach()) == pytest.approx(expect, rel=1e-6)
        assert bd.total == pytest.approx(expect, rel=1e-6)

    def test_zero_contrastive_scale_leaves_generation(self, tiny_corpus, batch):
        model = build_tiny_model(tiny_corpus)
        cfg = small_train_config(contrastive_scale=0.0)
        gen = torch.Generator().manual_seed(1)
        total, bd = compute_losses(model, batch, cfg, gen)
        assert float(total.detach()) == pytest.approx(bd.generation, rel=1e-6)

    def test_identical_runs_match_exactly(self, tiny_corpus, batch):
        cfg = small_train_config()
        results = []
        for _ in range(2):
            model = build_tiny_model(tiny_corpus, seed=5)
            gen = torch.Generator().manual_seed(3)
            _, bd = compute_losses(model, batch, cfg, gen)
            results.append(bd.as_dict())
        assert results[0] == results[1]

    def test_model_mode_restored(self, tiny_corpus, batch):
        model = build_tiny_model(tiny_corpus)
        cfg = small_train_config()
        model.train()
        compute_losses(model, batch, cfg, torch.Generator().manual_seed(0))
        assert model.training
        model.eval()
        compute_losses(model, batch, cfg, torch.Generator().manual_seed(0))
        assert not model.training

    def test_decoder_positives_mix_live_and_blocked_rows(
        self, tiny_corpus, batch, monkeypatch
    ):
        # each decoder alignment input holds 2k+1 soft rows plus k+1
        # rectification rows
        model = build_tiny_model(tiny_corpus)
        cfg = small_train_config()
        captured = []
        original = training.positive_alignment

        def spy(views):
            captured.append(views)
            return original(views)

        monkeypatch.setattr(training, "positive_alignment", spy)
        compute_losses(model, batch, cfg, torch.Generator().manual_seed(0))
        k = cfg.switch.k
        decoder_calls = [c for c in captured if c.shape[0] == (2 * k + 1) + (k + 1)]
        assert len(decoder_calls) == len(batch)
        assert all(rows.requires_grad for rows in decoder_calls)

    def test_rectification_pass_blocks_gradients_and_dropout(
        self, tiny_corpus, batch, monkeypatch
    ):
        model = build_tiny_model(tiny_corpus, dropout=0.3)
        model.train()
        cfg = small_train_config()
        modes = []
        original = model.encode_batch

        def spy(sequences):
            modes.append((torch.is_grad_enabled(), model.training))
            return original(sequences)

        monkeypatch.setattr(model, "encode_batch", spy)
        compute_losses(model, batch, cfg, torch.Generator().manual_seed(0))
        assert modes[0] == (True, True)  # main history pass learns
        assert modes[1] == (False, False)  # rectification pass does not

    def test_nan_weights_raise_with_breakdown(self, tiny_corpus, batch):
        model = build_tiny_model(tiny_corpus)
        with torch.no_grad():
            model.embedding.weight[1, 0] = float("nan")
        with pytest.raises(NonFiniteLossError) as info:
            compute_losses(model, batch, small_train_config())
        assert set(info.value.breakdown) == {
            "generation",
            "positive_encoder",
            "positive_decoder",
            "negative_encoder",
            "negative_decoder",
            "total",
        }


class TestTrainStep:
    def test_deterministic_given_seeds(self, tiny_corpus, batch):
        cfg = small_train_config()
        outs = []
        for _ in range(2):
            model = build_tiny_model(tiny_corpus, seed=2)
            model.train()
            opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
            gen = torch.Generator().manual_seed(9)
            bds = [train_step(model, opt, batch, cfg, gen) for _ in range(2)]
            outs.append([bd.as_dict() for bd in bds])
        assert outs[0] == outs[1]

    def test_repeated_steps_reduce_generation_loss(self, tiny_corpus, batch):
        model = build_tiny_model(tiny_corpus, seed=0, hidden_dim=32)
        model.train()
        cfg = small_train_config(learning_rate=5e-3)
        opt = torch.optim.Adam(model.parameters(), lr=5e-3)
        gen = torch.Generator().manual_seed(0)
        first = train_step(model, opt, batch, cfg, gen).generation
        last = None
        for _ in range(30):
            last = train_step(model, opt, batch, cfg, gen).generation
        assert last < first

    def test_grad_clip_accepted(self, tiny_corpus, batch):
        model = build_tiny_model(tiny_corpus)
        model.train()
        cfg = small_train_config(grad_clip=0.5)
        opt = torch.optim.Adam(model.parameters(), lr=1e-3)
        bd = train_step(model, opt, batch, cfg, torch.Generator().manual_seed(0))
        assert bd.total == pytest.approx(bd.total)  # finite and well-formed


def corpus_of(split, texts):
    return Corpus(
        split=split,
        examples=tuple(
            example(f"{split}-{i}", h, r) for i, (h, r) in enumerate(texts)
        ),
    )


TRAIN_TEXTS = [
    ("here is an example", "good example here"),
    ("is this good ?", "an example is here"),
    ("here here again", "good good good"),
    ("a bank by the river", "the bank is good"),
    ("an example is good", "here is an example"),
    ("good good example", "is this here ?"),
    ("the river bank", "a good example"),
    ("this is here", "good here"),
    ("a good bank", "the example is here"),
    ("here an example", "good is here"),
]


class TestFit:
    @pytest.fixture
    def splits(self):
        train = corpus_of("train", TRAIN_TEXTS)
        valid = corpus_of("valid", TRAIN_TEXTS[:3])
        return train, valid

    def test_empty_validation_rejected(self, splits, tiny_lexicon, tmp_path):
        train, _ = splits
        empty = Corpus(split="valid", examples=())
        with pytest.raises(ConfigError):
            fit(small_train_config(), train, empty, tiny_lexicon, tmp_path)

    def test_tiny_train_split_rejected(self, splits, tiny_lexicon, tmp_path):
        _, valid = splits
        tiny = corpus_of("train", TRAIN_TEXTS[:1])
        with pytest.raises(DegenerateInputError):
            fit(small_train_config(), tiny, valid, tiny_lexicon, tmp_path)

    def test_one_epoch_writes_logs_and_checkpoints(self, splits, tiny_lexicon, tmp_path):
        train, valid = splits
        cfg = small_train_config(batch_size=5)
        result = fit(cfg, train, valid, tiny_lexicon, tmp_path, extra_tokens=["extra1"])
        assert result.steps == 2
        records = [
            json.loads(line) for line in result.log_path.read_text().splitlines()
        ]
        steps = [r for r in records if r["kind"] == "step"]
        vals = [r for r in records if r["kind"] == "validation"]
        assert [r["step"] for r in steps] == [1, 2]
        assert len(vals) == 1 and vals[0]["epoch"] == 0
        assert result.checkpoints == [tmp_path / "checkpoints" / "epoch_000"]
        for path in (result.best_checkpoint, result.checkpoints[0]):
            assert (path / "weights.npz").exists()
            assert (path / "optimizer.pt").exists()
            assert (path / "filler_counts.json").exists()
        manifest = json.loads(
            (result.best_checkpoint / "manifest.json").read_text()
        )
        assert manifest["epoch"] == 0 and manifest["step"] == 2
        assert manifest["val_ppl"] == pytest.approx(result.best_val_ppl)

    def test_vocabulary_covers_lexicon_and_extras(self, splits, tiny_lexicon, tmp_path):
        train, valid = splits
        cfg = small_train_config(batch_size=5)
        result = fit(cfg, train, valid, tiny_lexicon, tmp_path, extra_tokens=["zzz"])
        model = load_checkpoint(result.best_checkpoint)
        assert "zzz" in model.vocab  # explicit extra
        assert "hier" in model.vocab  # lexicon candidate, absent from the corpus
        assert "example" in model.vocab  # corpus token

    def test_resume_continues_epochs_and_steps(self, splits, tiny_lexicon, tmp_path):
        train, valid = splits
        cfg = small_train_config(batch_size=5)
        first = fit(cfg, train, valid, tiny_lexicon, tmp_path)
        second = fit(
            cfg,
            train,
            valid,
            tiny_lexicon,
            tmp_path,
            resume_from=first.checkpoints[-1],
        )
        assert second.checkpoints == [tmp_path / "checkpoints" / "epoch_001"]
        assert second.steps == 4
        records = [
            json.loads(line) for line in second.log_path.read_text().splitlines()
        ]
        steps = [r["step"] for r in records if r["kind"] == "step"]
        assert steps == [1, 2, 3, 4]

    def test_training_beats_the_untrained_model(self, splits, tiny_lexicon, tmp_path):
        train, valid = splits
        cfg = small_train_config(
            batch_size=5,
            learning_rate=5e-3,
            epochs=8,
            switch=SwitchConfig(k=1, seed=0),
            model=ModelConfig(layers=1, heads=2, hidden_dim=32, dropout=0.0),
        )
        result = fit(cfg, train, valid, tiny_lexicon, tmp_path)
        untrained = build_tiny_model(
            train,
            extra_tokens=sorted(
                {c for cs in tiny_lexicon.entries.values() for c in cs}
            ),
            hidden_dim=32,
        )
        baseline = validation_perplexity(untrained, valid)
        assert result.best_val_ppl <= baseline

    def test_fixed_view_sampling_repeats_across_epochs(self, tiny_lexicon):
        ex = example("e", "here an example good bank", "here an example")
        fixed = SwitchConfig(k=2, seed=4, resample_per_epoch=False)
        views = [build_views(ex, tiny_lexicon, fixed, epoch=e) for e in (0, 3)]
        assert views[0] == views[1]
