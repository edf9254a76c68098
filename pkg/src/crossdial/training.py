"""Batch assembly and the optimization loop.

Every batch carries 2k+1 views per example. The encoder loss aligns pooled
history representations of one example's views and contrasts them against
the other examples in the batch; the decoder loss does the same with soft
response representations, rectified by gradient-blocked encodings of gold
responses. Checkpoints are written per epoch and the best one (validation
perplexity) is retained.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import torch

from .corpus import SEP, Corpus, DialogueExample, build_vocabulary
from .errors import ConfigError, DegenerateInputError, NonFiniteLossError
from .lexicon import BilingualLexicon
from .losses import (
    LossBreakdown,
    negative_contrast,
    positive_alignment,
    total_loss,
)
from .metrics import perplexity
from .generation import UnigramFrequencyFiller
from .model import (
    ModelConfig,
    Seq2SeqModel,
    gumbel_softmax_from_log_probs,
    init_from_mlm,
    load_checkpoint,
    sample_gumbel_noise,
    save_checkpoint,
)
from .switching import SwitchConfig, ViewSet, build_views


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 5e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    epochs: int = 1
    seed: int = 0
    switch: SwitchConfig = field(default_factory=SwitchConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    contrastive_scale: float = 1.0
    normalize_negatives: bool = False
    grad_clip: float | None = None
    init_checkpoint: str | None = None

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 for in-batch negatives")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass
class Batch:
    """Examples with their view sets and in-batch negative wiring."""

    examples: tuple[DialogueExample, ...]
    view_sets: tuple[ViewSet, ...]
    t_avg: float
    negative_indices: tuple[tuple[int, ...], ...]

    def __len__(self) -> int:
        return len(self.examples)


def assemble_batch(
    examples: Sequence[DialogueExample], view_sets: Sequence[ViewSet]
) -> Batch:
    if len(examples) < 2:
        raise DegenerateInputError(
            "a batch needs at least two examples to supply negatives"
        )
    if len(examples) != len(view_sets):
        raise ConfigError("examples and view sets are misaligned")
    t_avg = sum(len(ex.response) for ex in examples) / len(examples)
    negatives = tuple(
        tuple(j for j in range(len(examples)) if j != i) for i in range(len(examples))
    )
    return Batch(tuple(examples), tuple(view_sets), t_avg, negatives)


def build_batch(
    examples: Sequence[DialogueExample],
    lex: BilingualLexicon,
    cfg: SwitchConfig,
    epoch: int = 0,
) -> Batch:
    views = [build_views(ex, lex, cfg, epoch=epoch) for ex in examples]
    return assemble_batch(examples, views)


def _check_finite(name: str, value: torch.Tensor, parts: dict) -> None:
    if not torch.isfinite(value):
        raise NonFiniteLossError(
            name, {k: float(v.detach()) for k, v in parts.items()}
        )


def compute_losses(
    model: Seq2SeqModel,
    batch: Batch,
    cfg: TrainConfig,
    noise_generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, LossBreakdown]:
    """Forward pass over one batch, returning the total loss tensor."""
    k = cfg.switch.k
    views_per_example = 2 * k + 1
    all_views = [v for vs in batch.view_sets for v in vs]

    enc = model.encode_batch([v.history for v in all_views])
    pooled = model.pooled_history_batch(enc)
    pooled = pooled.view(len(batch), views_per_example, -1)

    targets = [list(v.response) + [SEP] for v in all_views]
    logits, tgt_ids, tgt_mask = model.decode_batch(enc, targets)
    log_probs = torch.log_softmax(logits, dim=-1)
    picked = log_probs.gather(-1, tgt_ids.unsqueeze(-1)).squeeze(-1)
    per_view_nll = -(picked * tgt_mask).sum(dim=1)
    l_g = per_view_nll.mean()

    # Soft response representations from the rows that predict content
    # tokens (tag and end-of-sequence rows excluded).
    temperature = cfg.model.gumbel_temperature
    V = model.embedding_table
    soft_reps = []
    for idx, view in enumerate(all_views):
        t = len(view.response) - 1
        rows = log_probs[idx, 1 : t + 1]
        noise = None
        if noise_generator is not None:
            noise = sample_gumbel_noise(rows.shape, noise_generator, rows.dtype)
        p_soft = gumbel_softmax_from_log_probs(rows, temperature, noise=noise)
        if cfg.model.gumbel_hard:
            one_hot = torch.zeros_like(p_soft).scatter_(
                -1, p_soft.argmax(dim=-1, keepdim=True), 1.0
            )
            p_soft = one_hot - p_soft.detach() + p_soft
        soft_reps.append((p_soft @ V).mean(dim=0))
    soft_reps = torch.stack(soft_reps).view(len(batch), views_per_example, -1)

    # Rectification signals: gold responses of the source view and the k
    # code-switch views, encoded with gradients blocked and dropout off.
    rect_inputs = []
    for vs in batch.view_sets:
        rect_inputs.append(vs.source.response)
        rect_inputs.extend(v.response for v in vs.code_switches)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        rect_enc = model.encode_batch(rect_inputs)
        rect = model.pooled_history_batch(rect_enc).view(len(batch), k + 1, -1)
    if was_training:
        model.train()

    l_p_e_terms, l_n_e_terms, l_p_d_terms, l_n_d_terms = [], [], [], []
    source_pooled = pooled[:, 0]
    for i in range(len(batch)):
        neg_idx = list(batch.negative_indices[i])
        l_p_e_terms.append(positive_alignment(pooled[i]))
        l_n_e_terms.append(
            negative_contrast(
                pooled[i], source_pooled[neg_idx], cfg.normalize_negatives
            )
        )
        l_p_d_terms.append(
            positive_alignment(torch.cat([soft_reps[i], rect[i]], dim=0))
        )
        l_n_d_terms.append(
            negative_contrast(
                soft_reps[i], rect[neg_idx, 0], cfg.normalize_negatives
            )
        )
    l_p_e = torch.stack(l_p_e_terms).mean()
    l_n_e = torch.stack(l_n_e_terms).mean()
    l_p_d = torch.stack(l_p_d_terms).mean()
    l_n_d = torch.stack(l_n_d_terms).mean()

    total = total_loss(
        l_g, l_p_e, l_p_d, l_n_e, l_n_d, batch.t_avg, cfg.contrastive_scale
    )
    parts = {
        "generation": l_g,
        "positive_encoder": l_p_e,
        "positive_decoder": l_p_d,
        "negative_encoder": l_n_e,
        "negative_decoder": l_n_d,
        "total": total,
    }
    for name, value in parts.items():
        _check_finite(name, value, parts)
    breakdown = LossBreakdown(
        generation=float(l_g.detach()),
        positive_encoder=float(l_p_e.detach()),
        positive_decoder=float(l_p_d.detach()),
        negative_encoder=float(l_n_e.detach()),
        negative_decoder=float(l_n_d.detach()),
        total=float(total.detach()),
    )
    return total, breakdown


def train_step(
    model: Seq2SeqModel,
    optimizer: torch.optim.Optimizer,
    batch: Batch,
    cfg: TrainConfig,
    noise_generator: torch.Generator | None = None,
) -> LossBreakdown:
    """One optimizer update; the model must be in training mode."""
    optimizer.zero_grad()
    total, breakdown = compute_losses(model, batch, cfg, noise_generator)
    total.backward()
    if cfg.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    optimizer.step()
    return breakdown


def validation_perplexity(
    model: Seq2SeqModel, corpus: Corpus, batch_size: int = 64
) -> float:
    """Teacher-forced perplexity of gold responses, padding excluded."""
    return perplexity(model, corpus, batch_size)


@dataclass
class FitResult:
    best_checkpoint: Path
    checkpoints: list[Path]
    log_path: Path
    best_val_ppl: float
    steps: int


def _chunk_indices(order: list[int], batch_size: int) -> list[list[int]]:
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2].extend(chunks.pop())
    return chunks


def fit(
    cfg: TrainConfig,
    train_corpus: Corpus,
    valid_corpus: Corpus,
    lex: BilingualLexicon,
    out_dir,
    resume_from=None,
    extra_tokens: Sequence[str] = (),
) -> FitResult:
    """Train on view-augmented batches; returns checkpoint and log paths."""
    if valid_corpus is None or not valid_corpus.examples:
        raise ConfigError("training requires a non-empty validation split")
    if len(train_corpus.examples) < 2:
        raise DegenerateInputError("training split needs at least two examples")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    torch.manual_seed(cfg.seed)
    start_epoch = 0
    step = 0
    if resume_from is not None:
        model = load_checkpoint(resume_from)
        manifest = json.loads(
            (Path(resume_from) / "manifest.json").read_text(encoding="utf-8")
        )
        start_epoch = int(manifest.get("epoch", -1)) + 1
        step = int(manifest.get("step", 0))
        log_mode = "a"
    else:
        tokens = set(extra_tokens)
        for ex in train_corpus.examples:
            tokens.update(ex.history)
            tokens.update(ex.response)
        for candidates in lex.entries.values():
            tokens.update(candidates)
        vocab = build_vocabulary([sorted(tokens)])
        model_cfg = ModelConfig(**{**asdict(cfg.model), "vocab_size": len(vocab)})
        model = Seq2SeqModel(model_cfg, vocab)
        model = init_from_mlm(model, cfg.init_checkpoint)
        log_mode = "w"

    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=cfg.learning_rate,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
    )
    if resume_from is not None:
        opt_state = Path(resume_from) / "optimizer.pt"
        if opt_state.exists():
            optimizer.load_state_dict(torch.load(opt_state, weights_only=False))

    noise_generator = torch.Generator()
    noise_generator.manual_seed(cfg.seed * 7919 + 13)

    filler = UnigramFrequencyFiller.from_corpus(
        train_corpus, lex, placeholder=cfg.switch.placeholder
    )
    filler_json = filler.to_json()

    base_views = None
    if not cfg.switch.resample_per_epoch:
        base_views = [
            build_views(ex, lex, cfg.switch, epoch=0) for ex in train_corpus.examples
        ]

    log_path = out_dir / "train_log.jsonl"
    checkpoints: list[Path] = []
    best_ppl = float("inf")
    best_path = ckpt_dir / "best"
    model.train()
    with open(log_path, log_mode, encoding="utf-8") as log:
        for epoch in range(start_epoch, start_epoch + cfg.epochs):
            if cfg.switch.resample_per_epoch:
                views = [
                    build_views(ex, lex, cfg.switch, epoch=epoch)
                    for ex in train_corpus.examples
                ]
            else:
                views = base_views
            order = list(range(len(train_corpus.examples)))
            random.Random(f"shuffle|{cfg.seed}|{epoch}").shuffle(order)
            for chunk in _chunk_indices(order, cfg.batch_size):
                batch = assemble_batch(
                    [train_corpus.examples[i] for i in chunk],
                    [views[i] for i in chunk],
                )
                breakdown = train_step(model, optimizer, batch, cfg, noise_generator)
                step += 1
                record = {"kind": "step", "step": step, "epoch": epoch}
                record.update(breakdown.as_dict())
                log.write(json.dumps(record, sort_keys=True) + "\n")
            ppl = validation_perplexity(model, valid_corpus, cfg.batch_size)
            log.write(
                json.dumps(
                    {"kind": "validation", "epoch": epoch, "step": step, "ppl": ppl},
                    sort_keys=True,
                )
                + "\n"
            )
            log.flush()
            path = ckpt_dir / f"epoch_{epoch:03d}"
            extra = {"epoch": epoch, "step": step, "val_ppl": ppl}
            save_checkpoint(
                model, path, extra=extra, extra_files={"filler_counts.json": filler_json}
            )
            torch.save(optimizer.state_dict(), path / "optimizer.pt")
            checkpoints.append(path)
            if ppl < best_ppl:
                best_ppl = ppl
                save_checkpoint(
                    model,
                    best_path,
                    extra=extra,
                    extra_files={"filler_counts.json": filler_json},
                )
                torch.save(optimizer.state_dict(), best_path / "optimizer.pt")
    return FitResult(
        best_checkpoint=best_path,
        checkpoints=checkpoints,
        log_path=log_path,
        best_val_ppl=best_ppl,
        steps=step,
    )
