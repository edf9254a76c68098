"""Multilingual encoder-decoder generator.

A Transformer encoder-decoder over whitespace vocabularies with one embedding
table shared by the encoder input, decoder input, and output projection.
Sequence operations work on tagged token sequences; [CLS]/[SEP] framing is
added internally.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import shutil
import warnings
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corpus import CLS, PAD, SEP, LANGUAGE_TAGS, SPECIAL_TOKENS, is_language_tag
from .errors import (
    CompatibilityError,
    ConfigError,
    DegenerateInputError,
    ShapeMismatchError,
)

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    heads: int = 4
    hidden_dim: int = 128
    vocab_size: int = 0
    max_positions: int = 600
    gumbel_temperature: float = 1.0
    gumbel_hard: bool = False
    ffn_dim: int | None = None
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden_dim % self.heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}"
            )
        if self.vocab_size and self.vocab_size < len(SPECIAL_TOKENS):
            raise ConfigError("vocab_size smaller than the special-token inventory")
        if self.gumbel_temperature <= 0:
            raise ConfigError("gumbel_temperature must be positive")

    @property
    def ffn(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else 4 * self.hidden_dim


@dataclass
class EncoderOutput:
    """Per-token encoder states: rows [CLS, tag, w_1..w_s, SEP]."""

    reps: torch.Tensor  # (s + 3, d)
    content_length: int


@dataclass
class DecoderDistribution:
    """Per-step vocabulary probabilities, rows on the simplex."""

    P: torch.Tensor  # (t, v)

    @property
    def t(self) -> int:
        return self.P.shape[0]


@dataclass
class BatchEncoding:
    """Padded batch of encoder outputs (internal training surface)."""

    memory: torch.Tensor  # (B, L, d)
    pad_mask: torch.Tensor  # (B, L) bool, True where padded
    content_mask: torch.Tensor  # (B, L) bool, True on content rows
    content_lengths: torch.Tensor  # (B,)


def _sinusoid_table(max_positions: int, dim: int) -> torch.Tensor:
    pos = torch.arange(max_positions, dtype=torch.float32).unsqueeze(1)
    den = torch.exp(-torch.arange(0, dim, 2, dtype=torch.float32) * math.log(10000.0) / dim)
    table = torch.zeros(max_positions, dim)
    table[:, 0::2] = torch.sin(pos * den)
    table[:, 1::2] = torch.cos(pos * den)
    return table


class Seq2SeqModel(nn.Module):
    """Encoder-decoder with tied embeddings and tagged-sequence interfaces."""

    def __init__(self, config: ModelConfig, vocab: dict[str, int]):
        super().__init__()
        if config.vocab_size == 0:
            config = ModelConfig(**{**asdict(config), "vocab_size": len(vocab)})
        if config.vocab_size != len(vocab):
            raise ConfigError(
                f"config vocab_size {config.vocab_size} != vocabulary size {len(vocab)}"
            )
        for tok in (CLS, SEP, PAD):
            if tok not in vocab:
                raise ConfigError(f"vocabulary is missing the {tok} token")
        self.config = config
        self.vocab = dict(vocab)
        self.inv_vocab = {i: t for t, i in vocab.items()}
        self.pad_id = vocab[PAD]
        self.cls_id = vocab[CLS]
        self.sep_id = vocab[SEP]

        d = config.hidden_dim
        self.embedding = nn.Embedding(config.vocab_size, d, padding_idx=self.pad_id)
        # Default N(0,1) rows make the tied output projection start far from
        # uniform; a small init keeps early logits near zero.
        nn.init.normal_(self.embedding.weight, std=0.02)
        with torch.no_grad():
            self.embedding.weight[self.pad_id].zero_()
        self.register_buffer("positions", _sinusoid_table(config.max_positions, d))
        enc_layer = nn.TransformerEncoderLayer(
            d, config.heads, config.ffn, config.dropout, batch_first=True
        )
        self.encoder = nn.TransformerEncoder(
            enc_layer, config.layers, enable_nested_tensor=False
        )
        dec_layer = nn.TransformerDecoderLayer(
            d, config.heads, config.ffn, config.dropout, batch_first=True
        )
        self.decoder = nn.TransformerDecoder(dec_layer, config.layers)
        self.embed_scale = math.sqrt(d)

    # ------------------------------------------------------------------
    # token/id plumbing
    # ------------------------------------------------------------------

    def token_ids(self, tokens: Sequence[str]) -> list[int]:
        unk = self.vocab["[UNK]"]
        return [self.vocab.get(t, unk) for t in tokens]

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        x = self.embedding(ids) * self.embed_scale
        return x + self.positions[: ids.shape[-1]]

    def output_logits(self, states: torch.Tensor) -> torch.Tensor:
        # The sqrt(d) factor lets small-norm tied embeddings produce
        # confident logits, which matters at conservative learning rates.
        return F.linear(states, self.embedding.weight) * self.embed_scale

    @property
    def embedding_table(self) -> torch.Tensor:
        return self.embedding.weight

    # ------------------------------------------------------------------
    # single-sequence operations
    # ------------------------------------------------------------------

    def encode(self, tokens: Sequence[str]) -> EncoderOutput:
        """Encode a tagged token sequence; rows = len(tokens) + 2."""
        if not tokens or not is_language_tag(tokens[0]):
            raise ConfigError("encoder input must start with a language tag")
        if len(tokens) + 2 > self.config.max_positions:
            raise ValueError(
                f"input of {len(tokens)} tokens exceeds max positions "
                f"{self.config.max_positions}"
            )
        ids = torch.tensor(
            [self.cls_id, *self.token_ids(tokens), self.sep_id], dtype=torch.long
        ).unsqueeze(0)
        states = self.encoder(self.embed(ids))
        return EncoderOutput(reps=states.squeeze(0), content_length=len(tokens) - 1)

    def decode_distribution(
        self, enc: EncoderOutput, response_prefix: Sequence[str]
    ) -> DecoderDistribution:
        """Teacher-forced per-step distributions.

        Row i conditions on the encoder output and prefix tokens < i; row 0
        conditions on the start token alone. Returns len(prefix)+1 rows.
        """
        if len(response_prefix) + 1 > self.config.max_positions:
            raise ValueError(f"prefix of {len(response_prefix)} tokens is too long")
        ids = torch.tensor(
            [self.cls_id, *self.token_ids(response_prefix)], dtype=torch.long
        ).unsqueeze(0)
        causal = torch.triu(
            torch.ones(ids.shape[1], ids.shape[1], dtype=torch.bool), diagonal=1
        )
        states = self.decoder(self.embed(ids), enc.reps.unsqueeze(0), tgt_mask=causal)
        probs = torch.softmax(self.output_logits(states), dim=-1)
        return DecoderDistribution(P=probs.squeeze(0))

    def response_log_probs(
        self, enc: EncoderOutput, target: Sequence[str]
    ) -> torch.Tensor:
        """log P(target_i | target_<i, enc) for each position, float64."""
        if not target:
            raise DegenerateInputError("cannot score an empty target")
        dist = self.decode_distribution(enc, target[:-1])
        tgt = torch.tensor(self.token_ids(target), dtype=torch.long)
        logp = torch.log(dist.P).double()
        return logp[torch.arange(len(target)), tgt]

    # ------------------------------------------------------------------
    # batched internals (training/evaluation surface)
    # ------------------------------------------------------------------

    def encode_batch(self, sequences: Sequence[Sequence[str]]) -> BatchEncoding:
        ids_list = [
            [self.cls_id, *self.token_ids(seq), self.sep_id] for seq in sequences
        ]
        max_len = max(len(ids) for ids in ids_list)
        if max_len > self.config.max_positions:
            raise ValueError("batch contains an over-length sequence")
        batch = torch.full((len(ids_list), max_len), self.pad_id, dtype=torch.long)
        pad_mask = torch.ones(len(ids_list), max_len, dtype=torch.bool)
        content_mask = torch.zeros(len(ids_list), max_len, dtype=torch.bool)
        for i, ids in enumerate(ids_list):
            batch[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
            pad_mask[i, : len(ids)] = False
            content_mask[i, 2 : len(ids) - 1] = True
        memory = self.encoder(self.embed(batch), src_key_padding_mask=pad_mask)
        return BatchEncoding(
            memory=memory,
            pad_mask=pad_mask,
            content_mask=content_mask,
            content_lengths=content_mask.sum(dim=1),
        )

    def pooled_history_batch(self, enc: BatchEncoding) -> torch.Tensor:
        """Content-token mean per sequence, PAD and framing rows excluded."""
        if (enc.content_lengths == 0).any():
            raise DegenerateInputError("a sequence in the batch has no content tokens")
        summed = (enc.memory * enc.content_mask.unsqueeze(-1)).sum(dim=1)
        return summed / enc.content_lengths.unsqueeze(-1)

    def decode_batch(
        self, enc: BatchEncoding, targets: Sequence[Sequence[str]]
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Teacher-forced logits for full target sequences.

        Returns (logits (B, T, v), target_ids (B, T), target_mask (B, T)),
        where row t of the logits predicts target position t.
        """
        ids_list = [self.token_ids(t) for t in targets]
        max_len = max(len(ids) for ids in ids_list)
        tgt_ids = torch.full((len(ids_list), max_len), self.pad_id, dtype=torch.long)
        tgt_mask = torch.zeros(len(ids_list), max_len, dtype=torch.bool)
        for i, ids in enumerate(ids_list):
            tgt_ids[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
            tgt_mask[i, : len(ids)] = True
        dec_in = torch.cat(
            [torch.full((len(ids_list), 1), self.cls_id, dtype=torch.long), tgt_ids[:, :-1]],
            dim=1,
        )
        dec_pad = torch.cat(
            [torch.zeros(len(ids_list), 1, dtype=torch.bool), ~tgt_mask[:, :-1]], dim=1
        )
        causal = torch.triu(torch.ones(max_len, max_len, dtype=torch.bool), diagonal=1)
        states = self.decoder(
            self.embed(dec_in),
            enc.memory,
            tgt_mask=causal,
            tgt_key_padding_mask=dec_pad,
            memory_key_padding_mask=enc.pad_mask,
        )
        return self.output_logits(states), tgt_ids, tgt_mask


def pool_history(enc: EncoderOutput) -> torch.Tensor:
    """Mean of the s content-token rows; CLS, tag, and SEP are excluded."""
    s = enc.content_length
    if s < 1:
        raise DegenerateInputError("cannot pool an encoding with no content tokens")
    return enc.reps[2 : 2 + s].mean(dim=0)


def sample_gumbel_noise(
    shape, generator: torch.Generator | None = None, dtype=torch.float32
) -> torch.Tensor:
    u = torch.rand(shape, generator=generator, dtype=dtype)
    exponential = -torch.log(u.clamp_min(1e-20))
    return -torch.log(exponential.clamp_min(1e-20))


def gumbel_softmax_from_log_probs(
    log_probs: torch.Tensor,
    temperature: float,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    if noise is None:
        noise = sample_gumbel_noise(log_probs.shape, generator, log_probs.dtype)
    return torch.softmax((log_probs + noise) / temperature, dim=-1)


def gumbel_sample(
    P: DecoderDistribution | torch.Tensor,
    temperature: float,
    rng: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
    hard: bool = False,
) -> torch.Tensor:
    """Gumbel-Softmax relaxation of sampling from per-step distributions.

    Each output row stays on the simplex and remains differentiable with
    respect to the input probabilities. The default is the soft variant;
    `hard` switches to straight-through one-hot rows with soft gradients.
    """
    probs = P.P if isinstance(P, DecoderDistribution) else P
    soft = gumbel_softmax_from_log_probs(torch.log(probs), temperature, rng, noise)
    if not hard:
        return soft
    one_hot = torch.zeros_like(soft).scatter_(
        -1, soft.argmax(dim=-1, keepdim=True), 1.0
    )
    return one_hot - soft.detach() + soft


def soft_response_repr(
    P_tilde: torch.Tensor, V: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Probability-weighted token embeddings: r = P̃ V and its row mean."""
    if P_tilde.shape[-1] != V.shape[0]:
        raise ShapeMismatchError(
            f"P̃ has {P_tilde.shape[-1]} columns but V has {V.shape[0]} rows"
        )
    r = P_tilde @ V
    return r, r.mean(dim=-2)


# ----------------------------------------------------------------------
# checkpoint bundles
# ----------------------------------------------------------------------


def vocab_digest(vocab: dict[str, int]) -> str:
    canon = json.dumps(vocab, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(canon).hexdigest()


def save_checkpoint(
    model: Seq2SeqModel,
    path,
    extra: dict | None = None,
    extra_files: dict[str, str] | None = None,
) -> None:
    """Write a portable checkpoint bundle (weights.npz + vocab + manifest).

    The bundle is assembled in a temp directory and moved into place so a
    crash never leaves a half-written checkpoint behind.
    """
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    np.savez(tmp / "weights.npz", **arrays)
    (tmp / "vocab.json").write_text(
        json.dumps(model.vocab, sort_keys=True, ensure_ascii=False), encoding="utf-8"
    )
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "model": asdict(model.config),
        "vocab_sha256": vocab_digest(model.vocab),
    }
    if extra:
        manifest.update(extra)
    (tmp / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8"
    )
    for name, text in (extra_files or {}).items():
        (tmp / name).write_text(text, encoding="utf-8")
    if path.exists():
        shutil.rmtree(path)
    os.replace(tmp, path)


def load_checkpoint(path) -> Seq2SeqModel:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    vocab = json.loads((path / "vocab.json").read_text(encoding="utf-8"))
    if manifest.get("vocab_sha256") != vocab_digest(vocab):
        raise CompatibilityError(f"{path}: vocabulary hash mismatch")
    config = ModelConfig(**manifest["model"])
    model = Seq2SeqModel(config, vocab)
    with np.load(path / "weights.npz") as arrays:
        state = {k: torch.from_numpy(arrays[k]) for k in arrays.files}
    model.load_state_dict(state)
    return model


def init_from_mlm(model: Seq2SeqModel, checkpoint_path) -> Seq2SeqModel:
    """Initialize weights from an external masked-LM bundle.

    Arrays are matched by parameter name and shape; embedding rows are
    remapped through the bundle's vocabulary. Decoder cross-attention is
    always left freshly initialized. A missing path keeps the random
    initialization (documented fallback).
    """
    if checkpoint_path is None:
        return model
    path = Path(checkpoint_path)
    if not path.exists():
        raise CompatibilityError(f"checkpoint bundle not found: {path}")
    bundle_vocab = json.loads((path / "vocab.json").read_text(encoding="utf-8"))

    missing = [
        tok
        for tok in model.vocab
        if tok not in bundle_vocab and not is_language_tag(tok)
    ]
    if missing:
        raise CompatibilityError(
            f"bundle vocabulary is missing {len(missing)} tokens: {sorted(missing)[:20]}"
        )
    missing_tags = [t for t in LANGUAGE_TAGS if t in model.vocab and t not in bundle_vocab]
    if missing_tags:
        warnings.warn(
            f"bundle has no embeddings for language tags {missing_tags}; "
            "they stay freshly initialized",
            RuntimeWarning,
        )

    with np.load(path / "weights.npz") as arrays:
        bundle = {k: torch.from_numpy(arrays[k]) for k in arrays.files}
    state = model.state_dict()
    with torch.no_grad():
        for name, param in state.items():
            if "multihead_attn" in name:  # decoder cross-attention stays fresh
                continue
            if name == "embedding.weight":
                src = bundle.get(name)
                if src is None or src.shape[1] != param.shape[1]:
                    continue
                for tok, row in model.vocab.items():
                    if tok in bundle_vocab and bundle_vocab[tok] < src.shape[0]:
                        param[row] = src[bundle_vocab[tok]]
            elif name in bundle and bundle[name].shape == param.shape:
                param.copy_(bundle[name])
    model.load_state_dict(state)
    return model
