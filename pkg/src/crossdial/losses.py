"""Training objective: generation loss plus view-contrastive terms.

Alignment pulls the mutually positive views of one example together;
contrast pushes them away from other examples in the batch. The combined
objective trades the two off against teacher-forced generation loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from .errors import ConfigError, DegenerateInputError, ShapeMismatchError


def _rows(x: torch.Tensor | Sequence[torch.Tensor]) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        if x.dim() != 2:
            raise ShapeMismatchError(f"expected a (n, d) matrix, got shape {tuple(x.shape)}")
        return x
    return torch.stack(list(x))


def _unit_rows(x: torch.Tensor, what: str) -> torch.Tensor:
    norms = x.norm(dim=-1, keepdim=True)
    if (norms == 0).any():
        raise DegenerateInputError(f"{what} contains a zero vector")
    return x / norms


def positive_alignment(views: torch.Tensor | Sequence[torch.Tensor]) -> torch.Tensor:
    """Mean-free pairwise cosine pull: (1/n) * sum_{i>j} cos(v_i, v_j).

    With n identical vectors this evaluates to (n-1)/2.
    """
    v = _rows(views)
    n = v.shape[0]
    if n < 2:
        raise DegenerateInputError(f"alignment needs at least two views, got {n}")
    u = _unit_rows(v, "views")
    gram = u @ u.T
    lower = torch.tril(gram, diagonal=-1)
    return lower.sum() / n


def negative_contrast(
    views: torch.Tensor | Sequence[torch.Tensor],
    negatives: torch.Tensor | Sequence[torch.Tensor],
    normalize_negatives: bool = False,
) -> torch.Tensor:
    """Cross-example cosine push: (1/n) * sum_i sum_j cos(v_i, neg_j).

    Without `normalize_negatives` the sum over negatives is left
    unnormalized, so duplicating a negative doubles its contribution.
    """
    v = _rows(views)
    neg = _rows(negatives)
    if v.shape[0] == 0:
        raise DegenerateInputError("contrast needs at least one view")
    if neg.shape[0] == 0:
        raise DegenerateInputError("contrast needs at least one negative")
    if v.shape[1] != neg.shape[1]:
        raise ShapeMismatchError(
            f"views have dim {v.shape[1]} but negatives have dim {neg.shape[1]}"
        )
    sims = _unit_rows(v, "views") @ _unit_rows(neg, "negatives").T
    total = sims.sum() / v.shape[0]
    if normalize_negatives:
        total = total / neg.shape[0]
    return total


def sequence_nll(P: torch.Tensor, target_ids: Sequence[int] | torch.Tensor) -> torch.Tensor:
    """Sum of -log P[i, target_i] over the sequence."""
    tgt = torch.as_tensor(target_ids, dtype=torch.long)
    if P.dim() != 2 or P.shape[0] != tgt.shape[0]:
        raise ShapeMismatchError(
            f"distributions {tuple(P.shape)} do not match {tgt.shape[0]} targets"
        )
    picked = P[torch.arange(tgt.shape[0]), tgt]
    return -torch.log(picked).sum()


def generation_loss(view_nlls: Sequence[torch.Tensor]) -> torch.Tensor:
    """Mean per-view sequence NLL across all views of the batch."""
    if len(view_nlls) == 0:
        raise DegenerateInputError("generation loss needs at least one view")
    return torch.stack([torch.as_tensor(v) for v in view_nlls]).mean()


@dataclass(frozen=True)
class LossBreakdown:
    generation: float
    positive_encoder: float
    positive_decoder: float
    negative_encoder: float
    negative_decoder: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {
            "generation": self.generation,
            "positive_encoder": self.positive_encoder,
            "positive_decoder": self.positive_decoder,
            "negative_encoder": self.negative_encoder,
            "negative_decoder": self.negative_decoder,
            "total": self.total,
        }


def total_loss(
    generation,
    positive_encoder,
    positive_decoder,
    negative_encoder,
    negative_decoder,
    response_length: float,
    contrastive_scale: float = 1.0,
):
    """Generation loss plus a length-scaled contrastive correction.

    total = l_g + scale * (1 / (4 * t)) * (l_ne + l_nd - l_pd - l_pe)
    where t is the mean gold response length of the batch.
    """
    if response_length <= 0:
        raise ConfigError(f"response_length must be positive, got {response_length}")
    contrastive = (
        negative_encoder + negative_decoder - positive_decoder - positive_encoder
    )
    return generation + contrastive_scale * contrastive / (4.0 * response_length)
