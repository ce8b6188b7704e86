"""Frame-level score streams, top-K MIL pooling, and the training losses."""

from __future__ import annotations

import torch
from torch import nn

from .backbone import cosine_rows
from .data import TextBank
from .errors import DegenerateInputError

LOG_EPS = 1e-8  # clamp for cross-entropy terms

# Fixed multiplier on classifier logits (an inverse temperature, as in
# cosine-margin classifiers). Adam moves weights by roughly the learning
# rate per step regardless of gradient scale, so on short schedules raw
# logits cannot travel far from zero; the gain lets the score streams
# reach confident values within a small step budget without touching the
# zero initialization (scaled zero logits are still exactly neutral).
LOGIT_SCALE = 1.0


def fuse_text_bank(
    bank: TextBank, dtype: torch.dtype = torch.float64
) -> torch.Tensor:
    """Fuse name and attribute embeddings into one (C+1) x D matrix.

    Each row is the sum of the two unit-normalized embeddings, re-normalized.
    Raises if name and attribute rows cancel exactly.
    """
    names = cosine_rows(torch.as_tensor(bank.name_embeddings, dtype=dtype))
    attrs = cosine_rows(torch.as_tensor(bank.attribute_embeddings, dtype=dtype))
    fused = names + attrs
    if (fused.norm(dim=-1) == 0).any():
        raise DegenerateInputError(
            "name and attribute embeddings cancel for some category"
        )
    return cosine_rows(fused)


def align_scores(
    features: torch.Tensor, text: torch.Tensor, temperature: float
) -> torch.Tensor:
    """Frame/category alignment: rowsoftmax of cosine(features, text) / temperature."""
    cosines = cosine_rows(features) @ cosine_rows(text).T
    return torch.softmax(cosines / temperature, dim=-1)


class ScoreHeads(nn.Module):
    """Binary (sigmoid, T x 2) and multiclass (softmax, T x (C+1)) heads.

    Weights start at zero so untrained predictions are exactly 0.5 / uniform.
    """

    def __init__(self, dim: int, n_categories: int):
        super().__init__()
        self.binary = nn.Linear(dim, 2)
        self.multiclass = nn.Linear(dim, n_categories + 1)
        for head in (self.binary, self.multiclass):
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def forward(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return (
            torch.sigmoid(LOGIT_SCALE * self.binary(features)),
            torch.softmax(LOGIT_SCALE * self.multiclass(features), dim=-1),
        )


def classify_frames(
    features: torch.Tensor, heads: ScoreHeads
) -> tuple[torch.Tensor, torch.Tensor]:
    return heads(features)


def mil_k(num_frames: int) -> int:
    """Number of frames pooled per category: max(floor(T / 16), 1)."""
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    return max(num_frames // 16, 1)


def topk_pool(column: torch.Tensor, k: int) -> torch.Tensor:
    """Mean of the k largest entries of a score vector."""
    if k < 1 or k > column.shape[0]:
        raise ValueError(f"k={k} out of range for length {column.shape[0]}")
    return column.topk(k).values.mean()


def video_scores(frame_scores: torch.Tensor) -> torch.Tensor:
    """Pool T x (C+1) frame scores into a per-category video score."""
    k = mil_k(frame_scores.shape[0])
    pooled = frame_scores.topk(k, dim=0).values.mean(dim=0)
    return pooled


def loss_ags(pooled_binary: torch.Tensor, binary_label: int) -> torch.Tensor:
    """Cross-entropy of the pooled binary scores against the video label."""
    return -torch.log(pooled_binary[binary_label].clamp(min=LOG_EPS))


def loss_fg(pooled_scores: torch.Tensor, category_label: int) -> torch.Tensor:
    """Cross-entropy of the pooled category scores against the video category."""
    return -torch.log(pooled_scores[category_label].clamp(min=LOG_EPS))


def loss_aux(pseudo_labels: torch.Tensor, multiclass: torch.Tensor) -> torch.Tensor:
    """Mean-over-frames L1 distance between pseudo-labels and multiclass scores.

    The pseudo-labels are constants; no gradient flows into them.
    """
    if pseudo_labels.shape != multiclass.shape:
        raise ValueError(
            f"shape mismatch: {tuple(pseudo_labels.shape)} vs {tuple(multiclass.shape)}"
        )
    return (pseudo_labels.detach() - multiclass).abs().sum(dim=1).mean()


def loss_reg(fused_scores: torch.Tensor, binary_scores: torch.Tensor) -> torch.Tensor:
    """Consistency between the category-aware normal score and the
    category-agnostic abnormal score: mean |1 - p_f[t, 0] - q_b[t, 1]|."""
    return (1.0 - fused_scores[:, 0] - binary_scores[:, 1]).abs().mean()


def total_loss(
    ags: torch.Tensor,
    fg: torch.Tensor,
    aux: torch.Tensor,
    reg: torch.Tensor,
    cst: torch.Tensor,
    reg_weight: float,
    contrastive_weight: float,
) -> torch.Tensor:
    base = ags + fg + aux
    return base + reg_weight * reg + contrastive_weight * cst
