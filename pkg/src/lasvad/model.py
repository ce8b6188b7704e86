"""Full detector: backbone, alignment, scoring heads, and intention module.

The backbone output feeds three frame-level streams — text alignment (q_l),
a binary head (q_b), and a multiclass head (q_m) — plus the intention
module's confidence-weighted scores (q_a). The fused prediction p_f is the
plain average of the three (C+1)-way streams. Everything runs in 64-bit
arithmetic for reproducibility.
"""

from __future__ import annotations

import dataclasses

import torch
from torch import nn

from .backbone import Backbone
from .heads import ScoreHeads, align_scores
from .intention import IntentionModule


def default_head_count(dim: int) -> int:
    """Largest of 4, 2, 1 that divides the feature dimension."""
    for count in (4, 2, 1):
        if dim % count == 0:
            return count
    raise AssertionError("unreachable: 1 divides everything")


@dataclasses.dataclass
class VideoOutputs:
    """All per-frame streams produced for one video."""

    features: torch.Tensor  # T x D backbone output
    align: torch.Tensor  # T x (C+1) text-alignment scores
    binary: torch.Tensor  # T x 2 sigmoid scores
    multiclass: torch.Tensor  # T x (C+1) softmax scores
    intention: torch.Tensor  # T x D_int kinematic features
    weight: torch.Tensor  # T prototype-confidence weights
    intention_scores: torch.Tensor  # T x (C+1) weighted softmax scores
    fused: torch.Tensor  # T x (C+1) mean of align/multiclass/intention_scores


class LasVad(nn.Module):
    """Weakly supervised anomaly detector over precomputed frame features."""

    def __init__(
        self,
        dim: int,
        n_categories: int,
        text_matrix: torch.Tensor,
        window_length: int = 64,
        head_count: int | None = None,
        align_temperature: float = 0.07,
        hidden_dim: int | None = None,
        window_stride: int | None = None,
    ):
        super().__init__()
        if text_matrix.shape != (n_categories + 1, dim):
            raise ValueError(
                f"text matrix must be {(n_categories + 1, dim)}, "
                f"got {tuple(text_matrix.shape)}"
            )
        if align_temperature <= 0:
            raise ValueError("align_temperature must be positive")
        self.dim = dim
        self.n_categories = n_categories
        self.align_temperature = align_temperature
        self.backbone = Backbone(
            dim,
            window_length=window_length,
            head_count=head_count or default_head_count(dim),
            window_stride=window_stride,
        )
        self.heads = ScoreHeads(dim, n_categories)
        self.intention = IntentionModule(dim, n_categories, hidden_dim)
        self.register_buffer("text_matrix", text_matrix.detach().clone())
        self.to(torch.float64)

    def forward_video(self, features: torch.Tensor) -> VideoOutputs:
        """Run every stream on one T x D feature sequence."""
        x = features.to(torch.float64)
        encoded = self.backbone(x)
        align = align_scores(encoded, self.text_matrix, self.align_temperature)
        binary, multiclass = self.heads(encoded)
        intention, weight, intention_scores = self.intention(encoded)
        fused = (multiclass + intention_scores + align) / 3.0
        return VideoOutputs(
            features=encoded,
            align=align,
            binary=binary,
            multiclass=multiclass,
            intention=intention,
            weight=weight,
            intention_scores=intention_scores,
            fused=fused,
        )

    forward = forward_video
