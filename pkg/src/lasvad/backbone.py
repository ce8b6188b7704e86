"""Temporal backbone: a windowed local transformer layer followed by a
similarity-graph convolution.

The transformer runs one standard pre-norm encoder block independently on
overlapping windows of uniform length; rows covered by several windows are
averaged. The graph convolution then models global structure: frames are
connected by cosine similarity, the row-softmaxed similarity matrix mixes
features, and a learned linear map plus GELU produces the output.
"""

from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F

from .errors import DegenerateInputError, NumericError


def _check_finite(x: torch.Tensor, label: str) -> None:
    if not torch.isfinite(x).all():
        raise NumericError(f"{label} contains NaN/Inf")


def cosine_rows(x: torch.Tensor) -> torch.Tensor:
    """Row-normalize a matrix, raising on zero rows."""
    norms = x.norm(dim=-1, keepdim=True)
    if (norms == 0).any():
        raise DegenerateInputError("zero row where cosine similarity is required")
    return x / norms


def similarity_attention(x: torch.Tensor) -> torch.Tensor:
    """Row-softmaxed cosine similarity matrix of the rows of x (T x T)."""
    normed = cosine_rows(x)
    return torch.softmax(normed @ normed.T, dim=-1)


def similarity_gcn(x: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """GELU(rowsoftmax(cosine(x, x)) @ x @ weight)."""
    return F.gelu(similarity_attention(x) @ x @ weight)


class EncoderBlock(nn.Module):
    """Pre-norm transformer encoder block: self-attention + feed-forward."""

    def __init__(self, dim: int, head_count: int, ff_multiplier: int = 4):
        super().__init__()
        if head_count < 1 or dim % head_count != 0:
            raise ValueError(f"head_count {head_count} must divide dim {dim}")
        self.dim = dim
        self.head_count = head_count
        self.head_dim = dim // head_count
        self.query = nn.Linear(dim, dim)
        self.key = nn.Linear(dim, dim)
        self.value = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Linear(dim, ff_multiplier * dim),
            nn.GELU(),
            nn.Linear(ff_multiplier * dim, dim),
        )

    def _attend(self, x: torch.Tensor) -> torch.Tensor:
        length = x.shape[0]
        shape = (length, self.head_count, self.head_dim)
        q = self.query(x).view(shape).transpose(0, 1)
        k = self.key(x).view(shape).transpose(0, 1)
        v = self.value(x).view(shape).transpose(0, 1)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        mixed = torch.softmax(scores, dim=-1) @ v
        return self.out(mixed.transpose(0, 1).reshape(length, self.dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = x + self._attend(self.norm1(x))
        return h + self.ff(self.norm2(h))


class Backbone(nn.Module):
    """Windowed local attention followed by the similarity graph convolution."""

    def __init__(
        self,
        dim: int,
        window_length: int = 64,
        head_count: int = 4,
        window_stride: int | None = None,
    ):
        super().__init__()
        if window_length < 2:
            raise ValueError(f"window_length must be >= 2, got {window_length}")
        self.dim = dim
        self.window_length = window_length
        self.window_stride = window_stride or max(1, window_length // 2)
        self.block = EncoderBlock(dim, head_count)
        self.graph_weight = nn.Parameter(torch.empty(dim, dim))
        nn.init.xavier_normal_(self.graph_weight)

    def window_starts(self, length: int) -> list[int]:
        starts = [0]
        while starts[-1] + self.window_length < length:
            starts.append(starts[-1] + self.window_stride)
        return starts

    def windowed_attention(self, x: torch.Tensor) -> torch.Tensor:
        """Apply the encoder block per window; average rows in overlaps."""
        _check_finite(x, "backbone input")
        length = x.shape[0]
        total = x.new_zeros(x.shape)
        coverage = x.new_zeros(length, 1)
        for start in self.window_starts(length):
            end = min(start + self.window_length, length)
            piece = self.block(x[start:end])
            total = total + F.pad(piece, (0, 0, start, length - end))
            coverage = coverage + F.pad(
                x.new_ones(end - start, 1), (0, 0, start, length - end)
            )
        return total / coverage

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        hidden = self.windowed_attention(x)
        return similarity_gcn(hidden, self.graph_weight)
