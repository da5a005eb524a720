"""Instance-level guidance pooling and channel gates.

For each object, the fg/bg pixel groups of the first and previous
frames are average-pooled channel-wise and concatenated into one
guidance vector; a single affine map plus sigmoid per gated block turns
it into per-channel scales in (0, 1).
"""

from __future__ import annotations

from typing import Sequence

import torch
from torch import Tensor, nn

from .embedding import split_pixel_sets


def masked_mean(emb: Tensor, mask: Tensor) -> Tensor:
    """Channel-wise mean of (C, h, w) over a mask; all-zero mask -> zeros.

    Boolean masks give plain averages; float masks give weighted means
    (used when predicted probabilities are fed back without detaching).
    """
    weights = mask.to(emb.dtype)
    total = weights.sum()
    if total.detach() == 0:
        return emb.new_zeros(emb.shape[0])
    return (emb * weights).flatten(1).sum(dim=1) / total


def pool_instance_embeddings(
    first_emb: Tensor,
    first_label: Tensor,
    prev_emb: Tensor,
    prev_label: Tensor,
    object_id: int,
    use_background: bool = True,
    prev_fg_weights: Tensor | None = None,
) -> Tensor:
    """Pooled guidance vector for one object.

    Concatenation order: first-frame fg mean, first-frame bg mean,
    previous-frame fg mean, previous-frame bg mean (bg slots dropped
    when background pooling is disabled). Length 4*C_e (or 2*C_e).
    ``prev_fg_weights`` replaces the hard previous-frame masks with soft
    weights (bg weighted by their complement).
    """
    first_fg, first_bg = split_pixel_sets(first_label, object_id)
    if prev_fg_weights is None:
        prev_fg, prev_bg = split_pixel_sets(prev_label, object_id)
    else:
        prev_fg, prev_bg = prev_fg_weights, 1.0 - prev_fg_weights
    parts = [masked_mean(first_emb, first_fg)]
    if use_background:
        parts.append(masked_mean(first_emb, first_bg))
    parts.append(masked_mean(prev_emb, prev_fg))
    if use_background:
        parts.append(masked_mean(prev_emb, prev_bg))
    return torch.cat(parts)


class GateBank(nn.Module):
    """One affine map + sigmoid per gated block.

    ``widths`` lists the channel count of each gated input (the
    res-blocks of all stages plus the context module input), in forward
    order.
    """

    def __init__(self, guidance_dim: int, widths: Sequence[int]):
        super().__init__()
        self.guidance_dim = guidance_dim
        self.fcs = nn.ModuleList(nn.Linear(guidance_dim, w) for w in widths)

    def forward(self, guidance: Tensor) -> list[Tensor]:
        """guidance: (guidance_dim,) or (B, guidance_dim) -> list of gate vectors."""
        return [torch.sigmoid(fc(guidance)) for fc in self.fcs]


def compute_gate(guidance: Tensor, fc: nn.Linear) -> Tensor:
    """Gate vector in (0, 1) for one block; multiply onto its input channels."""
    return torch.sigmoid(fc(guidance))


def apply_gate(x: Tensor, gate: Tensor) -> Tensor:
    """Scale (B, C, h, w) features channel-wise by a (B, C) or (C,) gate."""
    if gate.dim() == 1:
        gate = gate.unsqueeze(0)
    return x * gate.unsqueeze(-1).unsqueeze(-1)
