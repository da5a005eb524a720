"""Pixel embedding extraction and mask/grid alignment helpers.

Frames are (H, W, 3) floats in [0, 1]; label maps are integer grids
where 0 is background and positive ids are objects. The encoder emits a
stride-4 embedding grid of shape (C_e, ceil(H/4), ceil(W/4)) plus a
low-level feature tap at the same stride for the decoder.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import InvalidInputError


class PixelEncoder(nn.Module):
    """Small convolutional trunk producing per-pixel embeddings.

    Stride-2 stages bring the grid to the requested stride (2, 4 or 8);
    sizes follow ceil-division, so any frame at least as large as the
    stride works. The low-level tap for the decoder is the trunk output
    at embedding stride, before the embedding head.
    """

    def __init__(self, embedding_dim: int = 32, width: int = 32, stride: int = 4,
                 norm_groups: int = 8):
        super().__init__()
        if stride not in (2, 4, 8):
            raise InvalidInputError(f"encoder stride must be 2, 4 or 8, got {stride}")
        w1, w2 = width, width * 2
        self.stride = stride
        self.embedding_dim = embedding_dim
        self.low_level_channels = w2

        def block(cin, cout, stride=1):
            return [
                nn.Conv2d(cin, cout, 3, stride=stride, padding=1),
                nn.GroupNorm(min(norm_groups, cout), cout),
                nn.ReLU(inplace=True),
            ]

        layers = block(3, w1)
        cin = w1
        for _ in range(int(math.log2(stride))):
            layers += block(cin, w2, stride=2)
            layers += block(w2, w2)
            cin = w2
        self.trunk = nn.Sequential(*layers)
        self.head = nn.Conv2d(cin, embedding_dim, 1)

    def forward(self, frames: Tensor) -> tuple[Tensor, Tensor]:
        """frames: (B, 3, H, W) -> (embedding (B, C_e, h, w), low-level (B, C_l, h, w))."""
        low = self.trunk(frames)
        return self.head(low), low


def extract_embedding(frame: Tensor, encoder: PixelEncoder) -> tuple[Tensor, Tensor]:
    """Embed one (H, W, 3) frame; returns (C_e, h, w) and the low-level tap.

    Pure in (frame, encoder weights): identical inputs give identical
    outputs.
    """
    if frame.dim() != 3 or frame.shape[-1] != 3:
        raise InvalidInputError(f"frame must be (H, W, 3), got {tuple(frame.shape)}")
    h, w = frame.shape[:2]
    if h < encoder.stride or w < encoder.stride:
        raise InvalidInputError(
            f"frame {h}x{w} smaller than embedding stride {encoder.stride}"
        )
    x = frame.permute(2, 0, 1).unsqueeze(0)
    emb, low = encoder(x)
    return emb[0], low[0]


def downsample_label(label: Tensor, stride: int) -> Tensor:
    """Nearest-neighbor downsample of an integer label map.

    Each output cell takes the label at its input-cell center
    (index i*stride + stride//2, clamped), so no new ids appear and
    stride 1 is the identity.
    """
    if stride < 1:
        raise InvalidInputError(f"stride must be >= 1, got {stride}")
    h, w = label.shape
    ys = torch.arange(math.ceil(h / stride), device=label.device) * stride + stride // 2
    xs = torch.arange(math.ceil(w / stride), device=label.device) * stride + stride // 2
    ys = ys.clamp(max=h - 1)
    xs = xs.clamp(max=w - 1)
    return label[ys][:, xs]


def downsample_embedding(emb: Tensor, factor: int = 2) -> Tensor:
    """Bilinear downsample of a (C, h, w) embedding to ceil(h/f) x ceil(w/f)."""
    h, w = emb.shape[-2:]
    if h < 2 or w < 2:
        raise InvalidInputError(f"embedding too small to downsample: {h}x{w}")
    size = (math.ceil(h / factor), math.ceil(w / factor))
    return F.interpolate(
        emb.unsqueeze(0), size=size, mode="bilinear", align_corners=False
    )[0]


def split_pixel_sets(label: Tensor, object_id: int) -> tuple[Tensor, Tensor]:
    """Boolean fg/bg masks for one object.

    The background is relative: every pixel not labeled ``object_id``,
    including other objects. The two masks always partition the grid.
    """
    if object_id < 1:
        raise InvalidInputError(f"object_id must be >= 1, got {object_id}")
    fg = label == int(object_id)
    return fg, ~fg
