"""Gated dilated prediction network and multi-object fusion.

The network consumes the assembled pixel-level guidance plus the
low-level encoder tap and emits two logits (fg, bg) per object at the
input frame resolution. Three residual stages (2, 3, 3 blocks; the
first block of stages 2 and 3 downsamples by 2) with per-stage dilation
ladders are followed by a multi-rate context module and a decoder.
Channel gates computed from the instance guidance scale the input of
every res-block and of the context module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import InvalidConfigError, InvalidInputError


@dataclass
class EnsemblerConfig:
    stage_blocks: tuple[int, ...] = (2, 3, 3)
    stage_dilations: tuple[tuple[int, ...], ...] = ((1, 2), (1, 2, 4), (1, 2, 4))
    stage_widths: tuple[int, ...] = (128, 256, 256)
    context_rates: tuple[int, ...] = (2, 4, 8)
    context_width: int = 128
    decoder_width: int = 128
    low_level_proj: int = 32
    norm_groups: int = 8
    normalization: str = "group"

    def validate(self) -> "EnsemblerConfig":
        if len(self.stage_blocks) != len(self.stage_dilations) or len(
            self.stage_blocks
        ) != len(self.stage_widths):
            raise InvalidConfigError("stage lists must have equal lengths")
        for n, dils in zip(self.stage_blocks, self.stage_dilations):
            if n != len(dils):
                raise InvalidConfigError(
                    f"stage with {n} blocks needs {n} dilation rates, got {dils}"
                )
        if self.normalization not in ("group", "none"):
            raise InvalidConfigError(f"unknown normalization {self.normalization!r}")
        if self.normalization == "group":
            for w in (*self.stage_widths, self.context_width, self.decoder_width,
                      self.low_level_proj):
                if w % self.norm_groups != 0:
                    raise InvalidConfigError(
                        f"width {w} not divisible by norm_groups {self.norm_groups}"
                    )
        return self


def _norm(cfg: EnsemblerConfig, channels: int) -> nn.Module:
    if cfg.normalization == "none":
        return nn.Identity()
    return nn.GroupNorm(cfg.norm_groups, channels)


class ResBlock(nn.Module):
    def __init__(self, cfg: EnsemblerConfig, cin: int, cout: int,
                 dilation: int = 1, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=dilation,
                               dilation=dilation, bias=False)
        self.norm1 = _norm(cfg, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=dilation,
                               dilation=dilation, bias=False)
        self.norm2 = _norm(cfg, cout)
        if cin != cout or stride != 1:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False),
                _norm(cfg, cout),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: Tensor) -> Tensor:
        out = F.relu(self.norm1(self.conv1(x)), inplace=True)
        out = self.norm2(self.conv2(out))
        return F.relu(out + self.shortcut(x), inplace=True)


class ContextModule(nn.Module):
    """Parallel dilated branches plus global pooling, fused by a 1x1 conv."""

    def __init__(self, cfg: EnsemblerConfig, cin: int):
        super().__init__()
        w = cfg.context_width
        self.branches = nn.ModuleList()
        self.branches.append(nn.Sequential(
            nn.Conv2d(cin, w, 1, bias=False), _norm(cfg, w), nn.ReLU(inplace=True)))
        for rate in cfg.context_rates:
            self.branches.append(nn.Sequential(
                nn.Conv2d(cin, w, 3, padding=rate, dilation=rate, bias=False),
                _norm(cfg, w), nn.ReLU(inplace=True)))
        self.pool = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(cin, w, 1, bias=False), nn.ReLU(inplace=True))
        self.project = nn.Sequential(
            nn.Conv2d(w * (len(cfg.context_rates) + 2), w, 1, bias=False),
            _norm(cfg, w), nn.ReLU(inplace=True))

    def forward(self, x: Tensor) -> Tensor:
        outs = [branch(x) for branch in self.branches]
        pooled = self.pool(x)
        outs.append(pooled.expand(-1, -1, x.shape[-2], x.shape[-1]))
        return self.project(torch.cat(outs, dim=1))


class Decoder(nn.Module):
    """Fuse context features with the low-level tap and emit fg/bg logits."""

    def __init__(self, cfg: EnsemblerConfig, low_channels: int):
        super().__init__()
        w = cfg.decoder_width
        self.low_proj = nn.Sequential(
            nn.Conv2d(low_channels, cfg.low_level_proj, 1, bias=False),
            _norm(cfg, cfg.low_level_proj), nn.ReLU(inplace=True))
        self.refine = nn.Sequential(
            nn.Conv2d(cfg.context_width + cfg.low_level_proj, w, 3, padding=1,
                      bias=False),
            _norm(cfg, w), nn.ReLU(inplace=True),
            nn.Conv2d(w, w, 3, padding=1, bias=False),
            _norm(cfg, w), nn.ReLU(inplace=True))
        self.classify = nn.Conv2d(w, 2, 1)

    def forward(self, x: Tensor, low: Tensor) -> Tensor:
        low = self.low_proj(low)
        x = F.interpolate(x, size=low.shape[-2:], mode="bilinear",
                          align_corners=False)
        x = self.refine(torch.cat([x, low], dim=1))
        return self.classify(x)


class Ensembler(nn.Module):
    """Full guidance-to-logits head; see module docstring."""

    def __init__(self, in_channels: int, low_channels: int,
                 config: EnsemblerConfig | None = None):
        super().__init__()
        cfg = (config or EnsemblerConfig()).validate()
        self.config = cfg
        self.in_channels = in_channels

        blocks: list[nn.Module] = []
        gate_widths: list[int] = []
        cur = in_channels
        for stage, (n_blocks, dils, width) in enumerate(
            zip(cfg.stage_blocks, cfg.stage_dilations, cfg.stage_widths)
        ):
            for b in range(n_blocks):
                stride = 2 if (stage > 0 and b == 0) else 1
                gate_widths.append(cur)
                blocks.append(ResBlock(cfg, cur, width, dilation=dils[b],
                                       stride=stride))
                cur = width
        gate_widths.append(cur)
        self.blocks = nn.ModuleList(blocks)
        self.context = ContextModule(cfg, cur)
        self.decoder = Decoder(cfg, low_channels)
        self._gate_widths = tuple(gate_widths)

    @property
    def gate_widths(self) -> tuple[int, ...]:
        """Channel counts of the gated inputs, in forward order."""
        return self._gate_widths

    def forward(
        self,
        guidance: Tensor,
        low_level: Tensor,
        gates: Sequence[Tensor] | None,
        out_size: tuple[int, int],
    ) -> Tensor:
        """guidance: (B, Cg, h, w) -> logits (B, 2, H, W) at ``out_size``.

        ``gates`` must match :attr:`gate_widths` (None disables gating,
        equivalent to all-ones gates).
        """
        if guidance.shape[1] != self.in_channels:
            raise InvalidInputError(
                f"guidance has {guidance.shape[1]} channels, expected "
                f"{self.in_channels}"
            )
        if gates is not None and len(gates) != len(self._gate_widths):
            raise InvalidInputError(
                f"expected {len(self._gate_widths)} gates, got {len(gates)}"
            )
        x = guidance
        for i, block in enumerate(self.blocks):
            if gates is not None:
                x = x * gates[i].unsqueeze(-1).unsqueeze(-1)
            x = block(x)
        if gates is not None:
            x = x * gates[-1].unsqueeze(-1).unsqueeze(-1)
        x = self.context(x)
        x = self.decoder(x, low_level)
        return F.interpolate(x, size=out_size, mode="bilinear",
                             align_corners=False)


@dataclass
class SegmentationResult:
    """Fused multi-object prediction for one frame.

    ``probs`` rows are [background, object_ids...] and sum to 1 per
    pixel; ``labels`` holds the winning object id (0 = background).
    """

    labels: Tensor
    probs: Tensor
    object_ids: tuple[int, ...] = field(default_factory=tuple)


def aggregate_objects(logits: Tensor, object_ids: Sequence[int]) -> SegmentationResult:
    """Fuse per-object (fg, bg) logits into one labeling.

    The shared background logit is the pixel-wise minimum of the
    per-object bg logits (background wins only if every object model
    votes against its object); softmax over [bg, fg_1..fg_M] then gives
    per-pixel probabilities and the argmax label.
    """
    ids = tuple(int(o) for o in object_ids)
    if logits.dim() != 4 or logits.shape[1] != 2:
        raise InvalidInputError(f"logits must be (M, 2, H, W), got {tuple(logits.shape)}")
    if logits.shape[0] != len(ids) or not ids:
        raise InvalidInputError("need one (fg, bg) logit pair per object id")
    bg = logits[:, 1].min(dim=0).values
    stacked = torch.cat([bg.unsqueeze(0), logits[:, 0]], dim=0)
    probs = torch.softmax(stacked, dim=0)
    idx = probs.argmax(dim=0)
    lut = torch.tensor((0,) + ids, device=idx.device, dtype=torch.int64)
    return SegmentationResult(labels=lut[idx], probs=probs, object_ids=ids)
