"""Full segmentation model: encoder, matching, gates, prediction head.

One forward pass segments one frame for a set of objects sharing all
weights: pixel-level guidance is assembled per object from global
matching against the first frame and multi-window local matching
against the previous frame, instance-level gates are derived from
pooled fg/bg embeddings, and the ensembler turns both into per-object
fg/bg logits at frame resolution.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .attention import GateBank, pool_instance_embeddings
from .embedding import PixelEncoder, downsample_embedding, downsample_label, split_pixel_sets
from .ensembler import Ensembler, EnsemblerConfig
from .errors import InvalidConfigError
from .matching import (
    DEFAULT_WINDOWS,
    BiasPair,
    MatchMaps,
    assemble_pixel_guidance,
    global_match,
    guidance_channels,
    multi_local_match,
    validate_windows,
)

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    embedding_dim: int = 32
    encoder_width: int = 32
    stride: int = 4
    windows: tuple[int, ...] = DEFAULT_WINDOWS
    use_background: bool = True
    ensembler: EnsemblerConfig = field(default_factory=EnsemblerConfig)

    def validate(self) -> "ModelConfig":
        if self.embedding_dim < 1:
            raise InvalidConfigError("embedding_dim must be positive")
        if self.stride not in (2, 4, 8):
            raise InvalidConfigError(f"stride must be 2, 4 or 8, got {self.stride}")
        validate_windows(self.windows)
        self.ensembler.validate()
        return self


class SegModel(nn.Module):
    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        cfg = (config or ModelConfig()).validate()
        self.config = cfg
        self.encoder = PixelEncoder(cfg.embedding_dim, cfg.encoder_width, cfg.stride)
        self.fg_bias = nn.Parameter(torch.zeros(()))
        self.bg_bias = nn.Parameter(torch.zeros(()))
        in_ch = guidance_channels(cfg.embedding_dim, len(cfg.windows), cfg.use_background)
        self.ensembler = Ensembler(in_ch, self.encoder.low_level_channels, cfg.ensembler)
        gate_dim = (4 if cfg.use_background else 2) * cfg.embedding_dim
        self.gate_bank = GateBank(gate_dim, self.ensembler.gate_widths)

    @property
    def stride(self) -> int:
        return self.encoder.stride

    @property
    def biases(self) -> BiasPair:
        return BiasPair(self.fg_bias, self.bg_bias)

    def embed_frames(self, frames: Tensor) -> tuple[Tensor, Tensor]:
        """frames: (B, 3, H, W) in [0, 1] -> (embeddings, low-level taps)."""
        return self.encoder(frames)

    def align_label(self, label: Tensor) -> Tensor:
        """Downsample a full-resolution label map to the embedding grid."""
        return downsample_label(label, self.stride)

    def object_guidance(
        self,
        cur_emb: Tensor,
        ref_emb: Tensor,
        ref_label: Tensor,
        prev_emb: Tensor,
        prev_label: Tensor,
        object_id: int,
        prev_mask_override: Tensor | None = None,
    ) -> Tensor:
        """Pixel-level guidance tensor for one object (labels at embedding grid).

        ``prev_mask_override`` substitutes a float map for the hard
        previous-frame mask channel (soft, non-detached feedback).
        """
        cfg = self.config
        biases = self.biases
        ref_fg, ref_bg = split_pixel_sets(ref_label, object_id)
        g_fg, g_bg = global_match(cur_emb, ref_emb, ref_fg, ref_bg, biases)

        # Local matching runs at half the embedding resolution and the
        # resulting maps are upsampled back before assembly.
        h, w = cur_emb.shape[1:]
        cur_half = downsample_embedding(cur_emb)
        prev_half = downsample_embedding(prev_emb)
        prev_label_half = downsample_label(prev_label, 2)
        l_fg, l_bg = multi_local_match(
            cur_half, prev_half, prev_label_half, object_id, cfg.windows, biases
        )
        l_fg = F.interpolate(l_fg.unsqueeze(0), size=(h, w), mode="bilinear",
                             align_corners=False)[0]
        l_bg = F.interpolate(l_bg.unsqueeze(0), size=(h, w), mode="bilinear",
                             align_corners=False)[0]

        maps = MatchMaps(
            global_fg=g_fg,
            global_bg=g_bg if cfg.use_background else None,
            local_fg=l_fg,
            local_bg=l_bg if cfg.use_background else None,
        )
        if prev_mask_override is not None:
            prev_mask = prev_mask_override.to(cur_emb.dtype)
        else:
            prev_mask = (prev_label == int(object_id)).to(cur_emb.dtype)
        return assemble_pixel_guidance(cur_emb, prev_emb, prev_mask, maps)

    def forward_frame(
        self,
        cur_emb: Tensor,
        cur_low: Tensor,
        ref_emb: Tensor,
        ref_label: Tensor,
        prev_emb: Tensor,
        prev_label: Tensor,
        object_ids: Sequence[int],
        out_size: tuple[int, int],
        prev_soft_masks: Tensor | None = None,
    ) -> Tensor:
        """Per-object (fg, bg) logits, shape (M, 2, H, W).

        All embeddings are (C, h, w) single-frame tensors; labels are
        integer maps already aligned to the embedding grid. Objects are
        processed with shared weights and batched through the head.
        ``prev_soft_masks`` ((M, h, w) float, optional) feeds predicted
        probabilities back without detaching: it replaces the hard
        previous-mask channel and the previous-frame pooling weights
        (window candidate sets stay hard, selected by ``prev_label``).
        """
        guidance = []
        vecs = []
        for i, oid in enumerate(object_ids):
            soft = None if prev_soft_masks is None else prev_soft_masks[i]
            guidance.append(self.object_guidance(
                cur_emb, ref_emb, ref_label, prev_emb, prev_label, int(oid),
                prev_mask_override=soft))
            vecs.append(pool_instance_embeddings(
                ref_emb, ref_label, prev_emb, prev_label, int(oid),
                use_background=self.config.use_background,
                prev_fg_weights=soft))
        guidance = torch.stack(guidance)
        gates = self.gate_bank(torch.stack(vecs))
        low = cur_low.unsqueeze(0).expand(len(object_ids), -1, -1, -1)
        return self.ensembler(guidance, low, gates, out_size)


def save_checkpoint(path: str | Path, model: SegModel, extra: dict | None = None) -> None:
    """Write a versioned checkpoint with weights and config snapshot."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": asdict(model.config),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, str(path))


def _config_from_dict(d: dict) -> ModelConfig:
    ens = d.get("ensembler", {})
    ens_cfg = EnsemblerConfig(
        stage_blocks=tuple(ens.get("stage_blocks", (2, 3, 3))),
        stage_dilations=tuple(tuple(x) for x in ens.get("stage_dilations",
                                                        ((1, 2), (1, 2, 4), (1, 2, 4)))),
        stage_widths=tuple(ens.get("stage_widths", (128, 256, 256))),
        context_rates=tuple(ens.get("context_rates", (2, 4, 8))),
        context_width=ens.get("context_width", 128),
        decoder_width=ens.get("decoder_width", 128),
        low_level_proj=ens.get("low_level_proj", 32),
        norm_groups=ens.get("norm_groups", 8),
        normalization=ens.get("normalization", "group"),
    )
    return ModelConfig(
        embedding_dim=d["embedding_dim"],
        encoder_width=d["encoder_width"],
        stride=d.get("stride", 4),
        windows=tuple(d["windows"]),
        use_background=d.get("use_background", True),
        ensembler=ens_cfg,
    )


def load_checkpoint(path: str | Path) -> tuple[SegModel, dict]:
    """Load a checkpoint produced by :func:`save_checkpoint`."""
    payload = torch.load(str(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise InvalidConfigError(
            f"unsupported checkpoint format version {version!r} "
            f"(expected {CHECKPOINT_VERSION})"
        )
    model = SegModel(_config_from_dict(payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    return model, payload.get("extra", {})
