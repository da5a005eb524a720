"""Mask propagation through a sequence, with optional test-time ensembling.

Frame t is predicted from the first frame (global reference, given
mask) and frame t-1 (local reference, predicted mask; the given mask
for t=2). The multi-scale/flip ensemble runs the plain propagation per
resized/mirrored input, maps the per-object probability maps back to
native resolution, averages them, and only then fuses labels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .ensembler import aggregate_objects
from .errors import InvalidConfigError, InvalidInputError
from .model import SegModel


@dataclass
class InferenceConfig:
    scales: tuple[float, ...] = (1.0,)
    flip: bool = False

    def validate(self) -> "InferenceConfig":
        if not self.scales or any(s <= 0 for s in self.scales):
            raise InvalidConfigError(f"scales must be positive, got {self.scales}")
        return self


def _as_frames_tensor(frames, dtype: torch.dtype) -> Tensor:
    if isinstance(frames, np.ndarray):
        frames = torch.from_numpy(np.ascontiguousarray(frames))
    frames = frames.to(dtype)
    if frames.dim() != 4 or frames.shape[-1] != 3:
        raise InvalidInputError(f"frames must be (T, H, W, 3), got {tuple(frames.shape)}")
    return frames.permute(0, 3, 1, 2)


def _as_label_tensor(label) -> Tensor:
    if isinstance(label, np.ndarray):
        label = torch.from_numpy(np.ascontiguousarray(label))
    return label.to(torch.int64)


@torch.no_grad()
def segment_sequence(
    model: SegModel,
    frames,
    first_label,
    return_probs: bool = False,
):
    """Propagate the first-frame mask; returns labels for t=2..T.

    ``frames`` is (T, H, W, 3) float in [0, 1]; ``first_label`` an
    integer map aligned with frame 1. Predictions depend only on frames
    up to t (causal). With ``return_probs`` the per-frame fused
    probability maps ([background, objects...] rows) come back too.
    """
    model.eval()
    dtype = next(model.parameters()).dtype
    frames_t = _as_frames_tensor(frames, dtype)
    first = _as_label_tensor(first_label)
    t_total, _, h, w = frames_t.shape
    if first.shape != (h, w):
        raise InvalidInputError(
            f"first mask {tuple(first.shape)} does not match frames {(h, w)}"
        )
    if t_total < 2:
        return ([], []) if return_probs else []

    ids = tuple(int(i) for i in torch.unique(first).tolist() if i != 0)
    if not ids:
        warnings.warn("first-frame mask is empty; predicting background only")
        zeros = [np.zeros((h, w), dtype=np.int32) for _ in range(t_total - 1)]
        if return_probs:
            ones = [np.ones((1, h, w), dtype=np.float32) for _ in range(t_total - 1)]
            return zeros, ones
        return zeros

    ref_emb, _ = model.embed_frames(frames_t[:1])
    ref_emb = ref_emb[0]
    ref_label = model.align_label(first)

    prev_emb = ref_emb
    prev_label = ref_label
    labels_out: list[np.ndarray] = []
    probs_out: list[np.ndarray] = []
    for t in range(1, t_total):
        cur_emb, cur_low = model.embed_frames(frames_t[t:t + 1])
        cur_emb, cur_low = cur_emb[0], cur_low[0]
        logits = model.forward_frame(
            cur_emb, cur_low, ref_emb, ref_label, prev_emb, prev_label,
            ids, (h, w),
        )
        fused = aggregate_objects(logits, ids)
        labels_out.append(fused.labels.numpy().astype(np.int32))
        if return_probs:
            probs_out.append(fused.probs.numpy().astype(np.float32))
        prev_emb = cur_emb
        prev_label = model.align_label(fused.labels)

    if return_probs:
        return labels_out, probs_out
    return labels_out


def _resize_probs(probs: np.ndarray, size: tuple[int, int]) -> Tensor:
    t = torch.from_numpy(probs).unsqueeze(0)
    return F.interpolate(t, size=size, mode="bilinear", align_corners=False)[0]


@torch.no_grad()
def multiscale_flip_inference(
    model: SegModel,
    frames,
    first_label,
    config: InferenceConfig | None = None,
    return_probs: bool = False,
):
    """Average the propagation's probabilities over scales and flips.

    Every ensemble member reruns :func:`segment_sequence` on resized
    (and optionally mirrored) inputs; member probabilities are resized
    back with bilinear interpolation (labels would use nearest), kept on
    the simplex by channel-wise weights, and averaged.
    """
    cfg = (config or InferenceConfig()).validate()
    dtype = next(model.parameters()).dtype
    frames_t = _as_frames_tensor(frames, dtype)
    first = _as_label_tensor(first_label)
    t_total, _, h, w = frames_t.shape
    if t_total < 2:
        return ([], []) if return_probs else []

    ids = tuple(int(i) for i in torch.unique(first).tolist() if i != 0)
    members = [(s, False) for s in cfg.scales]
    if cfg.flip:
        members += [(s, True) for s in cfg.scales]

    acc: list[Tensor] | None = None
    for scale, flipped in members:
        size = (max(model.stride, round(h * scale)), max(model.stride, round(w * scale)))
        fr = F.interpolate(frames_t, size=size, mode="bilinear", align_corners=False)
        lb = F.interpolate(first[None, None].to(dtype), size=size, mode="nearest")
        lb = lb[0, 0].to(torch.int64)
        if flipped:
            fr = torch.flip(fr, dims=(-1,))
            lb = torch.flip(lb, dims=(-1,))
        _, probs = segment_sequence(
            model, fr.permute(0, 2, 3, 1), lb, return_probs=True
        )
        aligned = []
        for p in probs:
            tp = _resize_probs(p, (h, w))
            if flipped:
                tp = torch.flip(tp, dims=(-1,))
            aligned.append(tp)
        if acc is None:
            acc = aligned
        else:
            acc = [a + b for a, b in zip(acc, aligned)]

    assert acc is not None
    avg = [a / len(members) for a in acc]
    lut = torch.tensor((0,) + ids, dtype=torch.int64)
    labels_out = [lut[p.argmax(dim=0)].numpy().astype(np.int32) for p in avg]
    if return_probs:
        return labels_out, [p.numpy().astype(np.float32) for p in avg]
    return labels_out
