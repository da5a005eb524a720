"""Training: balanced cropping, hard-pixel loss, sequential steps, loop.

Each optimization step draws a reference frame plus a run of N+1
consecutive frames (previous + N current) from a sequence, crops all of
them with one shared window re-drawn until the reference crop carries
enough foreground, then unrolls N predictions: the first uses the
ground-truth previous mask, later ones feed back the preceding argmax
prediction (detached). The per-frame bootstrapped cross-entropy losses
are averaged before a single SGD update.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .data import SequenceRecord, load_dataset
from .ensembler import aggregate_objects
from .errors import InvalidConfigError, InvalidInputError, NumericError
from .model import ModelConfig, SegModel, save_checkpoint


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    steps: int = 1000
    batch_size: int = 1
    crop_size: int = 64
    n_current: int = 3
    bootstrap_ratio: float = 0.15
    min_fg_pixels: int | None = None     # None -> 1% of the crop area
    max_retries: int = 10
    aug_scale: tuple[float, float] = (1.0, 1.3)
    aug_flip: bool = True
    seed: int = 0
    checkpoint_every: int = 0            # 0 = final checkpoint only
    deterministic: bool = False

    def validate(self) -> "TrainConfig":
        if not (0.0 < self.bootstrap_ratio <= 1.0):
            raise InvalidConfigError(
                f"bootstrap_ratio must be in (0, 1], got {self.bootstrap_ratio}"
            )
        if self.n_current < 1:
            raise InvalidConfigError("n_current must be >= 1")
        if self.crop_size < 1 or self.steps < 0 or self.batch_size < 1:
            raise InvalidConfigError("crop_size/steps/batch_size out of range")
        if self.aug_scale[0] > self.aug_scale[1] or self.aug_scale[0] <= 0:
            raise InvalidConfigError(f"bad augmentation scale range {self.aug_scale}")
        return self

    def resolved_min_fg(self) -> int:
        if self.min_fg_pixels is not None:
            return int(self.min_fg_pixels)
        return int(math.ceil(0.01 * self.crop_size * self.crop_size))


@dataclass
class TrainSample:
    """One cropped training example; every frame shares the crop window."""

    ref_frame: np.ndarray                 # (H, W, 3) float32 in [0, 1]
    ref_label: np.ndarray                 # (H, W) int
    prev_frame: np.ndarray
    prev_label: np.ndarray
    cur_frames: np.ndarray                # (N, H, W, 3)
    cur_labels: np.ndarray                # (N, H, W)
    crop_origin: tuple[int, int] = (0, 0)
    fg_ok: bool = True                    # crop met the foreground threshold

    @property
    def object_ids(self) -> tuple[int, ...]:
        ids = np.unique(self.ref_label)
        return tuple(int(i) for i in ids if i != 0)


def balanced_random_crop(
    record: SequenceRecord,
    crop_size: int,
    n_current: int,
    min_fg_pixels: int,
    max_retries: int,
    rng: np.random.Generator,
) -> TrainSample:
    """Sample ref/prev/current frames and crop them with one shared window.

    Windows are drawn uniformly and re-drawn until the reference-frame
    crop holds at least ``min_fg_pixels`` foreground pixels; after
    ``max_retries`` draws the best-seen window is used and the sample is
    flagged via ``fg_ok``.
    """
    t_total = record.num_frames
    if t_total < n_current + 2:
        raise InvalidInputError(
            f"sequence {record.seq_id!r} has {t_total} frames, "
            f"need at least {n_current + 2}"
        )
    labels = record.complete_labels()
    frames = record.frames_float()
    h, w = frames.shape[1:3]
    if crop_size > h or crop_size > w:
        raise InvalidInputError(f"crop {crop_size} larger than frames {h}x{w}")

    ref_idx = int(rng.integers(0, t_total))
    block = int(rng.integers(0, t_total - n_current))

    best: tuple[int, int, int] | None = None   # (fg_count, y, x)
    origin = (0, 0)
    accepted = False
    for _ in range(max(1, max_retries)):
        y = int(rng.integers(0, h - crop_size + 1))
        x = int(rng.integers(0, w - crop_size + 1))
        fg = int(np.count_nonzero(labels[ref_idx, y:y + crop_size, x:x + crop_size]))
        if best is None or fg > best[0]:
            best = (fg, y, x)
        if fg >= min_fg_pixels:
            origin = (y, x)
            accepted = True
            break
    if not accepted:
        origin = (best[1], best[2])
    y, x = origin
    sl = (slice(y, y + crop_size), slice(x, x + crop_size))

    cur = slice(block + 1, block + 1 + n_current)
    return TrainSample(
        ref_frame=frames[ref_idx][sl],
        ref_label=labels[ref_idx][sl],
        prev_frame=frames[block][sl],
        prev_label=labels[block][sl],
        cur_frames=frames[cur][:, sl[0], sl[1]],
        cur_labels=labels[cur][:, sl[0], sl[1]],
        crop_origin=origin,
        fg_ok=accepted,
    )


def _resize_record(record: SequenceRecord, scale: float) -> SequenceRecord:
    frames = torch.from_numpy(record.frames).permute(0, 3, 1, 2).float()
    h, w = frames.shape[-2:]
    size = (max(1, round(h * scale)), max(1, round(w * scale)))
    frames = F.interpolate(frames, size=size, mode="bilinear", align_corners=False)
    frames = frames.round().clamp(0, 255).byte().permute(0, 2, 3, 1).numpy()
    labels = []
    for lbl in record.labels:
        if lbl is None:
            labels.append(None)
            continue
        t = torch.from_numpy(np.ascontiguousarray(lbl)).float()[None, None]
        t = F.interpolate(t, size=size, mode="nearest")
        labels.append(t[0, 0].long().numpy().astype(lbl.dtype))
    return SequenceRecord(record.seq_id, frames, labels)


def sample_train_example(
    record: SequenceRecord, cfg: TrainConfig, rng: np.random.Generator
) -> TrainSample:
    """Scale and flip augmentation around :func:`balanced_random_crop`.

    The scale draw is clamped from below so the resized frames always
    fit the crop window (small inputs get upscaled rather than
    rejected).
    """
    lo, hi = cfg.aug_scale
    h, w = record.frames.shape[1:3]
    min_scale = max(lo, cfg.crop_size / min(h, w))
    scale = float(rng.uniform(min_scale, max(hi, min_scale)))
    if abs(scale - 1.0) > 1e-6:
        record = _resize_record(record, scale)
    sample = balanced_random_crop(
        record, cfg.crop_size, cfg.n_current, cfg.resolved_min_fg(),
        cfg.max_retries, rng,
    )
    if cfg.aug_flip and rng.random() < 0.5:
        sample = TrainSample(
            ref_frame=sample.ref_frame[:, ::-1].copy(),
            ref_label=sample.ref_label[:, ::-1].copy(),
            prev_frame=sample.prev_frame[:, ::-1].copy(),
            prev_label=sample.prev_label[:, ::-1].copy(),
            cur_frames=sample.cur_frames[:, :, ::-1].copy(),
            cur_labels=sample.cur_labels[:, :, ::-1].copy(),
            crop_origin=sample.crop_origin,
            fg_ok=sample.fg_ok,
        )
    return sample


def bootstrapped_ce_loss(probs: Tensor, target: Tensor, ratio: float = 0.15) -> Tensor:
    """Mean cross-entropy of the hardest ceil(ratio * n) pixels.

    ``probs`` is (C, ...) on the per-pixel simplex, ``target`` holds
    class indices. Ties at the selection boundary break by pixel index.
    """
    if not (0.0 < ratio <= 1.0):
        raise InvalidConfigError(f"ratio must be in (0, 1], got {ratio}")
    c = probs.shape[0]
    flat = probs.reshape(c, -1)
    idx = target.reshape(1, -1).to(torch.int64)
    picked = flat.gather(0, idx).squeeze(0)
    losses = -torch.log(picked.clamp_min(1e-12))
    k = int(math.ceil(ratio * losses.numel()))
    ordered = torch.sort(losses, descending=True, stable=True).values
    return ordered[:k].mean()


def label_to_target(label: Tensor, object_ids: Sequence[int]) -> Tensor:
    """Map object ids to class indices (0 = background, i+1 = ids[i]).

    Ids not tracked in ``object_ids`` count as background.
    """
    lut = torch.zeros(int(label.max().item()) + 1, dtype=torch.int64,
                      device=label.device)
    for i, oid in enumerate(object_ids):
        if oid <= lut.numel() - 1:
            lut[oid] = i + 1
    return lut[label.to(torch.int64)]


def _frames_tensor(arr: np.ndarray, dtype: torch.dtype) -> Tensor:
    t = torch.from_numpy(np.ascontiguousarray(arr)).to(dtype)
    return t.permute(2, 0, 1) if t.dim() == 3 else t.permute(0, 3, 1, 2)


@dataclass
class SequenceForwardResult:
    loss: Tensor
    per_frame: list[float]
    predictions: list[Tensor] = field(default_factory=list)   # full-res labels per step
    prev_labels_used: list[Tensor] = field(default_factory=list)  # embedding-grid inputs


def run_sequence_forward(
    model: SegModel,
    sample: TrainSample,
    bootstrap_ratio: float = 0.15,
    feedback: str = "hard",
) -> SequenceForwardResult:
    """Unrolled N-step prediction of one sample; loss is the step mean.

    ``feedback`` selects how predictions re-enter later steps:
    ``"hard"`` (default, documented behaviour) feeds the detached argmax
    label; ``"soft"`` feeds the predicted probabilities without
    detaching (mask channel and pooling only), which keeps a gradient
    path through time and exists to make the difference testable.
    """
    if feedback not in ("hard", "soft"):
        raise InvalidConfigError(f"unknown feedback mode {feedback!r}")
    ids = sample.object_ids
    if not ids:
        raise InvalidInputError("reference crop contains no foreground objects")
    dtype = next(model.parameters()).dtype
    device = next(model.parameters()).device
    n = sample.cur_frames.shape[0]
    h, w = sample.ref_frame.shape[:2]

    stack = torch.cat([
        _frames_tensor(sample.ref_frame, dtype).unsqueeze(0),
        _frames_tensor(sample.prev_frame, dtype).unsqueeze(0),
        _frames_tensor(sample.cur_frames, dtype),
    ]).to(device)
    embs, lows = model.embed_frames(stack)

    ref_label = model.align_label(torch.from_numpy(sample.ref_label).to(device))
    prev_label = model.align_label(torch.from_numpy(sample.prev_label).to(device))
    prev_emb = embs[1]
    prev_soft = None

    result = SequenceForwardResult(loss=stack.new_zeros(()), per_frame=[])
    losses = []
    for j in range(n):
        cur_emb = embs[2 + j]
        logits = model.forward_frame(
            cur_emb, lows[2 + j], embs[0], ref_label, prev_emb, prev_label,
            ids, (h, w), prev_soft_masks=prev_soft,
        )
        fused = aggregate_objects(logits, ids)
        target = label_to_target(
            torch.from_numpy(np.ascontiguousarray(sample.cur_labels[j])).to(device), ids
        )
        losses.append(bootstrapped_ce_loss(fused.probs, target, bootstrap_ratio))
        result.per_frame.append(float(losses[-1].detach()))
        result.prev_labels_used.append(prev_label.detach().clone())
        result.predictions.append(fused.labels.detach().clone())

        prev_emb = cur_emb
        prev_label = model.align_label(fused.labels.detach())
        if feedback == "soft":
            obj_probs = fused.probs[1:]
            half = F.interpolate(obj_probs.unsqueeze(0), size=cur_emb.shape[1:],
                                 mode="bilinear", align_corners=False)[0]
            prev_soft = half
        else:
            prev_soft = None

    result.loss = torch.stack(losses).mean()
    return result


@dataclass
class StepResult:
    loss: float
    per_frame: list[float]


def sequential_train_step(
    model: SegModel,
    sample: TrainSample,
    optimizer: torch.optim.Optimizer,
    bootstrap_ratio: float = 0.15,
) -> StepResult:
    """One optimizer update from one sample (N forwards, one step)."""
    model.train()
    fwd = run_sequence_forward(model, sample, bootstrap_ratio)
    if not torch.isfinite(fwd.loss):
        raise NumericError(
            f"non-finite training loss {fwd.loss.item()!r}; "
            f"per-frame losses: {fwd.per_frame}"
        )
    optimizer.zero_grad()
    fwd.loss.backward()
    optimizer.step()
    return StepResult(loss=float(fwd.loss.detach()), per_frame=fwd.per_frame)


@dataclass
class TrainResult:
    checkpoint_path: Path
    losses: list[float]
    model: SegModel


def train(
    cfg: TrainConfig,
    dataset: str | Path | list[SequenceRecord],
    out_dir: str | Path,
    model_config: ModelConfig | None = None,
    model: SegModel | None = None,
) -> TrainResult:
    """Run the full loop and leave a checkpoint plus a loss log behind.

    Deterministic for a fixed seed: sampling, augmentation and
    initialization all derive from ``cfg.seed``.
    """
    cfg.validate()
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)
    records = dataset if isinstance(dataset, list) else load_dataset(dataset)
    if not records:
        raise InvalidInputError("empty dataset")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = SegModel(model_config)
    optimizer = torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum)

    losses: list[float] = []
    log_path = out / "loss_log.jsonl"
    ckpt_path = out / "checkpoint.pt"
    with log_path.open("w") as log:
        for step in range(cfg.steps):
            batch = []
            for _ in range(cfg.batch_size):
                for _attempt in range(20):
                    rec = records[int(rng.integers(0, len(records)))]
                    try:
                        batch.append(sample_train_example(rec, cfg, rng))
                        break
                    except InvalidInputError:
                        continue
                else:
                    raise InvalidInputError(
                        "could not draw a valid training sample (sequences "
                        f"need >= {cfg.n_current + 2} frames and foreground "
                        "objects in the reference crop)"
                    )
            model.train()
            optimizer.zero_grad()
            step_losses = []
            per_frame: list[list[float]] = []
            for s in batch:
                fwd = run_sequence_forward(model, s, cfg.bootstrap_ratio)
                step_losses.append(fwd.loss)
                per_frame.append(fwd.per_frame)
            loss = torch.stack(step_losses).mean()
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at step {step}: per-frame {per_frame}"
                )
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
            log.write(json.dumps({"step": step, "loss": losses[-1],
                                  "per_frame": per_frame}) + "\n")
            if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(ckpt_path, model,
                                extra={"step": step + 1,
                                       "train_config": _config_snapshot(cfg)})
    save_checkpoint(ckpt_path, model,
                    extra={"step": cfg.steps, "train_config": _config_snapshot(cfg)})
    return TrainResult(checkpoint_path=ckpt_path, losses=losses, model=model)


def _config_snapshot(cfg: TrainConfig) -> dict:
    d = dict(vars(cfg))
    d["aug_scale"] = list(cfg.aug_scale)
    return d
