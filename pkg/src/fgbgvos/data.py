"""Synthetic moving-shape sequences and dataset IO.

On-disk layout (one directory per sequence, lossless PNG):

    <root>/<seq>/frames/00000.png ...   RGB uint8
    <root>/<seq>/masks/00000.png  ...   single-channel uint8 label ids, 0 = background

Shapes move with per-object velocities (optionally jittered per frame)
and reflect off the canvas borders. Objects are drawn in ascending id
order, so higher ids occlude lower ones; distractor shapes (unlabeled
clones of a labeled object's appearance) are drawn underneath all
labeled objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, InvalidConfigError

FRAME_DIR = "frames"
MASK_DIR = "masks"


@dataclass
class SynthConfig:
    num_sequences: int = 4
    frames: int = 12
    size: int = 64
    objects: int = 2
    shapes: tuple[str, ...] = ("disk", "rect")
    speed: tuple[float, float] = (1.0, 3.0)
    jitter: float = 0.0
    shape_scale: tuple[float, float] = (0.09, 0.16)
    distractors: int = 0        # look-alike unlabeled objects (bool works)
    distractor_speed: tuple[float, float] | None = None   # None: same as speed
    distractor_color_jitter: int = 0   # +/- per-channel offset on the cloned color
    background_clutter: int = 0  # static unlabeled shapes baked into the backdrop,
                                 # drawn from the same bright appearance range
    seed: int = 0

    def validate(self) -> "SynthConfig":
        if self.objects < 1:
            raise InvalidConfigError("need at least one object")
        if self.num_sequences < 1 or self.frames < 1:
            raise InvalidConfigError("need at least one sequence and one frame")
        if self.size < 16:
            raise InvalidConfigError("canvas size must be >= 16")
        if not self.shapes or any(s not in ("disk", "rect") for s in self.shapes):
            raise InvalidConfigError(f"unknown shape kinds in {self.shapes}")
        if self.objects > 255:
            raise InvalidConfigError("label ids must fit uint8 masks")
        if int(self.distractors) < 0:
            raise InvalidConfigError("distractor count must be >= 0")
        # Largest shape must fit inside the canvas with room to move.
        if 2 * self.shape_scale[1] * self.size + 2 >= self.size:
            raise InvalidConfigError(
                f"shape_scale {self.shape_scale} too large for canvas {self.size}"
            )
        return self


@dataclass(frozen=True)
class ShapeSpec:
    """One moving shape: appearance (kind, color, half_sizes) + kinematics."""

    kind: str
    color: tuple[int, int, int]
    half_sizes: tuple[float, float]
    position: tuple[float, float]
    velocity: tuple[float, float]


@dataclass
class SequenceRecord:
    seq_id: str
    frames: np.ndarray                      # (T, H, W, 3) uint8
    labels: list[np.ndarray | None] = field(default_factory=list)
    frame_names: list[str] | None = None    # file stems, e.g. "00000"

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def names(self) -> list[str]:
        if self.frame_names is not None:
            return self.frame_names
        return [f"{t:05d}" for t in range(self.num_frames)]

    @property
    def first_label(self) -> np.ndarray:
        if not self.labels or self.labels[0] is None:
            raise DataError(
                f"sequence {self.seq_id!r} has no mask for its first frame; "
                "it cannot seed inference"
            )
        return self.labels[0]

    @property
    def object_ids(self) -> tuple[int, ...]:
        ids = np.unique(self.first_label)
        return tuple(int(i) for i in ids if i != 0)

    def complete_labels(self) -> np.ndarray:
        if any(lbl is None for lbl in self.labels) or len(self.labels) != self.num_frames:
            raise DataError(f"sequence {self.seq_id!r} is missing masks")
        return np.stack(self.labels)

    def frames_float(self) -> np.ndarray:
        return self.frames.astype(np.float32) / 255.0


def make_background(size: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth dim texture: low-res noise upsampled bilinearly, uint8."""
    low = rng.uniform(10.0, 115.0, size=(4, 4, 3))
    img = Image.fromarray(low.astype(np.uint8), "RGB")
    return np.array(img.resize((size, size), Image.BILINEAR), dtype=np.uint8)


def sample_specs(
    cfg: SynthConfig, rng: np.random.Generator
) -> tuple[list[ShapeSpec], list[ShapeSpec]]:
    """Draw object specs (in id order) and distractor specs for one sequence."""

    def one(appearance_from: ShapeSpec | None = None,
            speed: tuple[float, float] | None = None) -> ShapeSpec:
        if appearance_from is None:
            kind = str(rng.choice(list(cfg.shapes)))
            lo, hi = cfg.shape_scale
            if kind == "disk":
                r = rng.uniform(lo, hi) * cfg.size
                half = (r, r)
            else:
                half = (rng.uniform(lo, hi) * cfg.size, rng.uniform(lo, hi) * cfg.size)
            color = tuple(int(c) for c in rng.integers(140, 256, size=3))
        else:
            kind = appearance_from.kind
            half = appearance_from.half_sizes
            color = appearance_from.color
            j = int(cfg.distractor_color_jitter)
            if j > 0:
                # keep the offset visible: magnitude in [j/2, j] per channel
                offset = rng.integers(max(1, j // 2), j + 1, size=3)
                offset *= rng.choice((-1, 1), size=3)
                color = tuple(int(c) for c in np.clip(np.asarray(color) + offset,
                                                      0, 255))
        pos = []
        for hs in half:
            lo_p, hi_p = hs, cfg.size - 1 - hs
            if lo_p > hi_p:
                raise InvalidConfigError(
                    f"shape of half-size {hs:.1f} does not fit a {cfg.size} canvas"
                )
            pos.append(float(rng.uniform(lo_p, hi_p)))
        angle = rng.uniform(0.0, 2.0 * math.pi)
        mag = rng.uniform(*(speed or cfg.speed))
        vel = (mag * math.sin(angle), mag * math.cos(angle))
        return ShapeSpec(kind, color, tuple(half), tuple(pos), vel)

    objects = [one() for _ in range(cfg.objects)]

    def clear_of_objects(spec: ShapeSpec) -> bool:
        for obj in objects:
            gap = max(spec.half_sizes) + max(obj.half_sizes)
            dy = spec.position[0] - obj.position[0]
            dx = spec.position[1] - obj.position[1]
            if dy * dy + dx * dx < gap * gap:
                return False
        return True

    distractors = []
    for i in range(int(cfg.distractors)):
        spec = one(appearance_from=objects[i % cfg.objects],
                   speed=cfg.distractor_speed)
        # avoid spawning fused with a labeled object; the frame-1 mask
        # boundary would otherwise cut through a uniform blob
        for _ in range(20):
            if clear_of_objects(spec):
                break
            spec = one(appearance_from=objects[i % cfg.objects],
                       speed=cfg.distractor_speed)
        distractors.append(spec)
    return objects, distractors


def sample_clutter(cfg: SynthConfig, rng: np.random.Generator) -> list[ShapeSpec]:
    """Static bright shapes painted into the background (never labeled)."""
    blobs = []
    lo, hi = cfg.shape_scale
    for _ in range(int(cfg.background_clutter)):
        kind = str(rng.choice(list(cfg.shapes)))
        if kind == "disk":
            r = rng.uniform(lo, hi) * cfg.size
            half = (r, r)
        else:
            half = (rng.uniform(lo, hi) * cfg.size, rng.uniform(lo, hi) * cfg.size)
        color = tuple(int(c) for c in rng.integers(140, 256, size=3))
        pos = tuple(float(rng.uniform(hs, cfg.size - 1 - hs)) for hs in half)
        blobs.append(ShapeSpec(kind, color, tuple(half), pos, (0.0, 0.0)))
    return blobs


def _paint(canvas: np.ndarray, mask: np.ndarray | None, spec: ShapeSpec,
           pos: np.ndarray, label: int) -> None:
    size = canvas.shape[0]
    yy, xx = np.ogrid[:size, :size]
    cy, cx = pos
    ry, rx = spec.half_sizes
    if spec.kind == "disk":
        inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= ry ** 2
    else:
        inside = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    canvas[inside] = np.array(spec.color, dtype=np.uint8)
    if mask is not None:
        mask[inside] = label


def _reflect(p: float, v: float, lo: float, hi: float) -> tuple[float, float]:
    while p < lo or p > hi:
        if p < lo:
            p = 2.0 * lo - p
        else:
            p = 2.0 * hi - p
        v = -v
    return p, v


def render_sequence(
    background: np.ndarray,
    objects: list[ShapeSpec],
    distractors: list[ShapeSpec],
    num_frames: int,
    jitter: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Render (frames, labels); object i (0-based) gets label id i+1."""
    size = background.shape[0]
    frames = np.empty((num_frames, size, size, 3), dtype=np.uint8)
    labels = np.zeros((num_frames, size, size), dtype=np.int32)

    movers = distractors + objects
    pos = [np.array(s.position, dtype=np.float64) for s in movers]
    vel = [np.array(s.velocity, dtype=np.float64) for s in movers]

    for t in range(num_frames):
        canvas = background.copy()
        mask = labels[t]
        for i, spec in enumerate(movers):
            label = 0 if i < len(distractors) else i - len(distractors) + 1
            _paint(canvas, mask if label else None, spec, pos[i], label)
        frames[t] = canvas

        for i, spec in enumerate(movers):
            v = vel[i]
            if jitter > 0 and rng is not None:
                v = v + rng.normal(0.0, jitter, size=2)
            p = pos[i] + v
            for ax, hs in enumerate(spec.half_sizes):
                p[ax], v[ax] = _reflect(p[ax], v[ax], hs, size - 1 - hs)
            pos[i] = p
            vel[i] = v
    return frames, labels


def generate_synthetic(cfg: SynthConfig, out_dir: str | Path) -> list[SequenceRecord]:
    """Write a dataset to ``out_dir`` and return the in-memory records.

    Fully determined by ``cfg.seed``: each sequence derives its own rng
    stream, so outputs are byte-reproducible.
    """
    cfg.validate()
    root = Path(out_dir)
    records = []
    for idx in range(cfg.num_sequences):
        rng = np.random.default_rng([cfg.seed, idx])
        background = make_background(cfg.size, rng)
        objects, distractors = sample_specs(cfg, rng)
        for blob in sample_clutter(cfg, rng):
            _paint(background, None, blob, np.asarray(blob.position), 0)
        frames, labels = render_sequence(
            background, objects, distractors, cfg.frames, cfg.jitter, rng
        )
        seq_id = f"seq{idx:03d}"
        rec = SequenceRecord(seq_id, frames, [lbl for lbl in labels])
        _write_record(root / seq_id, rec)
        records.append(rec)
    return records


def _write_record(seq_dir: Path, rec: SequenceRecord) -> None:
    frame_dir = seq_dir / FRAME_DIR
    mask_dir = seq_dir / MASK_DIR
    frame_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)
    for t in range(rec.num_frames):
        Image.fromarray(rec.frames[t], "RGB").save(frame_dir / f"{t:05d}.png")
        lbl = rec.labels[t]
        if lbl is not None:
            write_label_map(mask_dir / f"{t:05d}.png", lbl)


def write_label_map(path: str | Path, label: np.ndarray) -> None:
    """Save an integer label map as a single-channel PNG (ids must fit uint8)."""
    if label.min() < 0 or label.max() > 255:
        raise DataError(f"label ids out of uint8 range: {label.min()}..{label.max()}")
    Image.fromarray(label.astype(np.uint8), "L").save(str(path))


def load_label_map(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(str(path)).convert("L"), dtype=np.int32)


def load_sequence(seq_dir: str | Path) -> SequenceRecord:
    """Load one sequence directory; masks may be missing for some frames."""
    seq_dir = Path(seq_dir)
    frame_dir = seq_dir / FRAME_DIR
    if not frame_dir.is_dir():
        raise DataError(f"no {FRAME_DIR}/ directory under {seq_dir}")
    frame_paths = sorted(frame_dir.glob("*.png"))
    if not frame_paths:
        raise DataError(f"no frames found under {frame_dir}")
    frames = []
    labels: list[np.ndarray | None] = []
    mask_dir = seq_dir / MASK_DIR
    for fp in frame_paths:
        img = np.asarray(Image.open(fp).convert("RGB"), dtype=np.uint8)
        frames.append(img)
        mp = mask_dir / fp.name
        if mp.is_file():
            lbl = load_label_map(mp)
            if lbl.shape != img.shape[:2]:
                raise DataError(
                    f"{mp}: mask {lbl.shape} does not match frame {img.shape[:2]}"
                )
            labels.append(lbl)
        else:
            labels.append(None)
    return SequenceRecord(seq_dir.name, np.stack(frames), labels,
                          frame_names=[p.stem for p in frame_paths])


def load_dataset(root: str | Path) -> list[SequenceRecord]:
    """Load every sequence directory under ``root``, sorted by name."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    seq_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not seq_dirs:
        raise DataError(f"no sequence directories under {root}")
    return [load_sequence(p) for p in seq_dirs]
