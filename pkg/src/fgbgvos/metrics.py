"""Region similarity J, boundary similarity F, and sequence evaluation.

J is the Jaccard index between binary masks. F matches the 1-pixel
boundaries of prediction and ground truth within a tolerance radius
(default: 0.8% of the image diagonal, rounded up) and combines the
resulting precision/recall into an F-measure. Reports average per
object over frames 2..T (the first frame is given, not scored), then
over objects and sequences.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import InvalidInputError

REPORT_VERSION = 1


def _check_shapes(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
    return pred.astype(bool), gt.astype(bool)


def region_j(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union of two binary masks; both empty -> 1."""
    pred, gt = _check_shapes(pred, gt)
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(pred & gt) / union)


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    """1-pixel boundary: inside pixels with a 4-neighbor outside the mask
    (image border counts as outside)."""
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return m & ~interior


def default_tolerance(shape: tuple[int, int]) -> int:
    """Boundary match radius: 0.8% of the image diagonal, rounded up."""
    return int(math.ceil(0.008 * math.hypot(*shape)))


def boundary_f(pred: np.ndarray, gt: np.ndarray, tolerance: float | None = None) -> float:
    """Boundary F-measure between two binary masks.

    Precision is the fraction of predicted boundary pixels within
    ``tolerance`` of some ground-truth boundary pixel; recall is
    symmetric. Returns 1 when both boundaries are empty and 0 when
    precision and recall are both 0.
    """
    pred, gt = _check_shapes(pred, gt)
    if tolerance is None:
        tolerance = default_tolerance(pred.shape)
    pb = boundary_mask(pred)
    gb = boundary_mask(gt)
    pb_any = bool(pb.any())
    gb_any = bool(gb.any())
    if not pb_any and not gb_any:
        return 1.0
    if not pb_any or not gb_any:
        return 0.0
    dist_to_gt = distance_transform_edt(~gb)
    dist_to_pred = distance_transform_edt(~pb)
    precision = float((dist_to_gt[pb] <= tolerance).mean())
    recall = float((dist_to_pred[gb] <= tolerance).mean())
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass
class EvalReport:
    """Per-object scores plus global means; see :func:`write_report` for
    the serialized schema."""

    per_sequence: dict[str, dict[int, dict[str, float]]] = field(default_factory=dict)
    j_mean: float = 0.0
    f_mean: float = 0.0

    @property
    def jf_mean(self) -> float:
        return 0.5 * (self.j_mean + self.f_mean)


def evaluate_sequence(
    pred_labels: np.ndarray,
    gt_labels: np.ndarray,
    tolerance: float | None = None,
) -> dict[int, dict[str, float]]:
    """Score one sequence; arrays are (T, H, W) integer label maps.

    Objects are the nonzero ids of the ground-truth first frame; frames
    after the first are scored and averaged per object.
    """
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise InvalidInputError(
            f"sequence shape mismatch: {pred_labels.shape} vs {gt_labels.shape}"
        )
    if pred_labels.shape[0] < 2:
        raise InvalidInputError("need at least two frames to score a sequence")
    gt_ids = {int(i) for i in np.unique(gt_labels[0]) if i != 0}
    pred_ids = {int(i) for i in np.unique(pred_labels) if i != 0}
    if not pred_ids <= gt_ids:
        warnings.warn(
            f"predicted ids {sorted(pred_ids - gt_ids)} absent from the "
            "ground-truth first frame; scoring anyway"
        )
    scores: dict[int, dict[str, float]] = {}
    for oid in sorted(gt_ids):
        js, fs = [], []
        for t in range(1, gt_labels.shape[0]):
            pm = pred_labels[t] == oid
            gm = gt_labels[t] == oid
            js.append(region_j(pm, gm))
            fs.append(boundary_f(pm, gm, tolerance))
        scores[oid] = {"J": float(np.mean(js)), "F": float(np.mean(fs))}
    return scores


def evaluate(
    predictions: dict[str, np.ndarray],
    ground_truth: dict[str, np.ndarray],
    tolerance: float | None = None,
) -> EvalReport:
    """Score predicted label sequences against ground truth.

    Both dicts map sequence id to a (T, H, W) label array; every
    predicted sequence must exist in the ground truth.
    """
    report = EvalReport()
    js, fs = [], []
    for seq_id in sorted(predictions):
        if seq_id not in ground_truth:
            raise InvalidInputError(f"no ground truth for sequence {seq_id!r}")
        scores = evaluate_sequence(predictions[seq_id], ground_truth[seq_id], tolerance)
        report.per_sequence[seq_id] = scores
        for obj_scores in scores.values():
            js.append(obj_scores["J"])
            fs.append(obj_scores["F"])
    if js:
        report.j_mean = float(np.mean(js))
        report.f_mean = float(np.mean(fs))
    return report


def write_report(report: EvalReport, path: str | Path) -> None:
    """Serialize a report as JSON: {"format_version", "sequences":
    {seq: {object_id: {"J", "F"}}}, "global": {"J", "F", "J&F"}}."""
    payload = {
        "format_version": REPORT_VERSION,
        "sequences": {
            seq: {str(oid): scores for oid, scores in per_obj.items()}
            for seq, per_obj in report.per_sequence.items()
        },
        "global": {"J": report.j_mean, "F": report.f_mean, "J&F": report.jf_mean},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
