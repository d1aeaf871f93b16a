#!/usr/bin/env python3
"""
LSMVOS - Evaluation Metrics
Region similarity J, boundary F-measure F and per-sequence statistics
(mean, recall, decay) following the DAVIS benchmark protocol.

Boundary matching uses square dilation (Chebyshev tolerance) rather than
exact bipartite matching.
"""

import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy import ndimage

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("metrics")

RECALL_THRESHOLD = 0.5


@dataclass(frozen=True)
class FrameScore:
    frame: int
    obj_id: int
    j: float
    f: float

    def __post_init__(self):
        if not (0.0 <= self.j <= 1.0 and 0.0 <= self.f <= 1.0):
            raise ValueError(f"FrameScore out of range: j={self.j} f={self.f}")


class SequenceStats(NamedTuple):
    mean: float
    recall: float
    decay: float

    def to_dict(self) -> Dict:
        return {"mean": self.mean, "recall": self.recall, "decay": self.decay}


def _pair(pred, gt) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred) > 0
    gt = np.asarray(gt) > 0
    if pred.shape != gt.shape:
        raise ValueError(f"mask extents differ: pred {pred.shape} vs gt {gt.shape}")
    return pred, gt


# ═══════════════════════════════════════════════════════════════
# FRAME METRICS
# ═══════════════════════════════════════════════════════════════

def region_similarity(pred, gt) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    pred, gt = _pair(pred, gt)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def boundary_map(mask) -> np.ndarray:
    """Foreground pixels with at least one in-image 4-neighbor in the background."""
    m = np.asarray(mask) > 0
    p = np.pad(m, 1, mode="edge")
    inner = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return m & ~inner


def default_tolerance(shape: Tuple[int, int], ratio: Optional[float] = None) -> int:
    """ceil(ratio * diagonal); ratio defaults to metrics.boundary_ratio from settings."""
    if ratio is None:
        from settings import get_settings
        ratio = get_settings().boundary_ratio
    if ratio <= 0:
        raise ValueError(f"boundary ratio must be > 0, got {ratio}")
    h, w = shape[:2]
    return int(math.ceil(ratio * math.hypot(h, w)))


def contour_accuracy(pred, gt, tol: Optional[int] = None) -> float:
    """Boundary F-measure with a Chebyshev tolerance of `tol` pixels."""
    pred, gt = _pair(pred, gt)
    if tol is None:
        tol = default_tolerance(gt.shape)
    if tol < 0:
        raise ValueError(f"tolerance must be >= 0, got {tol}")

    pb, gb = boundary_map(pred), boundary_map(gt)
    n_pred, n_gt = int(pb.sum()), int(gb.sum())
    if n_pred == 0 and n_gt == 0:
        return 1.0
    if n_pred == 0 or n_gt == 0:
        return 0.0

    square = np.ones((2 * tol + 1, 2 * tol + 1), dtype=bool)
    gt_zone = ndimage.binary_dilation(gb, structure=square)
    pred_zone = ndimage.binary_dilation(pb, structure=square)
    precision = (pb & gt_zone).sum() / n_pred
    recall = (gb & pred_zone).sum() / n_gt
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def sequence_stats(scores: Sequence[float]) -> SequenceStats:
    """Mean, fraction above 0.5, and first-quarter minus last-quarter mean."""
    s = np.asarray(list(scores), dtype=np.float64)
    if s.size == 0:
        raise ValueError("sequence_stats: no scores")
    q = int(math.ceil(s.size / 4))
    return SequenceStats(
        mean=float(s.mean()),
        recall=float(np.mean(s > RECALL_THRESHOLD)),
        decay=float(s[:q].mean() - s[-q:].mean()),
    )


# ═══════════════════════════════════════════════════════════════
# SEQUENCE EVALUATION
# ═══════════════════════════════════════════════════════════════

def evaluated_frames(total: int) -> List[int]:
    """Frame indices that enter the statistics: first and last annotated frames are skipped."""
    if total >= 3:
        return list(range(1, total - 1))
    if total == 2:
        return [1]
    return list(range(total))


def evaluate_sequence(pred_maps: Sequence[np.ndarray], gt_maps: Sequence[Optional[np.ndarray]],
                      tol: Optional[int] = None,
                      object_ids: Optional[Sequence[int]] = None) -> List[FrameScore]:
    """Per-frame, per-object J/F over label maps (gt entries may be None for unannotated frames)."""
    if len(pred_maps) != len(gt_maps):
        raise ValueError(f"{len(pred_maps)} predicted frames vs {len(gt_maps)} ground-truth frames")
    annotated = [t for t, g in enumerate(gt_maps) if g is not None]
    if not annotated:
        raise ValueError("evaluate_sequence: no annotated frames")
    if object_ids is None:
        ids = set()
        for t in annotated:
            ids.update(int(i) for i in np.unique(gt_maps[t]) if i != 0)
        object_ids = sorted(ids)

    scores = []
    for pos in evaluated_frames(len(annotated)):
        t = annotated[pos]
        pred, gt = np.asarray(pred_maps[t]), np.asarray(gt_maps[t])
        frame_tol = default_tolerance(gt.shape) if tol is None else tol
        for obj_id in object_ids:
            p, g = pred == obj_id, gt == obj_id
            scores.append(FrameScore(t, obj_id, region_similarity(p, g),
                                     contour_accuracy(p, g, frame_tol)))
    return scores


@dataclass
class ObjectReport:
    j: SequenceStats
    f: SequenceStats
    frames: int

    def to_dict(self) -> Dict:
        return {"j": self.j.to_dict(), "f": self.f.to_dict(), "frames": self.frames}


@dataclass
class EvalReport:
    objects: Dict[str, ObjectReport]
    j_mean: float
    f_mean: float
    timing: Dict = field(default_factory=dict)

    @property
    def jf_mean(self) -> float:
        return (self.j_mean + self.f_mean) / 2.0

    def to_dict(self) -> Dict:
        return {
            "objects": {k: v.to_dict() for k, v in self.objects.items()},
            "j_mean": self.j_mean,
            "f_mean": self.f_mean,
            "jf_mean": self.jf_mean,
            "timing": self.timing,
        }

    def save(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
        logger.info(f"Eval report written | {path} | J&F={self.jf_mean:.4f}")


def aggregate(scores: Dict[str, List[FrameScore]], timing: Optional[Dict] = None) -> EvalReport:
    """
    scores maps a sequence name to its FrameScores. Objects are keyed
    "<sequence>/<id>"; global J and F are means over objects.
    """
    objects: Dict[str, ObjectReport] = {}
    for seq, seq_scores in scores.items():
        by_obj: Dict[int, List[FrameScore]] = {}
        for s in sorted(seq_scores, key=lambda s: (s.obj_id, s.frame)):
            by_obj.setdefault(s.obj_id, []).append(s)
        for obj_id, items in by_obj.items():
            objects[f"{seq}/{obj_id}"] = ObjectReport(
                j=sequence_stats([s.j for s in items]),
                f=sequence_stats([s.f for s in items]),
                frames=len(items),
            )
    if not objects:
        raise ValueError("aggregate: no frame scores to aggregate")
    j_mean = float(np.mean([o.j.mean for o in objects.values()]))
    f_mean = float(np.mean([o.f.mean for o in objects.values()]))
    return EvalReport(objects, j_mean, f_mean, timing or {})


def _sequence_dirs(root: str) -> Dict[str, str]:
    if not os.path.isdir(root):
        raise ValueError(f"{root}: not a directory")
    if any(f.lower().endswith(".png") for f in os.listdir(root)):
        return {os.path.basename(os.path.normpath(root)): root}
    return {d: os.path.join(root, d) for d in sorted(os.listdir(root))
            if os.path.isdir(os.path.join(root, d))}


def evaluate_directories(pred_dir: str, gt_dir: str, tol: Optional[int] = None) -> EvalReport:
    """
    Evaluate indexed-PNG predictions against annotations. Either directory
    holds PNGs of one sequence, or one subdirectory per sequence.
    """
    from dataio import list_label_maps, read_label_map

    gt_seqs = _sequence_dirs(gt_dir)
    if not gt_seqs:
        raise ValueError(f"{gt_dir}: no annotation PNGs or sequence directories")
    single = len(gt_seqs) == 1 and os.path.normpath(next(iter(gt_seqs.values()))) == os.path.normpath(gt_dir)

    scores: Dict[str, List[FrameScore]] = {}
    for name, gdir in gt_seqs.items():
        pdir = pred_dir if single else os.path.join(pred_dir, name)
        gt_files = list_label_maps(gdir)
        pred_files = {os.path.basename(p): p for p in list_label_maps(pdir)}
        missing = [os.path.basename(g) for g in gt_files if os.path.basename(g) not in pred_files]
        if missing:
            raise ValueError(f"{pdir}: missing predictions for {missing[:3]}"
                             f"{' ...' if len(missing) > 3 else ''}")
        gts = [read_label_map(g) for g in gt_files]
        preds = [read_label_map(pred_files[os.path.basename(g)]) for g in gt_files]
        scores[name] = evaluate_sequence(preds, gts, tol)
        logger.info(f"Evaluated {name} | {len(gt_files)} frames | {len(scores[name])} scores")
    return aggregate(scores)


if __name__ == "__main__":
    a = np.zeros((20, 20), np.uint8); a[0:10, 0:10] = 1
    b = np.zeros((20, 20), np.uint8); b[5:15, 0:10] = 1
    print(f"\nJ(half overlap) = {region_similarity(a, b):.4f}")
    print(f"F(shift 1, tol 2) = {contour_accuracy(a, np.roll(a, 1, axis=1), 2):.4f}")
    print(f"stats([0.9, 0.8, 0.7, 0.6]) = {sequence_stats([0.9, 0.8, 0.7, 0.6])}")
