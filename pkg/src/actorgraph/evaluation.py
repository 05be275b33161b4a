"""Frame-level mAP at IoU 0.5 on the middle frame, grouped by action family.

Matching is greedy per clip and class: predictions in descending score (ties
by insertion order) each take the unconsumed ground-truth box of that class
with the highest IoU, provided the IoU exceeds the threshold. AP is the area
under the all-points interpolated precision/recall curve; tied scores enter
the curve together as one operating point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .domain import ActionVocabulary, Box, ClipSample, iou


@dataclass
class ScoredPrediction:
    clip_id: str
    box: Box
    scores: np.ndarray   # one per vocabulary class

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not np.isfinite(self.scores).all() or (self.scores < 0).any() or (self.scores > 1).any():
            raise ValueError("prediction scores must be finite and in [0, 1]")


def match_detections(pred_boxes: Sequence[Box], pred_scores: Sequence[float], gt_boxes: Sequence[Box],
                     iou_thresh: float = 0.5) -> list[bool]:
    """TP flags for one clip and class, in the order predictions were given."""
    order = sorted(range(len(pred_boxes)), key=lambda k: -pred_scores[k])
    used = [False] * len(gt_boxes)
    flags = [False] * len(pred_boxes)
    for k in order:
        best, best_iou = -1, iou_thresh
        for g, gt in enumerate(gt_boxes):
            if used[g]:
                continue
            v = iou(pred_boxes[k], gt)
            if v > best_iou:
                best, best_iou = g, v
        if best >= 0:
            used[best] = True
            flags[k] = True
    return flags


def average_precision(flags: Sequence[bool], n_gt: int, scores: Sequence[float] | None = None) -> float:
    """All-points interpolated AP of flags already sorted by descending score.

    With ``scores`` given, runs of equal scores form a single PR point.
    """
    if n_gt < 1:
        raise ValueError("AP is undefined without ground truth")
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    if scores is not None:
        s = np.asarray(scores, dtype=np.float64)
        last_of_run = np.append(s[1:] != s[:-1], True)
        tp, fp = tp[last_of_run], fp[last_of_run]
    recall = np.concatenate([[0.0], tp / n_gt])
    precision = np.concatenate([[1.0], tp / (tp + fp)])
    # precision envelope, non-increasing from right to left
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum((recall[1:] - recall[:-1]) * precision[1:]))


@dataclass
class EvalReport:
    class_names: list[str]
    groups: dict[str, list[str]]
    per_class_ap: dict[str, Optional[float]]
    n_gt: dict[str, int]
    mean_ap: Optional[float]
    group_ap: dict[str, Optional[float]]
    min_gt: int
    iou_thresh: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"class_names": self.class_names, "groups": self.groups,
                "per_class_ap": self.per_class_ap, "n_gt": self.n_gt, "mean_ap": self.mean_ap,
                "group_ap": self.group_ap, "min_gt": self.min_gt, "iou_thresh": self.iou_thresh,
                **({"extra": self.extra} if self.extra else {})}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        width = max(len(n) for n in self.class_names + ["mean AP"]) + 2
        lines = [f"{'class':<{width}}{'group':<14}{'n_gt':>6}{'AP':>9}"]
        group_of = {n: g for g, names in self.groups.items() for n in names}
        for n in self.class_names:
            ap = self.per_class_ap[n]
            lines.append(f"{n:<{width}}{group_of[n]:<14}{self.n_gt[n]:>6}{_fmt(ap):>9}")
        for g, v in self.group_ap.items():
            lines.append(f"{g + ' mean':<{width + 20}}{_fmt(v):>9}")
        lines.append(f"{'mean AP':<{width + 20}}{_fmt(self.mean_ap):>9}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        group_of = {n: g for g, names in self.groups.items() for n in names}
        rows = ["class,group,n_gt,ap"]
        for n in self.class_names:
            ap = self.per_class_ap[n]
            rows.append(f"{n},{group_of[n]},{self.n_gt[n]},{'' if ap is None else repr(ap)}")
        return "\n".join(rows) + "\n"


def _fmt(v: Optional[float]) -> str:
    return "-" if v is None else f"{v:.4f}"


def class_ap(predictions: list[ScoredPrediction], clips: list[ClipSample], c: int,
             iou_thresh: float = 0.5) -> tuple[Optional[float], int]:
    by_clip: dict[str, list[ScoredPrediction]] = {}
    for p in predictions:
        by_clip.setdefault(p.clip_id, []).append(p)
    scored: list[tuple[float, bool]] = []
    n_gt = 0
    for clip in clips:
        gts = [a.box for a in clip.gt_actors if a.labels[c]]
        n_gt += len(gts)
        preds = by_clip.get(clip.clip_id, [])
        flags = match_detections([p.box for p in preds], [p.scores[c] for p in preds], gts, iou_thresh)
        scored.extend((p.scores[c], f) for p, f in zip(preds, flags))
    if n_gt == 0:
        return None, 0
    order = sorted(range(len(scored)), key=lambda k: -scored[k][0])
    return (average_precision([scored[k][1] for k in order], n_gt, [scored[k][0] for k in order]),
            n_gt)


def report(predictions: list[ScoredPrediction], clips: list[ClipSample], vocabulary: ActionVocabulary,
           min_gt: int = 5, iou_thresh: float = 0.5) -> EvalReport:
    for clip in clips:
        if clip.vocabulary != vocabulary:
            raise ValueError(f"clip {clip.clip_id} uses a different action vocabulary")
    for p in predictions:
        if len(p.scores) != len(vocabulary):
            raise ValueError(f"prediction for {p.clip_id} has {len(p.scores)} scores, "
                             f"vocabulary has {len(vocabulary)} classes")
    names = list(vocabulary.names)
    per_class: dict[str, Optional[float]] = {}
    counts: dict[str, int] = {}
    for c, name in enumerate(names):
        ap, n = class_ap(predictions, clips, c, iou_thresh)
        counts[name] = n
        per_class[name] = ap if n >= max(min_gt, 1) else None
    groups = {g: list(v) for g, v in vocabulary.groups().items()}

    def mean(keys):
        vals = [per_class[k] for k in keys if per_class[k] is not None]
        return float(np.mean(vals)) if vals else None

    return EvalReport(class_names=names, groups=groups, per_class_ap=per_class, n_gt=counts,
                      mean_ap=mean(names), group_ap={g: mean(v) for g, v in groups.items()},
                      min_gt=min_gt, iou_thresh=iou_thresh)


def write_report(report_: EvalReport, stem: str | Path) -> list[Path]:
    """``stem.json``, ``stem.txt`` (aligned table) and ``stem.csv`` (per class)."""
    stem = Path(stem)
    out = []
    for suffix, text in ((".json", report_.to_json()), (".txt", report_.to_table()),
                         (".csv", report_.to_csv())):
        p = stem.with_name(stem.name + suffix)
        p.write_text(text)
        out.append(p)
    return out
