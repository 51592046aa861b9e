"""Detection/segmentation scoring: P/R/F1, PR curves, mAP@0.5 and mAP@0.5:0.95.

Matching is greedy by confidence with single-use ground truths, the
benchmark convention.  Average precision uses 101-point interpolation.
Ground-truth masks may overlap each other (translucent objects); IoU is
computed per pair with no pixel exclusivity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import BinaryMask, BoundingBox, box_iou, mask_iou
from .inference import Detection

IOU_RANGE = tuple(round(0.50 + 0.05 * k, 2) for k in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class GroundTruth:
    """One annotated object: class plus full-frame mask."""

    class_name: str
    mask: BinaryMask

    def box(self) -> BoundingBox:
        rows = np.flatnonzero(self.mask.bits.any(axis=1))
        cols = np.flatnonzero(self.mask.bits.any(axis=0))
        return BoundingBox(
            float(cols[0]), float(rows[0]), float(cols[-1]) + 1.0, float(rows[-1]) + 1.0
        )


@dataclass
class MatchResult:
    """Per-class (confidence, is_true_positive) lists plus truth counts."""

    iou_threshold: float
    mode: str
    predictions: dict[str, list[tuple[float, bool]]] = field(default_factory=dict)
    truth_counts: dict[str, int] = field(default_factory=dict)

    def merge(self, other: "MatchResult") -> "MatchResult":
        if (self.iou_threshold, self.mode) != (other.iou_threshold, other.mode):
            raise ValueError("cannot merge match results with different settings")
        out = MatchResult(self.iou_threshold, self.mode)
        for src in (self, other):
            for cls, rows in src.predictions.items():
                out.predictions.setdefault(cls, []).extend(rows)
            for cls, n in src.truth_counts.items():
                out.truth_counts[cls] = out.truth_counts.get(cls, 0) + n
        for rows in out.predictions.values():
            rows.sort(key=lambda r: -r[0])
        return out

    def counts_at(self, cutoff: float) -> tuple[int, int, int]:
        """(TP, FP, FN) over all classes for predictions with conf >= cutoff."""
        tp = fp = 0
        for rows in self.predictions.values():
            for conf, is_tp in rows:
                if conf >= cutoff:
                    tp += is_tp
                    fp += not is_tp
        fn = sum(self.truth_counts.values()) - tp
        return tp, fp, fn


def _pair_iou(pred: Detection, truth: GroundTruth, mode: str, frame: tuple[int, int]) -> float:
    if mode == "box":
        return box_iou(pred.box, truth.box())
    return mask_iou(pred.full_mask(*frame), truth.mask)


def match(
    predictions: list[Detection],
    truths: list[GroundTruth],
    iou_threshold: float = 0.5,
    mode: str = "mask",
) -> MatchResult:
    """Greedy per-class assignment of predictions to ground truths.

    Predictions are visited in confidence order (ties broken by input
    index); each claims the highest-IoU unmatched truth at or above the
    threshold, else counts as a false positive.
    """
    if mode not in ("box", "mask"):
        raise ValueError(f"mode must be 'box' or 'mask', got {mode!r}")
    frame = (truths[0].mask.width, truths[0].mask.height) if truths else (1, 1)
    result = MatchResult(iou_threshold=iou_threshold, mode=mode)
    classes = {t.class_name for t in truths} | {p.class_name for p in predictions}
    for cls in sorted(classes):
        cls_truths = [t for t in truths if t.class_name == cls]
        cls_preds = sorted(
            (p for p in predictions if p.class_name == cls),
            key=lambda p: -p.confidence,
        )
        result.truth_counts[cls] = len(cls_truths)
        taken = [False] * len(cls_truths)
        rows: list[tuple[float, bool]] = []
        for pred in cls_preds:
            best_iou = 0.0
            best_idx = -1
            for k, truth in enumerate(cls_truths):
                if taken[k]:
                    continue
                iou = _pair_iou(pred, truth, mode, frame)
                if iou > best_iou:
                    best_iou, best_idx = iou, k
            if best_idx >= 0 and best_iou >= iou_threshold:
                taken[best_idx] = True
                rows.append((pred.confidence, True))
            else:
                rows.append((pred.confidence, False))
        result.predictions[cls] = rows
    return result


def average_precision(result: MatchResult, class_name: str) -> float:
    """101-point interpolated AP for one class.

    Precision is monotonized by a running max from the right, then sampled
    at 101 evenly spaced recall levels.
    """
    n_truth = result.truth_counts.get(class_name, 0)
    if n_truth == 0:
        raise ValueError(f"class {class_name!r} has no ground truths; AP undefined")
    rows = result.predictions.get(class_name, [])
    if not rows:
        return 0.0
    flags = np.array([is_tp for _, is_tp in rows], dtype=float)
    tp_cum = np.cumsum(flags)
    fp_cum = np.cumsum(1.0 - flags)
    recall = tp_cum / n_truth
    precision = tp_cum / (tp_cum + fp_cum)
    # envelope: best precision achievable at recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    sampled = np.zeros_like(RECALL_POINTS)
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    valid = idx < len(recall)
    sampled[valid] = envelope[idx[valid]]
    return float(sampled.mean())


def pr_curve(result: MatchResult, class_name: str) -> list[tuple[float, float]]:
    """Interpolated (recall, precision) samples at the 101 recall points."""
    n_truth = result.truth_counts.get(class_name, 0)
    rows = result.predictions.get(class_name, [])
    if n_truth == 0 or not rows:
        return [(float(r), 0.0) for r in RECALL_POINTS]
    flags = np.array([is_tp for _, is_tp in rows], dtype=float)
    tp_cum = np.cumsum(flags)
    fp_cum = np.cumsum(1.0 - flags)
    recall = tp_cum / n_truth
    precision = tp_cum / (tp_cum + fp_cum)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    out = []
    for r in RECALL_POINTS:
        k = np.searchsorted(recall, r, side="left")
        out.append((float(r), float(envelope[k]) if k < len(recall) else 0.0))
    return out


@dataclass(frozen=True)
class MapResult:
    map50: float
    map50_95: float
    per_threshold: dict[float, dict[str, float]]  # threshold -> class -> AP
    skipped_classes: tuple[str, ...]


def map_range(
    predictions: list[Detection],
    truths: list[GroundTruth],
    mode: str = "mask",
) -> MapResult:
    """AP per class per IoU threshold in 0.50..0.95 step 0.05."""
    table: dict[float, dict[str, float]] = {}
    truth_classes = sorted({t.class_name for t in truths})
    scored = [c for c in truth_classes if any(t.class_name == c for t in truths)]
    skipped = tuple(
        sorted(
            {p.class_name for p in predictions}
            - {t.class_name for t in truths}
        )
    )
    for thr in IOU_RANGE:
        result = match(predictions, truths, iou_threshold=thr, mode=mode)
        table[thr] = {cls: average_precision(result, cls) for cls in scored}
    if not scored:
        return MapResult(0.0, 0.0, table, skipped)
    map50 = float(np.mean([table[0.5][c] for c in scored]))
    map50_95 = float(np.mean([table[t][c] for t in IOU_RANGE for c in scored]))
    return MapResult(map50, map50_95, table, skipped)


def f1_confidence_curve(
    predictions: list[Detection],
    truths: list[GroundTruth],
    mode: str = "mask",
    iou_threshold: float = 0.5,
) -> tuple[list[tuple[float, float]], tuple[float, float]]:
    """F1 over confidence cutoffs; returns (curve, (best_cutoff, best_f1)).

    Cutoffs sweep the sorted unique prediction confidences plus 0 and 1.
    Greedy matching processes high-confidence predictions first, so the
    assignment for predictions above any cutoff is a prefix of the full
    assignment.  Ties in F1 resolve to the lower cutoff.
    """
    result = match(predictions, truths, iou_threshold=iou_threshold, mode=mode)
    cutoffs = sorted({0.0, 1.0} | {p.confidence for p in predictions})
    curve: list[tuple[float, float]] = []
    best = (0.0, -1.0)
    for cutoff in cutoffs:
        tp, fp, fn = result.counts_at(cutoff)
        f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
        curve.append((cutoff, f1))
        if f1 > best[1]:
            best = (cutoff, f1)
    return curve, best


@dataclass(frozen=True)
class EvaluationReport:
    """Scores at the F1-optimal operating point plus threshold-swept metrics."""

    mode: str
    operating_confidence: float
    precision: float
    recall: float
    f1: float
    per_class: dict[str, dict[str, float]]
    map50: float
    map50_95: float
    pr_curves: dict[str, list[tuple[float, float]]]
    f1_curve: list[tuple[float, float]]
    best_f1: tuple[float, float]

    def __post_init__(self) -> None:
        if self.map50_95 > self.map50 + 1e-12:
            raise ValueError(
                f"mAP50-95 ({self.map50_95}) exceeds mAP50 ({self.map50})"
            )

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "operating_confidence": self.operating_confidence,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_class": self.per_class,
            "map50": self.map50,
            "map50_95": self.map50_95,
            "best_f1": {"confidence": self.best_f1[0], "f1": self.best_f1[1]},
        }

    def to_text(self) -> str:
        lines = [
            f"mode: {self.mode}",
            f"operating confidence (F1-optimal): {self.operating_confidence:.4f}",
            f"{'class':<10} {'P':>7} {'R':>7} {'F1':>7}",
        ]
        for cls, row in sorted(self.per_class.items()):
            lines.append(
                f"{cls:<10} {row['precision']:>7.4f} {row['recall']:>7.4f} "
                f"{row['f1']:>7.4f}"
            )
        lines.append(
            f"{'all':<10} {self.precision:>7.4f} {self.recall:>7.4f} {self.f1:>7.4f}"
        )
        lines.append(f"mAP@0.5:      {self.map50:.4f}")
        lines.append(f"mAP@0.5:0.95: {self.map50_95:.4f}")
        return "\n".join(lines)


def evaluate(
    scenes: list[tuple[list[Detection], list[GroundTruth]]],
    mode: str = "mask",
    iou_threshold: float = 0.5,
) -> EvaluationReport:
    """Score a set of (predictions, truths) scenes into one report.

    The operating point is the F1-optimal confidence cutoff; P/R/F1 are
    reported there and labelled as such.
    """
    merged = MatchResult(iou_threshold=iou_threshold, mode=mode)
    all_preds: list[Detection] = []
    for preds, truths in scenes:
        merged = merged.merge(match(preds, truths, iou_threshold, mode))
        all_preds.extend(preds)

    cutoffs = sorted({0.0, 1.0} | {p.confidence for p in all_preds})
    best = (0.0, -1.0)
    curve = []
    for cutoff in cutoffs:
        tp, fp, fn = merged.counts_at(cutoff)
        f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
        curve.append((cutoff, f1))
        if f1 > best[1]:
            best = (cutoff, f1)
    operating = best[0]

    per_class: dict[str, dict[str, float]] = {}
    for cls in sorted(merged.truth_counts):
        rows = [r for r in merged.predictions.get(cls, []) if r[0] >= operating]
        tp = sum(1 for _, is_tp in rows if is_tp)
        fp = len(rows) - tp
        fn = merged.truth_counts[cls] - tp
        p = tp / (tp + fp) if (tp + fp) else 0.0
        r = tp / (tp + fn) if (tp + fn) else 0.0
        f1 = 2 * p * r / (p + r) if (p + r) else 0.0
        per_class[cls] = {"precision": p, "recall": r, "f1": f1}

    tp, fp, fn = merged.counts_at(operating)
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    f1 = (
        2 * precision * recall / (precision + recall)
        if (precision + recall)
        else 0.0
    )

    all_truths = [t for _, truths in scenes for t in truths]
    # mAP over pooled scenes: translate each scene into a shared frame is not
    # needed because matching is per scene; recompute per threshold and merge
    table: dict[float, dict[str, float]] = {}
    scored = sorted({t.class_name for t in all_truths})
    for thr in IOU_RANGE:
        m = MatchResult(iou_threshold=thr, mode=mode)
        for preds, truths in scenes:
            m = m.merge(match(preds, truths, thr, mode))
        table[thr] = {
            cls: average_precision(m, cls) for cls in scored if m.truth_counts.get(cls)
        }
    usable = [c for c in scored if all(c in table[t] for t in IOU_RANGE)]
    map50 = float(np.mean([table[0.5][c] for c in usable])) if usable else 0.0
    map50_95 = (
        float(np.mean([table[t][c] for t in IOU_RANGE for c in usable]))
        if usable
        else 0.0
    )

    base = merged if merged.truth_counts else MatchResult(iou_threshold, mode)
    pr_curves = {cls: pr_curve(base, cls) for cls in sorted(base.truth_counts)}

    return EvaluationReport(
        mode=mode,
        operating_confidence=operating,
        precision=precision,
        recall=recall,
        f1=f1,
        per_class=per_class,
        map50=map50,
        map50_95=map50_95,
        pr_curves=pr_curves,
        f1_curve=curve,
        best_f1=best,
    )


def export_curves(report: EvaluationReport) -> dict[str, str]:
    """Plain-text tab-separated tables for plotting."""
    out: dict[str, str] = {}
    for cls, curve in report.pr_curves.items():
        lines = ["recall\tprecision"]
        lines += [f"{r:.4f}\t{p:.6f}" for r, p in curve]
        out[f"pr_{cls}.tsv"] = "\n".join(lines) + "\n"
    lines = ["confidence\tf1"]
    lines += [f"{c:.6f}\t{f:.6f}" for c, f in report.f1_curve]
    out["f1_confidence.tsv"] = "\n".join(lines) + "\n"
    return out
