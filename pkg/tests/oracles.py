"""Independent brute-force reference implementations for metric tests.

Deliberately naive: plain Python loops, no shared code with the package
beyond data types.  These pin the exact matching/AP/F1 protocols.
"""

import numpy as np


def naive_pair_iou(pred, truth, mode, frame):
    if mode == "box":
        a, b = pred.box, truth.box()
        iw = min(a.x1, b.x1) - max(a.x0, b.x0)
        ih = min(a.y1, b.y1) - max(a.y0, b.y0)
        if iw <= 0 or ih <= 0:
            return 0.0
        inter = iw * ih
        return inter / (a.area + b.area - inter)
    pm = pred.full_mask(*frame).bits
    tm = truth.mask.bits
    inter = int(np.count_nonzero(pm & tm))
    union = int(np.count_nonzero(pm | tm))
    return inter / union if union else 0.0


def naive_match(predictions, truths, iou_threshold, mode):
    """Returns {class: [(conf, is_tp), ...]}, {class: truth_count}."""
    frame = (truths[0].mask.width, truths[0].mask.height) if truths else (1, 1)
    classes = sorted({t.class_name for t in truths} | {p.class_name for p in predictions})
    rows = {}
    counts = {}
    for cls in classes:
        cls_truths = [t for t in truths if t.class_name == cls]
        counts[cls] = len(cls_truths)
        order = sorted(
            [p for p in predictions if p.class_name == cls],
            key=lambda p: -p.confidence,
        )
        used = set()
        out = []
        for p in order:
            best, best_k = 0.0, -1
            for k, t in enumerate(cls_truths):
                if k in used:
                    continue
                iou = naive_pair_iou(p, t, mode, frame)
                if iou > best:
                    best, best_k = iou, k
            if best_k >= 0 and best >= iou_threshold:
                used.add(best_k)
                out.append((p.confidence, True))
            else:
                out.append((p.confidence, False))
        rows[cls] = out
    return rows, counts


def naive_ap(rows, n_truth):
    """101-point interpolated AP from (conf, is_tp) rows of one class."""
    if n_truth == 0:
        raise ValueError("undefined")
    if not rows:
        return 0.0
    tp = fp = 0
    recalls, precisions = [], []
    for _, is_tp in rows:
        tp += bool(is_tp)
        fp += not is_tp
        recalls.append(tp / n_truth)
        precisions.append(tp / (tp + fp))
    total = 0.0
    for r in np.linspace(0, 1, 101):
        best = 0.0
        for rec, prec_idx in zip(recalls, range(len(recalls))):
            if rec >= r - 1e-12:
                best = max(precisions[prec_idx:])
                break
        total += best
    return total / 101.0


def naive_map(predictions, truths, mode):
    thresholds = [round(0.5 + 0.05 * k, 2) for k in range(10)]
    classes = sorted({t.class_name for t in truths})
    table = {}
    for thr in thresholds:
        rows, counts = naive_match(predictions, truths, thr, mode)
        table[thr] = {c: naive_ap(rows[c], counts[c]) for c in classes if counts[c]}
    usable = [c for c in classes if all(c in table[t] for t in thresholds)]
    if not usable:
        return 0.0, 0.0, table
    map50 = float(np.mean([table[0.5][c] for c in usable]))
    map5095 = float(np.mean([table[t][c] for t in thresholds for c in usable]))
    return map50, map5095, table


def naive_f1_at(predictions, truths, cutoff, iou_threshold, mode):
    """Re-run matching from scratch on the filtered prediction set."""
    kept = [p for p in predictions if p.confidence >= cutoff]
    rows, counts = naive_match(kept, truths, iou_threshold, mode)
    tp = sum(1 for r in rows.values() for _, is_tp in r if is_tp)
    fp = sum(1 for r in rows.values() for _, is_tp in r if not is_tp)
    fn = sum(counts.values()) - tp
    return 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0


def naive_nms(candidates, iou_threshold):
    """O(n^2) exhaustive greedy suppression on boxes."""
    def iou(a, b):
        iw = min(a.x1, b.x1) - max(a.x0, b.x0)
        ih = min(a.y1, b.y1) - max(a.y0, b.y0)
        if iw <= 0 or ih <= 0:
            return 0.0
        inter = iw * ih
        return inter / (a.area + b.area - inter)

    order = sorted(candidates, key=lambda c: (-c.confidence, c.box.x0, c.box.y0))
    kept = []
    for cand in order:
        if all(
            k.class_index != cand.class_index or iou(k.box, cand.box) <= iou_threshold
            for k in kept
        ):
            kept.append(cand)
    return kept


def naive_dedup(detections, iou_threshold, frame=(128, 128)):
    """O(n^2) greedy mask dedup with the (conf desc, area desc, x0 asc) key."""
    def miou(a, b):
        fa = a.full_mask(*frame).bits
        fb = b.full_mask(*frame).bits
        inter = int(np.count_nonzero(fa & fb))
        union = int(np.count_nonzero(fa | fb))
        return inter / union if union else 0.0

    order = sorted(
        detections, key=lambda d: (-d.confidence, -d.mask.count, d.box.x0)
    )
    kept = []
    for det in order:
        if all(
            k.class_name != det.class_name or miou(k, det) <= iou_threshold
            for k in kept
        ):
            kept.append(det)
    return kept
