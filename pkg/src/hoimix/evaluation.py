"""Detection mAP with joint-IoU pair matching.

A prediction is a true positive only if its interaction class is correct and
both its human and object boxes overlap an unmatched ground-truth pair of
that class, in the same image, with IoU at or above 0.5 (the binding score
is the minimum of the two overlaps). Average precision uses all-point
interpolation of the precision-recall curve. Means are reported over the
full class set and over the rare / non-rare partitions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .batching import build_pairs
from .geometry import Box, pair_iou
from .model import ModelParams, infer_pairs
from .synth_world import SynthImage

MATCH_IOU = 0.5

CSV_HEADER = "run_id,ws_fs_us,policy,hes,seed,map_full,map_rare,map_nonrare"


@dataclass(frozen=True)
class HOIPrediction:
    image_id: int
    human_box: Box
    object_box: Box
    hoi_class: int
    score: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.score):
            raise ValueError("prediction score must be finite")


@dataclass(eq=False)
class EvalReport:
    """Per-class APs (NaN marks classes absent from the test ground truth)
    and their means over the full / rare / non-rare class subsets."""

    ap_per_class: np.ndarray
    map_full: float
    map_rare: float
    map_nonrare: float
    rare_class_ids: frozenset[int]


def match_and_ap(
    predictions: list[HOIPrediction],
    gt_pairs: list[tuple[int, Box, Box]],
) -> float | None:
    """Average precision for a single class.

    Predictions are ranked by descending score (ties broken by insertion
    order); each is greedily matched to the highest-IoU unmatched
    ground-truth pair of the same image. Returns None when there is no
    ground truth for the class.
    """
    if not gt_pairs:
        return None
    order = sorted(range(len(predictions)), key=lambda i: (-predictions[i].score, i))
    gt_by_image: dict[int, list[int]] = {}
    for idx, (image_id, _, _) in enumerate(gt_pairs):
        gt_by_image.setdefault(image_id, []).append(idx)
    matched = [False] * len(gt_pairs)

    tp = np.zeros(len(predictions))
    fp = np.zeros(len(predictions))
    for rank, idx in enumerate(order):
        pred = predictions[idx]
        best_iou, best_gt = 0.0, -1
        for gt_idx in gt_by_image.get(pred.image_id, ()):
            if matched[gt_idx]:
                continue
            overlap = pair_iou(
                (pred.human_box, pred.object_box), (gt_pairs[gt_idx][1], gt_pairs[gt_idx][2])
            )
            if overlap > best_iou:
                best_iou, best_gt = overlap, gt_idx
        if best_gt >= 0 and best_iou >= MATCH_IOU:
            matched[best_gt] = True
            tp[rank] = 1.0
        else:
            fp[rank] = 1.0

    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(fp)
    recall = cum_tp / len(gt_pairs)
    precision = cum_tp / np.maximum(cum_tp + cum_fp, 1.0)

    # all-point interpolation: running max of precision from the right,
    # integrated over recall steps
    recall = np.concatenate([[0.0], recall])
    precision = np.concatenate([[1.0], precision])
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    ap = float(np.sum((recall[1:] - recall[:-1]) * precision[1:]))
    return ap


def collect_predictions(
    params: ModelParams,
    images: list[SynthImage],
    *,
    feature_dim: int,
    top_k: int = 30,
) -> list[HOIPrediction]:
    """Score every (pair, class) of every image with the model.

    Per-image entries are emitted in ranked order (infer_pairs), so the
    global sort's insertion-index tiebreak is deterministic.
    """
    predictions: list[HOIPrediction] = []
    for image in images:
        pairs = build_pairs(image, feature_dim, top_k=top_k)
        features = np.stack([p.features for p in pairs])
        for i, j, score in infer_pairs(params, features):
            predictions.append(
                HOIPrediction(
                    image_id=image.image_id,
                    human_box=pairs[i].human.box,
                    object_box=pairs[i].object.box,
                    hoi_class=j,
                    score=score,
                )
            )
    return predictions


def evaluate_predictions(
    predictions: list[HOIPrediction],
    images: list[SynthImage],
    rare_class_ids: set[int] | frozenset[int],
    n_classes: int,
) -> EvalReport:
    """Compute per-class AP and the full / rare / non-rare means."""
    if not images:
        raise ValueError("cannot evaluate on an empty test set")
    preds_by_class: dict[int, list[HOIPrediction]] = {c: [] for c in range(n_classes)}
    for pred in predictions:
        preds_by_class[pred.hoi_class].append(pred)
    gt_by_class: dict[int, list[tuple[int, Box, Box]]] = {c: [] for c in range(n_classes)}
    for image in images:
        for t in image.gt_triplets:
            gt_by_class[t.hoi_class].append((image.image_id, t.human_box, t.object_box))

    ap = np.full(n_classes, np.nan)
    for c in range(n_classes):
        value = match_and_ap(preds_by_class[c], gt_by_class[c])
        if value is not None:
            ap[c] = value

    defined = ~np.isnan(ap)
    rare_mask = np.zeros(n_classes, dtype=bool)
    for c in rare_class_ids:
        if 0 <= c < n_classes:
            rare_mask[c] = True

    def subset_mean(mask: np.ndarray) -> float:
        selected = ap[mask & defined]
        return float(selected.mean()) if selected.size else float("nan")

    return EvalReport(
        ap_per_class=ap,
        map_full=subset_mean(np.ones(n_classes, dtype=bool)),
        map_rare=subset_mean(rare_mask),
        map_nonrare=subset_mean(~rare_mask),
        rare_class_ids=frozenset(rare_class_ids),
    )


def evaluate(
    params: ModelParams,
    images: list[SynthImage],
    rare_class_ids: set[int] | frozenset[int],
    *,
    feature_dim: int,
    top_k: int = 30,
) -> EvalReport:
    """Run the model over a fully-annotated test set and score it."""
    predictions = collect_predictions(params, images, feature_dim=feature_dim, top_k=top_k)
    return evaluate_predictions(predictions, images, rare_class_ids, params.n_classes)


def report_to_dict(report: EvalReport) -> dict:
    """Structured record form of an EvalReport."""
    return {
        "map_full": report.map_full,
        "map_rare": report.map_rare,
        "map_nonrare": report.map_nonrare,
        "rare_class_ids": sorted(report.rare_class_ids),
        "ap_per_class": [None if math.isnan(v) else float(v) for v in report.ap_per_class],
    }


def report_csv_row(
    report: EvalReport,
    run_id: str,
    ws_fs_us: str,
    policy: str,
    hes: bool,
    seed: int,
) -> str:
    """Flat CSV row matching CSV_HEADER, for experiment aggregation."""
    return ",".join(
        [
            run_id,
            ws_fs_us,
            policy,
            "on" if hes else "off",
            str(seed),
            repr(float(report.map_full)),
            repr(float(report.map_rare)),
            repr(float(report.map_nonrare)),
        ]
    )
