"""
Pixel-level precision / recall / F-measure for main-text and side-text
"""
import logging
from typing import Dict, List, Mapping, Tuple

import numpy as np

from errors import ShapeError
from models import SegLabel
from schemas import BaselineRow, ClassCounts, ClassScores, ConfusionCounts, DocumentScores, FMeasureReport

logger = logging.getLogger(__name__)

# Published F-measures (percent) for side-by-side display
BASELINES: Tuple[BaselineRow, ...] = (
    BaselineRow(method="Bukhari et al.", main_f=95.02, side_f=94.68),
    BaselineRow(method="Kurar et al.", main_f=95.00, side_f=80.00),
    BaselineRow(method="Alaasam et al.", main_f=98.59, side_f=96.89),
    BaselineRow(method="Proposed", main_f=98.56, side_f=96.97),
)


def _labels(seg) -> np.ndarray:
    return np.asarray(getattr(seg, "labels", seg))


def confusion(pred, gt, cls: SegLabel) -> ClassCounts:
    """
    Counts for one class over the pixels that are foreground in gt or pred.
    """
    p, g = _labels(pred), _labels(gt)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and ground truth {g.shape} differ in shape")
    valid = (p != SegLabel.BACKGROUND) | (g != SegLabel.BACKGROUND)
    pc = (p == cls) & valid
    gc = (g == cls) & valid
    return ClassCounts(
        tp=int(np.count_nonzero(pc & gc)),
        fp=int(np.count_nonzero(pc & ~gc)),
        fn=int(np.count_nonzero(~pc & gc)),
    )


def page_confusion(pred, gt) -> ConfusionCounts:
    return ConfusionCounts(main=confusion(pred, gt, SegLabel.MAIN_TEXT),
                           side=confusion(pred, gt, SegLabel.SIDE_TEXT))


def f_measure(counts: ClassCounts) -> Tuple[float, float, float]:
    """(precision, recall, F); any 0/0 is 0"""
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f


def scores(counts: ClassCounts) -> ClassScores:
    precision, recall, f = f_measure(counts)
    return ClassScores(precision=precision, recall=recall, f_measure=f)


def evaluate_corpus(preds: Mapping[str, object], gts: Mapping[str, object]) -> FMeasureReport:
    """
    Per-document scores plus micro-averaged aggregates. Ground-truth documents
    without a prediction are listed and left out of the aggregate.
    """
    documents: List[DocumentScores] = []
    missing: List[str] = []
    total = ConfusionCounts()
    for doc_id in sorted(gts):
        if doc_id not in preds:
            missing.append(doc_id)
            continue
        counts = page_confusion(preds[doc_id], gts[doc_id])
        total = total + counts
        documents.append(DocumentScores(doc_id=doc_id, counts=counts,
                                        main=scores(counts.main), side=scores(counts.side)))
    if missing:
        logger.warning(f"{len(missing)} ground-truth documents have no prediction: {', '.join(missing)}")
    extra = sorted(set(preds) - set(gts))
    if extra:
        logger.warning(f"Ignoring predictions without ground truth: {', '.join(extra)}")

    return FMeasureReport(
        documents=documents,
        aggregate_counts=total,
        main=scores(total.main),
        side=scores(total.side),
        missing=missing,
        baselines=list(BASELINES),
    )


def summary_row(report: FMeasureReport) -> Dict[str, float]:
    return {"main_f": 100 * report.main.f_measure, "side_f": 100 * report.side.f_measure}
