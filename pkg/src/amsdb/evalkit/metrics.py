"""Binarisation quality metrics on {0,1} images with ink = 1."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np

from ..errors import DataError, ShapeError
from .skeleton import skeletonize

PSNR_CAP = 100.0


class UndefinedMetricError(DataError):
    """Raised when a metric has no value, e.g. recall against an empty ground truth."""


def _pair(pred, gt) -> Tuple[np.ndarray, np.ndarray]:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
    return pred.astype(bool), gt.astype(bool)


def confusion(pred, gt) -> Tuple[int, int, int, int]:
    """Pixel counts ``(TP, FP, FN, TN)``."""
    p, g = _pair(pred, gt)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return tp, fp, fn, p.size - tp - fp - fn


def psnr(pred, gt) -> float:
    """10·log10(1/MSE) on binary pixels; identical images give the 100 dB cap."""
    p, g = _pair(pred, gt)
    errors = int(np.count_nonzero(p != g))
    if errors == 0:
        return PSNR_CAP
    # 1/MSE = pixels/errors, kept as a ratio of integers
    return min(PSNR_CAP, 10.0 * math.log10(p.size / errors))


def f_measure(pred, gt) -> Tuple[float, float, float]:
    """``(precision, recall, FM)`` in percent.

    Precision of an empty prediction is taken as 0.  The measure is not
    symmetric: swapping arguments exchanges precision and recall, and an
    empty ground truth has no recall at all (``UndefinedMetricError``).
    """
    tp, fp, fn, _ = confusion(pred, gt)
    return scores_from_counts(tp, fp, fn)


def scores_from_counts(tp: int, fp: int, fn: int) -> Tuple[float, float, float]:
    """Precision, recall and their harmonic mean (percent) from integer counts.

    The harmonic mean is evaluated in closed form, ``2·TP / (2·TP + FP + FN)``,
    so results depend only on the counts and never on rounding order.
    """
    if tp + fn == 0:
        raise UndefinedMetricError("ground truth has no foreground; recall is undefined")
    p = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    r = 100.0 * tp / (tp + fn)
    fm = 200.0 * tp / (2 * tp + fp + fn) if tp else 0.0
    return p, r, fm


def pseudo_scores_from_counts(tp: int, fp: int, sk_hit: int, sk_total: int) -> Tuple[float, float, float]:
    """Pseudo-recall, precision and F_ps (percent) from integer counts.

    ``F_ps = 2·P·Rps/(P+Rps)`` with ``P = tp/(tp+fp)`` and
    ``Rps = sk_hit/sk_total`` reduces to ``2·tp·sk_hit / (tp·sk_total + sk_hit·(tp+fp))``.
    """
    if sk_total == 0:
        raise UndefinedMetricError("ground truth has no foreground; pseudo-recall is undefined")
    pr = 100.0 * sk_hit / sk_total
    prec = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    denom = tp * sk_total + sk_hit * (tp + fp)
    f = 200.0 * tp * sk_hit / denom if tp and sk_hit else 0.0
    return pr, prec, f


def pseudo_f_measure(pred, gt, skeleton: Optional[np.ndarray] = None) -> Tuple[float, float, float]:
    """``(pseudo_recall, precision, F_ps)`` in percent.

    Recall is measured against the skeleton of the ground truth, precision
    against the full ground truth.
    """
    p, g = _pair(pred, gt)
    if not g.any():
        raise UndefinedMetricError("ground truth has no foreground; pseudo-recall is undefined")
    sk = skeletonize(g).astype(bool) if skeleton is None else np.asarray(skeleton).astype(bool)
    tp, fp = int(np.count_nonzero(p & g)), int(np.count_nonzero(p & ~g))
    return pseudo_scores_from_counts(tp, fp, int(np.count_nonzero(p & sk)), int(np.count_nonzero(sk)))


@dataclass
class MetricsReport:
    psnr: Optional[float] = None
    fmeasure: Optional[float] = None
    pseudo_fmeasure: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    pseudo_recall: Optional[float] = None
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    error: Optional[str] = None

    NUMERIC = ("psnr", "fmeasure", "pseudo_fmeasure", "precision", "recall", "pseudo_recall")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_record(self, **extra) -> str:
        """Flat ``key=value`` line; undefined values are written as ``error``."""
        items = dict(extra)
        for k, v in self.to_dict().items():
            if k == "error":
                if v:
                    items[k] = v.replace(" ", "_")
                continue
            if v is None:
                items[k] = "error"
            elif isinstance(v, float):
                items[k] = f"{v:.4f}"
            else:
                items[k] = v
        return " ".join(f"{k}={v}" for k, v in items.items())


def evaluate(pred, gt) -> MetricsReport:
    """All metrics for one pair; an empty ground truth yields an error-state report."""
    tp, fp, fn, tn = confusion(pred, gt)
    rep = MetricsReport(psnr=psnr(pred, gt), tp=tp, fp=fp, fn=fn, tn=tn)
    try:
        rep.precision, rep.recall, rep.fmeasure = f_measure(pred, gt)
        rep.pseudo_recall, _, rep.pseudo_fmeasure = pseudo_f_measure(pred, gt)
    except UndefinedMetricError as exc:
        rep.precision = rep.recall = rep.fmeasure = None
        rep.pseudo_recall = rep.pseudo_fmeasure = None
        rep.error = str(exc)
    return rep


def mean_report(reports) -> MetricsReport:
    """Unweighted mean over images; a metric that is undefined on any row is undefined in the mean."""
    reports = list(reports)
    out = MetricsReport()
    for key in MetricsReport.NUMERIC:
        vals = [getattr(r, key) for r in reports]
        if vals and all(v is not None for v in vals):
            setattr(out, key, float(np.mean(vals)))
    for key in ("tp", "fp", "fn", "tn"):
        setattr(out, key, int(sum(getattr(r, key) for r in reports)))
    bad = [r for r in reports if r.error]
    if bad:
        out.error = f"{len(bad)} row(s) undefined"
    return out
