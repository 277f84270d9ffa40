"""Segment-level metrics and the naive repeat baselines.

Conventions (printed in every table header):

* AVE recall/precision count a segment as a hit only when the predicted
  event class equals the true event class.
* Weighted F1 is the support-weighted mean of per-class F1 over all ``C + 1``
  classes, background included.
* A rate whose denominator is zero is stored as 0.0 and rendered as ``-``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..datagen import FeatureVideo
from ..numkit import DomainError

CONVENTIONS = ("AVE hit = exact event class; weighted F1 over C+1 classes by true support; "
               "'-' = undefined (zero denominator)")


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class Detection:
    recall: float
    precision: float
    f1: float
    n_true: int
    n_pred: int
    n_hit: int


@dataclass
class MetricsReport:
    accuracy: float
    weighted_f1: float
    non_ave: Detection
    ave: Detection
    per_class_f1: list[float]
    confusion: np.ndarray

    def to_dict(self) -> dict:
        d = {"accuracy": self.accuracy, "weighted_f1": self.weighted_f1,
             "per_class_f1": list(self.per_class_f1), "confusion": self.confusion.tolist()}
        for key in ("non_ave", "ave"):
            det = getattr(self, key)
            d.update({f"{key}_{k}": getattr(det, k)
                      for k in ("f1", "recall", "precision", "n_true", "n_pred", "n_hit")})
        return d


def confusion_matrix(pred: np.ndarray, truth: np.ndarray, n_labels: int) -> np.ndarray:
    """``M[t, p]`` counts segments with true class ``t`` predicted as ``p``."""
    m = np.zeros((n_labels, n_labels), dtype=np.int64)
    np.add.at(m, (truth, pred), 1)
    return m


def _flatten(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x.ravel()
    return np.concatenate([np.asarray(v).ravel() for v in x]) if len(x) else np.zeros(0, dtype=np.int64)


def compute_metrics(pred, truth, n_classes: int) -> MetricsReport:
    """Metrics over all segments of all videos.

    ``pred`` and ``truth`` are ``(n_videos, T)`` arrays or equal-shaped
    sequences of per-video label vectors; class ``n_classes`` is background.
    """
    if not isinstance(pred, np.ndarray) or not isinstance(truth, np.ndarray):
        if len(pred) != len(truth) or any(np.shape(a) != np.shape(b) for a, b in zip(pred, truth)):
            raise DomainError("prediction and truth shapes differ")
    elif pred.shape != truth.shape:
        raise DomainError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    p, t = _flatten(pred).astype(np.int64), _flatten(truth).astype(np.int64)
    K = n_classes + 1
    for name, arr in (("prediction", p), ("truth", t)):
        if arr.size and (arr.min() < 0 or arr.max() >= K):
            raise DomainError(f"{name} contains a class id outside [0, {n_classes}]")

    cm = confusion_matrix(p, t, K)
    total = int(cm.sum())
    diag = np.diag(cm)
    support, predicted = cm.sum(axis=1), cm.sum(axis=0)
    per_class = [f1(_ratio(diag[k], predicted[k]), _ratio(diag[k], support[k])) for k in range(K)]
    weighted = _ratio(float(np.dot(support, per_class)), support.sum())

    bg = n_classes
    nb = Detection(_ratio(diag[bg], support[bg]), _ratio(diag[bg], predicted[bg]), 0.0,
                   int(support[bg]), int(predicted[bg]), int(diag[bg]))
    nb.f1 = f1(nb.precision, nb.recall)
    ave_hit = int(diag[:bg].sum())
    ave_true, ave_pred = int(support[:bg].sum()), int(predicted[:bg].sum())
    ave = Detection(_ratio(ave_hit, ave_true), _ratio(ave_hit, ave_pred), 0.0, ave_true, ave_pred, ave_hit)
    ave.f1 = f1(ave.precision, ave.recall)

    return MetricsReport(_ratio(int(diag.sum()), total), weighted, nb, ave, per_class, cm)


def repeat_predictions(videos: Sequence[FeatureVideo], video_classes: Sequence[int]) -> np.ndarray:
    return np.stack([np.full(v.T, c, dtype=np.int64) for v, c in zip(videos, video_classes)])


def gt_repeat(videos: Sequence[FeatureVideo]) -> np.ndarray:
    """Ground-truth video-level event repeated on every segment (background videos stay background)."""
    cls = []
    for v in videos:
        ev = sorted(v.events)
        cls.append(ev[0] if ev else v.n_classes)
    return repeat_predictions(videos, cls)


def ave_repeat(videos: Sequence[FeatureVideo], params) -> np.ndarray:
    """Most probable *event* class of the video-level prediction, repeated."""
    from ..model import video_probs_batch

    probs = video_probs_batch(params, videos)
    C = videos[0].n_classes
    return repeat_predictions(videos, np.argmax(probs[:, :C], axis=1))


def naive_baselines(videos: Sequence[FeatureVideo], base_params) -> tuple[MetricsReport, MetricsReport]:
    """Metrics of the AVE-repeat and GT-repeat strategies, in that order."""
    truth = np.stack([v.labels for v in videos])
    C = videos[0].n_classes
    return (compute_metrics(ave_repeat(videos, base_params), truth, C),
            compute_metrics(gt_repeat(videos), truth, C))


# ---------------------------------------------------------------------------
# tables

def _pct(x: float) -> str:
    return f"{100 * x:.1f}"


def _det(d: Detection) -> str:
    r = _pct(d.recall) if d.n_true else "-"
    p = _pct(d.precision) if d.n_pred else "-"
    f = _pct(d.f1) if d.n_true and d.n_pred else "-"
    return f"{f} ({r}/{p})"


def format_table(rows: dict[str, MetricsReport], extra: dict[str, dict[str, str]] | None = None,
                 title: str = "") -> str:
    """Method x metric table in percent."""
    extra = extra or {}
    extra_cols = sorted({k for d in extra.values() for k in d})
    head = ["Method", "Accuracy", "Wt. F1", "Non-AVE F1 (R/P)", "AVE F1 (R/P)"] + extra_cols
    body = []
    for name, m in rows.items():
        body.append([name, _pct(m.accuracy), _pct(m.weighted_f1), _det(m.non_ave), _det(m.ave)]
                    + [extra.get(name, {}).get(c, "") for c in extra_cols])
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    fmt = lambda r: " | ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
    lines = [f"# {title}"] if title else []
    lines += [f"# {CONVENTIONS}", fmt(head), "-+-".join("-" * w for w in widths)]
    lines += [fmt(r) for r in body]
    return "\n".join(lines) + "\n"
