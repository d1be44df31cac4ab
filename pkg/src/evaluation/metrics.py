"""
Segmentation and classification metrics: confusion-matrix mIoU, ROC, D-score traces,
and the per-iteration metrics CSV.
"""
import csv
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
import torch
from sklearn import metrics as skmetrics

from ..shared.errors import ClassIndexError, ShapeMismatchError, UndefinedMetricError
from ..shared.models import METRICS_HEADER, MetricRecord, TraceRow


logger = structlog.get_logger(__name__)

ArrayLike = Union[np.ndarray, torch.Tensor, Sequence]


def _as_numpy(x: ArrayLike) -> np.ndarray:
    if torch.is_tensor(x):
        return x.detach().cpu().numpy()
    return np.asarray(x)


class ConfusionMatrix:
    """C x C pixel counts; counts[i, j] = pixels with ground truth i predicted as j."""

    def __init__(self, num_classes: int, counts: Optional[np.ndarray] = None):
        if num_classes < 1:
            raise ValueError("num_classes must be positive")
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (num_classes, num_classes) or (counts < 0).any():
            raise ValueError("counts must be a nonnegative C x C matrix")
        self.counts = counts

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def update(self, pred_mask: ArrayLike, gt_mask: ArrayLike,
               ignore_index: Optional[int] = None) -> "ConfusionMatrix":
        pred = _as_numpy(pred_mask).astype(np.int64).reshape(-1)
        gt = _as_numpy(gt_mask).astype(np.int64).reshape(-1)
        if _as_numpy(pred_mask).shape != _as_numpy(gt_mask).shape:
            raise ShapeMismatchError("prediction and ground-truth masks differ in shape")
        if ignore_index is not None:
            keep = gt != ignore_index
            pred, gt = pred[keep], gt[keep]
        c = self.num_classes
        for name, values in (("prediction", pred), ("ground truth", gt)):
            if values.size and (values.min() < 0 or values.max() >= c):
                raise ClassIndexError(f"{name} holds class indices outside [0, {c})")
        self.counts += np.bincount(gt * c + pred, minlength=c * c).reshape(c, c)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    __add__ = merge

    def per_class_iou(self) -> np.ndarray:
        """IoU per class; NaN where the class has zero union."""
        inter = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(axis=0) + self.counts.sum(axis=1) - np.diag(self.counts)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(union > 0, inter / np.maximum(union, 1), np.nan)

    def miou(self) -> float:
        if self.total == 0:
            raise UndefinedMetricError("mIoU of an empty confusion matrix is undefined")
        return float(np.nanmean(self.per_class_iou()))

    def pixel_accuracy(self) -> float:
        if self.total == 0:
            raise UndefinedMetricError("pixel accuracy of an empty confusion matrix is undefined")
        return float(np.trace(self.counts) / self.total)


def confusion_update(cm: ConfusionMatrix, pred_mask: ArrayLike, gt_mask: ArrayLike,
                     ignore_index: Optional[int] = None) -> ConfusionMatrix:
    return cm.update(pred_mask, gt_mask, ignore_index)


def miou(cm: ConfusionMatrix) -> float:
    """Mean IoU over classes with nonzero union."""
    return cm.miou()


def _flatten_scores(scores: Sequence[Tuple[ArrayLike, ArrayLike]]) -> Tuple[np.ndarray, np.ndarray]:
    if not scores:
        raise UndefinedMetricError("ROC needs at least one scored sample")
    probs = np.concatenate([_as_numpy(p).astype(np.float64).reshape(-1) for p, _ in scores])
    labels = np.concatenate([_as_numpy(z).astype(np.int64).reshape(-1) for _, z in scores])
    if probs.shape != labels.shape:
        raise ShapeMismatchError("probability and label vectors differ in length")
    if labels.min() == labels.max():
        raise UndefinedMetricError("ROC needs both positive and negative labels")
    return probs, labels


def roc_curve(scores: Sequence[Tuple[ArrayLike, ArrayLike]]) -> List[Tuple[float, float]]:
    """(fpr, tpr) points over all (sample, class) decisions, thresholds at unique scores."""
    probs, labels = _flatten_scores(scores)
    fpr, tpr, _ = skmetrics.roc_curve(labels, probs, drop_intermediate=False)
    return [(float(f), float(t)) for f, t in zip(fpr, tpr)]


def roc_auc(points: Sequence[Tuple[float, float]]) -> float:
    """Trapezoidal area under ROC points."""
    if len(points) < 2:
        raise UndefinedMetricError("area needs at least two ROC points")
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(skmetrics.auc(fpr, tpr))


class ScoreTrace:
    """Discriminator scores of real and fake inputs averaged over fixed iteration windows.

    A row is emitted once both sides have recorded the last iteration of a window.
    """

    WINDOW = 100

    def __init__(self):
        self.window = self.WINDOW
        self.rows: List[TraceRow] = []
        self._start: Optional[int] = None
        self._real: List[float] = []
        self._fake: List[float] = []
        self._closed: Dict[bool, bool] = {True: False, False: False}

    def _emit(self) -> Optional[TraceRow]:
        if self._start is None or not (self._real or self._fake):
            self._start = None
            return None
        row = TraceRow(
            window_start=self._start,
            mean_real=float(np.mean(self._real)) if self._real else None,
            mean_fake=float(np.mean(self._fake)) if self._fake else None,
        )
        self.rows.append(row)
        self._start = None
        self._real, self._fake = [], []
        self._closed = {True: False, False: False}
        return row

    def record(self, iteration: int, score: float, is_real: bool) -> Optional[TraceRow]:
        score = float(score)
        if not 0.0 < score < 1.0:
            raise ValueError(f"discriminator score must lie in (0, 1), got {score}")
        window_start = (iteration // self.window) * self.window
        if self._start is not None and window_start != self._start:
            self._emit()
        self._start = window_start
        (self._real if is_real else self._fake).append(score)
        if iteration == window_start + self.window - 1:
            self._closed[bool(is_real)] = True
            if all(self._closed.values()):
                return self._emit()
        return None

    def flush(self) -> Optional[TraceRow]:
        """Emit the pending partial window, if any."""
        return self._emit()

    def state_dict(self) -> Dict[str, Any]:
        return {
            "window": self.window,
            "start": self._start,
            "real": list(self._real),
            "fake": list(self._fake),
            "closed": [self._closed[True], self._closed[False]],
            "rows": [row.model_dump() for row in self.rows],
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        if int(state["window"]) != self.WINDOW:
            raise ValueError(f"trace window {state['window']} differs from {self.WINDOW}")
        self._start = state["start"]
        self._real = [float(v) for v in state["real"]]
        self._fake = [float(v) for v in state["fake"]]
        self._closed = {True: bool(state["closed"][0]), False: bool(state["closed"][1])}
        self.rows = [TraceRow(**row) for row in state["rows"]]


def trace_scores(trace: ScoreTrace, iteration: int, score: float, is_real: bool) -> ScoreTrace:
    trace.record(iteration, score, is_real)
    return trace


def write_trace_csv(rows: Sequence[TraceRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["window_start", "mean_real", "mean_fake"])
        for row in rows:
            writer.writerow([row.window_start, _cell(row.mean_real), _cell(row.mean_fake)])
    return path


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricsWriter:
    """Appends MetricRecord rows to a CSV with a fixed header."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists() or self.path.stat().st_size == 0:
            with self.path.open("w", newline="") as handle:
                csv.writer(handle).writerow(METRICS_HEADER)

    def truncate_from(self, iteration: int) -> None:
        """Drop rows at or after `iteration` (used when resuming into the same directory)."""
        with self.path.open(newline="") as handle:
            rows = list(csv.reader(handle))
        kept = [rows[0]] + [r for r in rows[1:] if r and int(r[0]) < iteration]
        if len(kept) != len(rows):
            logger.info("metrics_truncated", path=str(self.path), dropped=len(rows) - len(kept))
        with self.path.open("w", newline="") as handle:
            csv.writer(handle).writerows(kept)

    def write(self, record: MetricRecord) -> None:
        values = record.model_dump()
        with self.path.open("a", newline="") as handle:
            csv.writer(handle).writerow([_cell(values[key]) for key in METRICS_HEADER])


def read_metrics(path: Union[str, Path]) -> List[MetricRecord]:
    with Path(path).open(newline="") as handle:
        reader = csv.DictReader(handle)
        return [
            MetricRecord(**{k: (v if v != "" else None) for k, v in row.items()})
            for row in reader
        ]
