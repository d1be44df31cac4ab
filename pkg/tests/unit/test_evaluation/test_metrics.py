"""
Unit tests for confusion matrices, ROC, score traces and the metrics CSV.
"""
import itertools

import numpy as np
import pytest
import torch

from src.evaluation.metrics import (
    ConfusionMatrix,
    MetricsWriter,
    ScoreTrace,
    confusion_update,
    miou,
    read_metrics,
    roc_auc,
    roc_curve,
    trace_scores,
    write_trace_csv,
)
from src.shared.errors import ClassIndexError, ShapeMismatchError, UndefinedMetricError
from src.shared.models import METRICS_HEADER, MetricRecord


def _naive_miou(pred, gt, num_classes):
    ious = []
    for c in range(num_classes):
        inter = sum(1 for p, g in zip(pred, gt) if p == c and g == c)
        union = sum(1 for p, g in zip(pred, gt) if p == c or g == c)
        if union:
            ious.append(inter / union)
    return sum(ious) / len(ious)


class TestConfusionMatrix:
    """Test cases for ConfusionMatrix and mIoU."""

    def test_hand_computed(self):
        """Test counts and mIoU of a small hand-worked case."""
        cm = confusion_update(ConfusionMatrix(2), [0, 0, 1, 0, 1], [0, 0, 0, 1, 1])
        assert cm.counts.tolist() == [[2, 1], [1, 1]]
        assert miou(cm) == pytest.approx(5 / 12)

    def test_perfect_prediction(self):
        """Test that a perfect prediction scores 1."""
        mask = torch.tensor([[0, 1], [2, 2]])
        assert miou(ConfusionMatrix(3).update(mask, mask)) == 1.0

    def test_disjoint_prediction(self):
        """Test that a fully wrong prediction scores 0."""
        cm = ConfusionMatrix(2).update([1, 1, 1], [0, 0, 0])
        assert miou(cm) == 0.0

    def test_absent_classes_are_skipped(self):
        """Test that classes with no pixels do not enter the mean."""
        cm = ConfusionMatrix(5).update([0, 0, 1, 1], [0, 0, 1, 1])
        assert miou(cm) == 1.0
        assert np.isnan(cm.per_class_iou()[4])

    def test_ignore_index(self):
        """Test that ignored ground-truth pixels are not counted."""
        cm = ConfusionMatrix(2).update([0, 1, 1], [0, 255, 1], ignore_index=255)
        assert cm.total == 2
        assert miou(cm) == 1.0

    def test_updates_are_additive(self):
        """Test that split updates and merges equal one joint update."""
        generator = np.random.default_rng(0)
        pred_a, gt_a = generator.integers(0, 4, 50), generator.integers(0, 4, 50)
        pred_b, gt_b = generator.integers(0, 4, 30), generator.integers(0, 4, 30)
        split = ConfusionMatrix(4).update(pred_a, gt_a).update(pred_b, gt_b)
        joined = ConfusionMatrix(4).update(np.concatenate([pred_a, pred_b]),
                                           np.concatenate([gt_a, gt_b]))
        assert np.array_equal(split.counts, joined.counts)
        merged = ConfusionMatrix(4).update(pred_a, gt_a) + ConfusionMatrix(4).update(pred_b, gt_b)
        assert np.array_equal(merged.counts, joined.counts)

    def test_matches_naive_count(self):
        """Test random labelings against a per-class loop."""
        generator = np.random.default_rng(1)
        for _ in range(25):
            pred = generator.integers(0, 4, 40).tolist()
            gt = generator.integers(0, 4, 40).tolist()
            cm = ConfusionMatrix(4).update(pred, gt)
            assert miou(cm) == pytest.approx(_naive_miou(pred, gt, 4))

    def test_relabeling_invariance(self):
        """Test that permuting class ids leaves mIoU unchanged."""
        generator = np.random.default_rng(2)
        pred, gt = generator.integers(0, 3, 60), generator.integers(0, 3, 60)
        for perm in itertools.permutations(range(3)):
            lookup = np.array(perm)
            relabeled = ConfusionMatrix(3).update(lookup[pred], lookup[gt])
            assert miou(relabeled) == pytest.approx(miou(ConfusionMatrix(3).update(pred, gt)))

    def test_empty_is_undefined(self):
        """Test mIoU of an empty matrix."""
        with pytest.raises(UndefinedMetricError):
            miou(ConfusionMatrix(3))

    def test_out_of_range_index(self):
        """Test a predicted index outside the classes."""
        with pytest.raises(ClassIndexError):
            ConfusionMatrix(2).update([0, 2], [0, 1])

    def test_shape_mismatch(self):
        """Test masks of different shapes."""
        with pytest.raises(ShapeMismatchError):
            ConfusionMatrix(2).update(torch.zeros(2, 2), torch.zeros(4))

    def test_pixel_accuracy(self):
        """Test the fraction of correct pixels."""
        assert ConfusionMatrix(2).update([0, 1, 1, 0], [0, 1, 0, 0]).pixel_accuracy() == 0.75


class TestRoc:
    """Test cases for ROC curves and their area."""

    def test_perfect_separation(self):
        """Test a curve from (0, 0) to (1, 1) with area 1."""
        points = roc_curve([(torch.tensor([0.9, 0.1]), torch.tensor([1, 0]))])
        assert points[0] == (0.0, 0.0)
        assert points[-1] == (1.0, 1.0)
        assert roc_auc(points) == pytest.approx(1.0)

    def test_inverted_separation(self):
        """Test that reversed scores give area 0."""
        points = roc_curve([(np.array([0.2, 0.8]), np.array([1, 0]))])
        assert roc_auc(points) == pytest.approx(0.0)

    def test_matches_pairwise_ranking(self):
        """Test the area against the fraction of correctly ordered pairs."""
        generator = np.random.default_rng(3)
        scores = [(generator.random(4).round(2), generator.integers(0, 2, 4)) for _ in range(10)]
        probs = np.concatenate([p for p, _ in scores])
        labels = np.concatenate([z for _, z in scores])
        pos, neg = probs[labels == 1], probs[labels == 0]
        wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
        assert roc_auc(roc_curve(scores)) == pytest.approx(wins / (len(pos) * len(neg)))

    def test_points_are_monotone(self):
        """Test that both rates never decrease along the curve."""
        generator = np.random.default_rng(4)
        points = roc_curve([(generator.random(30), generator.integers(0, 2, 30))])
        assert all(a[0] <= b[0] and a[1] <= b[1] for a, b in zip(points, points[1:]))

    def test_single_label_is_undefined(self):
        """Test scores whose labels are all positive."""
        with pytest.raises(UndefinedMetricError):
            roc_curve([(np.array([0.3, 0.6]), np.array([1, 1]))])

    def test_no_samples(self):
        """Test a curve over no samples."""
        with pytest.raises(UndefinedMetricError):
            roc_curve([])


class TestScoreTrace:
    """Test cases for windowed discriminator-score traces."""

    def _fill(self, trace, iterations, real=0.9, fake=0.1):
        for it in iterations:
            trace_scores(trace, it, real, is_real=True)
            trace_scores(trace, it, fake, is_real=False)
        return trace

    def test_constant_scores(self):
        """Test that 100 constant scores give that window mean."""
        trace = self._fill(ScoreTrace(), range(100), real=0.7, fake=0.7)
        assert len(trace.rows) == 1
        assert trace.rows[0].window_start == 0
        assert trace.rows[0].mean_real == pytest.approx(0.7)
        assert trace.rows[0].mean_fake == pytest.approx(0.7)

    def test_alternating_scores(self):
        """Test that alternating 0.4 / 0.6 scores average to 0.5."""
        trace = ScoreTrace()
        for it in range(100):
            trace.record(it, 0.4 if it % 2 else 0.6, True)
            trace.record(it, 0.6 if it % 2 else 0.4, False)
        assert trace.rows[0].mean_real == pytest.approx(0.5)
        assert trace.rows[0].mean_fake == pytest.approx(0.5)

    def test_window_closes_when_both_sides_recorded(self):
        """Test that a window waits for the fake score of its last iteration."""
        trace = self._fill(ScoreTrace(), range(99))
        assert trace.record(99, 0.9, True) is None
        row = trace.record(99, 0.1, False)
        assert row.window_start == 0
        assert trace.rows == [row]

    def test_matches_offline_replay(self):
        """Test the trace against window means recomputed from the raw log."""
        generator = torch.Generator().manual_seed(0)
        real = (torch.rand(250, generator=generator) * 0.98 + 0.01).tolist()
        fake = (torch.rand(250, generator=generator) * 0.98 + 0.01).tolist()
        trace = ScoreTrace()
        for it in range(250):
            trace.record(it, real[it], True)
            trace.record(it, fake[it], False)
        trace.flush()
        assert [r.window_start for r in trace.rows] == [0, 100, 200]
        for row in trace.rows:
            span = slice(row.window_start, row.window_start + 100)
            assert row.mean_real == pytest.approx(sum(real[span]) / len(real[span]))
            assert row.mean_fake == pytest.approx(sum(fake[span]) / len(fake[span]))

    def test_flush_emits_partial_window(self):
        """Test that flush emits the trailing partial window once."""
        trace = self._fill(ScoreTrace(), range(150))
        assert [r.window_start for r in trace.rows] == [0]
        trace.flush()
        assert [r.window_start for r in trace.rows] == [0, 100]
        assert trace.flush() is None

    def test_one_sided_window(self):
        """Test a window that only saw real scores."""
        trace = ScoreTrace()
        for it in range(101):
            trace.record(it, 0.5, True)
        assert trace.rows[0].mean_fake is None

    def test_state_round_trip(self):
        """Test that a restored trace continues exactly like the original."""
        trace = self._fill(ScoreTrace(), range(130), real=0.6, fake=0.3)
        restored = ScoreTrace()
        restored.load_state_dict(trace.state_dict())
        self._fill(trace, range(130, 200), real=0.7, fake=0.2)
        self._fill(restored, range(130, 200), real=0.7, fake=0.2)
        assert restored.rows == trace.rows
        assert len(trace.rows) == 2

    def test_rejects_other_window(self):
        """Test that state saved with another window size is rejected."""
        state = ScoreTrace().state_dict()
        state["window"] = 50
        with pytest.raises(ValueError, match="window"):
            ScoreTrace().load_state_dict(state)

    def test_score_range(self):
        """Test that scores outside (0, 1) are rejected."""
        with pytest.raises(ValueError):
            ScoreTrace().record(0, 1.0, True)

    def test_write_csv(self, tmp_path):
        """Test the trace CSV layout."""
        trace = self._fill(ScoreTrace(), range(100), real=0.25, fake=0.5)
        path = write_trace_csv(trace.rows, tmp_path / "d_scores.csv")
        assert path.read_text().splitlines() == ["window_start,mean_real,mean_fake", "0,0.25,0.5"]


class TestMetricsWriter:
    """Test cases for the per-iteration metrics CSV."""

    def test_header_and_blank_cells(self, tmp_path):
        """Test the header row and empty cells for unset columns."""
        writer = MetricsWriter(tmp_path / "metrics.csv")
        writer.write(MetricRecord(iter=0, lr=0.1, loss_ce=0.5))
        lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert lines[0] == ",".join(METRICS_HEADER)
        assert lines[1] == "0,0.1,0.5" + "," * (len(METRICS_HEADER) - 3)

    def test_round_trip(self, tmp_path):
        """Test writing and reading records."""
        writer = MetricsWriter(tmp_path / "metrics.csv")
        records = [MetricRecord(iter=i, loss_ce=1.0 / (i + 3), miou_val=None) for i in range(3)]
        for record in records:
            writer.write(record)
        assert read_metrics(tmp_path / "metrics.csv") == records

    def test_truncate_from(self, tmp_path):
        """Test dropping rows from a resume point on."""
        writer = MetricsWriter(tmp_path / "metrics.csv")
        for i in range(5):
            writer.write(MetricRecord(iter=i, loss_ce=0.1))
        writer.truncate_from(3)
        assert [r.iter for r in read_metrics(tmp_path / "metrics.csv")] == [0, 1, 2]

    def test_reopen_keeps_rows(self, tmp_path):
        """Test that reopening appends without a second header."""
        MetricsWriter(tmp_path / "metrics.csv").write(MetricRecord(iter=0))
        MetricsWriter(tmp_path / "metrics.csv").write(MetricRecord(iter=1))
        assert len(read_metrics(tmp_path / "metrics.csv")) == 2
