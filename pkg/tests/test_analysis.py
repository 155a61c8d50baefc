import numpy as np
import pytest

from confdet.analysis import (
    CLS,
    IOU,
    TOTAL_CONDITION,
    Condition,
    ImageStats,
    bundled_count_table,
    compute_image_stats,
    emit_count_table,
    ingest_count_table,
    misalignment_summary,
    proportions_from_counts,
    report_to_dict,
    round_half_up,
)
from confdet.assignment import GroundTruthBox
from confdet.geometry import Box
from confdet.postprocess import Detection


def det(x1, y1, x2, y2, cls_score, image_id="img"):
    return Detection(box=Box(x1, y1, x2, y2), class_id=0, cls_score=cls_score, image_id=image_id)


def gt(x1, y1, x2, y2):
    return GroundTruthBox(box=Box(x1, y1, x2, y2), class_id=0)


@pytest.fixture(scope="module")
def table_stats():
    return ingest_count_table(str(bundled_count_table()))


class TestCondition:
    def test_parse_and_format(self):
        cond = Condition.parse("iou>0.5")
        assert cond == Condition(IOU, 0.5)
        assert str(cond) == "iou>0.5"
        assert str(Condition.parse("cls>0.05")) == "cls>0.05"

    def test_parse_rejects_garbage(self):
        with pytest.raises(ValueError):
            Condition.parse("iou>abc")
        with pytest.raises(ValueError):
            Condition.parse("iou 0.5")
        with pytest.raises(ValueError):
            Condition.parse("area>0.5")

    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            Condition(CLS, 1.5)


class TestComputeImageStats:
    def test_counts_by_max_iou(self):
        # detections with best-IoU {0.2, 0.6, 0.9} against one gt
        gts = [gt(0, 0, 10, 10)]
        dets = [det(0, 0, 10, 2, 0.9), det(0, 0, 10, 6, 0.9), det(0, 0, 10, 9, 0.9)]
        stats = compute_image_stats(dets, [], gts, conditions=[Condition(IOU, 0.5)])
        assert stats.before[Condition(IOU, 0.5)] == 2

    def test_cls_condition_zero_counts_everything(self):
        dets = [det(0, 0, 1, 1, s) for s in (0.2, 0.4, 0.9)]
        stats = compute_image_stats(dets, [], [], conditions=[Condition(CLS, 0.0)])
        assert stats.before[Condition(CLS, 0.0)] == 3

    def test_subset_after_is_never_larger(self):
        rng = np.random.default_rng(0)
        dets = [det(x, y, x + w, y + h, s)
                for x, y, w, h, s in np.column_stack([rng.uniform(0, 20, (30, 4)), rng.uniform(0.06, 1, 30)])]
        after = dets[::3]
        gts = [gt(0, 0, 15, 15)]
        conditions = [Condition(CLS, t) for t in (0.1, 0.5)] + [Condition(IOU, t) for t in (0.3, 0.7)]
        stats = compute_image_stats(dets, after, gts, conditions=conditions)
        for cond in conditions:
            assert stats.after[cond] <= stats.before[cond]
        assert stats.after_total <= stats.before_total

    def test_counts_anti_monotone_in_threshold(self):
        rng = np.random.default_rng(1)
        dets = [det(x, y, x + w, y + h, s)
                for x, y, w, h, s in np.column_stack([rng.uniform(0, 20, (40, 4)), rng.uniform(0, 1, 40)])]
        conds = [Condition(CLS, t) for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
        stats = compute_image_stats(dets, [], [], conditions=conds)
        counts = [stats.before[c] for c in conds]
        assert counts == sorted(counts, reverse=True)

    def test_empty_gts_warns_and_zeroes_iou(self):
        dets = [det(0, 0, 10, 10, 0.9)]
        with pytest.warns(UserWarning, match="no ground truth"):
            stats = compute_image_stats(dets, [], [], conditions=[Condition(IOU, 0.5)])
        assert stats.before[Condition(IOU, 0.5)] == 0

    def test_positive_num_from_anchors(self):
        gts = [gt(0, 0, 10, 10)]
        anchors = [Box(0, 0, 10, 6), Box(0, 0, 10, 4), Box(0, 0, 10, 9)]  # IoUs 0.6, 0.4, 0.9
        stats = compute_image_stats([], [], gts, anchors=anchors)
        assert stats.positive_num == 2

    def test_positive_num_none_without_anchors(self):
        stats = compute_image_stats([], [], [])
        assert stats.positive_num is None

    def test_mixed_image_ids_rejected(self):
        with pytest.raises(ValueError, match="single image"):
            compute_image_stats([det(0, 0, 1, 1, 0.5, "a")], [det(0, 0, 1, 1, 0.5, "b")], [])


class TestProportions:
    def test_single_image_golden(self, table_stats):
        # the steepest drop in the fixture: 249/364 before vs 4/14 after
        report = proportions_from_counts(table_stats, Condition(IOU, 0.5))
        row = {r.image_id: r for r in report.per_image}["Image6"]
        assert row.before_pct == pytest.approx(68.41, abs=0.01)
        assert row.after_pct == pytest.approx(28.57, abs=0.01)
        assert row.delta_pp == pytest.approx(-39.84, abs=0.01)

    def test_ten_image_average_golden(self, table_stats):
        report = proportions_from_counts(table_stats, Condition(IOU, 0.5))
        assert len(report.per_image) == 10
        assert report.average_delta_pp == pytest.approx(-19.52, abs=0.01)

    def test_cls_condition_goldens(self, table_stats):
        report = proportions_from_counts(table_stats, Condition(CLS, 0.5))
        rows = {r.image_id: r for r in report.per_image}
        assert rows["Image3"].delta_pp == pytest.approx(1.55, abs=0.01)
        assert rows["Image2"].delta_pp == pytest.approx(1.32, abs=0.01)
        assert rows["Image8"].delta_pp == pytest.approx(0.02, abs=0.01)
        assert report.average_delta_pp == pytest.approx(-1.09, abs=0.01)
        assert sum(1 for r in report.per_image if r.delta_pp > 0) == 3

    def test_rows_satisfy_delta_identity(self, table_stats):
        report = proportions_from_counts(table_stats, Condition(IOU, 0.5))
        for row in report.per_image:
            assert row.delta_pp == row.after_pct - row.before_pct
        mean = sum(r.delta_pp for r in report.per_image) / len(report.per_image)
        assert report.average_delta_pp == mean

    def test_duplicating_detections_keeps_proportions(self):
        gts = [gt(0, 0, 10, 10)]
        dets = [det(0, 0, 10, 6, 0.9), det(0, 0, 10, 2, 0.3)]
        conds = [Condition(IOU, 0.5), Condition(CLS, 0.5)]
        single = compute_image_stats(dets, dets, gts, conditions=conds)
        doubled = compute_image_stats(dets * 2, dets * 2, gts, conditions=conds)
        for cond in conds:
            a = proportions_from_counts([single], cond).per_image[0]
            b = proportions_from_counts([doubled], cond).per_image[0]
            assert a.before_pct == pytest.approx(b.before_pct)
            assert a.after_pct == pytest.approx(b.after_pct)

    def test_zero_total_row_dropped_with_warning(self):
        usable = ImageStats(
            image_id="ok", positive_num=None,
            before={Condition(CLS, 0.5): 5, TOTAL_CONDITION: 10},
            after={Condition(CLS, 0.5): 1, TOTAL_CONDITION: 2},
            before_total=10, after_total=2,
        )
        broken = ImageStats(
            image_id="empty", positive_num=None,
            before={Condition(CLS, 0.5): 0, TOTAL_CONDITION: 0},
            after={Condition(CLS, 0.5): 0, TOTAL_CONDITION: 0},
            before_total=0, after_total=0,
        )
        with pytest.warns(UserWarning, match="empty"):
            report = proportions_from_counts([usable, broken], Condition(CLS, 0.5))
        assert [r.image_id for r in report.per_image] == ["ok"]

    def test_missing_condition_rejected(self, table_stats):
        with pytest.raises(ValueError, match="no counts"):
            proportions_from_counts(table_stats, Condition(CLS, 0.33))


class TestCountTableIo:
    def test_fixture_parses_ten_images(self, table_stats):
        assert len(table_stats) == 10
        assert [s.image_id for s in table_stats] == [f"Image{i}" for i in range(1, 11)]
        image9 = table_stats[8]
        assert image9.positive_num == 310
        assert image9.before_total == 5422
        assert image9.after[Condition(IOU, 0.5)] == 20

    def test_round_trip(self, tmp_path, table_stats):
        out = tmp_path / "counts.csv"
        emit_count_table(table_stats, out)
        again = ingest_count_table(out)
        assert again == table_stats
        original_lines = sorted(
            bundled_count_table().read_text().strip().splitlines()
        )
        written_lines = sorted(out.read_text().strip().splitlines())
        assert written_lines == original_lines

    def test_malformed_threshold_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("image_id,stage,condition,count\nimgA,before,iou>abc,3\n")
        with pytest.raises(ValueError, match="line 2"):
            ingest_count_table(path)

    def test_unknown_stage_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("image_id,stage,condition,count\nimgA,during,iou>0.5,3\n")
        with pytest.raises(ValueError, match="stage"):
            ingest_count_table(path)

    def test_missing_totals_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("image_id,stage,condition,count\nimgA,before,iou>0.5,3\nimgA,after,iou>0.5,1\n")
        with pytest.raises(ValueError, match="totals undefined"):
            ingest_count_table(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,stage,cond,count\n")
        with pytest.raises(ValueError, match="header"):
            ingest_count_table(path)


class TestMisalignmentSummary:
    def test_perfect_detection(self):
        g = gt(0, 0, 10, 10)
        pairs = misalignment_summary([det(0, 0, 10, 10, 1.0)], [g])
        assert pairs.tolist() == [[1.0, 1.0]]

    def test_empty_gts_gives_zero_iou(self):
        pairs = misalignment_summary([det(0, 0, 10, 10, 0.7)], [])
        assert pairs.tolist() == [[0.0, 0.7]]

    def test_matches_per_detection_loop(self):
        rng = np.random.default_rng(2)
        dets = [det(x, y, x + w, y + h, s)
                for x, y, w, h, s in np.column_stack([rng.uniform(0, 20, (100, 4)) + 1, rng.uniform(0, 1, 100)])]
        gts = [gt(2, 2, 14, 14), gt(8, 5, 20, 22)]
        pairs = misalignment_summary(dets, gts)
        from confdet.geometry import iou

        for row, d in zip(pairs, dets):
            best = max(iou(d.box, g.box) for g in gts)
            assert row[0] == pytest.approx(best, abs=1e-12)
            assert row[1] == d.cls_score


class TestRounding:
    def test_half_up_ties(self):
        assert round_half_up(2.675) == 2.68
        assert round_half_up(0.125) == 0.13
        assert round_half_up(-0.125) == -0.13

    def test_plain_cases(self):
        assert round_half_up(-31.495794) == -31.50
        assert round_half_up(1.318212) == 1.32

    def test_report_dict_rounds(self, table_stats):
        report = proportions_from_counts(table_stats, Condition(IOU, 0.5))
        payload = report_to_dict(report)
        assert payload["condition"] == "iou>0.5"
        assert payload["average_delta_pp"] == -19.52
        deltas = {row["image_id"]: row["delta_pp"] for row in payload["per_image"]}
        assert deltas["Image2"] == -31.50
        assert deltas["Image6"] == -39.84
