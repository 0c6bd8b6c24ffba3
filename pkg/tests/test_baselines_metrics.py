import csv
import io
import math

import numpy as np
import pytest
import torch

from weakground.baselines import (mil_margin_loss, mil_nce_loss, proposal_sentence_scores,
                                  random_baseline, scene_sentence_scores)
from weakground.evaluate import random_rankings
from weakground.geometry import iou_matrix
from weakground.metrics import (CSV_COLUMNS, EvalQuery, MetricsReport, collect_queries,
                                oracle_rankings, recall_at, upper_bound_row)
from weakground.synth import DetectorSimConfig, GenConfig, generate_corpus


def box_with_iou(gt, iou):
    """A box sharing gt's y/z extent, shifted along x so that IoU equals ``iou``."""
    w = gt[3]
    shift = w * (1 - iou) / (1 + iou)
    return np.concatenate([[gt[0] + shift], gt[1:]])


GT = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])


@pytest.fixture(scope="module")
def small_corpus():
    return generate_corpus(30, GenConfig(), DetectorSimConfig(), seed=5)


class TestRecallAt:
    def test_threshold_is_strict(self):
        pred = [box_with_iou(GT, 0.3)[None]]
        assert recall_at(pred, [GT], 1, 0.25) == 100.0
        assert recall_at(pred, [GT], 1, 0.5) == 0.0
        half = np.array([[0.0, 0.0, 0.0, 0.5, 1.0, 1.0]])  # nested, IoU exactly 0.5
        assert recall_at([half], [GT], 1, 0.5) == 0.0

    def test_exact_predictions(self):
        rng = np.random.default_rng(0)
        gts = [np.concatenate([rng.normal(size=3), rng.uniform(0.5, 2, 3)]) for _ in range(5)]
        preds = [np.stack([g, g, g]) for g in gts]
        for n in (1, 3):
            for m in (0.25, 0.5):
                assert recall_at(preds, gts, n, m) == 100.0

    def test_hand_counted_five_queries(self):
        ious = [0.6, 0.4, 0.3, 0.1, 0.55]
        preds = [box_with_iou(GT, v)[None] for v in ious]
        np.testing.assert_allclose([iou_matrix(p, GT[None])[0, 0] for p in preds], ious, atol=1e-12)
        assert recall_at(preds, [GT] * 5, 1, 0.5) == 40.0
        assert recall_at(preds, [GT] * 5, 1, 0.25) == 80.0

    def test_missing_predictions(self):
        with pytest.raises(ValueError):
            recall_at([GT[None]], [GT], 3, 0.5)
        with pytest.raises(ValueError):
            recall_at([GT[None]], [GT, GT], 1, 0.5)


class TestReport:
    def test_invariants_on_random_and_oracle(self, small_corpus):
        queries = collect_queries(small_corpus)
        report = upper_bound_row(queries, seed=3)
        report.add_method("random", queries, random_rankings(len(queries), 32, 3), seed=3)
        assert report.check_invariants() == []
        counts = {r["split"]: r["num_queries"] for r in report.rows if r["method"] == "random"}
        assert counts["unique"] + counts["multiple"] == counts["overall"] == len(queries)

    def test_detects_violations(self):
        q = [EvalQuery(0, 0, np.stack([GT, box_with_iou(GT, 0.1)]), GT, "unique")]
        report = MetricsReport()
        report.add_method("upper_bound", q, [[1, 0]])
        report.add_method("cheat", q, [[0, 1]])
        assert any("exceeds upper bound" in p for p in report.check_invariants())

    def test_upper_bound_exact_proposals(self, small_corpus):
        det = DetectorSimConfig(center_noise=0, size_noise=0, label_noise=0)
        corpus = generate_corpus(10, GenConfig(), det, seed=1)
        report = upper_bound_row(collect_queries(corpus))
        assert {r["recall"] for r in report.rows} == {100.0}

    def test_upper_bound_iou_03(self):
        qs = [EvalQuery(0, i, np.stack([box_with_iou(GT, 0.3), box_with_iou(GT, 0.2)]), GT,
                        "unique" if i % 2 else "multiple") for i in range(4)]
        report = upper_bound_row(qs)
        for split in ("unique", "multiple", "overall"):
            assert report.get("upper_bound", split, 1, 0.25) == 100.0
            assert report.get("upper_bound", split, 1, 0.5) == 0.0

    def test_upper_bound_brute_force(self, small_corpus):
        queries = collect_queries(small_corpus)
        report = upper_bound_row(queries)
        for m in (0.25, 0.5):
            best = [max(iou_matrix(p[None], q.gt_box[None])[0, 0] for p in q.proposal_boxes) for q in queries]
            expected = 100.0 * sum(b > m for b in best) / len(best)
            assert report.get("upper_bound", "overall", 1, m) == pytest.approx(expected, abs=1e-12)

    def test_oracle_is_best_first(self, small_corpus):
        q = collect_queries(small_corpus)[0]
        order = oracle_rankings([q])[0]
        ious = iou_matrix(q.proposal_boxes, q.gt_box[None])[:, 0]
        assert ious[order[0]] == ious.max()

    def test_csv(self, small_corpus):
        queries = collect_queries(small_corpus)
        report = upper_bound_row(queries, seed=2, config_hash="abc")
        rows = list(csv.DictReader(io.StringIO(report.to_csv())))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert len(rows) == 3 * 4
        assert rows[0]["method"] == "upper_bound" and rows[0]["config_hash"] == "abc"


class TestRandomBaseline:
    def test_deterministic_permutation(self):
        a = random_baseline(32, 9)
        assert a == random_baseline(32, 9)
        assert sorted(a) == list(range(32))

    def test_top1_frequencies(self):
        m, draws = 8, 10000
        counts = np.bincount([random_baseline(m, s)[0] for s in range(draws)], minlength=m)
        sigma = math.sqrt(draws * (1 / m) * (1 - 1 / m))
        assert np.all(np.abs(counts - draws / m) <= 3 * sigma)

    def test_expected_recall(self, small_corpus):
        queries = collect_queries(small_corpus)
        m_p = 32
        frac = [float((iou_matrix(q.proposal_boxes, q.gt_box[None])[:, 0] > 0.5).mean()) for q in queries]
        expected = 100.0 * np.mean(frac)
        sigma = 100.0 * math.sqrt(sum(f * (1 - f) for f in frac)) / len(queries)
        report = MetricsReport()
        report.add_method("random", queries, random_rankings(len(queries), m_p, 0))
        assert abs(report.get("random", "overall", 1, 0.5) - expected) <= 2 * sigma


def naive_margin(scores, scene_of, margin):
    s, b = scores.shape
    terms = []
    for q in range(s):
        for j in range(b):
            if j != scene_of[q]:
                terms.append(max(0.0, margin - scores[q, scene_of[q]] + scores[q, j]))
        for q2 in range(s):
            if scene_of[q2] != scene_of[q]:
                terms.append(max(0.0, margin - scores[q, scene_of[q]] + scores[q2, scene_of[q]]))
    return sum(terms) / len(terms)


class TestMilLosses:
    def test_margin_inactive(self):
        scores = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        assert float(mil_margin_loss(scores, [0, 1], 0.2)) == 0.0

    def test_margin_equal_scores(self):
        loss = mil_margin_loss(torch.zeros(2, 2, dtype=torch.float64), [0, 1], 0.2)
        assert float(loss) == pytest.approx(0.2, abs=1e-15)

    def test_margin_naive(self):
        g = torch.Generator().manual_seed(0)
        for _ in range(5):
            scores = torch.randn(5, 3, generator=g, dtype=torch.float64)
            scene_of = [0, 1, 1, 2, 0]
            expected = naive_margin(scores.numpy(), scene_of, 0.2)
            assert abs(float(mil_margin_loss(scores, scene_of, 0.2)) - expected) < 1e-12

    def test_nce_ln2(self):
        loss = mil_nce_loss(torch.zeros(3, 2, 4, dtype=torch.float64), [0, 1, 1])
        assert float(loss) == pytest.approx(math.log(2), abs=1e-12)

    def test_nce_large_positive(self):
        pair = torch.zeros(1, 2, 3, dtype=torch.float64)
        pair[0, 0] = 80.0
        assert float(mil_nce_loss(pair, [0])) < 1e-30

    def test_nce_naive(self):
        g = torch.Generator().manual_seed(1)
        P = torch.randn(3, 4, 5, generator=g, dtype=torch.float64)
        Q = torch.randn(4, 5, generator=g, dtype=torch.float64)
        scene_of = [0, 2, 1, 2]
        pair = proposal_sentence_scores(P, Q)
        expected = 0.0
        for q in range(4):
            e = np.exp(pair[q].numpy())
            expected -= math.log(e[scene_of[q]].sum() / e.sum())
        assert abs(float(mil_nce_loss(pair, scene_of)) - expected / 4) < 1e-10

    def test_single_scene(self):
        with pytest.warns(RuntimeWarning):
            assert float(mil_nce_loss(torch.zeros(2, 1, 3), [0, 0])) == 0.0
        with pytest.warns(RuntimeWarning):
            assert float(mil_margin_loss(torch.zeros(2, 1), [0, 0])) == 0.0

    def test_pooling(self):
        pair = torch.tensor([[[1.0, 3.0], [2.0, 0.0]]])
        assert scene_sentence_scores(pair, "max").tolist() == [[3.0, 2.0]]
        assert scene_sentence_scores(pair, "mean").tolist() == [[2.0, 1.0]]
        with pytest.raises(ValueError):
            scene_sentence_scores(pair, "sum")
