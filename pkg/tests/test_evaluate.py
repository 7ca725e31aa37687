"""Tests for session voting, confusion counting, rate metrics, and reports.

Rate metrics are checked against exact rational arithmetic; vote outcomes are
checked against expectations derived from the constructed frame patterns, not
from the code under test.
"""

from __future__ import annotations

import math
from fractions import Fraction

import cv2
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_cache, make_gallery
from facegallery.core import ConfusionCounts, Embedding, Gallery, IdentityLabel
from facegallery.encoder import MockBackend
from facegallery.errors import DataFormatError, EmptyDatasetError, UndefinedMetricError
from facegallery.evaluate import (
    EvaluationReport,
    ReportRow,
    Session,
    SessionOutcome,
    accuracy,
    count_outcome,
    decide_session,
    fnr,
    fpr,
    load_sessions,
    make_report,
    parse_report_csv,
    parse_session_manifest,
    render_report,
    report_csv,
    score_sessions,
    training_accuracy,
)
from facegallery.recognize import RecognitionDecision, predict

counts_st = st.integers(0, 1000)


def eye_gallery(c: int = 3, d: int = 8, scale: float = 100.0) -> Gallery:
    labels = [IdentityLabel(name, i) for i, name in enumerate("abc"[:c])]
    return Gallery(np.eye(c, d), labels, ["p"] * c, scale)


def basis_frame(dim: int, idx: int) -> Embedding:
    v = np.zeros(dim)
    v[idx] = 1.0
    return Embedding(v, normalized=True)


def uniform_frame(dim: int, c: int) -> Embedding:
    """Equal similarity to every class: a frame that votes Unknown."""
    v = np.zeros(dim)
    v[:c] = 1.0 / math.sqrt(c)
    return Embedding(v, normalized=True)


def gap_gallery() -> Gallery:
    labels = [IdentityLabel("a", 0), IdentityLabel("b", 1)]
    return Gallery(np.eye(2, 3), labels, ["p", "q"], 4.0)


def gap_frame(cls: int, gap: float) -> Embedding:
    """Frame whose two logits under gap_gallery are (gap, 0) or (0, gap)."""
    part = gap / 4.0
    v = np.zeros(3)
    v[cls] = part
    v[2] = math.sqrt(1.0 - part * part)
    return Embedding(v, normalized=True)


class TestSessionType:
    def test_empty_frame_list_rejected(self):
        with pytest.raises(EmptyDatasetError):
            Session(None, ())

    def test_frames_coerced_to_tuple(self):
        s = Session(None, [uniform_frame(8, 3)])
        assert isinstance(s.frames, tuple)


class TestDecideSession:
    def test_unanimous_frames_identify_the_participant(self):
        g = eye_gallery()
        s = Session(g.labels[1], tuple(basis_frame(8, 1) for _ in range(5)))
        d = decide_session(s, g)
        assert d.identified
        assert d.top_label.name == "b"
        assert d.confidence == pytest.approx(1.0, abs=1e-12)

    def test_three_of_five_is_a_strict_majority(self):
        g = eye_gallery()
        frames = [basis_frame(8, 0)] * 3 + [uniform_frame(8, 3)] * 2
        d = decide_session(Session(g.labels[0], tuple(frames)), g)
        assert d.identified
        assert d.top_label.name == "a"

    def test_two_of_five_votes_resolve_unknown(self):
        g = eye_gallery()
        frames = [basis_frame(8, 0)] * 2 + [uniform_frame(8, 3)] * 2 + [basis_frame(8, 1)]
        d = decide_session(Session(g.labels[0], tuple(frames)), g)
        assert not d.identified

    def test_exactly_half_is_not_a_majority(self):
        g = eye_gallery()
        frames = [basis_frame(8, 0)] * 2 + [uniform_frame(8, 3)] * 2
        d = decide_session(Session(g.labels[0], tuple(frames)), g)
        assert not d.identified

    def test_vote_tie_resolves_unknown_with_unknown_frame_confidence(self):
        g = eye_gallery()
        tie = [basis_frame(8, 0)] * 2 + [basis_frame(8, 1)] * 2
        undecided = uniform_frame(8, 3)
        d = decide_session(Session(None, tuple(tie + [undecided])), g)
        assert not d.identified
        ref = predict(undecided, g)
        assert d.confidence == ref.confidence
        assert np.array_equal(d.probabilities, ref.probabilities)

    def test_unknown_outcome_averages_unknown_voting_frames(self):
        g = eye_gallery()
        frames = [basis_frame(8, 0)] * 2 + [uniform_frame(8, 3)] * 2 + [basis_frame(8, 1)]
        d = decide_session(Session(None, tuple(frames)), g)
        assert not d.identified
        assert d.confidence == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_winner_confidence_averages_its_voting_frames(self):
        g = gap_gallery()
        winners = [gap_frame(0, gap) for gap in (3.0, 2.5, 2.2)]
        fillers = [gap_frame(0, 0.2), gap_frame(1, 0.2)]
        d = decide_session(Session(g.labels[0], tuple(winners + fillers)), g)
        assert d.identified
        assert d.top_label.name == "a"
        want = np.mean([predict(f, g).confidence for f in winners])
        assert d.confidence == pytest.approx(want, abs=1e-15)

    def test_unknown_without_unknown_votes_averages_all_frames(self):
        g = eye_gallery()
        frames = [basis_frame(8, 0)] * 2 + [basis_frame(8, 1)] * 2
        d = decide_session(Session(None, tuple(frames)), g)
        assert not d.identified
        assert d.top_label.name == "a"
        want = np.mean([predict(f, g).confidence for f in frames])
        assert d.confidence == pytest.approx(want, abs=1e-15)

    def test_single_frame_session_matches_frame_prediction(self):
        g = eye_gallery()
        frame = basis_frame(8, 2)
        d = decide_session(Session(g.labels[2], (frame,)), g)
        ref = predict(frame, g)
        assert d.identified == ref.identified
        assert d.top_label == ref.top_label
        assert d.confidence == ref.confidence
        assert np.array_equal(d.probabilities, ref.probabilities)


class TestCountOutcome:
    def _decision(self, identified: bool, name: str) -> RecognitionDecision:
        return RecognitionDecision(
            identified, IdentityLabel(name, 0), 0.9, np.array([0.9, 0.1])
        )

    def test_known_correctly_identified_is_tp(self):
        assert count_outcome("a", self._decision(True, "a")) == ConfusionCounts(tp=1)

    def test_known_rejected_is_fn(self):
        assert count_outcome("a", self._decision(False, "a")) == ConfusionCounts(fn=1)

    def test_known_misidentified_is_fp(self):
        assert count_outcome("a", self._decision(True, "b")) == ConfusionCounts(fp=1)

    def test_unknown_identified_is_fp(self):
        assert count_outcome(None, self._decision(True, "a")) == ConfusionCounts(fp=1)

    def test_unknown_rejected_is_tn(self):
        assert count_outcome(None, self._decision(False, "a")) == ConfusionCounts(tn=1)


class TestScoreSessions:
    def test_randomized_vote_patterns_match_constructed_expectation(self):
        g = eye_gallery()
        names = [lab.name for lab in g.labels]
        rng = np.random.default_rng(77)
        sessions = []
        expected = ConfusionCounts()
        for _ in range(80):
            vote_cls = int(rng.integers(0, 3))
            m = int(rng.integers(0, 6))
            u = int(rng.integers(0, 4))
            if m + u == 0:
                u = 1
            kind = int(rng.integers(0, 3))
            if kind == 2:
                participant = None
            elif kind == 0:
                participant = g.labels[vote_cls]
            else:
                participant = g.labels[(vote_cls + 1) % 3]
            frames = [basis_frame(8, vote_cls)] * m + [uniform_frame(8, 3)] * u
            sessions.append(Session(participant, tuple(frames)))
            winner = names[vote_cls] if 2 * m > m + u else None
            if participant is None:
                expected = expected + (
                    ConfusionCounts(fp=1) if winner else ConfusionCounts(tn=1)
                )
            elif winner is None:
                expected = expected + ConfusionCounts(fn=1)
            elif winner == participant.name:
                expected = expected + ConfusionCounts(tp=1)
            else:
                expected = expected + ConfusionCounts(fp=1)
        got = score_sessions(sessions, g)
        assert got == expected
        assert got.total() == len(sessions)

    def test_threshold_sweep_is_monotone(self):
        g = gap_gallery()
        rng = np.random.default_rng(5)

        def random_session(participant):
            frames = tuple(
                gap_frame(int(rng.integers(0, 2)), float(rng.uniform(0.1, 3.5)))
                for _ in range(5)
            )
            return Session(participant, frames)

        known = [random_session(g.labels[0]) for _ in range(20)]
        unknown = [random_session(None) for _ in range(20)]
        thresholds = [0.55, 0.65, 0.75, 0.85, 0.95]
        fps = [score_sessions(unknown, g, t).fp for t in thresholds]
        fns = [score_sessions(known, g, t).fn for t in thresholds]
        assert all(a >= b for a, b in zip(fps, fps[1:]))
        assert all(a <= b for a, b in zip(fns, fns[1:]))

    def test_empty_session_list_rejected(self):
        with pytest.raises(EmptyDatasetError):
            score_sessions([], eye_gallery())


class TestRateMetrics:
    def test_accuracy_examples(self):
        assert accuracy(ConfusionCounts(tp=3, tn=1, fp=1, fn=1)) == float(
            Fraction(400, 6)
        )
        assert accuracy(ConfusionCounts(tp=9, tn=0, fp=2, fn=1)) == 75.0

    @pytest.mark.parametrize(
        "fp_, tn_, want", [(1, 4, 20.0), (0, 5, 0.0), (9, 1, 90.0)]
    )
    def test_fpr_examples(self, fp_, tn_, want):
        assert fpr(ConfusionCounts(fp=fp_, tn=tn_)) == want

    @pytest.mark.parametrize(
        "fn_, tp_, want", [(1, 1, 50.0), (0, 7, 0.0), (2, 0, 100.0)]
    )
    def test_fnr_examples(self, fn_, tp_, want):
        assert fnr(ConfusionCounts(fn=fn_, tp=tp_)) == want

    def test_accuracy_undefined_for_zero_counts(self):
        with pytest.raises(UndefinedMetricError):
            accuracy(ConfusionCounts())

    def test_fpr_undefined_without_negatives_or_false_accepts(self):
        with pytest.raises(UndefinedMetricError):
            fpr(ConfusionCounts(tp=3, fn=2))

    def test_fnr_undefined_without_known_positives(self):
        with pytest.raises(UndefinedMetricError):
            fnr(ConfusionCounts(tn=4, fp=1))

    @given(counts_st, counts_st, counts_st, counts_st)
    def test_accuracy_matches_exact_rational(self, tp, tn, fp_, fn_):
        c = ConfusionCounts(tp=tp, tn=tn, fp=fp_, fn=fn_)
        if c.total() == 0:
            with pytest.raises(UndefinedMetricError):
                accuracy(c)
        else:
            assert accuracy(c) == float(100 * Fraction(tp + tn, c.total()))

    @given(counts_st, counts_st)
    def test_fpr_matches_exact_rational(self, fp_, tn):
        c = ConfusionCounts(fp=fp_, tn=tn)
        if fp_ + tn == 0:
            with pytest.raises(UndefinedMetricError):
                fpr(c)
        else:
            assert fpr(c) == float(100 * Fraction(fp_, fp_ + tn))

    @given(counts_st, counts_st)
    def test_fnr_matches_exact_rational(self, fn_, tp):
        c = ConfusionCounts(fn=fn_, tp=tp)
        if fn_ + tp == 0:
            with pytest.raises(UndefinedMetricError):
                fnr(c)
        else:
            assert fnr(c) == float(100 * Fraction(fn_, fn_ + tp))


class TestTrainingAccuracy:
    def test_matching_basis_embeddings_score_perfectly(self):
        g = eye_gallery()
        cache = make_cache(np.eye(3, 8), [0, 1, 2])
        assert training_accuracy(cache, g) == 100.0

    def test_tied_logits_resolve_to_lowest_class_id(self):
        g = eye_gallery()
        row = uniform_frame(8, 3).values
        cache = make_cache(np.tile(row, (4, 1)), [0, 0, 1, 2])
        assert training_accuracy(cache, g) == 50.0

    def test_matches_argmax_oracle_on_random_data(self, rng):
        g = make_gallery(c=5, d=10, seed=8)
        vecs = rng.standard_normal((40, 10))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        labels = [int(rng.integers(0, 5)) for _ in range(40)]
        cache = make_cache(vecs, labels)
        logits = g.logit_scale * (vecs @ g.class_embeddings.T)
        correct = sum(
            1 for row, want in zip(logits, labels) if int(np.argmax(row)) == want
        )
        assert training_accuracy(cache, g) == 100.0 * correct / 40

    def test_label_id_outside_gallery_counts_as_incorrect(self):
        g = eye_gallery()
        cache = make_cache(np.eye(2, 8), [0, 9])
        assert training_accuracy(cache, g) == 50.0

    def test_empty_cache_rejected(self):
        g = eye_gallery()
        cache = make_cache(np.zeros((0, 8)), [], dim=8)
        with pytest.raises(EmptyDatasetError):
            training_accuracy(cache, g)


class TestReports:
    def _report(self, model="m", tp=8, tn=1, fp_=1, fn_=2, train=90.0):
        counts = ConfusionCounts(tp=tp, tn=tn, fp=fp_, fn=fn_)
        return make_report(model, [], counts, train)

    def test_make_report_fields_match_the_counts(self):
        r = self._report()
        assert r.deployment_accuracy == 75.0
        assert r.fpr == 50.0
        assert r.fnr == 20.0
        assert r.counts.total() == 12

    def test_inconsistent_rates_rejected(self):
        counts = ConfusionCounts(tp=8, tn=1, fp=1, fn=2)
        with pytest.raises(DataFormatError):
            EvaluationReport(
                model="m",
                outcomes=(),
                counts=counts,
                training_accuracy=90.0,
                deployment_accuracy=accuracy(counts) + 1.0,
                fpr=fpr(counts),
                fnr=fnr(counts),
            )

    def test_single_row_stars_every_column(self):
        text = render_report([self._report()])
        for cell in ("90.00*", "75.00*", "50.00*", "20.00*"):
            assert cell in text
        assert text.endswith("(* best per column; accuracies higher is better, rates lower)")

    def test_best_value_per_column_is_starred(self):
        a = self._report("alpha")
        b = self._report("beta", tp=6, tn=3, fp_=1, fn_=10, train=80.0)
        text = render_report([a, b])
        for starred in ("90.00*", "75.00*", "25.00*", "20.00*"):
            assert starred in text
        for unstarred in ("80.00*", "45.00*", "50.00*", "62.50*"):
            assert unstarred not in text

    def test_csv_round_trip_is_lossless(self):
        counts = ConfusionCounts(tp=1, tn=1, fp=1, fn=0)
        r = make_report("model-x", [], counts, float(Fraction(200, 3)))
        rows = parse_report_csv(report_csv([r]))
        assert len(rows) == 1
        got = rows[0]
        assert got.model == "model-x"
        assert got.training_accuracy == r.training_accuracy
        assert got.deployment_accuracy == r.deployment_accuracy
        assert got.fpr == r.fpr
        assert got.fnr == r.fnr

    def test_csv_header_is_stable(self):
        text = report_csv([self._report()])
        assert text.splitlines()[0] == "model,training_accuracy,deployment_accuracy,fpr,fnr"

    def test_parse_rejects_bad_header(self):
        with pytest.raises(DataFormatError):
            parse_report_csv("nope,a,b,c,d\nm,1,2,3,4\n")

    def test_parse_rejects_wrong_cell_count(self):
        with pytest.raises(DataFormatError):
            parse_report_csv("model,training_accuracy,deployment_accuracy,fpr,fnr\nm,1,2\n")

    def test_parse_rejects_non_numeric_cells(self):
        with pytest.raises(DataFormatError):
            parse_report_csv(
                "model,training_accuracy,deployment_accuracy,fpr,fnr\nm,1,x,3,4\n"
            )

    def test_empty_report_list_rejected(self):
        with pytest.raises(EmptyDatasetError):
            render_report([])
        with pytest.raises(EmptyDatasetError):
            report_csv([])

    def test_session_outcome_carries_participant(self):
        d = RecognitionDecision(True, IdentityLabel("a", 0), 0.9, np.array([0.9, 0.1]))
        out = SessionOutcome("a", d)
        assert out.participant == "a"
        assert out.decision.identified


class TestSessionManifest:
    def test_parses_entries_comments_and_unknown_token(self, tmp_path):
        path = tmp_path / "sessions.txt"
        path.write_text(
            "# demo sessions\n"
            "\n"
            "alice f1.png f2.png\n"
            "UNKNOWN f3.png\n",
            encoding="utf-8",
        )
        entries = parse_session_manifest(path)
        assert entries == [("alice", ["f1.png", "f2.png"]), (None, ["f3.png"])]

    def test_line_without_frames_rejected(self, tmp_path):
        path = tmp_path / "sessions.txt"
        path.write_text("alice\n", encoding="utf-8")
        with pytest.raises(DataFormatError):
            parse_session_manifest(path)

    def test_manifest_without_sessions_rejected(self, tmp_path):
        path = tmp_path / "sessions.txt"
        path.write_text("# only comments\n\n", encoding="utf-8")
        with pytest.raises(EmptyDatasetError):
            parse_session_manifest(path)

    def test_load_sessions_embeds_every_frame(self, tmp_path):
        rng = np.random.default_rng(0)
        for name in ("f1.png", "f2.png", "f3.png"):
            img = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
            assert cv2.imwrite(str(tmp_path / name), img)
        manifest = tmp_path / "sessions.txt"
        manifest.write_text("alice f1.png f2.png\nUNKNOWN f3.png\n", encoding="utf-8")
        sessions, warnings = load_sessions(manifest, MockBackend(seed=0, dim=8))
        assert len(sessions) == 2
        assert sessions[0].participant.name == "alice"
        assert len(sessions[0].frames) == 2
        assert sessions[1].participant is None
        for s in sessions:
            for f in s.frames:
                assert f.values.shape == (8,)
                assert abs(np.linalg.norm(f.values) - 1.0) < 1e-9
        assert len(warnings) == 3
        assert all(w.startswith("WARN") for w in warnings)
