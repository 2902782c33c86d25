from fractions import Fraction

import numpy as np
import pytest

from pmbank.core import Frame, Timestamp, online_config
from pmbank.harness import (
    QueryOutOfRange,
    compare_policies,
    query_ticks_every,
    run_sliding_window_protocol,
    run_streaming_protocol,
    sample_ticks,
    scene_recall,
    temporal_coverage,
)
from pmbank.policies import no_compression_policy, policy_factory
from pmbank.stream import SceneAnnotation, StreamSpec, gen_synthetic_stream


@pytest.fixture(scope="module")
def stream2():
    return gen_synthetic_stream(StreamSpec(seed=4, base_fps=2, duration_s=120, height=16, width=16, depth=2,
                                           scene_count=6))


@pytest.fixture(scope="module")
def stream8():
    return gen_synthetic_stream(StreamSpec(seed=5, base_fps=8, duration_s=60, height=16, width=16, depth=2,
                                           scene_count=3))


def scenes4():
    return [SceneAnnotation(i, 10 * i, 10 * (i + 1), np.zeros(1, dtype=np.float32)) for i in range(4)]


def at(*ticks):
    return [Frame(Timestamp(t, 8), np.zeros((1, 1, 1), dtype=np.float32)) for t in ticks]


class TestSceneRecall:
    def test_three_of_four(self):
        assert scene_recall(at(1, 12, 35), scenes4(), 40) == 0.75

    def test_empty_readout(self):
        assert scene_recall([], scenes4(), 40) == 0.0

    def test_only_begun_scenes_count(self):
        assert scene_recall(at(1, 12), scenes4(), 15) == 1.0

    def test_everything_retained(self):
        frames = at(*range(0, 40, 3))
        for n in range(1, len(frames) + 1):
            # measured up to the last frame shown, as the harness does
            assert scene_recall(frames[:n], scenes4(), frames[n - 1].tick + 1) == 1.0


def test_temporal_coverage():
    assert temporal_coverage([], 0, 10) == 0.0
    assert temporal_coverage(at(5), 5, 5) == 1.0
    assert temporal_coverage(at(0, 5), 0, 10) == 0.5


def test_sample_ticks_nearest_with_ties_to_earlier():
    assert sample_ticks(8, 2, Fraction(0), Fraction(2)) == [0, 4, 8, 12]
    assert sample_ticks(3, 2, Fraction(0), Fraction(2)) == [0, 1, 3, 4]  # 1.5 -> 1, 4.5 -> 4
    assert sample_ticks(1, 2, Fraction(0), Fraction(2)) == [0, 1]


class TestStreaming:
    def test_offers_two_per_second(self, stream2):
        report = run_streaming_protocol(stream2, no_compression_policy(), [200])
        assert report.records[0].frames_offered == 200

    def test_query_at_zero(self, stream2):
        rec = run_streaming_protocol(stream2, no_compression_policy(), [0]).records[0]
        assert (rec.frames_offered, rec.frames_in_readout, rec.scene_recall) == (0, 0, 0.0)

    def test_no_compression_keeps_everything(self, stream8):
        report = run_streaming_protocol(stream8, no_compression_policy(), query_ticks_every(stream8, 5))
        for rec in report.records:
            assert rec.frames_in_readout == rec.frames_offered == rec.query_tick // 4
            assert rec.scene_recall == 1.0
            assert rec.token_count == 256 * rec.frames_offered

    def test_pyramid_within_budget_and_cache_consistent(self, stream8):
        report = run_streaming_protocol(stream8, policy_factory("pyramid", online_config(depth=2))(),
                                        query_ticks_every(stream8, 5))
        assert report.peak_tokens <= 832
        assert all(rec.token_count <= 832 for rec in report.records)
        assert report.forced_resyncs == 0
        assert report.tokens_appended - report.tokens_erased == report.records[-1].token_count

    def test_out_of_range(self, stream2):
        with pytest.raises(QueryOutOfRange):
            run_streaming_protocol(stream2, no_compression_policy(), [10_000])
        with pytest.raises(QueryOutOfRange):
            run_streaming_protocol(stream2, no_compression_policy(), [20, 10])


class TestSlidingWindow:
    def test_window_counts(self, stream2):
        report = run_sliding_window_protocol(stream2, no_compression_policy, [20, 200])
        assert [r.frames_offered for r in report.records] == [20, 64]

    def test_never_exceeds_64(self, stream8):
        report = run_sliding_window_protocol(stream8, no_compression_policy, query_ticks_every(stream8, 1))
        assert max(r.frames_offered for r in report.records) == 64
        for rec in report.records:
            assert rec.frames_offered == min(64, rec.query_tick // 4)

    def test_fresh_policy_per_query(self, stream2):
        made = []

        def factory():
            made.append(no_compression_policy())
            return made[-1]

        run_sliding_window_protocol(stream2, factory, [10, 20, 30])
        assert len(made) == 3

    def test_equals_streaming_when_window_covers_stream(self, stream8):
        queries = query_ticks_every(stream8, 7)
        factory = policy_factory("pyramid", online_config(depth=2))
        sliding = run_sliding_window_protocol(stream8, factory, queries, window_s=10_000)
        streaming = run_streaming_protocol(stream8, factory(), queries)
        assert sliding.records == streaming.records


class TestCompare:
    def test_single_policy_rejected(self, stream2):
        with pytest.raises(ValueError):
            compare_policies(stream2, {"fifo": policy_factory("fifo", online_config(depth=2, base_fps=2))},
                             "streaming", [20])

    def test_deterministic_and_ranked(self, stream2):
        cfg = online_config(depth=2, base_fps=2)
        policies = {n: policy_factory(n, cfg) for n in ("pyramid", "fifo", "none")}
        a = compare_policies(stream2, policies, "streaming", query_ticks_every(stream2, 20))
        b = compare_policies(stream2, policies, "streaming", query_ticks_every(stream2, 20), jobs=2)
        assert a.summary_csv() == b.summary_csv()
        recalls = [a.reports[n].mean_recall for n in a.ranking]
        assert recalls == sorted(recalls, reverse=True)

    def test_failures_isolated(self, stream2):
        cfg = online_config(depth=2, base_fps=2)
        wrong = online_config(depth=3, base_fps=2)  # shape mismatch on every ingest
        result = compare_policies(stream2, {"good": policy_factory("fifo", cfg),
                                            "bad": policy_factory("pyramid", wrong)}, "streaming", [20])
        assert list(result.reports) == ["good"] and "ShapeMismatch" in result.errors["bad"]
        assert "bad" in result.summary_csv()
