import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stforge.corpus import AnnotationVector, Query
from stforge.curriculum import (
    CurriculumSchedule,
    EmptyBatch,
    EmptyEligibleSet,
    EmptyRewards,
    LearnabilityRecord,
    MissingDifficulty,
    ProbeStats,
    Region,
    RewardOutOfRange,
    SchedulePhase,
    allocate_budget,
    build_schedule,
    classify_region,
    difficulty_histogram,
    learnability_scores,
    probe_stats,
    tiny_dataset,
    write_histogram_csv,
)


class TestProbeStats:
    def test_all_ones(self):
        s = probe_stats("q", [1.0] * 8)
        assert s.mu_hat == 1.0 and s.sigma2_hat == 0.0

    def test_alternating(self):
        s = probe_stats("q", [0, 1, 0, 1, 0, 1, 0, 1])
        assert s.mu_hat == 0.5 and s.sigma2_hat == 0.25

    def test_singleton(self):
        s = probe_stats("q", [0.5])
        assert s.mu_hat == 0.5 and s.sigma2_hat == 0.0

    def test_empty_rejected(self):
        with pytest.raises(EmptyRewards):
            probe_stats("q", [])

    def test_out_of_range_rejected(self):
        with pytest.raises(RewardOutOfRange):
            probe_stats("q", [0.5, 1.2])

    @given(st.lists(st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
                    min_size=1, max_size=16))
    @settings(max_examples=300, deadline=None)
    def test_moments_match_streaming_recomputation(self, rewards):
        s = probe_stats("q", rewards)
        # independent two-pass recomputation
        n = len(rewards)
        mean = math.fsum(rewards) / n
        var = math.fsum((r - mean) ** 2 for r in rewards) / n
        assert abs(s.mu_hat - mean) <= 1e-12
        assert abs(s.sigma2_hat - var) <= 1e-12
        assert 0.0 <= s.mu_hat <= 1.0
        assert 0.0 <= s.sigma2_hat <= 0.25 + 1e-15


class TestRegions:
    def test_trivial(self):
        assert classify_region(probe_stats("q", [1.0] * 8)) is Region.TRIVIAL

    def test_noise(self):
        assert classify_region(probe_stats("q", [0.0] * 8)) is Region.NOISE

    def test_learnable(self):
        assert classify_region(probe_stats("q", [0, 1, 0, 1, 0, 1, 0, 1])) is Region.LEARNABLE

    def test_bad_eps_rejected(self):
        s = probe_stats("q", [0.5])
        for eps in (0.0, 0.5, -0.1, 0.7):
            with pytest.raises(ValueError):
                classify_region(s, eps_mu=eps)

    def test_partition_exhaustive_exclusive_on_grid(self):
        eps = 0.05
        for mu_step in range(0, 101):
            for var_step in range(0, 26):
                mu = mu_step / 100.0
                var = var_step / 100.0
                stats = ProbeStats("g", (), mu, var, 8)
                matches = [
                    mu >= 1.0 - eps and var <= eps,          # trivial predicate
                    mu <= eps and var <= eps,                # noise predicate
                ]
                region = classify_region(stats, eps, eps)
                assert sum(matches) <= 1
                if matches[0]:
                    assert region is Region.TRIVIAL
                elif matches[1]:
                    assert region is Region.NOISE
                else:
                    assert region is Region.LEARNABLE


class TestLearnability:
    def test_raw_score_midpoint(self):
        recs = learnability_scores([probe_stats("q", [0, 1, 0, 1, 0, 1, 0, 1])])
        assert recs[0].raw_score == 0.125

    def test_zero_variance_annihilates(self):
        recs = learnability_scores([probe_stats("q", [1.0] * 8)])
        assert recs[0].raw_score == 0.0

    def test_identical_batch_normalizes_to_half(self):
        stats = [probe_stats(f"q{i}", [0, 1, 0, 1]) for i in range(5)]
        recs = learnability_scores(stats)
        assert all(r.normalized_score == 0.5 for r in recs)

    def test_normalized_in_unit_interval(self):
        stats = [
            probe_stats("a", [0, 1, 0, 1]),
            probe_stats("b", [1, 1, 1, 0]),
            probe_stats("c", [0, 0, 0, 1]),
        ]
        recs = learnability_scores(stats)
        values = [r.normalized_score for r in recs]
        assert min(values) == 0.0 and max(values) == 1.0
        assert all(0.0 <= v <= 1.0 for v in values)

    def test_empty_batch_rejected(self):
        with pytest.raises(EmptyBatch):
            learnability_scores([])

    def test_score_zero_iff_mu_or_var_zero(self):
        for rewards in ([1.0] * 4, [0.0] * 4, [0.7] * 4):
            s = probe_stats("q", rewards)
            assert (s.sigma2_hat * s.mu_hat == 0.0) == (s.mu_hat == 0.0 or s.sigma2_hat == 0.0)


def _rec(qid, raw, region=Region.LEARNABLE):
    return LearnabilityRecord(
        query_id=qid, raw_score=raw, normalized_score=0.0, region=region
    )


class TestBudget:
    def test_single_learnable_gets_k_max(self):
        out = allocate_budget([_rec("a", 0.1)], 8)
        assert out[0].budget == 8

    def test_four_distinct_scores(self):
        recs = [_rec("a", 0.4), _rec("b", 0.3), _rec("c", 0.2), _rec("d", 0.1)]
        out = allocate_budget(recs, 8)
        assert [r.budget for r in out] == [8, 6, 4, 2]

    def test_non_learnable_gets_zero(self):
        recs = [_rec("a", 0.2), _rec("b", 0.0, Region.TRIVIAL), _rec("c", 0.0, Region.NOISE)]
        out = allocate_budget(recs, 8)
        assert [r.budget for r in out] == [8, 0, 0]

    def test_monotone_and_bounded(self):
        recs = [_rec(f"q{i:02d}", raw) for i, raw in
                enumerate([0.21, 0.05, 0.13, 0.02, 0.19, 0.08, 0.11, 0.03, 0.17, 0.01])]
        out = allocate_budget(recs, 8)
        by_score = sorted(out, key=lambda r: -r.raw_score)
        budgets = [r.budget for r in by_score]
        assert budgets[0] == 8
        assert all(b1 >= b2 for b1, b2 in zip(budgets, budgets[1:]))
        assert all(1 <= b <= 8 for b in budgets)

    def test_ties_break_by_id(self):
        recs = [_rec("b", 0.2), _rec("a", 0.2)]
        out = allocate_budget(recs, 8)
        by_id = {r.query_id: r.budget for r in out}
        assert by_id["a"] == 8 and by_id["b"] == 4


# ---------------------------------------------------------------------------
# Histogram
# ---------------------------------------------------------------------------

def _annotated_query(qid, intent, difficulty):
    return Query(id=qid, text="t", annotation=AnnotationVector(intent), difficulty=difficulty)


class TestHistogram:
    def test_empty_corpus(self):
        assert difficulty_histogram([]) == {}

    def test_five_queries_same_bucket(self):
        intent = "discovery.poi_search.keyword_poi_search"
        qs = [_annotated_query(f"q{i}", intent, 3) for i in range(5)]
        hist = difficulty_histogram(qs)
        assert hist[(intent, 3)] == 5
        assert hist[("ALL", 3)] == 5

    def test_negative_and_zero_scores_have_buckets(self):
        qs = [
            _annotated_query("a", "application_interaction.system_control", -1),
            _annotated_query("b", "application_interaction.system_control", 0),
        ]
        hist = difficulty_histogram(qs)
        assert hist[("application_interaction.system_control", -1)] == 1
        assert hist[("application_interaction.system_control", 0)] == 1

    def test_missing_difficulty_lists_ids(self):
        qs = [
            _annotated_query("ok", "dynamic_information.weather_query", 1),
            Query(id="bad", text="t",
                  annotation=AnnotationVector("dynamic_information.weather_query")),
        ]
        with pytest.raises(MissingDifficulty, match="bad"):
            difficulty_histogram(qs)

    def test_conservation(self):
        qs = [
            _annotated_query(f"q{i}", intent, d)
            for i, (intent, d) in enumerate([
                ("dynamic_information.weather_query", 1),
                ("dynamic_information.weather_query", 2),
                ("planning_and_decision.route_planning", 2),
                ("planning_and_decision.route_planning", 5),
            ])
        ]
        hist = difficulty_histogram(qs)
        non_all = sum(v for (intent, _), v in hist.items() if intent != "ALL")
        all_rows = sum(v for (intent, _), v in hist.items() if intent == "ALL")
        assert non_all == len(qs) and all_rows == len(qs)

    def test_csv_output(self, tmp_path):
        qs = [_annotated_query("a", "dynamic_information.weather_query", 1)]
        path = tmp_path / "hist.csv"
        write_histogram_csv(path, difficulty_histogram(qs))
        lines = path.read_text().splitlines()
        assert lines[0] == "intent,difficulty,count"
        assert "dynamic_information.weather_query,1,1" in lines


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------

def _difficulty_corpus():
    qs = []
    for d in (-1, 0, 1, 2, 3, 4, 5):
        for i in range(10):
            qs.append(Query(id=f"d{d}_{i:02d}", text="t", difficulty=d))
    return qs


class TestSchedule:
    def test_single_weight_emits_only_that_difficulty(self):
        corpus = _difficulty_corpus()
        schedule = CurriculumSchedule(
            phases=(SchedulePhase({1: 1.0}, batch_size=4, num_batches=2),), rng_seed=3
        )
        (phase,) = build_schedule(corpus, schedule)
        for batch in phase:
            for qid in batch:
                assert qid.startswith("d1_")

    def test_two_phase_separation(self):
        corpus = _difficulty_corpus()
        schedule = CurriculumSchedule(
            phases=(
                SchedulePhase({1: 1.0, 2: 1.0}, batch_size=5, num_batches=2),
                SchedulePhase({4: 1.0, 5: 1.0}, batch_size=5, num_batches=2),
            ),
            rng_seed=9,
        )
        easy, hard = build_schedule(corpus, schedule)
        easy_ids = {qid for batch in easy for qid in batch}
        assert all(qid.startswith(("d1_", "d2_")) for qid in easy_ids)
        hard_ids = {qid for batch in hard for qid in batch}
        assert all(qid.startswith(("d4_", "d5_")) for qid in hard_ids)

    def test_same_seed_same_batches(self):
        corpus = _difficulty_corpus()
        schedule = CurriculumSchedule(
            phases=(SchedulePhase({2: 1.0, 3: 0.5}, 6, 3),), rng_seed=42
        )
        assert build_schedule(corpus, schedule) == build_schedule(corpus, schedule)

    def test_no_repeats_within_phase(self):
        corpus = _difficulty_corpus()
        schedule = CurriculumSchedule(
            phases=(SchedulePhase({1: 1.0, 2: 1.0}, 5, 4),), rng_seed=1
        )
        (phase,) = build_schedule(corpus, schedule)
        flat = [qid for batch in phase for qid in batch]
        assert len(flat) == len(set(flat)) == 20

    def test_zero_weight_contributes_nothing(self):
        corpus = _difficulty_corpus()
        schedule = CurriculumSchedule(
            phases=(SchedulePhase({1: 1.0, 5: 0.0}, 10, 1),), rng_seed=2
        )
        (phase,) = build_schedule(corpus, schedule)
        assert all(qid.startswith("d1_") for batch in phase for qid in batch)

    def test_all_weighted_buckets_empty_rejected(self):
        corpus = _difficulty_corpus()
        schedule = CurriculumSchedule(
            phases=(SchedulePhase({5: 1.0}, 2, 1),), rng_seed=0
        )
        empty = [q for q in corpus if q.difficulty != 5]
        with pytest.raises(EmptyEligibleSet):
            build_schedule(empty, schedule)

    def test_tiny_dataset_fraction(self):
        corpus = _difficulty_corpus()
        sub = tiny_dataset(corpus, fraction=0.1, seed=5)
        assert len(sub) == 7
        assert tiny_dataset(corpus, 0.1, 5) == sub  # deterministic
