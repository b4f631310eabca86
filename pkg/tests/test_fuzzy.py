import itertools
import math

import numpy as np
import pytest

from sleepstress.fuzzy import (
    StressFuzzySystem,
    build_rule_base,
    fuzzify,
    label_from_output,
    round_half_up,
    rule_count,
)
from sleepstress.physio import (
    DEFAULT_TABLE,
    FEATURE_NAMES,
    SleepSample,
    StressState,
    classify_crisp,
)


@pytest.fixture(scope="module")
def system():
    return StressFuzzySystem()


def interior_sample(rng, state, margin=1e-6):
    values = []
    for feature in DEFAULT_TABLE.features:
        lo, hi = feature.intervals[state]
        width = hi - lo
        values.append(rng.uniform(lo + margin * width, hi - margin * width))
    return SleepSample.from_values(values)


def midpoint_sample(state):
    values = [
        (f.intervals[state][0] + f.intervals[state][1]) / 2
        for f in DEFAULT_TABLE.features
    ]
    return SleepSample.from_values(values)


class TestRuleCount:
    def test_paper_operating_point(self):
        assert rule_count(8, 5) == 792

    def test_single_parameter_single_level(self):
        assert rule_count(1, 1) == 1

    def test_two_parameters_three_levels(self):
        # brute force: multisets of size 3 over 2 symbols
        enumerated = len(list(itertools.combinations_with_replacement(range(2), 3)))
        assert enumerated == 4
        assert rule_count(2, 3) == 4

    def test_matches_multiset_enumeration_up_to_six(self):
        for p in range(1, 7):
            for i in range(1, 7):
                enumerated = len(
                    list(itertools.combinations_with_replacement(range(p), i))
                )
                assert rule_count(p, i) == enumerated

    def test_rejects_degenerate_inputs(self):
        with pytest.raises(ValueError):
            rule_count(0, 5)
        with pytest.raises(ValueError):
            rule_count(8, 0)


class TestRuleBase:
    def test_exactly_792_rules(self):
        assert len(build_rule_base()) == rule_count(8, 5)

    def test_uniform_low_rule_has_zero_consequent(self):
        base = build_rule_base()
        all_zero = [
            r for r in base.rules
            if len(r.antecedent) == 8 and all(lv == 0 for _, lv in r.antecedent)
        ]
        assert len(all_zero) == 1 and all_zero[0].consequent == 0

    def test_uniform_high_rule_has_top_consequent(self):
        base = build_rule_base()
        all_four = [
            r for r in base.rules
            if all(lv == 4 for _, lv in r.antecedent) and len(r.antecedent) == 8
        ]
        assert len(all_four) == 1 and all_four[0].consequent == 4

    def test_every_consequent_is_rounded_mean(self):
        for rule in build_rule_base().rules:
            levels = [lv for _, lv in rule.antecedent]
            assert rule.consequent == round_half_up(sum(levels) / len(levels))

    def test_rules_are_distinct(self):
        base = build_rule_base()
        assert len({r.antecedent for r in base.rules}) == len(base)


class TestFuzzify:
    def test_interior_midpoint_peaks(self, system):
        grades = system.fuzzify(SleepSample(8, 45, 17, 52, 96, 70, 6, 97))
        snoring = grades[FEATURE_NAMES.index("snoring")]
        assert snoring[0] == 1.0
        assert np.allclose(snoring[1:], 0.0)

    def test_boundary_crossover_at_half(self, system):
        grades = system.fuzzify(SleepSample(8, 50, 17, 52, 96, 70, 6, 97))
        snoring = grades[FEATURE_NAMES.index("snoring")]
        assert snoring[0] == pytest.approx(0.5)
        assert snoring[1] == pytest.approx(0.5)
        assert np.allclose(snoring[2:], 0.0)

    def test_all_boundaries_cross_at_half(self, system):
        for p, feature in enumerate(DEFAULT_TABLE.features):
            ordered = sorted(range(5), key=lambda lv: feature.intervals[lv][0])
            for a, b in zip(ordered, ordered[1:]):
                boundary = feature.intervals[a][1]
                values = list(midpoint_sample(StressState.MEDIUM).as_tuple())
                values[p] = boundary
                grades = system.fuzzify(SleepSample.from_values(values))
                assert grades[p][a] == pytest.approx(0.5)
                assert grades[p][b] == pytest.approx(0.5)

    def test_positive_support_only_adjacent_levels(self, system):
        rng = np.random.default_rng(5)
        for _ in range(300):
            values = []
            for feature in DEFAULT_TABLE.features:
                lo, hi = feature.span
                values.append(rng.uniform(lo - 5, hi + 5))
            grades = system.fuzzify(SleepSample.from_values(values))
            for row in grades:
                positive = np.flatnonzero(row > 0)
                assert len(positive) >= 1  # at least one grade fires
                assert len(positive) <= 2
                if len(positive) == 2:
                    assert positive[1] - positive[0] == 1


class TestInfer:
    def test_low_midpoints_in_low_band(self, system):
        out = system.infer(midpoint_sample(StressState.LOW_NORMAL))
        assert 0.0 < out <= 1.0
        assert classify_crisp(midpoint_sample(StressState.LOW_NORMAL)) == StressState.LOW_NORMAL

    def test_high_extremes_in_high_band(self, system):
        out = system.infer(midpoint_sample(StressState.HIGH))
        assert 4.0 < out <= 5.0

    def test_output_always_in_range(self, system):
        rng = np.random.default_rng(6)
        for _ in range(200):
            values = []
            for feature in DEFAULT_TABLE.features:
                lo, hi = feature.span
                values.append(rng.uniform(lo, hi))
            out = system.infer(SleepSample.from_values(values))
            assert 0.0 <= out <= 5.0

    def test_monotone_trend_across_levels(self, system):
        rng = np.random.default_rng(7)
        for _ in range(50):
            t = rng.uniform(0.05, 0.95, size=8)
            outputs = []
            for state in StressState:
                values = []
                for k, feature in enumerate(DEFAULT_TABLE.features):
                    lo, hi = feature.intervals[state]
                    values.append(lo + t[k] * (hi - lo))
                outputs.append(system.infer(SleepSample.from_values(values)))
            assert all(a < b for a, b in zip(outputs, outputs[1:]))

    def test_continuity_under_small_perturbations(self, system):
        rng = np.random.default_rng(8)
        for _ in range(60):
            state = StressState(rng.integers(0, 5))
            sample = interior_sample(rng, state, margin=0.02)
            base = system.infer(sample)
            for k, feature in enumerate(DEFAULT_TABLE.features):
                lo, hi = feature.span
                delta = 0.001 * (hi - lo)
                values = list(sample.as_tuple())
                values[k] += delta
                moved = system.infer(SleepSample.from_values(values))
                assert abs(moved - base) <= 0.05


class TestLabelFromOutput:
    def test_medium_band(self):
        assert label_from_output(2.5) == StressState.MEDIUM

    def test_zero_maps_to_low(self):
        assert label_from_output(0.0) == StressState.LOW_NORMAL

    def test_band_upper_bounds_inclusive(self):
        assert label_from_output(1.0) == StressState.LOW_NORMAL
        assert label_from_output(4.0) == StressState.MEDIUM_HIGH
        assert label_from_output(4.01) == StressState.HIGH
        assert label_from_output(5.0) == StressState.HIGH

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            label_from_output(-0.1)
        with pytest.raises(ValueError):
            label_from_output(5.1)


class TestAgreement:
    def test_interior_agreement_with_crisp(self, system):
        rng = np.random.default_rng(9)
        for _ in range(500):
            state = StressState(rng.integers(0, 5))
            sample = interior_sample(rng, state)
            assert classify_crisp(sample) == state
            assert system.classify(sample) == state


def test_surface_rows_cover_grid(system):
    from sleepstress.fuzzy import surface_rows

    rows = list(surface_rows(system, "snoring", "heart_rate", at_level=2, steps=5))
    assert len(rows) == 25
    assert all(0.0 <= out <= 5.0 for _, _, out in rows)


def test_surface_rejects_same_parameter(system):
    from sleepstress.fuzzy import surface_rows

    with pytest.raises(ValueError):
        list(surface_rows(system, "snoring", "snoring"))
