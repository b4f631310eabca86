"""Mamdani fuzzy stress classifier over the eight physiological parameters.

Min activation, max aggregation and centroid defuzzification onto the
[0, 5] output axis, with the crisp label read from five half-open output
bands. Membership functions are anchored to the characterization table:
each level peaks at its interval midpoint and crosses 0.5 exactly on the
interval boundaries, so the dominant fuzzy level always matches the crisp
table lookup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .physio import (
    DEFAULT_TABLE,
    FEATURE_NAMES,
    RangeTable,
    SleepSample,
    StressState,
)

PARAM_COUNT = 8
LEVEL_COUNT = 5
OUTPUT_GRID_POINTS = 1001  # fixed defuzzification grid over [0, 5]


class InferenceError(RuntimeError):
    """No rule produced any output activation."""


def rule_count(p: int, i: int) -> int:
    """Number of level combinations with repetition: binomial(p+i-1, i).

    Exact integer arithmetic; at (8, 5) this evaluates to 792.
    """
    if p < 1 or i < 1:
        raise ValueError("p and i must be >= 1")
    return math.comb(p + i - 1, i)


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


@dataclass(frozen=True)
class MembershipFunction:
    """Piecewise-linear membership over one parameter's value axis.

    ``knots`` are (value, grade) pairs with non-decreasing values; the
    grade extends flat beyond the outermost knots, which gives the
    extreme levels their shoulder shape.
    """

    kind: str  # "triangular" or "shoulder"
    knots: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        xs = [x for x, _ in self.knots]
        if xs != sorted(xs):
            raise ValueError("knot positions must be non-decreasing")
        if not any(g == 1.0 for _, g in self.knots):
            raise ValueError("peak membership must reach 1")

    def __call__(self, value: float) -> float:
        xs = np.array([x for x, _ in self.knots])
        gs = np.array([g for _, g in self.knots])
        return float(np.interp(value, xs, gs))


def build_membership_functions(
    table: RangeTable = DEFAULT_TABLE,
) -> tuple[tuple[MembershipFunction, ...], ...]:
    """Per parameter, the five level membership functions indexed by level.

    Construction: peak 1 at the level's interval midpoint, grade 0.5 at
    each shared interval boundary, grade 0 at the adjacent midpoints.
    Adjacent grades therefore sum to 1 everywhere and only axis-adjacent
    levels ever overlap.
    """
    per_feature: list[tuple[MembershipFunction, ...]] = []
    for feature in table.features:
        axis_levels = sorted(range(LEVEL_COUNT), key=lambda lv: feature.intervals[lv][0])
        mids = {lv: (feature.intervals[lv][0] + feature.intervals[lv][1]) / 2 for lv in axis_levels}
        bounds = {}  # boundary between axis position p and p+1
        for p in range(4):
            bounds[p] = feature.intervals[axis_levels[p]][1]
        mfs: dict[int, MembershipFunction] = {}
        for p, level in enumerate(axis_levels):
            knots: list[tuple[float, float]] = []
            if p > 0:
                knots += [(mids[axis_levels[p - 1]], 0.0), (bounds[p - 1], 0.5)]
            knots.append((mids[level], 1.0))
            if p < 4:
                knots += [(bounds[p], 0.5), (mids[axis_levels[p + 1]], 0.0)]
            kind = "shoulder" if p in (0, 4) else "triangular"
            mfs[level] = MembershipFunction(kind=kind, knots=tuple(knots))
        per_feature.append(tuple(mfs[lv] for lv in range(LEVEL_COUNT)))
    return tuple(per_feature)


def fuzzify(
    sample: SleepSample,
    memberships: Sequence[Sequence[MembershipFunction]] | None = None,
) -> np.ndarray:
    """Grade matrix (8 parameters x 5 levels) for one sample."""
    if memberships is None:
        memberships = build_membership_functions()
    values = sample.as_tuple()
    grades = np.zeros((PARAM_COUNT, LEVEL_COUNT))
    for p in range(PARAM_COUNT):
        for lv in range(LEVEL_COUNT):
            grades[p, lv] = memberships[p][lv](values[p])
    return grades


@dataclass(frozen=True)
class FuzzyRule:
    """IF every (parameter, level) in the antecedent THEN the consequent level.

    Unmentioned parameters are unconstrained; activation is the minimum
    grade over the mentioned ones.
    """

    antecedent: tuple[tuple[int, int], ...]
    consequent: int


@dataclass(frozen=True)
class FuzzyRuleBase:
    rules: tuple[FuzzyRule, ...]

    def __len__(self) -> int:
        return len(self.rules)


# How many size-5 transition masks each band keeps; pins the base at the
# 792-rule census alongside the 40 anchors, 5 uniform rules and the full
# mask sets of sizes 1-4 (4 bands x 162).
_TRANSITION_QUOTAS = (25, 25, 25, 24)


def build_rule_base(table: RangeTable = DEFAULT_TABLE) -> FuzzyRuleBase:
    """Generate the 792-rule base programmatically.

    Three rule families, consequent always the half-up-rounded mean of
    the antecedent levels:

    - anchors: one per (parameter, level), keeping the whole input space
      covered so inference can never fire zero rules;
    - uniform rules: all eight parameters at one level;
    - transition rules: full antecedents mixing two adjacent levels,
      graded by how many parameters sit on the higher one.
    """
    rules: list[FuzzyRule] = []
    for param in range(PARAM_COUNT):
        for level in range(LEVEL_COUNT):
            rules.append(FuzzyRule(((param, level),), level))
    for level in range(LEVEL_COUNT):
        rules.append(FuzzyRule(tuple((p, level) for p in range(PARAM_COUNT)), level))
    for band in range(LEVEL_COUNT - 1):
        kept5 = 0
        for mask in range(1, 2**PARAM_COUNT - 1):
            k = mask.bit_count()
            if k > 5:
                continue
            if k == 5:
                if kept5 >= _TRANSITION_QUOTAS[band]:
                    continue
                kept5 += 1
            levels = tuple(band + ((mask >> p) & 1) for p in range(PARAM_COUNT))
            consequent = round_half_up(sum(levels) / PARAM_COUNT)
            rules.append(FuzzyRule(tuple(enumerate(levels)), consequent))
    base = FuzzyRuleBase(tuple(rules))
    assert len(base) == rule_count(PARAM_COUNT, LEVEL_COUNT)
    return base


# Output bands (k, k+1] on the defuzzified axis; 0 maps to the lowest band.
OUTPUT_BANDS = tuple((float(k), float(k + 1)) for k in range(LEVEL_COUNT))


def label_from_output(y: float) -> StressState:
    """Map a crisp [0, 5] output onto the five half-open stress bands."""
    if not 0.0 <= y <= 5.0:
        raise ValueError(f"output {y} outside [0, 5]")
    return StressState(min(4, max(0, math.ceil(y) - 1)))


class StressFuzzySystem:
    """Prepared Mamdani engine: immutable after construction, thread-safe."""

    def __init__(
        self,
        table: RangeTable = DEFAULT_TABLE,
        rule_base: FuzzyRuleBase | None = None,
        grid_points: int = OUTPUT_GRID_POINTS,
    ):
        self.table = table
        self.memberships = build_membership_functions(table)
        self.rule_base = rule_base if rule_base is not None else build_rule_base(table)
        self.ys = np.linspace(0.0, 5.0, grid_points)
        # consequent level k contributes a unit triangle on [k, k+1]
        self.output_sets = np.stack(
            [
                np.clip(1.0 - np.abs(self.ys - (k + 0.5)) / 0.5, 0.0, 1.0)
                for k in range(LEVEL_COUNT)
            ]
        )
        # pad antecedents to fixed width so activations vectorize;
        # repeating a pair leaves the min unchanged
        n = len(self.rule_base.rules)
        self._params = np.zeros((n, PARAM_COUNT), dtype=np.intp)
        self._levels = np.zeros((n, PARAM_COUNT), dtype=np.intp)
        self._consequents = np.zeros(n, dtype=np.intp)
        for i, rule in enumerate(self.rule_base.rules):
            pairs = list(rule.antecedent)
            while len(pairs) < PARAM_COUNT:
                pairs.append(pairs[0])
            self._params[i] = [p for p, _ in pairs]
            self._levels[i] = [lv for _, lv in pairs]
            self._consequents[i] = rule.consequent
        self._level_masks = [self._consequents == k for k in range(LEVEL_COUNT)]

    def fuzzify(self, sample: SleepSample) -> np.ndarray:
        return fuzzify(sample, self.memberships)

    def infer(self, sample: SleepSample) -> float:
        """Crisp stress output in [0, 5] via centroid defuzzification."""
        grades = self.fuzzify(sample)
        activations = grades[self._params, self._levels].min(axis=1)
        strengths = np.array(
            [activations[mask].max() for mask in self._level_masks]
        )
        mu = np.max(np.minimum(strengths[:, None], self.output_sets), axis=0)
        total = mu.sum()
        if total <= 0.0:
            raise InferenceError("no rule fired for the given sample")
        return float((mu * self.ys).sum() / total)

    def classify(self, sample: SleepSample) -> StressState:
        return label_from_output(self.infer(sample))


def surface_rows(
    system: StressFuzzySystem,
    x_param: str,
    y_param: str,
    at_level: int = 2,
    steps: int = 41,
) -> Iterator[tuple[float, float, float]]:
    """Sweep two parameters over their table spans with the rest fixed at
    the chosen level's interval midpoints; yields (x, y, output) rows for
    external surface plotting."""
    xi = FEATURE_NAMES.index(x_param)
    yi = FEATURE_NAMES.index(y_param)
    if xi == yi:
        raise ValueError("x and y must be different parameters")
    base = []
    for feature in system.table.features:
        lo, hi = feature.intervals[at_level]
        base.append((lo + hi) / 2)
    x_lo, x_hi = system.table.features[xi].span
    y_lo, y_hi = system.table.features[yi].span
    for x in np.linspace(x_lo, x_hi, steps):
        for y in np.linspace(y_lo, y_hi, steps):
            values = list(base)
            values[xi] = float(x)
            values[yi] = float(y)
            out = system.infer(SleepSample.from_values(values))
            yield float(x), float(y), out
