"""Feature-level problem generation.

A problem is five sequence images plus four candidate continuations, all
described here as :class:`FeatureVector` objects. Nothing in this module
touches pixels; :mod:`seqreason.raster` turns feature vectors into images.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

N_SEQ = 5
N_CHOICES = 4
N_GRID_VALUES = 6
N_CELLS = 9
COUNT_VALUES = tuple(range(1, 10))
MAX_RETRIES = 1000


class Feature(str, enum.Enum):
    COLOR = "color"
    NUMBER = "number"
    SIZE = "size"
    SHAPE = "shape"
    ARRANGEMENT = "arrangement"


PREDICTIVE_FEATURES = (Feature.COLOR, Feature.NUMBER, Feature.SIZE)


class ShapeKind(str, enum.Enum):
    CIRCLE = "circle"
    TRIANGLE = "triangle"
    SQUARE = "square"
    STAR = "star"
    HEXAGON = "hexagon"


SHAPES = tuple(ShapeKind)


class Role(str, enum.Enum):
    CONSTANT = "constant"
    DISTRACTOR = "distractor"


class RuleKind(str, enum.Enum):
    LINEAR = "linear"
    EXPONENTIAL = "exponential"
    SQRT = "sqrt"
    ALTERNATING = "alternating"


class UnsupportedRuleError(ValueError):
    pass


class GeneratorExhaustedError(RuntimeError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    count: int
    shade_idx: int
    shape_kind: ShapeKind
    size_idx: int
    arrangement: tuple[int, ...]

    def __post_init__(self):
        if not 1 <= self.count <= 9:
            raise ValueError(f"count must be in [1, 9], got {self.count}")
        for name in ("shade_idx", "size_idx"):
            v = getattr(self, name)
            if not 0 <= v < N_GRID_VALUES:
                raise ValueError(f"{name} must be in [0, 5], got {v}")
        if sorted(self.arrangement) != list(range(N_CELLS)):
            raise ValueError(f"arrangement must be a permutation of 0..8, got {self.arrangement}")

    def value(self, feature: Feature):
        return {
            Feature.COLOR: self.shade_idx,
            Feature.NUMBER: self.count,
            Feature.SIZE: self.size_idx,
            Feature.SHAPE: self.shape_kind,
            Feature.ARRANGEMENT: self.arrangement,
        }[feature]

    def visual_key(self) -> tuple:
        """Key that is equal iff two vectors render to the same image."""
        return (
            self.count,
            self.shade_idx,
            self.shape_kind,
            self.size_idx,
            frozenset(self.arrangement[: self.count]),
        )

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "shade_idx": self.shade_idx,
            "shape_kind": self.shape_kind.value,
            "size_idx": self.size_idx,
            "arrangement": list(self.arrangement),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> FeatureVector:
        return cls(
            count=int(d["count"]),
            shade_idx=int(d["shade_idx"]),
            shape_kind=ShapeKind(d["shape_kind"]),
            size_idx=int(d["size_idx"]),
            arrangement=tuple(int(a) for a in d["arrangement"]),
        )


_FIELD_FOR = {
    Feature.COLOR: "shade_idx",
    Feature.NUMBER: "count",
    Feature.SIZE: "size_idx",
    Feature.SHAPE: "shape_kind",
    Feature.ARRANGEMENT: "arrangement",
}


@dataclass(frozen=True)
class Rule:
    """Update rule for the predictive feature.

    ``params`` is only used by ALTERNATING: the two alternated values. When
    left as None, a fresh pair is drawn for every problem.
    """

    kind: RuleKind = RuleKind.LINEAR
    params: tuple[int, int] | None = None

    def __post_init__(self):
        if self.params is not None:
            if self.kind is not RuleKind.ALTERNATING:
                raise ValueError("only the alternating rule takes parameters")
            a, b = self.params
            if a == b:
                raise ValueError("alternating rule requires two distinct values")

    @property
    def name(self) -> str:
        if self.params is None:
            return self.kind.value
        return f"{self.kind.value}-{self.params[0]}-{self.params[1]}"

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "params": None if self.params is None else list(self.params)}

    @classmethod
    def from_dict(cls, d: Mapping) -> Rule:
        params = d.get("params")
        return cls(RuleKind(d["kind"]), None if params is None else tuple(params))


def _non_predictive(predictive: Feature) -> tuple[Feature, ...]:
    # alphabetical by name; this order also defines the condition bitmask
    return tuple(sorted((f for f in Feature if f is not predictive), key=lambda f: f.value))


@dataclass(frozen=True)
class TestCondition:
    """Predictive feature, its rule, and which other features are distractors.

    ``pinned`` fixes the value of selected Constant features (used by the
    conflict-controlled schedules, e.g. Number held at 5 shapes).
    """

    __test__ = False  # not a pytest class

    predictive: Feature
    rule: Rule = field(default_factory=Rule)
    distractors: frozenset[Feature] = frozenset()
    pinned: tuple[tuple[Feature, int], ...] = ()

    def __post_init__(self):
        if self.predictive not in PREDICTIVE_FEATURES:
            raise ValueError(f"{self.predictive.value} can never be a predictive feature")
        if self.predictive in self.distractors:
            raise ValueError("the predictive feature cannot also be a distractor")
        for f, _ in self.pinned:
            if f is self.predictive or f in self.distractors:
                raise ValueError(f"only constant features can be pinned, not {f.value}")

    @property
    def non_predictive(self) -> tuple[Feature, ...]:
        return _non_predictive(self.predictive)

    @property
    def roles(self) -> dict[Feature, Role]:
        return {
            f: Role.DISTRACTOR if f in self.distractors else Role.CONSTANT
            for f in self.non_predictive
        }

    @property
    def difficulty(self) -> int:
        return len(self.distractors)

    @property
    def bitmask(self) -> int:
        return sum(1 << i for i, f in enumerate(self.non_predictive) if f in self.distractors)

    @property
    def label(self) -> str:
        d = "+".join(sorted(f.value for f in self.distractors)) or "none"
        return f"{self.predictive.value}/{self.rule.name}/{d}"

    def to_dict(self) -> dict:
        return {
            "predictive": self.predictive.value,
            "rule": self.rule.to_dict(),
            "distractors": sorted(f.value for f in self.distractors),
            "pinned": {f.value: v for f, v in self.pinned},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> TestCondition:
        return cls(
            predictive=Feature(d["predictive"]),
            rule=Rule.from_dict(d["rule"]),
            distractors=frozenset(Feature(f) for f in d["distractors"]),
            pinned=tuple((Feature(f), int(v)) for f, v in d.get("pinned", {}).items()),
        )


def enumerate_conditions(predictive: Feature, rule: Rule = Rule()) -> list[TestCondition]:
    """All 16 constant/distractor assignments, easiest first."""
    if predictive not in PREDICTIVE_FEATURES:
        raise ValueError(f"{Feature(predictive).value} can never be a predictive feature")
    others = _non_predictive(predictive)
    subsets = []
    for k in range(len(others) + 1):
        subsets.extend(itertools.combinations(others, k))
    return [TestCondition(predictive, rule, frozenset(s)) for s in subsets]


def condition_from_bitmask(predictive: Feature, bitmask: int, rule: Rule = Rule()) -> TestCondition:
    others = _non_predictive(predictive)
    if not 0 <= bitmask < 1 << len(others):
        raise ValueError(f"bitmask out of range: {bitmask}")
    return TestCondition(predictive, rule, frozenset(f for i, f in enumerate(others) if bitmask >> i & 1))


def value_grid(feature: Feature) -> tuple:
    """All admissible values of a feature (indices for shade/size)."""
    if feature is Feature.NUMBER:
        return COUNT_VALUES
    if feature in (Feature.COLOR, Feature.SIZE):
        return tuple(range(N_GRID_VALUES))
    if feature is Feature.SHAPE:
        return SHAPES
    raise ValueError(f"{feature.value} has no finite value grid")


def rule_track(rule: Rule, feature: Feature, rng: np.random.Generator) -> list[int]:
    """Values at sequence positions 1-5 followed by the correct continuation."""
    if feature not in PREDICTIVE_FEATURES:
        raise ValueError(f"{feature.value} can never be a predictive feature")
    n = N_SEQ + 1
    if rule.kind is RuleKind.ALTERNATING:
        if rule.params is None:
            grid = value_grid(feature)
            i, j = rng.choice(len(grid), size=2, replace=False)
            a, b = grid[i], grid[j]
        else:
            a, b = rule.params
            grid = value_grid(feature)
            if a not in grid or b not in grid:
                raise ValueError(f"alternating values {rule.params} outside the {feature.value} grid")
        return [int(a) if k % 2 == 0 else int(b) for k in range(n)]
    if feature is Feature.NUMBER:
        if rule.kind is not RuleKind.LINEAR:
            raise UnsupportedRuleError(f"{rule.kind.value} rule is not defined for the number feature")
        start = int(rng.integers(1, 5))
        return list(range(start, start + n))
    # exponential/sqrt reuse the index track; the renderer re-spaces the grid
    return list(range(n))


@dataclass(frozen=True)
class ProblemFeatures:
    sequence: tuple[FeatureVector, ...]
    choices: tuple[FeatureVector, ...]
    answer_idx: int
    condition: TestCondition
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "condition": self.condition.to_dict(),
            "sequence": [fv.to_dict() for fv in self.sequence],
            "choices": [fv.to_dict() for fv in self.choices],
            "answer_idx": self.answer_idx,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> ProblemFeatures:
        return cls(
            sequence=tuple(FeatureVector.from_dict(v) for v in d["sequence"]),
            choices=tuple(FeatureVector.from_dict(v) for v in d["choices"]),
            answer_idx=int(d["answer_idx"]),
            condition=TestCondition.from_dict(d["condition"]),
            seed=d.get("seed"),
        )


def _draw(feature: Feature, rng: np.random.Generator):
    if feature is Feature.ARRANGEMENT:
        return tuple(int(c) for c in rng.permutation(N_CELLS))
    grid = value_grid(feature)
    v = grid[int(rng.integers(len(grid)))]
    return v if feature is Feature.SHAPE else int(v)


def sample_problem(condition: TestCondition, rng: np.random.Generator, seed: int | None = None) -> ProblemFeatures:
    pf = condition.predictive
    track = rule_track(condition.rule, pf, rng)
    pinned = dict(condition.pinned)
    constants = {}
    for f in condition.non_predictive:
        if f in condition.distractors:
            continue
        if f in pinned:
            constants[f] = pinned[f]
            continue
        constants[f] = _draw(f, rng)

    def vector(pf_value) -> FeatureVector:
        values = {pf: pf_value}
        for f in condition.non_predictive:
            values[f] = constants[f] if f in constants else _draw(f, rng)
        return FeatureVector(**{_FIELD_FOR[f]: v for f, v in values.items()})

    sequence = tuple(vector(v) for v in track[:N_SEQ])
    answer_idx = int(rng.integers(N_CHOICES))
    correct = track[N_SEQ]
    wrong_pool = [v for v in value_grid(pf) if v != correct]

    for _ in range(MAX_RETRIES):
        picks = rng.choice(len(wrong_pool), size=N_CHOICES - 1, replace=False)
        wrong = [wrong_pool[i] for i in picks]
        wrong.insert(answer_idx, correct)
        choices = tuple(vector(v) for v in wrong)
        if len({c.visual_key() for c in choices}) == N_CHOICES:
            return ProblemFeatures(sequence, choices, answer_idx, condition, seed)
    raise GeneratorExhaustedError(f"could not draw {N_CHOICES} distinct choices for {condition.label}")
