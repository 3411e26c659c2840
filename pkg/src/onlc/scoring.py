"""Clinician-in-the-loop scoring: the four-level rating scale, per-diet hard
boundary tables with importance ranks, the automated penalty lookup, and its
linear approximation.

Penalty multipliers (m1 glucose, m2 weight, m3 keto-ratio) always lie in
[1, 1000]. Ratings map onto the same scale, so a manual rating can stand in
for any automated penalty.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .errors import ConfigError, CoverageError, DomainError, FitError
from .records import DietGroup, PatientProfile, keto_ratio

PENALTY_MIN = 1.0
PENALTY_MAX = 1000.0


class Rating(enum.Enum):
    BAD = "Bad"
    OKAY = "Okay"
    GOOD = "Good"
    VERY_GOOD = "VeryGood"


_RATING_SCORES = {
    Rating.BAD: 1000.0,
    Rating.OKAY: 500.0,
    Rating.GOOD: 100.0,
    Rating.VERY_GOOD: 1.0,
}


def rating_to_score(rating: Rating) -> float:
    """Bad=1000, Okay=500, Good=100, VeryGood=1."""
    if not isinstance(rating, Rating):
        raise DomainError(f"not a rating: {rating!r}")
    return _RATING_SCORES[rating]


def score_to_nearest_rating(score: float) -> Rating:
    """Inverse of rating_to_score by nearest score."""
    return min(_RATING_SCORES, key=lambda r: abs(_RATING_SCORES[r] - score))


class Importance(enum.Enum):
    VERY_IMPORTANT = "VeryImportant"
    MODERATELY_IMPORTANT = "ModeratelyImportant"
    LOW_IMPORTANCE = "LowImportance"


@dataclass(frozen=True)
class BoundarySnapshot:
    """The variable values a boundary check inspects. Review items merge the
    suggested lifestyle variables with the predicted outcome; record checks
    use the day's observations. Unset values skip their rules."""

    net_carb: float | None = None
    fat: float | None = None
    fiber: float | None = None
    protein: float | None = None
    intake_calories: float | None = None
    activity_calories: float | None = None
    steps: float | None = None
    glucose: float | None = None
    ketone: float | None = None
    weight: float | None = None
    keto_ratio: float | None = None
    prev_weight: float | None = None


def snapshot_from_record(record, prev_weight: float | None = None) -> BoundarySnapshot:
    """Build a check snapshot from a DailyRecord, deriving the keto ratio
    from its macros when they are present."""
    ratio = None
    if record.net_carb is not None and record.fat is not None and record.protein is not None:
        if record.net_carb + record.protein > 0:
            ratio = keto_ratio(record.net_carb, record.fat, record.protein)
    return BoundarySnapshot(
        net_carb=record.net_carb,
        fat=record.fat,
        fiber=record.fiber,
        protein=record.protein,
        intake_calories=record.intake_calories,
        activity_calories=record.activity_calories,
        steps=record.steps,
        glucose=record.glucose,
        ketone=record.ketone,
        weight=record.weight,
        keto_ratio=ratio,
        prev_weight=prev_weight,
    )


@dataclass(frozen=True)
class BoundaryRule:
    """One declarative row of a boundary table.

    kind / params:
      range           lo <= x <= hi            (params: lo, hi)
      at_least        x >= threshold           (params: threshold)
      profile_at_least x >= profile.<field>    (params: profile_field)
      profile_below   x < profile.<field>      (params: profile_field)
      activity_margin x < margin + intake_calories  (params: margin)
      calorie_fraction 4*x < fraction * intake_calories  (params: fraction)
      weight_delta    |x - prev_weight| <= delta  (params: delta)
    """

    variable: str
    importance: Importance
    kind: str
    params: dict = field(default_factory=dict)
    boundary_text: str = ""

    def evaluate(self, snapshot: BoundarySnapshot, profile: PatientProfile) -> bool | None:
        """True = satisfied, False = violated, None = not evaluable
        (value absent). Missing profile goals raise ConfigError."""
        x = getattr(snapshot, self.variable)
        if x is None:
            return None
        if self.kind == "range":
            return self.params["lo"] <= x <= self.params["hi"]
        if self.kind == "at_least":
            return x >= self.params["threshold"]
        if self.kind == "profile_at_least":
            goal = getattr(profile, self.params["profile_field"])
            if goal is None:
                raise ConfigError(
                    f"profile {profile.id!r} lacks {self.params['profile_field']} "
                    f"needed by the {self.variable} boundary"
                )
            return x >= goal
        if self.kind == "profile_below":
            goal = getattr(profile, self.params["profile_field"])
            if goal is None:
                raise ConfigError(
                    f"profile {profile.id!r} lacks {self.params['profile_field']} "
                    f"needed by the {self.variable} boundary"
                )
            return x < goal
        if self.kind == "activity_margin":
            if snapshot.intake_calories is None:
                return None
            return x < self.params["margin"] + snapshot.intake_calories
        if self.kind == "calorie_fraction":
            if snapshot.intake_calories is None:
                return None
            return 4.0 * x < self.params["fraction"] * snapshot.intake_calories
        if self.kind == "weight_delta":
            if snapshot.prev_weight is None:
                return None
            return abs(x - snapshot.prev_weight) <= self.params["delta"]
        raise ConfigError(f"unknown boundary rule kind {self.kind!r}")

    def to_json(self) -> dict:
        return {
            "variable": self.variable,
            "importance": self.importance.value,
            "kind": self.kind,
            "params": dict(self.params),
            "boundary_text": self.boundary_text,
        }

    @staticmethod
    def from_json(doc: dict) -> "BoundaryRule":
        return BoundaryRule(
            variable=doc["variable"],
            importance=Importance(doc["importance"]),
            kind=doc["kind"],
            params=dict(doc["params"]),
            boundary_text=doc.get("boundary_text", ""),
        )


@dataclass(frozen=True)
class BoundaryTable:
    diet_group: DietGroup
    rules: tuple[BoundaryRule, ...]
    version: int = 1

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "diet_group": self.diet_group.value,
            "rules": [r.to_json() for r in self.rules],
        }

    @staticmethod
    def from_json(doc: dict) -> "BoundaryTable":
        return BoundaryTable(
            diet_group=DietGroup(doc["diet_group"]),
            rules=tuple(BoundaryRule.from_json(r) for r in doc["rules"]),
            version=doc.get("version", 1),
        )


def default_boundary_table(diet_group: DietGroup) -> BoundaryTable:
    """The shipped hard-boundary tables, one per diet group."""
    vi, mi, li = Importance.VERY_IMPORTANT, Importance.MODERATELY_IMPORTANT, Importance.LOW_IMPORTANCE
    if diet_group is DietGroup.KETO:
        rules = (
            BoundaryRule("net_carb", vi, "range", {"lo": 20.0, "hi": 50.0}, "20-50"),
            BoundaryRule("keto_ratio", vi, "at_least", {"threshold": 1.5}, ">= 1.5"),
            BoundaryRule("weight", vi, "weight_delta", {"delta": 5.0}, "+/- 5 lbs"),
            BoundaryRule("glucose", vi, "range", {"lo": 70.0, "hi": 130.0}, "70-130"),
            BoundaryRule("protein", mi, "profile_at_least", {"profile_field": "min_protein"}, ">= minimum protein"),
            BoundaryRule("fat", mi, "profile_at_least", {"profile_field": "min_fat"}, ">= minimum fat"),
            BoundaryRule("intake_calories", mi, "profile_below", {"profile_field": "calorie_goal"}, "lower than calorie goal"),
            BoundaryRule("ketone", mi, "at_least", {"threshold": 0.5}, ">= 0.5"),
            BoundaryRule("activity_calories", li, "activity_margin", {"margin": 500.0}, "< 500 kcal + intake calories"),
            BoundaryRule("steps", li, "at_least", {"threshold": 6000.0}, ">= 6000"),
        )
    elif diet_group is DietGroup.LOW_FAT:
        rules = (
            BoundaryRule("net_carb", mi, "calorie_fraction", {"fraction": 0.65}, "< 65% calories from carb"),
            BoundaryRule("protein", mi, "profile_at_least", {"profile_field": "min_protein"}, ">= minimum protein"),
            BoundaryRule("fat", vi, "profile_below", {"profile_field": "max_fat"}, "< maximum fat"),
            BoundaryRule("intake_calories", vi, "profile_below", {"profile_field": "calorie_goal"}, "lower than calorie goal"),
            BoundaryRule("activity_calories", li, "activity_margin", {"margin": 500.0}, "< 500 kcal + intake calories"),
            BoundaryRule("steps", li, "at_least", {"threshold": 6000.0}, ">= 6000"),
            BoundaryRule("weight", vi, "weight_delta", {"delta": 5.0}, "+/- 5 lbs"),
            BoundaryRule("glucose", vi, "range", {"lo": 70.0, "hi": 130.0}, "70-130"),
        )
    else:
        raise ConfigError(f"no boundary table for {diet_group!r}")
    return BoundaryTable(diet_group=diet_group, rules=rules)


@dataclass(frozen=True)
class Violation:
    variable: str
    observed: float
    boundary: str
    importance: Importance

    def to_json(self) -> dict:
        return {
            "variable": self.variable,
            "observed": self.observed,
            "boundary": self.boundary,
            "importance": self.importance.value,
        }


def check_boundaries(
    snapshot: BoundarySnapshot,
    profile: PatientProfile,
    table: BoundaryTable | None = None,
) -> list[Violation]:
    """Evaluate every rule of the profile's diet table; return one violation
    per failed predicate, in table order. Rules whose inputs are absent from
    the snapshot are skipped."""
    if table is None:
        table = default_boundary_table(profile.diet_group)
    elif table.diet_group is not profile.diet_group:
        raise ConfigError("boundary table diet group does not match profile")
    violations = []
    for rule in table.rules:
        ok = rule.evaluate(snapshot, profile)
        if ok is False:
            violations.append(
                Violation(
                    variable=rule.variable,
                    observed=getattr(snapshot, rule.variable),
                    boundary=rule.boundary_text,
                    importance=rule.importance,
                )
            )
    return violations


@dataclass(frozen=True)
class PenaltyBand:
    """One contiguous value range mapped to a penalty in [1, 1000]."""

    lo: float
    hi: float
    lo_inclusive: bool
    hi_inclusive: bool
    penalty: float

    def __post_init__(self):
        if not PENALTY_MIN <= self.penalty <= PENALTY_MAX:
            raise ConfigError(f"penalty {self.penalty} outside [{PENALTY_MIN}, {PENALTY_MAX}]")
        if self.hi < self.lo:
            raise ConfigError("band hi below lo")

    def contains(self, x: float) -> bool:
        above_lo = x >= self.lo if self.lo_inclusive else x > self.lo
        below_hi = x <= self.hi if self.hi_inclusive else x < self.hi
        return above_lo and below_hi

    def is_finite(self) -> bool:
        return math.isfinite(self.lo) and math.isfinite(self.hi)

    def midpoint(self) -> float:
        return (self.lo + self.hi) / 2.0

    def to_json(self) -> dict:
        def edge(v):
            if v == math.inf:
                return "inf"
            if v == -math.inf:
                return "-inf"
            return v

        return {
            "lo": edge(self.lo),
            "hi": edge(self.hi),
            "lo_inclusive": self.lo_inclusive,
            "hi_inclusive": self.hi_inclusive,
            "penalty": self.penalty,
        }

    @staticmethod
    def from_json(doc: dict) -> "PenaltyBand":
        def edge(v):
            if v == "inf":
                return math.inf
            if v == "-inf":
                return -math.inf
            return float(v)

        return PenaltyBand(
            lo=edge(doc["lo"]),
            hi=edge(doc["hi"]),
            lo_inclusive=bool(doc["lo_inclusive"]),
            hi_inclusive=bool(doc["hi_inclusive"]),
            penalty=float(doc["penalty"]),
        )


def _validate_bands(variable: str, bands: tuple[PenaltyBand, ...]) -> None:
    ordered = sorted(bands, key=lambda b: (b.lo, b.hi))
    for a, b in zip(ordered, ordered[1:]):
        if b.lo < a.hi or (b.lo == a.hi and a.hi_inclusive and b.lo_inclusive):
            raise ConfigError(f"{variable}: bands overlap near {b.lo}")
        if b.lo > a.hi or (not a.hi_inclusive and not b.lo_inclusive):
            raise ConfigError(f"{variable}: gap between bands at {a.hi}")


@dataclass(frozen=True)
class PenaltyLookup:
    """Per-variable ordered penalty bands. Variables: glucose (predicted
    mg/dL), weight_delta (|predicted - previous| lbs), keto_ratio."""

    bands: dict[str, tuple[PenaltyBand, ...]]
    version: int = 1

    def __post_init__(self):
        for variable, bandlist in self.bands.items():
            if not bandlist:
                raise ConfigError(f"{variable}: empty band list")
            _validate_bands(variable, bandlist)

    def penalty(self, variable: str, x: float) -> float:
        if variable not in self.bands:
            raise CoverageError(f"no penalty bands for variable {variable!r}")
        for band in self.bands[variable]:
            if band.contains(x):
                return band.penalty
        raise CoverageError(f"value {x!r} outside covered domain of {variable!r}")

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "variables": {v: [b.to_json() for b in bl] for v, bl in self.bands.items()},
        }

    @staticmethod
    def from_json(doc: dict) -> "PenaltyLookup":
        return PenaltyLookup(
            bands={
                v: tuple(PenaltyBand.from_json(b) for b in bl)
                for v, bl in doc["variables"].items()
            },
            version=doc.get("version", 1),
        )


def default_penalty_lookup() -> PenaltyLookup:
    """Shipped defaults. Only the glucose 130-140 -> 10 band is clinically
    sourced; the rest are editable defaults for the review console."""
    inf = math.inf
    return PenaltyLookup(
        bands={
            "glucose": (
                PenaltyBand(-inf, 70.0, False, False, 1000.0),
                PenaltyBand(70.0, 130.0, True, True, 1.0),
                PenaltyBand(130.0, 140.0, False, True, 10.0),
                PenaltyBand(140.0, 160.0, False, True, 100.0),
                PenaltyBand(160.0, 200.0, False, True, 500.0),
                PenaltyBand(200.0, inf, False, False, 1000.0),
            ),
            "weight_delta": (
                PenaltyBand(0.0, 5.0, True, True, 1.0),
                PenaltyBand(5.0, 10.0, False, True, 10.0),
                PenaltyBand(10.0, 15.0, False, True, 100.0),
                PenaltyBand(15.0, inf, False, False, 1000.0),
            ),
            "keto_ratio": (
                PenaltyBand(0.0, 1.0, True, False, 500.0),
                PenaltyBand(1.0, 1.5, True, False, 100.0),
                PenaltyBand(1.5, inf, True, False, 1.0),
            ),
        }
    )


def auto_penalties(
    predicted,
    k_ratio: float,
    suggestion,
    profile: PatientProfile,
    lookup: PenaltyLookup,
    prev_weight: float,
) -> tuple[float, float, float]:
    """Automated stand-in for manual scoring: look up one multiplier per
    objective term. m1 from predicted glucose, m2 from the weight change
    magnitude against the previous observation, m3 from the suggested keto
    ratio. `suggestion` is accepted so nurse-defined lookups over suggested
    variables can be added without changing the call sites."""
    m1 = lookup.penalty("glucose", predicted.glucose)
    m2 = lookup.penalty("weight_delta", abs(predicted.weight - prev_weight))
    m3 = lookup.penalty("keto_ratio", k_ratio)
    return (m1, m2, m3)


@dataclass(frozen=True)
class PenaltyLine:
    """One fitted side: penalty(x) = clamp(slope * x + intercept, 1, 1000)."""

    slope: float
    intercept: float
    max_residual: float

    def evaluate(self, x: float) -> float:
        return min(PENALTY_MAX, max(PENALTY_MIN, self.slope * x + self.intercept))


@dataclass(frozen=True)
class LinearPenaltyFit:
    """Least-squares approximation of a band table, one line per side of the
    satisfied region. Queries inside the satisfied region score 1."""

    satisfied_lo: float
    satisfied_hi: float
    below: PenaltyLine | None
    above: PenaltyLine | None

    def evaluate(self, x: float) -> float:
        if self.satisfied_lo <= x <= self.satisfied_hi:
            return PENALTY_MIN
        if x < self.satisfied_lo:
            line = self.below
        else:
            line = self.above
        if line is None:
            return PENALTY_MAX
        return line.evaluate(x)


def _representative_point(band: PenaltyBand, side_bands: list[PenaltyBand]) -> float:
    if band.is_finite():
        return band.midpoint()
    finite_widths = [b.hi - b.lo for b in side_bands if b.is_finite()]
    half_reach = (sum(finite_widths) / len(finite_widths)) / 2.0 if finite_widths else 10.0
    if math.isinf(band.hi):
        return band.lo + half_reach
    return band.hi - half_reach


def _fit_side(side_bands: list[PenaltyBand]) -> PenaltyLine | None:
    if not side_bands:
        return None
    xs = [_representative_point(b, side_bands) for b in side_bands]
    ys = [b.penalty for b in side_bands]
    if len(side_bands) == 1:
        return PenaltyLine(slope=0.0, intercept=ys[0], max_residual=0.0)
    n = len(xs)
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    sxx = sum((x - mean_x) ** 2 for x in xs)
    if sxx == 0:
        return PenaltyLine(slope=0.0, intercept=mean_y, max_residual=max(abs(y - mean_y) for y in ys))
    slope = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys)) / sxx
    intercept = mean_y - slope * mean_x
    residual = max(abs(slope * x + intercept - y) for x, y in zip(xs, ys))
    return PenaltyLine(slope=slope, intercept=intercept, max_residual=residual)


def fit_linear_penalty(bands: tuple[PenaltyBand, ...] | list[PenaltyBand]) -> LinearPenaltyFit:
    """Fit one least-squares line per side of the satisfied region, through
    each band's representative point (midpoint; unbounded bands extend half
    the side's mean finite width past their finite edge).

    The satisfied region is the minimum-penalty band when one scores 1;
    otherwise it is the uncovered range next to the listed bands.
    """
    bands = tuple(sorted(bands, key=lambda b: (b.lo, b.hi)))
    if len(bands) < 2:
        raise FitError("lookup degenerate: need at least two bands to fit")
    sat = next((b for b in bands if b.penalty == PENALTY_MIN), None)
    if sat is not None:
        sat_lo, sat_hi = sat.lo, sat.hi
    else:
        # All listed bands are penalized; the satisfied region is whatever
        # the table leaves uncovered on the low side.
        sat_lo, sat_hi = -math.inf, bands[0].lo
    below = _fit_side([b for b in bands if b.hi <= sat_lo])
    above = _fit_side([b for b in bands if b.lo >= sat_hi])
    if below is None and above is None:
        raise FitError("no bands on either side of the satisfied region")
    return LinearPenaltyFit(satisfied_lo=sat_lo, satisfied_hi=sat_hi, below=below, above=above)
