"""Canonical data model: daily self-monitoring records, patient profiles,
CSV ingestion, imputation, and the closed-form domain formulas.

All quantities use fixed units: weight lbs, glucose mg/dL, ketone mmol/L,
macros grams, energy kcal. Dates are calendar days (ISO-8601 in CSV).
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import math
from dataclasses import dataclass, field, replace

from .errors import ConfigError, DomainError, ImputeError, IngestError

# Canonical CSV column order (after the leading date column).
FIELD_NAMES = (
    "net_carb",
    "fat",
    "fiber",
    "protein",
    "intake_calories",
    "activity_calories",
    "steps",
    "glucose",
    "ketone",
    "weight",
)

# Fields that must be strictly positive when observed.
_STRICTLY_POSITIVE = frozenset({"glucose", "ketone", "weight"})


class DietGroup(enum.Enum):
    KETO = "keto"
    LOW_FAT = "low_fat"


class ConditionGroup(enum.Enum):
    OBESE_T2D = "obese_t2d"
    OBESE_KIDNEY_T2D = "obese_kidney_t2d"


class Arm(enum.Enum):
    AI = "ai"
    NON_AI = "non_ai"


@dataclass(frozen=True)
class DailyRecord:
    """One day of self-monitoring. A missing field is None; a field imputed
    after ingestion keeps its value and is listed in `imputed`."""

    date: dt.date
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
    imputed: frozenset[str] = frozenset()

    def __post_init__(self):
        for name in FIELD_NAMES:
            value = getattr(self, name)
            if value is None:
                continue
            if not math.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value!r}")
            if name in _STRICTLY_POSITIVE:
                if value <= 0:
                    raise DomainError(f"{name} must be strictly positive, got {value!r}")
            elif value < 0:
                raise DomainError(f"{name} must be non-negative, got {value!r}")
        unknown = set(self.imputed) - set(FIELD_NAMES)
        if unknown:
            raise DomainError(f"imputed flags name unknown fields: {sorted(unknown)}")

    def value(self, name: str) -> float | None:
        if name not in FIELD_NAMES:
            raise DomainError(f"unknown field {name!r}")
        return getattr(self, name)

    def is_observed(self, name: str) -> bool:
        return self.value(name) is not None and name not in self.imputed

    def is_missing(self, name: str) -> bool:
        return self.value(name) is None

    def is_complete(self) -> bool:
        return all(self.value(name) is not None for name in FIELD_NAMES)

    def to_json(self) -> dict:
        doc = {"date": self.date.isoformat()}
        for name in FIELD_NAMES:
            doc[name] = self.value(name)
        doc["imputed"] = sorted(self.imputed)
        return doc

    @staticmethod
    def from_json(doc: dict) -> "DailyRecord":
        return DailyRecord(
            date=dt.date.fromisoformat(doc["date"]),
            imputed=frozenset(doc.get("imputed", ())),
            **{name: doc.get(name) for name in FIELD_NAMES},
        )


@dataclass
class PatientProfile:
    """Identity, diet/condition assignment, and the per-patient goals the
    boundary rules reference. Weight goal defaults to 80% of baseline."""

    id: str
    diet_group: DietGroup
    condition_group: ConditionGroup
    arm: Arm
    baseline_weight: float
    weight_goal: float | None = None
    calorie_goal: float | None = None
    min_protein: float | None = None
    min_fat: float | None = None
    max_fat: float | None = None
    constraint_overrides: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.baseline_weight <= 0:
            raise DomainError("baseline_weight must be positive")
        if self.weight_goal is None:
            self.weight_goal = weight_goal(self.baseline_weight)

    @property
    def group_key(self) -> str:
        """One of the four fine-tuning groups, e.g. 'keto/obese_t2d'."""
        return f"{self.diet_group.value}/{self.condition_group.value}"

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "diet_group": self.diet_group.value,
            "condition_group": self.condition_group.value,
            "arm": self.arm.value,
            "baseline_weight": self.baseline_weight,
            "weight_goal": self.weight_goal,
            "calorie_goal": self.calorie_goal,
            "min_protein": self.min_protein,
            "min_fat": self.min_fat,
            "max_fat": self.max_fat,
            "constraint_overrides": {
                k: list(v) for k, v in sorted(self.constraint_overrides.items())
            },
        }

    @staticmethod
    def from_json(doc: dict) -> "PatientProfile":
        return PatientProfile(
            id=doc["id"],
            diet_group=DietGroup(doc["diet_group"]),
            condition_group=ConditionGroup(doc["condition_group"]),
            arm=Arm(doc["arm"]),
            baseline_weight=doc["baseline_weight"],
            weight_goal=doc.get("weight_goal"),
            calorie_goal=doc.get("calorie_goal"),
            min_protein=doc.get("min_protein"),
            min_fat=doc.get("min_fat"),
            max_fat=doc.get("max_fat"),
            constraint_overrides={
                k: tuple(v) for k, v in doc.get("constraint_overrides", {}).items()
            },
        )


def keto_ratio(net_carb: float, fat: float, protein: float) -> float:
    """Ratio of fat grams to net-carb plus protein grams."""
    denominator = net_carb + protein
    if denominator <= 0:
        raise DomainError(f"net_carb + protein must be positive, got {denominator!r}")
    return fat / denominator


def weight_goal(baseline_weight: float) -> float:
    """Target weight: 80% of the weight at the start of the program."""
    if baseline_weight <= 0:
        raise DomainError(f"baseline weight must be positive, got {baseline_weight!r}")
    return 0.8 * baseline_weight


def _parse_cell(text: str, name: str, line: int) -> float | None:
    text = text.strip()
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise IngestError(f"malformed number {text!r} in column {name!r}", line=line)
    if not math.isfinite(value):
        raise IngestError(f"non-finite value in column {name!r}", line=line)
    return value


def parse_records(stream: io.TextIOBase | str) -> list[DailyRecord]:
    """Parse a CSV stream into date-sorted DailyRecords.

    The header must name the date column plus every record field. Empty
    cells become missing values. Duplicate dates are an ingestion error.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty stream: missing header row", line=1)
    header = [h.strip() for h in header]
    expected = ["date", *FIELD_NAMES]
    if header != expected:
        raise IngestError(f"header must be {','.join(expected)}, got {','.join(header)}", line=1)

    records: list[DailyRecord] = []
    seen_dates: set[dt.date] = set()
    for line_no, row in enumerate(reader, start=2):
        if not row or all(cell.strip() == "" for cell in row):
            continue
        if len(row) != len(expected):
            raise IngestError(f"expected {len(expected)} cells, got {len(row)}", line=line_no)
        try:
            date = dt.date.fromisoformat(row[0].strip())
        except ValueError:
            raise IngestError(f"malformed date {row[0]!r}", line=line_no)
        if date in seen_dates:
            raise IngestError(f"duplicate date {date.isoformat()}", line=line_no)
        seen_dates.add(date)
        values = {
            name: _parse_cell(cell, name, line_no)
            for name, cell in zip(FIELD_NAMES, row[1:])
        }
        try:
            records.append(DailyRecord(date=date, **values))
        except DomainError as exc:
            raise IngestError(str(exc), line=line_no)
    records.sort(key=lambda r: r.date)
    return records


def _format_cell(value: float | None) -> str:
    if value is None:
        return ""
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def serialize_records(records: list[DailyRecord]) -> str:
    """Render records back to the canonical CSV format (flags are not
    serialized; round-trips are bit-exact on observed fields)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["date", *FIELD_NAMES])
    for rec in records:
        writer.writerow([rec.date.isoformat()] + [_format_cell(rec.value(n)) for n in FIELD_NAMES])
    return out.getvalue()


@dataclass(frozen=True)
class ImputePolicy:
    """Gap-filling policy. 'linear' interpolates between the nearest observed
    neighbors; 'nearest' carries the nearest observation into the gap.
    Boundaries (leading/trailing gaps) always fill from the nearest observation.
    """

    method: str = "linear"

    def __post_init__(self):
        if self.method not in ("linear", "nearest"):
            raise ConfigError(f"unknown imputation method {self.method!r}")


def impute(records: list[DailyRecord], policy: ImputePolicy = ImputePolicy()) -> list[DailyRecord]:
    """Fill every missing field, flagging filled values as imputed.

    Observed values are never altered. Raises ImputeError if a field has no
    observed value anywhere in the series.
    """
    if not records:
        return []
    dates = [r.date for r in records]
    if dates != sorted(dates):
        raise DomainError("records must be date-sorted before imputation")

    n = len(records)
    out_values: list[dict[str, float | None]] = [
        {name: rec.value(name) for name in FIELD_NAMES} for rec in records
    ]
    out_flags: list[set[str]] = [set(rec.imputed) for rec in records]

    day0 = dates[0]
    xs = [(d - day0).days for d in dates]

    for name in FIELD_NAMES:
        observed = [(xs[i], out_values[i][name]) for i in range(n) if out_values[i][name] is not None]
        if not observed:
            raise ImputeError(f"no observed value for field {name!r} anywhere in the series")
        for i in range(n):
            if out_values[i][name] is not None:
                continue
            out_values[i][name] = _fill_value(xs[i], observed, policy.method)
            out_flags[i].add(name)

    return [
        replace(records[i], imputed=frozenset(out_flags[i]), **out_values[i])
        for i in range(n)
    ]


def _fill_value(x: int, observed: list[tuple[int, float]], method: str) -> float:
    # observed is sorted by x and nonempty; x itself is not observed
    prev_pt = None
    next_pt = None
    for ox, ov in observed:
        if ox < x:
            prev_pt = (ox, ov)
        elif ox > x:
            next_pt = (ox, ov)
            break
    if prev_pt is None:
        return next_pt[1]
    if next_pt is None:
        return prev_pt[1]
    if method == "nearest":
        return prev_pt[1] if (x - prev_pt[0]) <= (next_pt[0] - x) else next_pt[1]
    x0, y0 = prev_pt
    x1, y1 = next_pt
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0)
