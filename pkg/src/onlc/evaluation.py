"""Clarke Error Grid analysis for predicted-vs-reference blood glucose.

Every (reference, predicted) pair in (0, inf)^2 lands in exactly one of the
zones A-E. Where the classic region definitions overlap, the less severe
zone wins; the fixed check order below (A, D, C, E, then B as remainder)
realizes that tie-break.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

from .errors import DomainError

ZONES = ("A", "B", "C", "D", "E")


def clarke_zone(reference: float, predicted: float) -> str:
    """Classify one reference/predicted pair (mg/dL) into zone A-E."""
    for name, value in (("reference", reference), ("predicted", predicted)):
        if not math.isfinite(value) or value <= 0:
            raise DomainError(f"{name} glucose must be finite and positive, got {value!r}")

    if (reference < 70.0 and predicted < 70.0) or abs(predicted - reference) <= 0.2 * reference:
        return "A"
    if (
        (reference >= 240.0 and 70.0 <= predicted <= 180.0)
        or (reference <= 175.0 / 3.0 and 70.0 <= predicted <= 180.0)
        or (175.0 / 3.0 <= reference <= 70.0 and 1.2 * reference <= predicted <= 180.0)
    ):
        return "D"
    if (70.0 <= reference <= 290.0 and predicted >= reference + 110.0) or (
        130.0 <= reference <= 180.0 and predicted <= 1.4 * reference - 182.0
    ):
        return "C"
    if (reference >= 180.0 and predicted <= 70.0) or (reference <= 70.0 and predicted >= 180.0):
        return "E"
    return "B"


@dataclass(frozen=True)
class ZoneReport:
    """Zone counts over a set of pairs, with derived fractions."""

    counts: dict
    total: int

    def fraction(self, zone: str) -> float:
        if zone not in ZONES:
            raise DomainError(f"unknown zone {zone!r}")
        if self.total == 0:
            return 0.0
        return self.counts.get(zone, 0) / self.total

    @property
    def zone_a_fraction(self) -> float:
        return self.fraction("A")

    @property
    def clinically_acceptable_fraction(self) -> float:
        """Zones A plus B."""
        return self.fraction("A") + self.fraction("B")

    def to_json(self) -> dict:
        return {
            "total": self.total,
            "counts": {z: self.counts.get(z, 0) for z in ZONES},
            "fractions": {z: self.fraction(z) for z in ZONES},
        }

    def render_text(self) -> str:
        lines = ["zone  count  fraction"]
        for z in ZONES:
            lines.append(f"{z:<5} {self.counts.get(z, 0):>5}  {self.fraction(z):>8.4f}")
        lines.append(f"total {self.total:>5}")
        return "\n".join(lines)


def zone_report(pairs: Iterable[tuple[float, float]]) -> ZoneReport:
    counter = Counter()
    total = 0
    for reference, predicted in pairs:
        counter[clarke_zone(reference, predicted)] += 1
        total += 1
    return ZoneReport(counts=dict(counter), total=total)


def zone_a_fraction(pairs: Iterable[tuple[float, float]]) -> float:
    return zone_report(pairs).zone_a_fraction


def render_zone_csv(pairs: Iterable[tuple[float, float]]) -> str:
    """One line per pair: reference, predicted, zone."""
    lines = ["reference,predicted,zone"]
    for reference, predicted in pairs:
        lines.append(f"{reference!r},{predicted!r},{clarke_zone(reference, predicted)}")
    return "\n".join(lines) + "\n"


def render_report_json(report: ZoneReport) -> str:
    return json.dumps(report.to_json(), sort_keys=True, indent=2) + "\n"
