"""Daily message assembly: meal plan search, motivation rotation, step goals.

A suggestion only becomes useful to a patient once it is translated into
concrete food servings, a motivational nudge, and a step target. The meal
planner runs a bounded integer search over catalog servings; a deliberately
separate checker re-verifies every plan so the planner can never be its own
judge.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from datetime import date
from importlib import resources

from .controller import ConstraintBox, default_box
from .errors import ConfigError, DomainError, InfeasiblePlanError
from .records import PatientProfile
from .scoring import Importance, Violation

__all__ = [
    "FoodGroup",
    "FoodItem",
    "MealPlan",
    "load_food_catalog",
    "plan_meals",
    "check_meal_plan",
    "MESSAGE_DOMAINS",
    "VARIABLE_DOMAINS",
    "Motivation",
    "MessageEvent",
    "load_message_pool",
    "pick_motivation",
    "step_goal",
    "DailyMessage",
    "compose",
]


class FoodGroup(enum.Enum):
    LEAN_MEAT = "LeanMeat"
    MEDIUM_FAT_MEAT = "MediumFatMeat"
    HIGH_FAT_MEAT = "HighFatMeat"
    VEGETABLES = "Vegetables"
    FRUITS = "Fruits"
    WHOLE_MILK = "WholeMilk"
    NUTS_SEEDS = "NutsSeeds"
    SATURATED_FATS = "SaturatedFats"


GROUP_DISPLAY = {
    FoodGroup.LEAN_MEAT: "Lean-Fat Meat and Substitutes",
    FoodGroup.MEDIUM_FAT_MEAT: "Medium-Fat Meat and Substitutes",
    FoodGroup.HIGH_FAT_MEAT: "High-Fat Meat and Substitutes",
    FoodGroup.VEGETABLES: "Vegetables",
    FoodGroup.FRUITS: "Fruits",
    FoodGroup.WHOLE_MILK: "Whole Milk",
    FoodGroup.NUTS_SEEDS: "Nuts and Seeds",
    FoodGroup.SATURATED_FATS: "Saturated Fats",
}

# one canonical render order, matching the sample meal plan table
_GROUP_ORDER = tuple(FoodGroup)

@dataclass(frozen=True)
class FoodItem:
    """One catalog entry with per-serving macros.

    Macro values in the shipped catalog are approximate fixtures; the
    constraint checker, not the catalog, is the correctness authority.
    """

    name: str
    food_group: FoodGroup
    serving: str
    net_carb: float
    fat: float
    fiber: float
    protein: float
    calories: float
    max_servings: int

    def __post_init__(self):
        for field_name in ("net_carb", "fat", "fiber", "protein", "calories"):
            v = getattr(self, field_name)
            if not math.isfinite(v) or v < 0:
                raise DomainError(f"{self.name!r}: {field_name} must be finite and non-negative")
        if self.max_servings < 1:
            raise DomainError(f"{self.name!r}: max_servings must be at least 1")
        recon = 4.0 * self.net_carb + 9.0 * self.fat + 4.0 * self.protein
        # calories must be explainable by the macros, within 20%
        if recon <= 0 or abs(self.calories - recon) > 0.2 * recon:
            raise DomainError(
                f"{self.name!r}: calories {self.calories} outside 20% of "
                f"macro reconstruction {recon:.1f}"
            )

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "food_group": self.food_group.value,
            "serving": self.serving,
            "net_carb": self.net_carb,
            "fat": self.fat,
            "fiber": self.fiber,
            "protein": self.protein,
            "calories": self.calories,
            "max_servings": self.max_servings,
        }

    @staticmethod
    def from_json(doc: dict) -> "FoodItem":
        return FoodItem(
            name=doc["name"],
            food_group=FoodGroup(doc["food_group"]),
            serving=doc["serving"],
            net_carb=float(doc["net_carb"]),
            fat=float(doc["fat"]),
            fiber=float(doc["fiber"]),
            protein=float(doc["protein"]),
            calories=float(doc["calories"]),
            max_servings=int(doc["max_servings"]),
        )


def load_food_catalog(path=None) -> list[FoodItem]:
    """Load the packaged catalog, or a caller-supplied JSON file."""
    if path is None:
        text = resources.files("onlc.data").joinpath("food_catalog.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    doc = json.loads(text)
    items = [FoodItem.from_json(d) for d in doc["items"]]
    names = [it.name for it in items]
    if len(set(names)) != len(names):
        raise ConfigError("food catalog has duplicate item names")
    return items


@dataclass(frozen=True)
class MealPlan:
    """Selected (item, servings) pairs plus their totals.

    Totals are stored, not derived, so a hand-built plan that lies about
    them fails construction.
    """

    selections: tuple[tuple[FoodItem, int], ...]
    total_net_carb: float
    total_fat: float
    total_fiber: float
    total_protein: float
    total_calories: float

    def __post_init__(self):
        c = f = fi = p = cal = 0.0
        for item, servings in self.selections:
            if servings < 1 or servings != int(servings):
                raise DomainError(f"{item.name!r}: servings must be a positive integer")
            if servings > item.max_servings:
                raise DomainError(f"{item.name!r}: {servings} servings over its daily cap")
            c += item.net_carb * servings
            f += item.fat * servings
            fi += item.fiber * servings
            p += item.protein * servings
            cal += item.calories * servings
        stored = (self.total_net_carb, self.total_fat, self.total_fiber,
                  self.total_protein, self.total_calories)
        for got, want in zip(stored, (c, f, fi, p, cal)):
            if abs(got - want) > 1e-6:
                raise DomainError("meal plan totals disagree with serving-weighted sums")

    @staticmethod
    def from_selections(selections) -> "MealPlan":
        sel = tuple((item, int(s)) for item, s in selections)
        return MealPlan(
            selections=sel,
            total_net_carb=sum(i.net_carb * s for i, s in sel),
            total_fat=sum(i.fat * s for i, s in sel),
            total_fiber=sum(i.fiber * s for i, s in sel),
            total_protein=sum(i.protein * s for i, s in sel),
            total_calories=sum(i.calories * s for i, s in sel),
        )

    @property
    def groups_used(self) -> frozenset:
        return frozenset(item.food_group for item, _ in self.selections)

    def to_json(self) -> dict:
        return {
            "selections": [
                {
                    "name": item.name,
                    "food_group": item.food_group.value,
                    "serving": item.serving,
                    "servings": servings,
                }
                for item, servings in self.selections
            ],
            "totals": {
                "net_carb": self.total_net_carb,
                "fat": self.total_fat,
                "fiber": self.total_fiber,
                "protein": self.total_protein,
                "calories": self.total_calories,
            },
        }


MACRO_TOLERANCE = 0.10  # plan totals may differ from targets by this fraction
_SERVING_CAP = 8  # per item per day, independent of the catalog's own caps


def _targets_from(suggestion) -> tuple[float, float, float]:
    return (float(suggestion.net_carb), float(suggestion.fat), float(suggestion.protein))


def plan_meals(suggestion, catalog: list[FoodItem], profile: PatientProfile,
               box: ConstraintBox | None = None) -> MealPlan:
    """Search integer servings hitting the suggestion's macros within 10%,
    fiber inside the diet box, calories under the profile goal. Among
    feasible plans, group variety wins; total macro deviation breaks ties.

    Raises InfeasiblePlanError with the binding constraint named when no
    serving assignment works.
    """
    if not catalog:
        raise ConfigError("empty food catalog")
    if profile.calorie_goal is None:
        raise ConfigError(f"profile {profile.id!r} lacks the calorie goal the planner needs")
    if box is None:
        box = default_box(profile.diet_group, profile.constraint_overrides)
    targets = _targets_from(suggestion)
    if min(targets) < 0:
        raise InfeasiblePlanError(
            "targets require negative servings: "
            + ", ".join(f"{n}={t:g}" for n, t in zip(("net_carb", "fat", "protein"), targets) if t < 0)
        )
    fiber_lo, fiber_hi = box.bounds["fiber"]
    windows = [
        (0.9 * targets[0], 1.1 * targets[0]),
        (0.9 * targets[1], 1.1 * targets[1]),
        (0.9 * targets[2], 1.1 * targets[2]),
        (fiber_lo, fiber_hi),
    ]
    cal_goal = float(profile.calorie_goal)
    servings = _search(catalog, windows, cal_goal, targets)
    if servings is None:
        raise InfeasiblePlanError(_diagnose(catalog, windows, cal_goal, targets))
    return MealPlan.from_selections(
        (item, s) for item, s in zip(catalog, servings) if s > 0)


def _search(catalog, windows, cal_goal, targets):
    """Branch-and-bound over integer servings, run in two lexicographic
    stages: first maximize the distinct-group count, then minimize total
    macro deviation at that count. Returns servings in catalog order, or
    None when infeasible."""
    import numpy as np
    from scipy.optimize import Bounds, LinearConstraint, milp

    n = len(catalog)
    groups = sorted({it.food_group for it in catalog}, key=lambda g: g.value)
    ng = len(groups)
    nz = n + ng + 3  # servings, group-used indicators, deviation slacks

    def row(values=()):
        r = np.zeros(nz)
        for j, v in values:
            r[j] = v
        return r

    # macros scale by 10 so the windows sit better against solver tolerances
    macro_rows = []
    for m, attr in enumerate(("net_carb", "fat", "protein", "fiber")):
        macro_rows.append(row((i, 10.0 * getattr(it, attr)) for i, it in enumerate(catalog)))
    cal_values = row((i, it.calories) for i, it in enumerate(catalog))
    variety = row(((n + k, -1.0) for k in range(ng)))

    base = []  # (row, lb, ub) shared by both stages
    for m in range(4):
        lo, hi = windows[m]
        base.append((macro_rows[m], 10.0 * lo - 1e-6, 10.0 * hi + 1e-6))
    base.append((cal_values, -np.inf, cal_goal + 1e-6))
    # a group counts as used only when one of its items has a serving
    for k, g in enumerate(groups):
        link = row([(n + k, 1.0)] + [(i, -1.0) for i, it in enumerate(catalog)
                                     if it.food_group is g])
        base.append((link, -np.inf, 0.0))
    # interchangeable items would otherwise multiply the search tree
    seen: dict = {}
    for i, it in enumerate(catalog):
        key = (it.food_group, it.net_carb, it.fat, it.fiber, it.protein,
               it.calories, it.max_servings)
        if key in seen:
            base.append((row([(seen[key], 1.0), (i, -1.0)]), 0.0, np.inf))
        seen[key] = i

    lb = np.zeros(nz)
    ub = np.concatenate([
        [min(it.max_servings, _SERVING_CAP) for it in catalog],
        np.ones(ng),
        np.full(3, np.inf),
    ])
    integrality = np.concatenate([np.ones(n + ng), np.zeros(3)])

    def solve(cost_rows, extra):
        cons = [LinearConstraint(r, lo_, hi_) for r, lo_, hi_ in base + extra]
        return milp(c=cost_rows, constraints=cons, bounds=Bounds(lb, ub),
                    integrality=integrality, options={"mip_rel_gap": 0.0})

    stage1 = solve(variety, [])
    if not stage1.success:
        return None
    best_groups = int(round(-stage1.fun))

    # stage 2: hold the variety, squeeze the total macro deviation
    extra = [(variety, -np.inf, -float(best_groups))]
    for m in range(3):
        over = macro_rows[m].copy();  over[n + ng + m] = -1.0
        under = -macro_rows[m];       under[n + ng + m] = -1.0
        extra.append((over, -np.inf, 10.0 * targets[m]))
        extra.append((under, -np.inf, -10.0 * targets[m]))
    dev_cost = row(((n + ng + m, 1.0) for m in range(3)))
    stage2 = solve(dev_cost, extra)
    if not stage2.success:  # cannot happen when stage 1 succeeded
        return None
    return [int(round(v)) for v in stage2.x[:n]]


def _diagnose(catalog, windows, cal_goal, targets) -> str:
    """Name the binding constraint: try relaxing one family at a time and
    report the first relaxation that restores feasibility."""
    names = ("net_carb", "fat", "protein", "fiber")
    reach = [sum(min(it.max_servings, _SERVING_CAP) * getattr(it, m) for it in catalog)
             for m in ("net_carb", "fat", "protein", "fiber")]
    for m in range(4):
        if reach[m] + 1e-9 < windows[m][0]:
            return (f"infeasible: {names[m]} lower bound {windows[m][0]:.1f} g "
                    f"unreachable (catalog maximum {reach[m]:.1f} g)")
    if _search(catalog, windows, math.inf, targets) is not None:
        return (f"infeasible: calorie goal {cal_goal:.0f} kcal binds; "
                "targets need more calories than the goal allows")
    relaxed_fiber = list(windows)
    relaxed_fiber[3] = (0.0, math.inf)
    if _search(catalog, relaxed_fiber, cal_goal, targets) is not None:
        return (f"infeasible: fiber range {windows[3][0]:.0f}-{windows[3][1]:.0f} g binds; "
                "macro targets leave no room for it")
    for m in range(3):
        relaxed = list(windows)
        relaxed[m] = (0.0, math.inf)
        if _search(catalog, relaxed, cal_goal, targets) is not None:
            return (f"infeasible: {names[m]} window "
                    f"{windows[m][0]:.1f}-{windows[m][1]:.1f} g binds against the others")
    return "infeasible: macro windows are jointly unsatisfiable for this catalog"


def check_meal_plan(plan: MealPlan, suggestion, profile: PatientProfile,
                    box: ConstraintBox | None = None) -> list[str]:
    """Independent verification of a plan against its targets. Plain float
    recomputation from the selections, sharing no code with the planner.
    Returns problem descriptions; an empty list means the plan passes."""
    if box is None:
        box = default_box(profile.diet_group, profile.constraint_overrides)
    problems = []
    carb = fat = fiber = protein = calories = 0.0
    for item, servings in plan.selections:
        if not isinstance(servings, int) or servings < 1:
            problems.append(f"{item.name}: servings {servings!r} not a positive integer")
            continue
        if servings > item.max_servings:
            problems.append(f"{item.name}: {servings} servings exceeds cap {item.max_servings}")
        carb += servings * item.net_carb
        fat += servings * item.fat
        fiber += servings * item.fiber
        protein += servings * item.protein
        calories += servings * item.calories
    for name, total, target in (("net_carb", carb, suggestion.net_carb),
                                ("fat", fat, suggestion.fat),
                                ("protein", protein, suggestion.protein)):
        lo, hi = 0.9 * target, 1.1 * target
        if not (lo - 1e-6 <= total <= hi + 1e-6):
            problems.append(f"{name} total {total:.1f} g outside [{lo:.1f}, {hi:.1f}]")
    flo, fhi = box.bounds["fiber"]
    if not (flo - 1e-6 <= fiber <= fhi + 1e-6):
        problems.append(f"fiber total {fiber:.1f} g outside [{flo:.0f}, {fhi:.0f}]")
    if profile.calorie_goal is not None and calories > profile.calorie_goal + 1e-6:
        problems.append(f"calories {calories:.0f} exceed goal {profile.calorie_goal:.0f}")
    return problems


MESSAGE_DOMAINS = (
    "Positive Feedback",
    "Carbohydrate",
    "Protein",
    "Fat",
    "Fiber",
    "Overall Nutrition",
    "Self-monitoring",
    "Exercise",
)

# which message domain speaks to which boundary variable
VARIABLE_DOMAINS = {
    "net_carb": "Carbohydrate",
    "protein": "Protein",
    "fat": "Fat",
    "fiber": "Fiber",
    "intake_calories": "Overall Nutrition",
    "keto_ratio": "Overall Nutrition",
    "glucose": "Self-monitoring",
    "ketone": "Self-monitoring",
    "weight": "Self-monitoring",
    "activity_calories": "Exercise",
    "steps": "Exercise",
}

_IMPORTANCE_RANK = {
    Importance.VERY_IMPORTANT: 0,
    Importance.MODERATELY_IMPORTANT: 1,
    Importance.LOW_IMPORTANCE: 2,
}

NO_REPEAT_DAYS = 14


@dataclass(frozen=True)
class Motivation:
    domain: str
    text: str

    def to_json(self) -> dict:
        return {"domain": self.domain, "text": self.text}


@dataclass(frozen=True)
class MessageEvent:
    """One past delivery, for the per-patient no-repeat window."""

    day: date
    domain: str
    text: str


def load_message_pool(path=None) -> dict[str, tuple[str, ...]]:
    if path is None:
        text = resources.files("onlc.data").joinpath("message_pool.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    doc = json.loads(text)
    pool = {domain: tuple(msgs) for domain, msgs in doc["domains"].items()}
    for domain in MESSAGE_DOMAINS:
        msgs = pool.get(domain, ())
        if not msgs:
            raise ConfigError(f"message pool has no {domain!r} messages")
        if len(set(msgs)) != len(msgs):
            raise ConfigError(f"message pool has duplicate {domain!r} messages")
    return pool


def _target_domain(violations: list[Violation]) -> str:
    if not violations:
        return "Positive Feedback"
    top = min(enumerate(violations),
              key=lambda iv: (_IMPORTANCE_RANK[iv[1].importance], iv[0]))[1]
    try:
        return VARIABLE_DOMAINS[top.variable]
    except KeyError:
        raise ConfigError(f"no message domain for variable {top.variable!r}") from None


def pick_motivation(violations: list[Violation], pool: dict,
                    history, today: date) -> Motivation:
    """Choose the day's message: the domain of the highest-importance
    violation (Positive Feedback when clean), avoiding any text the patient
    saw in the last 14 days, falling back to the least recently used."""
    domain = _target_domain(violations)
    messages = pool.get(domain)
    if not messages:
        raise ConfigError(f"message pool has no {domain!r} messages")
    last_used: dict[str, date] = {}
    for event in history:
        if event.text in last_used:
            last_used[event.text] = max(last_used[event.text], event.day)
        else:
            last_used[event.text] = event.day
    fresh = [m for m in messages
             if m not in last_used or (today - last_used[m]).days >= NO_REPEAT_DAYS]
    if fresh:
        return Motivation(domain=domain, text=fresh[0])
    oldest = min(messages, key=lambda m: (last_used[m], messages.index(m)))
    return Motivation(domain=domain, text=oldest)


def step_goal(last_days_steps) -> float:
    """Nearest-rank 70th percentile of up to the last 10 observed days."""
    observed = [s for s in last_days_steps if s is not None]
    if not observed:
        raise DomainError("step goal needs at least one observed day")
    window = sorted(observed[-10:])
    k = (7 * len(window) + 9) // 10  # ceil(0.7 n) in exact integer arithmetic
    return window[k - 1]


@dataclass(frozen=True)
class DailyMessage:
    """The three components a patient receives each day."""

    plan: MealPlan
    motivation: Motivation
    step_goal: float

    def __post_init__(self):
        if not isinstance(self.plan, MealPlan):
            raise DomainError("daily message needs a meal plan (may be empty)")
        if not isinstance(self.motivation, Motivation):
            raise DomainError("daily message needs a motivation")
        if not math.isfinite(self.step_goal) or self.step_goal < 0:
            raise DomainError("daily message needs a non-negative step goal")

    def render_text(self) -> str:
        lines = ["Food Group\tMeal Plan Example"]
        if self.plan.selections:
            by_group: dict[FoodGroup, list] = {}
            for item, servings in self.plan.selections:
                by_group.setdefault(item.food_group, []).append((item, servings))
            for group in _GROUP_ORDER:
                for item, servings in by_group.get(group, []):
                    unit = "serving" if servings == 1 else "servings"
                    lines.append(f"{GROUP_DISPLAY[group]}\t{servings} {unit} of "
                                 f"({item.serving}) {item.name}")
        else:
            lines.append("no meal change\tkeep your current meals today")
        lines.append(f"Motivation ({self.motivation.domain})\t{self.motivation.text}")
        lines.append(f"Daily Step Goal\t{int(round(self.step_goal))} steps")
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            "meal_plan": self.plan.to_json(),
            "motivation": self.motivation.to_json(),
            "step_goal": self.step_goal,
        }


def compose(plan: MealPlan, motivation: Motivation, goal: float) -> DailyMessage:
    """Bundle the three message components; rendering is deterministic."""
    return DailyMessage(plan=plan, motivation=motivation, step_goal=goal)
