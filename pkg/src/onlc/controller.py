"""Suggestion search: particle swarm optimization of the gated, penalized
objective evaluated through the digital twin, inside per-diet constraint
boxes.

The objective for one candidate over an n-day horizon is

    sum_i  lam1*m1*G_i + lam2*m2*W_i + lam3*m3*(1.5 - K)

where G_i/W_i are the twin's rolled-forward glucose and weight, K is the
candidate's keto ratio, each lam is 0 once its target is met, and the m
multipliers come from nurse scoring. The ketone term is evaluated as
m3*1.5 - m3*K so that integer-valued penalty fixtures stay exact in floats.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DomainError
from .records import DailyRecord, DietGroup, PatientProfile
from .twin import PredictedOutcome, TwinModel, features_from_record

# Decision vector layout used by the swarm.
DECISION_NAMES = ("net_carb", "fat", "fiber", "protein", "activity_calories", "steps")
_ACTIVITY = DECISION_NAMES.index("activity_calories")
ACTIVITY_MARGIN = 500.0
STEPS_MAX = 30000.0

KCAL_PER_G = {"net_carb": 4.0, "fat": 9.0, "protein": 4.0}


def macro_calories(net_carb: float, fat: float, protein: float) -> float:
    """Intake calories implied by the macros (4/9/4 kcal per gram)."""
    return 4.0 * net_carb + 9.0 * fat + 4.0 * protein


@dataclass(frozen=True)
class Suggestion:
    """One day's suggested lifestyle. intake_calories is always derived from
    the macros, so it never disagrees with them."""

    net_carb: float
    fat: float
    fiber: float
    protein: float
    intake_calories: float
    activity_calories: float
    steps: float

    def __post_init__(self):
        for name in ("net_carb", "fat", "fiber", "protein", "intake_calories",
                     "activity_calories", "steps"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise DomainError(f"suggestion {name} must be finite and non-negative, got {v!r}")
        if abs(self.intake_calories - macro_calories(self.net_carb, self.fat, self.protein)) > 1.0:
            raise DomainError("intake_calories inconsistent with macros")

    @staticmethod
    def from_macros(net_carb, fat, fiber, protein, activity_calories, steps) -> "Suggestion":
        return Suggestion(
            net_carb=net_carb, fat=fat, fiber=fiber, protein=protein,
            intake_calories=macro_calories(net_carb, fat, protein),
            activity_calories=activity_calories, steps=steps,
        )

    @property
    def keto_ratio(self) -> float:
        from .records import keto_ratio

        return keto_ratio(self.net_carb, self.fat, self.protein)

    def to_json(self) -> dict:
        return {
            "net_carb": self.net_carb,
            "fat": self.fat,
            "fiber": self.fiber,
            "protein": self.protein,
            "intake_calories": self.intake_calories,
            "activity_calories": self.activity_calories,
            "steps": self.steps,
        }

    @staticmethod
    def from_json(doc: dict) -> "Suggestion":
        return Suggestion(**{k: float(doc[k]) for k in (
            "net_carb", "fat", "fiber", "protein", "intake_calories",
            "activity_calories", "steps",
        )})


@dataclass(frozen=True)
class ConstraintBox:
    """Static [lo, hi] bounds for the macro and steps dimensions. The
    activity dimension's upper bound is dynamic: activity < margin + intake
    calories of the same candidate."""

    diet_group: DietGroup
    bounds: dict  # name -> (lo, hi) for net_carb, fat, fiber, protein, steps

    _STATIC = ("net_carb", "fat", "fiber", "protein", "steps")

    def __post_init__(self):
        for name in self._STATIC:
            if name not in self.bounds:
                raise ConfigError(f"constraint box missing bounds for {name}")
            lo, hi = self.bounds[name]
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ConfigError(f"{name} bounds must be finite")
            if lo > hi:
                raise ConfigError(f"infeasible bounds for {name}: [{lo}, {hi}]")
            if lo < 0:
                raise ConfigError(f"{name} lower bound must be non-negative")
        unknown = set(self.bounds) - set(self._STATIC)
        if unknown:
            raise ConfigError(f"unknown constraint variables: {sorted(unknown)}")

    def with_overrides(self, overrides: dict) -> "ConstraintBox":
        merged = dict(self.bounds)
        for name, (lo, hi) in overrides.items():
            if name not in self._STATIC:
                raise ConfigError(f"cannot override bounds for {name!r}")
            merged[name] = (float(lo), float(hi))
        return ConstraintBox(diet_group=self.diet_group, bounds=merged)

    def activity_upper(self, intake_calories: float) -> float:
        return ACTIVITY_MARGIN + intake_calories

    def max_activity_envelope(self) -> float:
        """Static ceiling on the dynamic activity bound, from the largest
        in-box intake."""
        c = self.bounds["net_carb"][1]
        f = self.bounds["fat"][1]
        p = self.bounds["protein"][1]
        return self.activity_upper(macro_calories(c, f, p))

    def decision_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """(lo, hi) arrays over DECISION_NAMES; activity gets its static
        envelope (the per-candidate bound is applied separately)."""
        lo, hi = [], []
        for name in DECISION_NAMES:
            if name == "activity_calories":
                lo.append(0.0)
                hi.append(self.max_activity_envelope())
            else:
                lo.append(self.bounds[name][0])
                hi.append(self.bounds[name][1])
        return np.array(lo), np.array(hi)

    def contains(self, suggestion: Suggestion, tol: float = 1e-9) -> bool:
        for name in ("net_carb", "fat", "fiber", "protein", "steps"):
            lo, hi = self.bounds[name]
            v = getattr(suggestion, name)
            if v < lo - tol or v > hi + tol:
                return False
        return suggestion.activity_calories <= self.activity_upper(suggestion.intake_calories) + tol


def default_box(diet_group: DietGroup, overrides: dict | None = None) -> ConstraintBox:
    """Shipped per-diet constraint boxes."""
    if diet_group is DietGroup.KETO:
        bounds = {
            "net_carb": (20.0, 50.0),
            "fat": (90.0, 200.0),
            "fiber": (20.0, 50.0),
            "protein": (30.0, 110.0),
            "steps": (0.0, STEPS_MAX),
        }
    elif diet_group is DietGroup.LOW_FAT:
        bounds = {
            "net_carb": (195.0, 300.0),
            "fat": (20.0, 55.0),
            "fiber": (20.0, 50.0),
            "protein": (100.0, 160.0),
            "steps": (0.0, STEPS_MAX),
        }
    else:
        raise ConfigError(f"no constraint box for {diet_group!r}")
    box = ConstraintBox(diet_group=diet_group, bounds=bounds)
    if overrides:
        box = box.with_overrides(overrides)
    return box


@dataclass(frozen=True)
class ControllerConfig:
    swarm_size: int = 40
    iterations: int = 200
    horizon: int = 1
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    velocity_clamp: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.swarm_size < 2:
            raise ConfigError("swarm_size must be >= 2")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if not 0.0 < self.inertia < 1.0:
            raise ConfigError("inertia must be in (0, 1)")
        if self.iterations < 1 or not 0.0 < self.velocity_clamp <= 1.0:
            raise ConfigError("iterations >= 1 and velocity_clamp in (0, 1] required")

    def to_json(self) -> dict:
        return {
            "swarm_size": self.swarm_size,
            "iterations": self.iterations,
            "horizon": self.horizon,
            "inertia": self.inertia,
            "cognitive": self.cognitive,
            "social": self.social,
            "velocity_clamp": self.velocity_clamp,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(doc: dict) -> "ControllerConfig":
        return ControllerConfig(
            swarm_size=doc["swarm_size"],
            iterations=doc["iterations"],
            horizon=doc["horizon"],
            inertia=doc["inertia"],
            cognitive=doc["cognitive"],
            social=doc["social"],
            velocity_clamp=doc["velocity_clamp"],
            seed=doc["seed"],
        )


def gates(
    predicted: PredictedOutcome,
    prev_weight: float,
    profile: PatientProfile,
    K: float,
) -> tuple[int, int, int]:
    """Gate values for one predicted day: each is 0 once its target is met.

    lam1: glucose predicted in [70, 130].
    lam2: weight not increasing, or already at/below the goal.
    lam3: only keto patients with suggestion keto ratio below 1.5 pay it.
    """
    lam1 = 0 if 70.0 <= predicted.glucose <= 130.0 else 1
    lam2 = 0 if (prev_weight - predicted.weight) >= 0.0 or predicted.weight <= profile.weight_goal else 1
    lam3 = 0 if profile.diet_group is not DietGroup.KETO or K >= 1.5 else 1
    return (lam1, lam2, lam3)


def _validate_penalties(penalties: Sequence[float]) -> tuple[float, float, float]:
    if len(penalties) != 3:
        raise DomainError("penalties must be (m1, m2, m3)")
    m1, m2, m3 = (float(m) for m in penalties)
    for m in (m1, m2, m3):
        if not math.isfinite(m) or not 1.0 <= m <= 1000.0:
            raise DomainError(f"penalty {m!r} outside [1, 1000]")
    return m1, m2, m3


def _batch_costs(
    twin: TwinModel,
    candidates: np.ndarray,
    prev_record: DailyRecord,
    profile: PatientProfile,
    penalties: tuple[float, float, float],
    horizon: int,
) -> np.ndarray:
    """Objective for a (L, 6) batch of decision vectors."""
    m1, m2, m3 = penalties
    L = candidates.shape[0]
    carb = candidates[:, 0]
    fat = candidates[:, 1]
    protein = candidates[:, 3]
    K = fat / np.maximum(carb + protein, 1e-9)

    feats = np.empty((L, 9))
    feats[:, 0] = carb
    feats[:, 1] = fat
    feats[:, 2] = candidates[:, 2]
    feats[:, 3] = protein
    feats[:, 4] = candidates[:, 4]
    feats[:, 5] = candidates[:, 5]
    feats[:, 6] = prev_record.glucose
    feats[:, 7] = prev_record.weight
    feats[:, 8] = prev_record.ketone

    is_keto = profile.diet_group is DietGroup.KETO
    lam3 = (K < 1.5).astype(float) if is_keto else np.zeros(L)
    goal = profile.weight_goal

    total = np.zeros(L)
    prev_w = np.full(L, float(prev_record.weight))
    for _ in range(horizon):
        out = twin.predict_batch(feats)
        if not np.all(np.isfinite(out)):
            raise DomainError("twin produced a non-finite prediction")
        G, ketone, W = out[:, 0], out[:, 1], out[:, 2]
        lam1 = (~((G >= 70.0) & (G <= 130.0))).astype(float)
        lam2 = (~(((prev_w - W) >= 0.0) | (W <= goal))).astype(float)
        total = total + lam1 * (m1 * G) + lam2 * (m2 * W) + lam3 * (m3 * 1.5) - lam3 * (m3 * K)
        feats = feats.copy()
        feats[:, 6] = G
        feats[:, 7] = W
        feats[:, 8] = ketone
        prev_w = W
    return total


def objective(
    suggestion: Suggestion,
    twin: TwinModel,
    prev_record: DailyRecord,
    profile: PatientProfile,
    penalties: Sequence[float],
    horizon: int = 1,
) -> float:
    """Scalar objective for one suggestion (see module docstring)."""
    ms = _validate_penalties(penalties)
    for name in ("glucose", "weight", "ketone"):
        if prev_record.value(name) is None:
            raise DomainError(f"previous record lacks {name}; impute before optimizing")
    row = np.array([[
        suggestion.net_carb, suggestion.fat, suggestion.fiber,
        suggestion.protein, suggestion.activity_calories, suggestion.steps,
    ]])
    return float(_batch_costs(twin, row, prev_record, profile, ms, horizon)[0])


@dataclass
class PsoResult:
    x: np.ndarray
    cost: float
    best_costs: list
    evaluations: int


def pso_minimize(
    fn_batch: Callable[[np.ndarray], np.ndarray],
    lo: np.ndarray,
    hi: np.ndarray,
    config: ControllerConfig = ControllerConfig(),
    position_filter: Callable[[np.ndarray], np.ndarray] | None = None,
) -> PsoResult:
    """Constriction-style PSO over a box. fn_batch maps (L, d) positions to
    (L,) costs. position_filter, if given, projects positions back into any
    state-dependent feasible region after each move."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != hi.shape or lo.ndim != 1:
        raise ConfigError("lo/hi must be matching 1-d arrays")
    if np.any(lo > hi):
        raise ConfigError("infeasible box: lo > hi")

    rng = np.random.default_rng(config.seed)
    d = lo.size
    L = config.swarm_size
    width = hi - lo
    vmax = config.velocity_clamp * np.where(width > 0, width, 1.0)

    x = lo + rng.random((L, d)) * width
    if position_filter is not None:
        x = position_filter(x)
    vel = rng.uniform(-1.0, 1.0, size=(L, d)) * vmax

    costs = np.asarray(fn_batch(x), dtype=float)
    pbest_x = x.copy()
    pbest_c = costs.copy()
    g = int(np.argmin(pbest_c))
    gbest_x = pbest_x[g].copy()
    gbest_c = float(pbest_c[g])
    history = [gbest_c]
    evals = L

    for _ in range(config.iterations):
        r1 = rng.random((L, d))
        r2 = rng.random((L, d))
        vel = (
            config.inertia * vel
            + config.cognitive * r1 * (pbest_x - x)
            + config.social * r2 * (gbest_x - x)
        )
        np.clip(vel, -vmax, vmax, out=vel)
        x = np.clip(x + vel, lo, hi)
        if position_filter is not None:
            x = position_filter(x)
        costs = np.asarray(fn_batch(x), dtype=float)
        evals += L

        improved = costs < pbest_c
        pbest_x[improved] = x[improved]
        pbest_c[improved] = costs[improved]
        g = int(np.argmin(pbest_c))
        if float(pbest_c[g]) < gbest_c:
            gbest_c = float(pbest_c[g])
            gbest_x = pbest_x[g].copy()
        history.append(gbest_c)

    return PsoResult(x=gbest_x, cost=gbest_c, best_costs=history, evaluations=evals)


def _clamp_activity(positions: np.ndarray) -> np.ndarray:
    """Dynamic bound: activity < margin + intake implied by the candidate's
    own macros."""
    intake = macro_calories(positions[:, 0], positions[:, 1], positions[:, 3])
    cap = ACTIVITY_MARGIN + intake
    positions[:, _ACTIVITY] = np.minimum(positions[:, _ACTIVITY], cap)
    return positions


def _round_decision(decision: np.ndarray, box: ConstraintBox) -> np.ndarray:
    """Round macros to 0.1 g and activity/steps to whole units, staying
    inside the box."""
    rounded = decision.copy()
    for i, name in enumerate(DECISION_NAMES):
        if name in ("activity_calories", "steps"):
            rounded[i] = float(round(rounded[i]))
        else:
            rounded[i] = round(rounded[i], 1)
    lo, hi = box.decision_bounds()
    rounded = np.clip(rounded, lo, hi)
    intake = macro_calories(rounded[0], rounded[1], rounded[3])
    rounded[_ACTIVITY] = min(rounded[_ACTIVITY], math.floor(ACTIVITY_MARGIN + intake))
    return rounded


@dataclass
class ControllerResult:
    suggestion: Suggestion
    predicted: PredictedOutcome
    cost: float
    best_costs: list
    config: ControllerConfig
    penalties: tuple
    evaluations: int = 0

    def run_log(self) -> dict:
        return {
            "seed": self.config.seed,
            "config": self.config.to_json(),
            "penalties": list(self.penalties),
            "best_costs": list(self.best_costs),
            "final_cost": self.cost,
            "suggestion": self.suggestion.to_json(),
            "predicted": {
                "glucose": self.predicted.glucose,
                "ketone": self.predicted.ketone,
                "weight": self.predicted.weight,
            },
        }

    def run_log_json(self) -> str:
        return json.dumps(self.run_log(), sort_keys=True, separators=(",", ":"))


def optimize(
    twin: TwinModel,
    prev_record: DailyRecord,
    profile: PatientProfile,
    penalties: Sequence[float],
    config: ControllerConfig = ControllerConfig(),
    box: ConstraintBox | None = None,
) -> ControllerResult:
    """Search the constraint box for the lowest-cost suggestion.

    Deterministic given config.seed. The returned cost is recomputed on the
    final (rounded, in-box) suggestion, so it always equals
    objective(returned suggestion).
    """
    ms = _validate_penalties(penalties)
    features_from_record(prev_record)  # validates completeness
    if box is None:
        box = default_box(profile.diet_group, profile.constraint_overrides)
    elif box.diet_group is not profile.diet_group:
        raise ConfigError("constraint box diet group does not match profile")

    lo, hi = box.decision_bounds()

    def fn_batch(positions: np.ndarray) -> np.ndarray:
        return _batch_costs(twin, positions, prev_record, profile, ms, config.horizon)

    result = pso_minimize(fn_batch, lo, hi, config, position_filter=_clamp_activity)

    final = _round_decision(result.x, box)
    suggestion = Suggestion.from_macros(
        net_carb=float(final[0]), fat=float(final[1]), fiber=float(final[2]),
        protein=float(final[3]), activity_calories=float(final[4]), steps=float(final[5]),
    )
    cost = float(fn_batch(final.reshape(1, -1))[0])
    predicted = twin.predict(np.array([
        suggestion.net_carb, suggestion.fat, suggestion.fiber, suggestion.protein,
        suggestion.activity_calories, suggestion.steps,
        prev_record.glucose, prev_record.weight, prev_record.ketone,
    ]))
    return ControllerResult(
        suggestion=suggestion,
        predicted=predicted,
        cost=cost,
        best_costs=result.best_costs,
        config=config,
        penalties=tuple(ms),
        evaluations=result.evaluations,
    )
