"""Synthetic cohort and the closed-loop trial driver.

Patients are generated from simple ground-truth dynamics so the rest of the
pipeline can be exercised end to end: three months of habitual behavior are
observed, the twin pretrains on the pooled records and fine-tunes per group,
then for three more months the AI arm receives a daily optimized suggestion
(followed with partial adherence) while the control arm keeps its habits.
All generator coefficients are synthetic fixtures chosen for observable
effects; none are presented as physiological truth.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .controller import ControllerConfig, Suggestion, macro_calories, optimize
from .errors import ConfigError, DomainError, InfeasiblePlanError, TrainingError
from .evaluation import clarke_zone
from .messaging import (
    DailyMessage,
    MealPlan,
    MessageEvent,
    compose,
    load_food_catalog,
    load_message_pool,
    pick_motivation,
    plan_meals,
    step_goal,
)
from .records import (
    Arm,
    ConditionGroup,
    DailyRecord,
    DietGroup,
    PatientProfile,
    serialize_records,
)
from .scoring import (
    PenaltyLookup,
    auto_penalties,
    check_boundaries,
    default_penalty_lookup,
    snapshot_from_record,
)
from .twin import TwinConfig, fine_tune, pretrain, weekly_retrain

KCAL_PER_POUND = 3500.0
GLUCOSE_CLAMP = (40.0, 400.0)
WEIGHT_CLAMP = (80.0, 500.0)
KETONE_FLOOR = 0.05
# Ketone production turns on once fat exceeds 0.4x the carb+protein grams.
KETO_RATIO_ONSET = 0.4

_ONE_DAY = dt.timedelta(days=1)

# Synthetic plausibility bounds for generator parameters. Values outside
# these produce trajectories the downstream modules were never meant to see.
_PLAUSIBLE = {
    "glucose_intercept": (0.0, 300.0),
    "carb_sensitivity": (0.01, 1.0),
    "activity_sensitivity": (0.0, 5.0),
    "glucose_memory": (0.0, 0.9),
    "basal_expenditure": (500.0, 4000.0),
    "ketone_base": (0.0, 0.5),
    "ketone_memory": (0.0, 0.9),
    "ketone_response": (0.0, 3.0),
    "glucose_noise": (0.0, 25.0),
    "ketone_noise": (0.0, 1.0),
    "weight_noise": (0.0, 2.0),
}


@dataclass(frozen=True)
class GeneratorParams:
    """Ground-truth dynamics for one synthetic patient.

    Next-morning glucose is autoregressive in yesterday's glucose with a
    carbohydrate push and an activity pull; weight integrates the energy
    imbalance at 3500 kcal per pound; ketones rise smoothly once the keto
    ratio clears the onset threshold.
    """

    glucose_intercept: float
    carb_sensitivity: float
    activity_sensitivity: float
    glucose_memory: float
    basal_expenditure: float
    ketone_base: float
    ketone_memory: float
    ketone_response: float
    glucose_noise: float
    ketone_noise: float
    weight_noise: float

    def __post_init__(self):
        for name, (lo, hi) in _PLAUSIBLE.items():
            v = getattr(self, name)
            if not math.isfinite(v) or not lo <= v <= hi:
                raise ConfigError(f"{name}={v!r} outside plausible range [{lo}, {hi}]")


@dataclass(frozen=True)
class HabitProfile:
    """Habitual daily behavior: per-variable means plus gaussian jitter,
    ordered as (net_carb, fat, fiber, protein, activity_calories, steps)."""

    net_carb: float
    fat: float
    fiber: float
    protein: float
    activity_calories: float
    steps: float
    jitter: tuple = (20.0, 10.0, 3.0, 10.0, 80.0, 800.0)

    def __post_init__(self):
        for name in ("net_carb", "fat", "fiber", "protein", "activity_calories", "steps"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"habit {name} must be finite and non-negative, got {v!r}")
        if self.net_carb + self.protein <= 0:
            raise ConfigError("habit net_carb + protein must be positive")
        if len(self.jitter) != 6 or any(not math.isfinite(s) or s < 0 for s in self.jitter):
            raise ConfigError("jitter needs six non-negative scales")

    def means(self) -> tuple:
        return (self.net_carb, self.fat, self.fiber, self.protein,
                self.activity_calories, self.steps)

    def draw(self, rng: np.random.Generator) -> Suggestion:
        """One day's jittered habitual behavior, clipped to non-negative."""
        values = [max(0.0, rng.normal(m, s)) for m, s in zip(self.means(), self.jitter)]
        return Suggestion.from_macros(*values)


@dataclass(frozen=True)
class SyntheticPatient:
    profile: PatientProfile
    params: GeneratorParams
    habit: HabitProfile
    adherence: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.adherence <= 1.0:
            raise ConfigError(f"adherence must be in [0, 1], got {self.adherence!r}")


@dataclass
class PatientState:
    """Morning measurements plus the patient's private noise stream. Mutated
    in place by simulate_day; build with initial_state()."""

    date: dt.date
    glucose: float
    ketone: float
    weight: float
    rng: np.random.Generator = field(repr=False)


def initial_state(patient: SyntheticPatient, start: dt.date) -> PatientState:
    """Start a trajectory at the habit steady state of the dynamics, so a
    pure-habit run drifts only through noise and the weight-gain term."""
    p, h = patient.params, patient.habit
    g0 = (p.glucose_intercept + p.carb_sensitivity * h.net_carb
          - p.activity_sensitivity * h.steps / 1000.0) / (1.0 - p.glucose_memory)
    ratio = h.fat / max(h.net_carb + h.protein, 1e-9)
    k0 = (p.ketone_base + p.ketone_response * max(ratio - KETO_RATIO_ONSET, 0.0)) / (
        1.0 - p.ketone_memory)
    return PatientState(
        date=start,
        glucose=float(min(max(g0, GLUCOSE_CLAMP[0]), GLUCOSE_CLAMP[1])),
        ketone=float(max(k0, KETONE_FLOOR)),
        weight=float(patient.profile.baseline_weight),
        rng=np.random.default_rng(patient.seed),
    )


def simulate_day(patient: SyntheticPatient, behavior: Suggestion, state: PatientState) -> DailyRecord:
    """Record today's behavior and measurements, then advance the state to
    tomorrow morning through the ground-truth dynamics."""
    if not isinstance(state, PatientState):
        raise DomainError("state is not initialized; build it with initial_state()")
    p = patient.params
    intake = macro_calories(behavior.net_carb, behavior.fat, behavior.protein)
    record = DailyRecord(
        date=state.date,
        net_carb=behavior.net_carb,
        fat=behavior.fat,
        fiber=behavior.fiber,
        protein=behavior.protein,
        intake_calories=intake,
        activity_calories=behavior.activity_calories,
        steps=behavior.steps,
        glucose=state.glucose,
        ketone=state.ketone,
        weight=state.weight,
    )
    eps_g = state.rng.normal(0.0, p.glucose_noise)
    eps_k = state.rng.normal(0.0, p.ketone_noise)
    eps_w = state.rng.normal(0.0, p.weight_noise)
    ratio = behavior.fat / max(behavior.net_carb + behavior.protein, 1e-9)

    glucose = (p.glucose_intercept
               + p.carb_sensitivity * behavior.net_carb
               - p.activity_sensitivity * behavior.steps / 1000.0
               + p.glucose_memory * state.glucose
               + eps_g)
    ketone = (p.ketone_base
              + p.ketone_memory * state.ketone
              + p.ketone_response * max(ratio - KETO_RATIO_ONSET, 0.0)
              + eps_k)
    weight = state.weight + (intake - behavior.activity_calories - p.basal_expenditure) / KCAL_PER_POUND + eps_w

    state.glucose = float(min(max(glucose, GLUCOSE_CLAMP[0]), GLUCOSE_CLAMP[1]))
    state.ketone = float(max(ketone, KETONE_FLOOR))
    state.weight = float(min(max(weight, WEIGHT_CLAMP[0]), WEIGHT_CLAMP[1]))
    state.date = state.date + _ONE_DAY
    return record


def blend_behavior(habit: Suggestion, suggestion: Suggestion, adherence: float) -> Suggestion:
    """Move each decision variable adherence of the way from habit toward
    the suggestion. adherence 0 is pure habit, 1 is full compliance."""
    if not 0.0 <= adherence <= 1.0:
        raise DomainError(f"adherence must be in [0, 1], got {adherence!r}")

    def mix(name):
        h, s = getattr(habit, name), getattr(suggestion, name)
        return h + adherence * (s - h)

    return Suggestion.from_macros(
        net_carb=mix("net_carb"), fat=mix("fat"), fiber=mix("fiber"),
        protein=mix("protein"), activity_calories=mix("activity_calories"),
        steps=mix("steps"),
    )


@dataclass(frozen=True)
class CohortConfig:
    """Uniform draw ranges for patient generation. Defaults give habitual
    steady-state glucose of 125-175 mg/dL and a slow weight gain of 0.01-0.03
    lb/day, so the feedback phase has something to improve."""

    carb_sensitivity: tuple = (0.20, 0.30)
    activity_sensitivity: tuple = (1.0, 2.0)
    glucose_memory: tuple = (0.30, 0.40)
    habit_glucose: tuple = (125.0, 175.0)
    weight_drift: tuple = (0.01, 0.03)
    baseline_weight: tuple = (170.0, 230.0)
    ketone_base: tuple = (0.03, 0.08)
    ketone_memory: tuple = (0.25, 0.35)
    ketone_response: tuple = (1.0, 1.4)
    glucose_noise: tuple = (1.5, 3.0)
    ketone_noise: tuple = (0.02, 0.05)
    weight_noise: tuple = (0.05, 0.15)
    habit_net_carb: tuple = (180.0, 260.0)
    habit_fat: tuple = (60.0, 100.0)
    habit_fiber: tuple = (18.0, 30.0)
    habit_protein: tuple = (70.0, 110.0)
    habit_activity: tuple = (400.0, 800.0)
    habit_steps: tuple = (4000.0, 8000.0)
    habit_jitter: tuple = (20.0, 10.0, 3.0, 10.0, 80.0, 800.0)
    adherence: float = 0.7

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if name in ("habit_jitter", "adherence"):
                continue
            lo, hi = value
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ConfigError(f"{name} range {value!r} must be finite with lo <= hi")
        if not 0.0 <= self.adherence <= 1.0:
            raise ConfigError("adherence must be in [0, 1]")


# Diet/condition cells in assignment order; even indices are keto so any
# even n splits the diets evenly.
_CELLS = (
    (DietGroup.KETO, ConditionGroup.OBESE_T2D),
    (DietGroup.LOW_FAT, ConditionGroup.OBESE_T2D),
    (DietGroup.KETO, ConditionGroup.OBESE_KIDNEY_T2D),
    (DietGroup.LOW_FAT, ConditionGroup.OBESE_KIDNEY_T2D),
)

_DIET_GOALS = {
    DietGroup.KETO: {"min_protein": 50.0, "min_fat": 90.0, "max_fat": None},
    DietGroup.LOW_FAT: {"min_protein": 100.0, "min_fat": None, "max_fat": 55.0},
}


def _uniform(rng, bounds) -> float:
    lo, hi = bounds
    return float(rng.uniform(lo, hi))


def generate_cohort(n: int, seed: int, config: CohortConfig = CohortConfig()) -> list:
    """Deterministically draw n patients, half per arm, with diet and
    condition cells as balanced as n allows (exact when n % 4 == 0)."""
    if n < 2 or n % 2 != 0:
        raise ConfigError(f"cohort size must be an even number >= 2, got {n}")
    if seed < 0:
        raise ConfigError("seed must be non-negative")

    width = len(str(n))
    children = np.random.SeedSequence(seed).spawn(n)
    cohort = []
    for i in range(n):
        cell, round_idx = i % 4, i // 4
        diet, condition = _CELLS[cell]
        # Alternating starts per cell keep every margin (arm, diet,
        # condition, arm x diet) balanced for the 20-patient default.
        ai = (round_idx + (cell // 2) + (cell % 2)) % 2 == 0
        param_seq, traj_seq = children[i].spawn(2)
        rng = np.random.default_rng(param_seq)

        habit = HabitProfile(
            net_carb=_uniform(rng, config.habit_net_carb),
            fat=_uniform(rng, config.habit_fat),
            fiber=_uniform(rng, config.habit_fiber),
            protein=_uniform(rng, config.habit_protein),
            activity_calories=_uniform(rng, config.habit_activity),
            steps=_uniform(rng, config.habit_steps),
            jitter=tuple(config.habit_jitter),
        )
        habit_glucose = _uniform(rng, config.habit_glucose)
        a1 = _uniform(rng, config.carb_sensitivity)
        a2 = _uniform(rng, config.activity_sensitivity)
        a3 = _uniform(rng, config.glucose_memory)
        drift = _uniform(rng, config.weight_drift)
        intake = macro_calories(habit.net_carb, habit.fat, habit.protein)
        params = GeneratorParams(
            # Solve the steady state for the intercept so habitual behavior
            # settles at habit_glucose by construction.
            glucose_intercept=habit_glucose * (1.0 - a3) - a1 * habit.net_carb
            + a2 * habit.steps / 1000.0,
            carb_sensitivity=a1,
            activity_sensitivity=a2,
            glucose_memory=a3,
            # Habitual intake exceeds expenditure by drift pounds per day.
            basal_expenditure=intake - habit.activity_calories - KCAL_PER_POUND * drift,
            ketone_base=_uniform(rng, config.ketone_base),
            ketone_memory=_uniform(rng, config.ketone_memory),
            ketone_response=_uniform(rng, config.ketone_response),
            glucose_noise=_uniform(rng, config.glucose_noise),
            ketone_noise=_uniform(rng, config.ketone_noise),
            weight_noise=_uniform(rng, config.weight_noise),
        )
        goals = _DIET_GOALS[diet]
        profile = PatientProfile(
            id=f"p{i + 1:0{width}d}",
            diet_group=diet,
            condition_group=condition,
            arm=Arm.AI if ai else Arm.NON_AI,
            baseline_weight=round(_uniform(rng, config.baseline_weight), 1),
            calorie_goal=float(round(max(1800.0, intake))),
            min_protein=goals["min_protein"],
            min_fat=goals["min_fat"],
            max_fat=goals["max_fat"],
        )
        cohort.append(SyntheticPatient(
            profile=profile,
            params=params,
            habit=habit,
            adherence=config.adherence,
            seed=int(traj_seq.generate_state(1)[0]),
        ))
    return cohort


@dataclass(frozen=True)
class TrialConfig:
    """Knobs for the closed-loop run. The twin and controller defaults are
    lighter than the library-wide ones so a full six-month cohort finishes
    in well under the interactive budget."""

    month_days: int = 28
    observation_months: int = 3
    start_date: dt.date = dt.date(2026, 1, 5)
    seed: int = 0
    twin: TwinConfig = TwinConfig(hidden_sizes=(16, 16, 8), max_epochs=400, patience=40)
    finetune_epochs: int = 150
    controller: ControllerConfig = ControllerConfig(swarm_size=32, iterations=100)
    lookup: PenaltyLookup = field(default_factory=default_penalty_lookup)
    compose_messages: bool = True
    intervention_enabled: bool = True
    # Meal-plan targets are snapped to a coarse grid before the planner runs
    # so repeated near-identical suggestions share one cached plan.
    plan_grid_fraction: float = 0.08

    def __post_init__(self):
        if self.month_days < 7 or self.month_days % 7 != 0:
            raise ConfigError("month_days must be a positive multiple of 7")
        if self.observation_months < 1:
            raise ConfigError("observation_months must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if not 0.0 < self.plan_grid_fraction <= 0.5:
            raise ConfigError("plan_grid_fraction must be in (0, 0.5]")


@dataclass(frozen=True)
class FeedbackStep:
    """One day's controller output for an AI-arm patient, plus the penalties
    it ran under and the weight its prediction was anchored to."""

    date: dt.date
    suggestion: Suggestion
    predicted: object
    cost: float
    penalties: tuple
    base_weight: float


@dataclass(frozen=True)
class PredictionSample:
    """Twin forecast made the evening before against the next morning's
    measurement, using whichever group model was live at forecast time."""

    patient_id: str
    date: dt.date
    predicted_glucose: float
    observed_glucose: float


@dataclass(frozen=True)
class TrainingEvent:
    group_key: str
    kind: str  # pretrain | fine_tune | weekly_retrain
    day_index: int
    through: dt.date
    max_record_date: dt.date


@dataclass(frozen=True)
class ArmSummary:
    arm: Arm
    n: int
    mean_weight_change: float
    glucose_in_range: float
    zone_a: float

    def to_json(self) -> dict:
        return {
            "arm": self.arm.value,
            "n": self.n,
            "mean_weight_change": self.mean_weight_change,
            "glucose_in_range": self.glucose_in_range,
            "zone_a": self.zone_a,
        }


GLUCOSE_TARGET = (70.0, 130.0)


@dataclass
class TrialResult:
    """Everything a trial produced. Arm summaries are recomputed from the
    trajectories and prediction log on demand, never stored."""

    months: int
    config: TrialConfig
    cohort: list
    trajectories: dict
    suggestions: dict
    messages: dict
    predictions: list
    training_log: list
    models: dict

    @property
    def observation_days(self) -> int:
        return self.config.observation_months * self.config.month_days

    @property
    def total_days(self) -> int:
        return self.months * self.config.month_days

    def patients_in_arm(self, arm: Arm) -> list:
        return [p for p in self.cohort if p.profile.arm is arm]

    def weight_change(self, patient_id: str) -> float:
        """Recorded weight change across the feedback phase."""
        records = self.trajectories[patient_id]
        return records[-1].weight - records[self.observation_days].weight

    def glucose_in_range(self, patient_id: str) -> float:
        records = self.trajectories[patient_id][self.observation_days:]
        lo, hi = GLUCOSE_TARGET
        return sum(1 for r in records if lo <= r.glucose <= hi) / len(records)

    def zone_a_fraction(self, arm: Arm | None = None) -> float:
        ids = None if arm is None else {p.profile.id for p in self.patients_in_arm(arm)}
        samples = [s for s in self.predictions if ids is None or s.patient_id in ids]
        if not samples:
            raise DomainError("no prediction samples recorded")
        hits = sum(1 for s in samples
                   if clarke_zone(s.observed_glucose, s.predicted_glucose) == "A")
        return hits / len(samples)

    def zone_a_by_week(self) -> list:
        """Zone-A fraction per feedback week, ordered by week index."""
        weeks = {}
        for s in self.predictions:
            day = (s.date - self.config.start_date).days
            weeks.setdefault((day - self.observation_days) // 7, []).append(s)
        out = []
        for week in sorted(weeks):
            samples = weeks[week]
            hits = sum(1 for s in samples
                       if clarke_zone(s.observed_glucose, s.predicted_glucose) == "A")
            out.append({"week": week, "zone_a": hits / len(samples), "n": len(samples)})
        return out

    def arm_summary(self, arm: Arm) -> ArmSummary:
        patients = self.patients_in_arm(arm)
        if not patients:
            raise DomainError(f"no patients in arm {arm.value!r}")
        changes = [self.weight_change(p.profile.id) for p in patients]
        in_range = [self.glucose_in_range(p.profile.id) for p in patients]
        return ArmSummary(
            arm=arm,
            n=len(patients),
            mean_weight_change=sum(changes) / len(changes),
            glucose_in_range=sum(in_range) / len(in_range),
            zone_a=self.zone_a_fraction(arm),
        )

    def summaries(self) -> dict:
        return {arm.value: self.arm_summary(arm) for arm in (Arm.AI, Arm.NON_AI)}

    def summary_json(self) -> dict:
        per_patient = {}
        for p in sorted(self.cohort, key=lambda q: q.profile.id):
            pid = p.profile.id
            per_patient[pid] = {
                "arm": p.profile.arm.value,
                "diet_group": p.profile.diet_group.value,
                "condition_group": p.profile.condition_group.value,
                "weight_change": self.weight_change(pid),
                "glucose_in_range": self.glucose_in_range(pid),
            }
        return {
            "patients": len(self.cohort),
            "months": self.months,
            "month_days": self.config.month_days,
            "observation_days": self.observation_days,
            "arms": {k: v.to_json() for k, v in self.summaries().items()},
            "zone_a": self.zone_a_fraction(),
            "zone_a_by_week": self.zone_a_by_week(),
            "per_patient": per_patient,
        }


def _controller_seed(trial_seed: int, patient_seed: int, day_index: int) -> int:
    # Derived, not drawn, so the controller never touches patient streams.
    return int(np.random.SeedSequence((trial_seed, patient_seed, day_index)).generate_state(1)[0])


def _snap_to_grid(value: float, fraction: float) -> float:
    step = max(1.0, math.floor(fraction * value))
    return round(value / step) * step


class _MessageDesk:
    """Per-trial message assembly state: catalog, pool, plan cache, and each
    patient's motivation history."""

    def __init__(self, grid_fraction: float):
        self.catalog = load_food_catalog()
        self.pool = load_message_pool()
        self.grid_fraction = grid_fraction
        self.plan_cache = {}
        self.history = {}

    def compose_for(self, patient, suggestion, prev_record, prev_weight,
                    recent_steps, today: dt.date) -> DailyMessage:
        profile = patient.profile
        violations = check_boundaries(
            snapshot_from_record(prev_record, prev_weight=prev_weight), profile)
        history = self.history.setdefault(profile.id, [])
        motivation = pick_motivation(violations, self.pool, history, today)
        history.append(MessageEvent(day=today, domain=motivation.domain, text=motivation.text))

        targets = Suggestion.from_macros(
            net_carb=_snap_to_grid(suggestion.net_carb, self.grid_fraction),
            fat=_snap_to_grid(suggestion.fat, self.grid_fraction),
            fiber=suggestion.fiber,
            protein=_snap_to_grid(suggestion.protein, self.grid_fraction),
            activity_calories=0.0, steps=0.0,
        )
        key = (profile.id, targets.net_carb, targets.fat, targets.protein)
        if key not in self.plan_cache:
            try:
                self.plan_cache[key] = plan_meals(targets, self.catalog, profile)
            except InfeasiblePlanError:
                # An unplannable day falls back to "keep your current meals".
                self.plan_cache[key] = MealPlan.from_selections(())
        return compose(self.plan_cache[key], motivation, step_goal(recent_steps))


def run_trial(cohort: Sequence[SyntheticPatient], months: int = 6,
              config: TrialConfig = TrialConfig()) -> TrialResult:
    """Drive the cohort through observation and feedback phases.

    Days before the observation cutoff are habitual for everyone. At the end
    of the last observation day the twin pretrains on all records and
    fine-tunes per diet/condition group; from the next morning the AI arm
    follows controller suggestions blended with its habits at the patient's
    adherence, and every seventh feedback day ends with a weekly retrain.
    Evening forecasts from the live group model are logged against the next
    morning's measurement for every patient, either arm.
    """
    cohort = list(cohort)
    if not cohort:
        raise ConfigError("cohort is empty")
    ids = [p.profile.id for p in cohort]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate patient ids in cohort")
    if months <= config.observation_months:
        raise ConfigError(
            f"months must exceed the {config.observation_months}-month observation phase")

    obs_days = config.observation_months * config.month_days
    total_days = months * config.month_days
    groups = {}
    for p in cohort:
        groups.setdefault(p.profile.group_key, []).append(p)

    trajectories = {pid: [] for pid in ids}
    states = {p.profile.id: initial_state(p, config.start_date) for p in cohort}
    suggestions = {p.profile.id: [] for p in cohort if p.profile.arm is Arm.AI}
    messages = {p.profile.id: [] for p in cohort if p.profile.arm is Arm.AI}
    predictions, training_log = [], []
    models = {}
    pending_forecast = {}
    last_step = {}
    desk = _MessageDesk(config.plan_grid_fraction) if config.compose_messages else None

    for day in range(total_days):
        today = config.start_date + dt.timedelta(days=day)
        feedback_day = day >= obs_days

        for patient in cohort:
            pid = patient.profile.id
            state = states[pid]
            habit_today = patient.habit.draw(state.rng)
            behavior = habit_today

            if feedback_day and patient.profile.arm is Arm.AI and config.intervention_enabled:
                prev = trajectories[pid][day - 1]
                step = last_step.get(pid)
                if step is None:
                    penalties = (1.0, 1.0, 1.0)
                else:
                    penalties = auto_penalties(
                        step.predicted, step.suggestion.keto_ratio, step.suggestion,
                        patient.profile, config.lookup, prev_weight=step.base_weight)
                ctrl = replace(config.controller,
                               seed=_controller_seed(config.seed, patient.seed, day))
                result = optimize(models[patient.profile.group_key], prev,
                                  patient.profile, penalties, ctrl)
                step = FeedbackStep(
                    date=today, suggestion=result.suggestion, predicted=result.predicted,
                    cost=result.cost, penalties=tuple(penalties), base_weight=prev.weight)
                last_step[pid] = step
                suggestions[pid].append(step)
                behavior = blend_behavior(habit_today, result.suggestion, patient.adherence)
                if desk is not None:
                    message = desk.compose_for(
                        patient, result.suggestion, prev,
                        prev_weight=trajectories[pid][day - 2].weight,
                        recent_steps=[r.steps for r in trajectories[pid][-10:]],
                        today=today)
                    messages[pid].append((today, message))

            record = simulate_day(patient, behavior, state)
            trajectories[pid].append(record)
            forecast = pending_forecast.pop(pid, None)
            if forecast is not None:
                predictions.append(PredictionSample(
                    patient_id=pid, date=today,
                    predicted_glucose=forecast, observed_glucose=record.glucose))

        if day == obs_days - 1:
            series = [trajectories[pid] for pid in ids]
            try:
                pooled = pretrain(series, config.twin)
            except TrainingError as exc:
                raise TrainingError(
                    f"trial aborted: insufficient training pairs at the end of "
                    f"observation ({exc})") from exc
            training_log.append(TrainingEvent(
                group_key="pooled", kind="pretrain", day_index=day, through=today,
                max_record_date=max(r.date for s in series for r in s)))
            for group_key, members in groups.items():
                group_series = [trajectories[m.profile.id] for m in members]
                try:
                    models[group_key] = fine_tune(
                        pooled, group_series, group_key=group_key,
                        epochs=config.finetune_epochs, trained_through=today)
                except TrainingError as exc:
                    raise TrainingError(
                        f"trial aborted: group {group_key} lacks usable training "
                        f"pairs at the end of observation ({exc})") from exc
                training_log.append(TrainingEvent(
                    group_key=group_key, kind="fine_tune", day_index=day, through=today,
                    max_record_date=max(r.date for s in group_series for r in s)))
        elif feedback_day and (day - obs_days + 1) % 7 == 0:
            for group_key, members in groups.items():
                weeks = [trajectories[m.profile.id][day - 6:day + 1] for m in members]
                models[group_key] = weekly_retrain(models[group_key], weeks, through=today)
                training_log.append(TrainingEvent(
                    group_key=group_key, kind="weekly_retrain", day_index=day,
                    through=today,
                    max_record_date=max(r.date for w in weeks for r in w)))

        if day >= obs_days - 1 and day + 1 < total_days:
            for patient in cohort:
                pid = patient.profile.id
                model = models[patient.profile.group_key]
                pending_forecast[pid] = model.predict(trajectories[pid][day]).glucose

    return TrialResult(
        months=months, config=config, cohort=cohort, trajectories=trajectories,
        suggestions=suggestions, messages=messages, predictions=predictions,
        training_log=training_log, models=models,
    )


def write_trial_outputs(result: TrialResult, out_dir) -> list:
    """Per-patient trajectory CSVs plus summary.json; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for pid in sorted(result.trajectories):
        path = out / f"{pid}.csv"
        path.write_text(serialize_records(result.trajectories[pid]))
        written.append(path)
    if result.predictions:
        path = out / "predictions.csv"
        lines = ["patient_id,date,predicted_glucose,observed_glucose"]
        for s in result.predictions:
            lines.append(f"{s.patient_id},{s.date.isoformat()},"
                         f"{s.predicted_glucose!r},{s.observed_glucose!r}")
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    summary = out / "summary.json"
    summary.write_text(json.dumps(result.summary_json(), indent=2, sort_keys=True) + "\n")
    written.append(summary)
    return written
