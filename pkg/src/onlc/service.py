"""HTTP facade over the event store.

The Api class is the command layer: every state change is computed here,
fully serialized into an event payload, and appended to the store. The
FastAPI app is a thin JSON mapping over Api, versioned under /v1. Per
patient, writes are serialized by a lock; reads go straight to the store's
current state.
"""

from __future__ import annotations

import datetime as dt
import json
import os
import threading
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .controller import ControllerConfig, optimize
from .errors import (
    ConfigError,
    ConflictError,
    DomainError,
    InfeasiblePlanError,
    NotFoundError,
    OnlcError,
    PreconditionError,
)
from .evaluation import zone_report
from .messaging import (
    MealPlan,
    compose,
    load_food_catalog,
    load_message_pool,
    pick_motivation,
    plan_meals,
    step_goal,
)
from .records import Arm, DailyRecord, DietGroup, PatientProfile, keto_ratio
from .scoring import (
    BoundarySnapshot,
    BoundaryTable,
    Importance,
    PenaltyLookup,
    Rating,
    Violation,
    auto_penalties,
    check_boundaries,
    default_boundary_table,
    default_penalty_lookup,
    rating_to_score,
)
from .storage import SERVICE_STREAM, ReviewStatus, Store, SuggestionReviewItem
from .twin import TwinConfig, features_from_record, fine_tune, make_dataset, pretrain, weekly_retrain

SCORING_MODES = ("auto", "manual")
DEFAULT_PENALTIES = (1.0, 1.0, 1.0)
PENALTY_TERMS = ("m1", "m2", "m3")


@dataclass(frozen=True)
class ServiceConfig:
    data_dir: str = "onlc-data"
    scoring_mode: str = "auto"
    token: str | None = None
    twin: TwinConfig = TwinConfig()
    controller: ControllerConfig = ControllerConfig()
    finetune_epochs: int = 150

    def __post_init__(self):
        if self.scoring_mode not in SCORING_MODES:
            raise ConfigError(f"scoring_mode must be one of {SCORING_MODES}")
        if self.finetune_epochs < 0:
            raise ConfigError("finetune_epochs must be >= 0")

    def resolved_data_dir(self) -> Path:
        # The environment override wins over any configured path.
        return Path(os.environ.get("ONLC_DATA_DIR") or self.data_dir)

    @staticmethod
    def from_json(doc: dict) -> "ServiceConfig":
        kwargs = {}
        for key in ("data_dir", "scoring_mode", "token", "finetune_epochs"):
            if key in doc:
                kwargs[key] = doc[key]
        # Nested configs may give only the keys they want to change.
        if "twin" in doc:
            kwargs["twin"] = TwinConfig(**{k: tuple(v) if isinstance(v, list) else v
                                           for k, v in doc["twin"].items()})
        if "controller" in doc:
            kwargs["controller"] = ControllerConfig(**doc["controller"])
        return ServiceConfig(**kwargs)

    @staticmethod
    def load(path) -> "ServiceConfig":
        return ServiceConfig.from_json(json.loads(Path(path).read_text()))


def _record_is_complete(record: DailyRecord) -> bool:
    try:
        features_from_record(record)
    except DomainError:
        return False
    return True


def _controller_seed(base: int, patient_id: str, day: dt.date) -> int:
    entropy = (base, zlib.crc32(patient_id.encode()), day.toordinal())
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def _violation_from_json(doc: dict) -> Violation:
    return Violation(
        variable=doc["variable"],
        observed=doc["observed"],
        boundary=doc["boundary"],
        importance=Importance(doc["importance"]),
    )


class Api:
    """Command layer: validates, computes, appends events, answers queries."""

    def __init__(self, config: ServiceConfig, store: Store | None = None):
        self.config = config
        self.store = store if store is not None else Store.open(config.resolved_data_dir())
        self._locks: dict = {}
        self._locks_guard = threading.Lock()
        self._train_lock = threading.Lock()
        self._catalog = None
        self._pool = None

    def _lock_for(self, patient_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(patient_id, threading.Lock())

    def _food_catalog(self):
        if self._catalog is None:
            self._catalog = load_food_catalog()
        return self._catalog

    def _message_pool(self):
        if self._pool is None:
            self._pool = load_message_pool()
        return self._pool

    def active_lookup(self) -> PenaltyLookup:
        return self.store.penalty_lookup or default_penalty_lookup()

    def active_boundary_table(self, diet_group: DietGroup) -> BoundaryTable:
        stored = self.store.boundary_tables.get(diet_group.value)
        return stored if stored is not None else default_boundary_table(diet_group)

    # ---------------------------------------------------------- patients

    def register_patient(self, profile_doc: dict) -> dict:
        profile = PatientProfile.from_json(profile_doc)
        with self._lock_for(profile.id):
            if profile.id in self.store.profiles:
                raise ConflictError(f"patient {profile.id!r} already registered")
            seq = self.store.append(profile.id, "patient_registered",
                                    {"profile": profile.to_json()})
        return {"patient_id": profile.id, "seq": seq}

    def list_patients(self) -> list:
        return [self.store.profiles[pid].to_json()
                for pid in sorted(self.store.profiles)]

    def get_patient(self, patient_id: str) -> dict:
        return self.store.profile(patient_id).to_json()

    def list_records(self, patient_id: str) -> list:
        self.store.profile(patient_id)
        return [r.to_json() for r in self.store.records.get(patient_id, ())]

    # ------------------------------------------------------------ ingest

    def ingest_record(self, patient_id: str, record_doc: dict) -> dict:
        with self._lock_for(patient_id):
            profile = self.store.profile(patient_id)
            record = DailyRecord.from_json(record_doc)
            if self.store.has_record(patient_id, record.date):
                raise ConflictError(
                    f"record for {patient_id} on {record.date.isoformat()} already ingested")
            seq = self.store.append(patient_id, "record_ingested",
                                    {"patient_id": patient_id, "record": record.to_json()})
            ack = {
                "seq": seq,
                "patient_id": patient_id,
                "date": record.date.isoformat(),
                "forecast": None,
                "suggestion_id": None,
            }
            model = self.store.models.get(profile.group_key)
            if model is not None:
                forecast = self._log_forecast(profile, record, model)
                if forecast is not None:
                    ack["forecast"] = forecast
                if profile.arm is Arm.AI and _record_is_complete(record):
                    ack["suggestion_id"] = self._create_suggestion(profile, record, model)
            return ack

    def _log_forecast(self, profile, record, model) -> dict | None:
        """Score yesterday's model prediction against today's observation."""
        earlier = [r for r in self.store.records[profile.id] if r.date < record.date]
        if not earlier:
            return None
        prev = earlier[-1]
        if (record.date - prev.date).days != 1 or record.glucose is None:
            return None
        if not _record_is_complete(prev):
            return None
        predicted = float(model.predict(prev).glucose)
        payload = {
            "group_key": profile.group_key,
            "patient_id": profile.id,
            "date": record.date.isoformat(),
            "predicted_glucose": predicted,
            "observed_glucose": float(record.glucose),
        }
        self.store.append(profile.id, "forecast_logged", payload)
        return {"predicted_glucose": predicted, "observed_glucose": float(record.glucose)}

    def _effective_penalties(self, patient_id: str) -> tuple:
        item_id = self.store.latest_scored.get(patient_id)
        if item_id is None:
            return DEFAULT_PENALTIES
        return self.store.items[item_id].assigned_penalties

    def _create_suggestion(self, profile, record, model) -> str:
        penalties = self._effective_penalties(profile.id)
        cfg = replace(self.config.controller,
                      seed=_controller_seed(self.config.controller.seed, profile.id, record.date))
        result = optimize(model, record, profile, penalties, cfg)
        suggestion, predicted = result.suggestion, result.predicted

        # Review snapshot: suggested lifestyle merged with the forecast.
        snapshot = BoundarySnapshot(
            net_carb=suggestion.net_carb,
            fat=suggestion.fat,
            fiber=suggestion.fiber,
            protein=suggestion.protein,
            intake_calories=suggestion.intake_calories,
            activity_calories=suggestion.activity_calories,
            steps=suggestion.steps,
            glucose=predicted.glucose,
            ketone=predicted.ketone,
            weight=predicted.weight,
            keto_ratio=suggestion.keto_ratio,
            prev_weight=record.weight,
        )
        violations = check_boundaries(snapshot, profile,
                                      table=self.active_boundary_table(profile.diet_group))
        ratio_last = None
        if record.net_carb is not None and record.fat is not None and record.protein is not None:
            if record.net_carb + record.protein > 0:
                ratio_last = keto_ratio(record.net_carb, record.fat, record.protein)

        item = SuggestionReviewItem(
            id=f"{profile.id}:{record.date.isoformat()}",
            patient_id=profile.id,
            date=record.date,
            last_record=record,
            suggestion=suggestion,
            predicted=predicted,
            keto_ratio_last=ratio_last,
            keto_ratio_suggested=suggestion.keto_ratio,
            violations=[v.to_json() for v in violations],
            penalties_used=tuple(float(m) for m in penalties),
        )
        self.store.append(profile.id, "suggestion_created",
                          {"patient_id": profile.id, "item": item.to_json()})
        if self.config.scoring_mode == "auto":
            assigned = auto_penalties(predicted, suggestion.keto_ratio, suggestion,
                                      profile, self.active_lookup(), prev_weight=record.weight)
            self.store.append(profile.id, "item_scored", {
                "item_id": item.id,
                "rating": None,
                "score": None,
                "overrides": {},
                "assigned_penalties": [float(m) for m in assigned],
                "origin": "auto",
            })
        return item.id

    # ------------------------------------------------------------ review

    def review_queue(self, status: str | None = None, patient_id: str | None = None) -> list:
        if status is not None:
            try:
                wanted = ReviewStatus(status)
            except ValueError:
                raise DomainError(f"unknown status {status!r}")
        items = []
        for item_id in self.store.item_order:
            item = self.store.items[item_id]
            if status is not None and item.status is not wanted:
                continue
            if patient_id is not None and item.patient_id != patient_id:
                continue
            items.append(item.to_json())
        return items

    def get_item(self, item_id: str) -> dict:
        return self.store.item(item_id).to_json()

    def score_item(self, item_id: str, rating: str,
                   score: float | None = None, overrides: dict | None = None) -> dict:
        item = self.store.item(item_id)
        with self._lock_for(item.patient_id):
            item = self.store.item(item_id)
            self.store.require_transition(item, ReviewStatus.SCORED)
            try:
                rated = Rating(rating)
            except ValueError:
                raise DomainError(f"unknown rating {rating!r}")
            expected = rating_to_score(rated)
            if score is not None and float(score) != expected:
                raise DomainError(
                    f"rating {rated.value} maps to score {expected:g}, not {score!r}")
            overrides = dict(overrides or {})
            for term, value in overrides.items():
                if term not in PENALTY_TERMS:
                    raise DomainError(f"unknown penalty term {term!r}")
                if not isinstance(value, (int, float)) or not 1.0 <= float(value) <= 1000.0:
                    raise DomainError(f"override {term}={value!r} outside [1, 1000]")
            assigned = tuple(float(overrides.get(term, expected)) for term in PENALTY_TERMS)
            self.store.append(item.patient_id, "item_scored", {
                "item_id": item_id,
                "rating": rated.value,
                "score": expected,
                "overrides": {k: float(v) for k, v in overrides.items()},
                "assigned_penalties": list(assigned),
                "origin": "nurse",
            })
            return self.store.item(item_id).to_json()

    # ---------------------------------------------------------- messages

    def daily_message(self, patient_id: str, date: dt.date) -> dict:
        item_id = f"{patient_id}:{date.isoformat()}"
        with self._lock_for(patient_id):
            profile = self.store.profile(patient_id)
            item = self.store.item(item_id)
            if item.status is ReviewStatus.PENDING_REVIEW:
                raise PreconditionError(f"item {item_id} has not been scored yet")
            key = date.isoformat()
            dispatched = self.store.messages.get(patient_id, {}).get(key)
            if dispatched is not None:
                return dispatched

            violations = [_violation_from_json(doc) for doc in item.violations]
            motivation = pick_motivation(violations, self._message_pool(),
                                         self.store.motivation_history.get(patient_id, []),
                                         today=item.date)
            try:
                plan = plan_meals(item.suggestion, self._food_catalog(), profile)
            except InfeasiblePlanError:
                plan = MealPlan.from_selections(())
            steps = [r.steps for r in self.store.records[patient_id]
                     if r.date <= item.date and r.steps is not None]
            message = compose(plan, motivation, step_goal(steps[-10:]))
            self.store.append(patient_id, "message_dispatched", {
                "patient_id": patient_id,
                "date": key,
                "item_id": item_id,
                "message": message.to_json(),
            })
            return message.to_json()

    # ---------------------------------------------------------- training

    def _group_series(self, group_key: str) -> list:
        return [records for pid, records in sorted(self.store.records.items())
                if self.store.profiles[pid].group_key == group_key and records]

    def train(self) -> dict:
        """Bootstrap: pretrain on every record, then fine-tune per group."""
        with self._train_lock:
            series = [records for records in self.store.records.values() if records]
            base = pretrain(series, config=self.config.twin)
            groups = sorted({p.group_key for p in self.store.profiles.values()})
            report: dict = {"groups": {}, "skipped": []}
            for group in groups:
                group_series = self._group_series(group)
                if len(make_dataset(group_series)) < 1:
                    report["skipped"].append(group)
                    continue
                through = max(r.date for records in group_series for r in records)
                tuned = fine_tune(base, group_series, config=self.config.twin,
                                  group_key=group, epochs=self.config.finetune_epochs,
                                  trained_through=through)
                group_report = {
                    "kind": "bootstrap",
                    "group_key": group,
                    "n_series": len(group_series),
                    "n_records": sum(len(records) for records in group_series),
                    "trained_through": through.isoformat(),
                    "model_digest": tuned.digest(),
                }
                self.store.append(SERVICE_STREAM, "model_trained", {
                    "group_key": group,
                    "model": tuned.to_json(),
                    "week_key": None,
                    "report": group_report,
                })
                report["groups"][group] = group_report
            return report

    def retrain(self, group_key: str) -> dict:
        """Weekly continuation on the trailing 7 days of new group records.
        Idempotent per (group, ISO week of the newest record)."""
        with self._train_lock:
            model = self.store.models.get(group_key)
            if model is None:
                raise PreconditionError(f"no trained model for group {group_key!r}")
            cutoff = model.trained_through
            new_series = []
            for records in self._group_series(group_key):
                fresh = [r for r in records if cutoff is None or r.date > cutoff]
                if fresh:
                    new_series.append(fresh)
            if not new_series:
                # Everything is already trained in; a report from the model's
                # own week answers the call, otherwise there is nothing to do.
                if cutoff is not None:
                    iso = cutoff.isocalendar()
                    cached = self.store.retrain_reports.get(
                        f"{group_key}|{iso[0]}-W{iso[1]:02d}")
                    if cached is not None:
                        return {**cached, "cached": True}
                raise PreconditionError(f"no records newer than the {group_key!r} model")
            through = max(r.date for records in new_series for r in records)
            window_start = through - dt.timedelta(days=6)
            new_series = [[r for r in records if r.date >= window_start]
                          for records in new_series]
            new_series = [records for records in new_series if records]

            iso = through.isocalendar()
            week_key = f"{iso[0]}-W{iso[1]:02d}"
            cached = self.store.retrain_reports.get(f"{group_key}|{week_key}")
            if cached is not None:
                return {**cached, "cached": True}

            tuned = weekly_retrain(model, new_series, through=through)
            report = {
                "kind": "weekly",
                "group_key": group_key,
                "week_key": week_key,
                "n_series": len(new_series),
                "n_records": sum(len(records) for records in new_series),
                "trained_through": through.isoformat(),
                "model_digest": tuned.digest(),
            }
            self.store.append(SERVICE_STREAM, "model_trained", {
                "group_key": group_key,
                "model": tuned.to_json(),
                "week_key": week_key,
                "report": report,
            })
            return {**report, "cached": False}

    # ----------------------------------------------------------- queries

    def metrics(self, group_key: str) -> dict:
        rows = self.store.forecasts.get(group_key)
        if not rows:
            raise PreconditionError(f"no logged predictions for group {group_key!r}")
        pairs = [(observed, predicted) for _, _, predicted, observed in rows]
        return zone_report(pairs).to_json()

    def get_penalty_lookup(self) -> dict:
        return self.active_lookup().to_json()

    def update_penalty_lookup(self, doc: dict) -> dict:
        incoming = PenaltyLookup.from_json(doc)
        bumped = PenaltyLookup(bands=incoming.bands,
                               version=self.active_lookup().version + 1)
        self.store.append(SERVICE_STREAM, "config_updated",
                          {"table": "penalty_lookup", "doc": bumped.to_json()})
        return bumped.to_json()

    def get_boundary_table(self, diet: str) -> dict:
        try:
            diet_group = DietGroup(diet)
        except ValueError:
            raise DomainError(f"unknown diet group {diet!r}")
        return self.active_boundary_table(diet_group).to_json()

    def update_boundary_table(self, doc: dict) -> dict:
        incoming = BoundaryTable.from_json(doc)
        current = self.active_boundary_table(incoming.diet_group)
        bumped = BoundaryTable(diet_group=incoming.diet_group, rules=incoming.rules,
                               version=current.version + 1)
        self.store.append(SERVICE_STREAM, "config_updated",
                          {"table": "boundary_table", "doc": bumped.to_json()})
        return bumped.to_json()

    def digest(self) -> dict:
        return {"seq": self.store.seq, "digest": self.store.state_digest()}


def _parse_date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise DomainError(f"bad date {text!r}; expected YYYY-MM-DD")


def create_app(config: ServiceConfig, store: Store | None = None):
    from fastapi import Body, FastAPI, Query, Request
    from fastapi.responses import JSONResponse

    app = FastAPI(title="onlc", version="1")
    api = Api(config, store=store)
    app.state.api = api

    status_map = ((NotFoundError, 404), (ConflictError, 409), (PreconditionError, 412))

    @app.exception_handler(OnlcError)
    async def _domain_error(request: Request, exc: OnlcError):
        code = next((status for cls, status in status_map if isinstance(exc, cls)), 422)
        return JSONResponse(status_code=code,
                            content={"error": {"type": type(exc).__name__, "detail": str(exc)}})

    @app.middleware("http")
    async def _auth(request: Request, call_next):
        path = request.url.path
        if (config.token is not None and path.startswith("/v1")
                and path != "/v1/health"
                and request.headers.get("authorization") != f"Bearer {config.token}"):
            return JSONResponse(status_code=401,
                                content={"error": {"type": "Unauthorized",
                                                   "detail": "missing or bad bearer token"}})
        return await call_next(request)

    @app.get("/v1/health")
    def health():
        return {"status": "ok"}

    @app.get("/v1/state/digest")
    def state_digest():
        return api.digest()

    @app.post("/v1/patients", status_code=201)
    def register_patient(payload: dict = Body(...)):
        return api.register_patient(payload)

    @app.get("/v1/patients")
    def list_patients():
        return {"patients": api.list_patients()}

    @app.get("/v1/patients/{patient_id}")
    def get_patient(patient_id: str):
        return api.get_patient(patient_id)

    @app.get("/v1/patients/{patient_id}/records")
    def list_records(patient_id: str):
        return {"records": api.list_records(patient_id)}

    @app.post("/v1/patients/{patient_id}/records", status_code=201)
    def ingest_record(patient_id: str, payload: dict = Body(...)):
        return api.ingest_record(patient_id, payload)

    @app.get("/v1/patients/{patient_id}/message")
    def daily_message(patient_id: str, date: str = Query(...)):
        return api.daily_message(patient_id, _parse_date(date))

    @app.get("/v1/review-items")
    def review_queue(status: str | None = None, patient_id: str | None = None):
        return {"items": api.review_queue(status=status, patient_id=patient_id)}

    @app.get("/v1/review-items/{item_id}")
    def get_item(item_id: str):
        return api.get_item(item_id)

    @app.post("/v1/review-items/{item_id}/score")
    def score_item(item_id: str, payload: dict = Body(...)):
        if "rating" not in payload:
            raise DomainError("score payload needs a rating")
        return api.score_item(item_id, payload["rating"],
                              score=payload.get("score"),
                              overrides=payload.get("overrides"))

    @app.post("/v1/train")
    def train():
        return api.train()

    @app.post("/v1/retrain")
    def retrain(payload: dict = Body(...)):
        if "group" not in payload:
            raise DomainError("retrain payload needs a group")
        return api.retrain(payload["group"])

    @app.get("/v1/metrics")
    def metrics(group: str = Query(...)):
        return api.metrics(group)

    @app.get("/v1/config/penalty-lookup")
    def get_penalty_lookup():
        return api.get_penalty_lookup()

    @app.put("/v1/config/penalty-lookup")
    def put_penalty_lookup(payload: dict = Body(...)):
        return api.update_penalty_lookup(payload)

    @app.get("/v1/config/boundary-table")
    def get_boundary_table(diet: str = Query(...)):
        return api.get_boundary_table(diet)

    @app.put("/v1/config/boundary-table")
    def put_boundary_table(payload: dict = Body(...)):
        return api.update_boundary_table(payload)

    console_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if console_dir.is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/console", StaticFiles(directory=console_dir, html=True), name="console")

    return app
