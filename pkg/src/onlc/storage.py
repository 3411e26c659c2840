"""Append-only event persistence for the service.

State changes are recorded as newline-delimited JSON events, one log file
per patient plus one for service-wide events, each stamped with a global
sequence number. Events carry fully computed payloads, so applying them
never recomputes anything: replaying the log in sequence order rebuilds the
derived state bit-exactly, which state_digest() makes checkable. A snapshot
is an optional fast-forward point; events after it replay on top.
"""

from __future__ import annotations

import datetime as dt
import enum
import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .controller import Suggestion
from .errors import ConflictError, IngestError, NotFoundError
from .messaging import MessageEvent
from .records import DailyRecord, PatientProfile
from .scoring import BoundaryTable, PenaltyLookup
from .twin import PredictedOutcome, TwinModel

SERVICE_STREAM = "service"

EVENT_KINDS = (
    "patient_registered",
    "record_ingested",
    "forecast_logged",
    "suggestion_created",
    "item_scored",
    "message_dispatched",
    "model_trained",
    "config_updated",
)


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


class ReviewStatus(enum.Enum):
    PENDING_REVIEW = "PendingReview"
    SCORED = "Scored"
    DISPATCHED = "Dispatched"


# The only legal transitions; anything else is a conflict.
_NEXT_STATUS = {
    ReviewStatus.PENDING_REVIEW: ReviewStatus.SCORED,
    ReviewStatus.SCORED: ReviewStatus.DISPATCHED,
}


@dataclass
class SuggestionReviewItem:
    """One day's suggestion as the nurse sees it: the last observation, the
    proposed lifestyle, the twin's forecast, both keto ratios, and any
    boundary violations. Only status (and the scoring fields, once) change
    after creation."""

    id: str
    patient_id: str
    date: dt.date
    last_record: DailyRecord
    suggestion: Suggestion
    predicted: PredictedOutcome
    keto_ratio_last: float | None
    keto_ratio_suggested: float
    violations: list
    penalties_used: tuple
    status: ReviewStatus = ReviewStatus.PENDING_REVIEW
    rating: str | None = None
    score: float | None = None
    overrides: dict = field(default_factory=dict)
    assigned_penalties: tuple | None = None
    scoring_origin: str | None = None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "patient_id": self.patient_id,
            "date": self.date.isoformat(),
            "last_record": self.last_record.to_json(),
            "suggestion": self.suggestion.to_json(),
            "predicted": {
                "glucose": self.predicted.glucose,
                "ketone": self.predicted.ketone,
                "weight": self.predicted.weight,
            },
            "keto_ratio_last": self.keto_ratio_last,
            "keto_ratio_suggested": self.keto_ratio_suggested,
            "violations": list(self.violations),
            "penalties_used": list(self.penalties_used),
            "status": self.status.value,
            "rating": self.rating,
            "score": self.score,
            "overrides": dict(self.overrides),
            "assigned_penalties": None if self.assigned_penalties is None
            else list(self.assigned_penalties),
            "scoring_origin": self.scoring_origin,
        }

    @staticmethod
    def from_json(doc: dict) -> "SuggestionReviewItem":
        predicted = doc["predicted"]
        assigned = doc.get("assigned_penalties")
        return SuggestionReviewItem(
            id=doc["id"],
            patient_id=doc["patient_id"],
            date=dt.date.fromisoformat(doc["date"]),
            last_record=DailyRecord.from_json(doc["last_record"]),
            suggestion=Suggestion.from_json(doc["suggestion"]),
            predicted=PredictedOutcome(
                glucose=predicted["glucose"], ketone=predicted["ketone"],
                weight=predicted["weight"]),
            keto_ratio_last=doc.get("keto_ratio_last"),
            keto_ratio_suggested=doc["keto_ratio_suggested"],
            violations=list(doc.get("violations", ())),
            penalties_used=tuple(doc["penalties_used"]),
            status=ReviewStatus(doc["status"]),
            rating=doc.get("rating"),
            score=doc.get("score"),
            overrides=dict(doc.get("overrides", {})),
            assigned_penalties=None if assigned is None else tuple(assigned),
            scoring_origin=doc.get("scoring_origin"),
        )


class Store:
    """Event log plus the state derived from it.

    append() assigns the next global sequence number, writes one NDJSON
    line, and applies the payload; apply functions are payload-only, so
    Store.open() on the same directory reproduces this state exactly.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.events_dir = self.root / "events"
        self.events_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._seq = 0

        self.profiles: dict = {}
        self.records: dict = {}
        self.items: dict = {}
        self.item_order: list = []
        self.latest_scored: dict = {}
        self.forecasts: dict = {}
        self.messages: dict = {}
        self.motivation_history: dict = {}
        self.models: dict = {}
        self.retrain_reports: dict = {}
        self.penalty_lookup: PenaltyLookup | None = None
        self.boundary_tables: dict = {}

    @property
    def seq(self) -> int:
        return self._seq

    # ---------------------------------------------------------------- io

    @staticmethod
    def open(root) -> "Store":
        """Load the snapshot (if any), then replay every later event."""
        store = Store(root)
        snap_seq = 0
        snap_path = store.root / "snapshot.json"
        if snap_path.exists():
            doc = json.loads(snap_path.read_text())
            snap_seq = doc["seq"]
            store._restore(doc["state"])
            store._seq = snap_seq
        for event in store._read_events():
            if event["seq"] <= snap_seq:
                continue
            store._apply(event)
            store._seq = event["seq"]
        return store

    def _read_events(self) -> list:
        events = []
        for path in sorted(self.events_dir.glob("*.ndjson")):
            for n, line in enumerate(path.read_text().splitlines(), start=1):
                if not line.strip():
                    continue
                try:
                    event = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise IngestError(f"{path.name}:{n}: corrupt event line ({exc})")
                if "seq" not in event or "kind" not in event:
                    raise IngestError(f"{path.name}:{n}: event missing seq/kind")
                events.append(event)
        events.sort(key=lambda e: e["seq"])
        return events

    def append(self, stream: str, kind: str, payload: dict) -> int:
        """Persist one event and apply it. Returns the sequence number."""
        if kind not in EVENT_KINDS:
            raise IngestError(f"unknown event kind {kind!r}")
        with self._lock:
            self._seq += 1
            event = {"seq": self._seq, "stream": stream, "kind": kind, "payload": payload}
            path = self.events_dir / f"{stream}.ndjson"
            with path.open("a") as fh:
                fh.write(canonical_json(event) + "\n")
            self._apply(event)
            return self._seq

    # ------------------------------------------------------------- apply

    def _apply(self, event: dict):
        kind, payload = event["kind"], event["payload"]
        handler = getattr(self, f"_apply_{kind}", None)
        if handler is None:
            raise IngestError(f"unknown event kind {kind!r} in log")
        handler(payload)

    def _apply_patient_registered(self, payload):
        profile = PatientProfile.from_json(payload["profile"])
        self.profiles[profile.id] = profile
        self.records.setdefault(profile.id, [])

    def _apply_record_ingested(self, payload):
        record = DailyRecord.from_json(payload["record"])
        records = self.records.setdefault(payload["patient_id"], [])
        records.append(record)
        records.sort(key=lambda r: r.date)

    def _apply_forecast_logged(self, payload):
        self.forecasts.setdefault(payload["group_key"], []).append((
            payload["date"], payload["patient_id"],
            payload["predicted_glucose"], payload["observed_glucose"],
        ))

    def _apply_suggestion_created(self, payload):
        item = SuggestionReviewItem.from_json(payload["item"])
        self.items[item.id] = item
        self.item_order.append(item.id)

    def _apply_item_scored(self, payload):
        item = self.items[payload["item_id"]]
        item.status = ReviewStatus.SCORED
        item.rating = payload.get("rating")
        item.score = payload.get("score")
        item.overrides = dict(payload.get("overrides", {}))
        item.assigned_penalties = tuple(payload["assigned_penalties"])
        item.scoring_origin = payload["origin"]
        self.latest_scored[item.patient_id] = item.id

    def _apply_message_dispatched(self, payload):
        pid, date = payload["patient_id"], payload["date"]
        message = payload["message"]
        self.messages.setdefault(pid, {})[date] = message
        self.motivation_history.setdefault(pid, []).append(MessageEvent(
            day=dt.date.fromisoformat(date),
            domain=message["motivation"]["domain"],
            text=message["motivation"]["text"],
        ))
        item = self.items.get(payload["item_id"])
        if item is not None:
            item.status = ReviewStatus.DISPATCHED

    def _apply_model_trained(self, payload):
        self.models[payload["group_key"]] = TwinModel.from_json(payload["model"])
        week_key = payload.get("week_key")
        if week_key:
            self.retrain_reports[f"{payload['group_key']}|{week_key}"] = payload["report"]

    def _apply_config_updated(self, payload):
        if payload["table"] == "penalty_lookup":
            self.penalty_lookup = PenaltyLookup.from_json(payload["doc"])
        elif payload["table"] == "boundary_table":
            table = BoundaryTable.from_json(payload["doc"])
            self.boundary_tables[table.diet_group.value] = table
        else:
            raise IngestError(f"unknown config table {payload['table']!r}")

    # ------------------------------------------------------------ guards

    def profile(self, patient_id: str) -> PatientProfile:
        try:
            return self.profiles[patient_id]
        except KeyError:
            raise NotFoundError(f"unknown patient {patient_id!r}")

    def item(self, item_id: str) -> SuggestionReviewItem:
        try:
            return self.items[item_id]
        except KeyError:
            raise NotFoundError(f"unknown review item {item_id!r}")

    def has_record(self, patient_id: str, date: dt.date) -> bool:
        return any(r.date == date for r in self.records.get(patient_id, ()))

    def require_transition(self, item: SuggestionReviewItem, target: ReviewStatus):
        if _NEXT_STATUS.get(item.status) is not target:
            raise ConflictError(
                f"item {item.id} is {item.status.value}; cannot move to {target.value}")

    # ------------------------------------------------------------- state

    def state_json(self, full_models: bool = False) -> dict:
        """Canonical view of the derived state. Models appear as digests
        unless full weights are requested (snapshots need them)."""
        return {
            "seq": self._seq,
            "profiles": {pid: p.to_json() for pid, p in sorted(self.profiles.items())},
            "records": {
                pid: [r.to_json() for r in records]
                for pid, records in sorted(self.records.items())
            },
            "items": {iid: self.items[iid].to_json() for iid in self.item_order},
            "item_order": list(self.item_order),
            "latest_scored": dict(sorted(self.latest_scored.items())),
            "forecasts": {
                group: [list(row) for row in rows]
                for group, rows in sorted(self.forecasts.items())
            },
            "messages": {
                pid: dict(sorted(by_date.items()))
                for pid, by_date in sorted(self.messages.items())
            },
            "motivation_history": {
                pid: [[e.day.isoformat(), e.domain, e.text] for e in events]
                for pid, events in sorted(self.motivation_history.items())
            },
            "models": {
                group: (model.to_json() if full_models else model.digest())
                for group, model in sorted(self.models.items())
            },
            "retrain_reports": dict(sorted(self.retrain_reports.items())),
            "penalty_lookup": None if self.penalty_lookup is None
            else self.penalty_lookup.to_json(),
            "boundary_tables": {
                diet: table.to_json()
                for diet, table in sorted(self.boundary_tables.items())
            },
        }

    def _restore(self, state: dict):
        self.profiles = {pid: PatientProfile.from_json(doc)
                         for pid, doc in state["profiles"].items()}
        self.records = {pid: [DailyRecord.from_json(doc) for doc in docs]
                        for pid, docs in state["records"].items()}
        self.items = {iid: SuggestionReviewItem.from_json(doc)
                      for iid, doc in state["items"].items()}
        self.item_order = list(state["item_order"])
        self.latest_scored = dict(state["latest_scored"])
        self.forecasts = {group: [tuple(row) for row in rows]
                          for group, rows in state["forecasts"].items()}
        self.messages = {pid: dict(by_date) for pid, by_date in state["messages"].items()}
        self.motivation_history = {
            pid: [MessageEvent(day=dt.date.fromisoformat(day), domain=domain, text=text)
                  for day, domain, text in events]
            for pid, events in state["motivation_history"].items()
        }
        self.models = {group: TwinModel.from_json(doc)
                       for group, doc in state["models"].items()}
        self.retrain_reports = dict(state["retrain_reports"])
        lookup = state.get("penalty_lookup")
        self.penalty_lookup = None if lookup is None else PenaltyLookup.from_json(lookup)
        self.boundary_tables = {
            diet: BoundaryTable.from_json(doc)
            for diet, doc in state.get("boundary_tables", {}).items()
        }

    def state_digest(self) -> str:
        return hashlib.sha256(canonical_json(self.state_json()).encode()).hexdigest()

    def write_snapshot(self) -> Path:
        """Freeze the current state so later opens can skip old events."""
        with self._lock:
            doc = {"seq": self._seq, "state": self.state_json(full_models=True)}
            path = self.root / "snapshot.json"
            path.write_text(canonical_json(doc) + "\n")
            return path
