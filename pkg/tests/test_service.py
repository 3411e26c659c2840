import datetime as dt
import threading
from dataclasses import replace
from pathlib import Path
from types import SimpleNamespace

import pytest

from onlc.cohort import generate_cohort, initial_state, simulate_day
from onlc.controller import ControllerConfig
from onlc.errors import (
    ConflictError,
    DomainError,
    NotFoundError,
    PreconditionError,
    TrainingError,
)
from onlc.records import Arm
from onlc.service import Api, ServiceConfig, create_app
from onlc.storage import ReviewStatus, Store
from onlc.twin import TwinConfig

START = dt.date(2026, 1, 5)
SMALL_TWIN = TwinConfig(hidden_sizes=(6, 6, 3), max_epochs=80, patience=10, batch_size=16)
SMALL_PSO = ControllerConfig(swarm_size=10, iterations=30)
WARMUP_DAYS = 10


def service_config(data_dir, mode="auto", token=None):
    return ServiceConfig(
        data_dir=str(data_dir), scoring_mode=mode, token=token,
        twin=SMALL_TWIN, controller=SMALL_PSO, finetune_epochs=40,
    )


@pytest.fixture(scope="module")
def seeded_days():
    """Twelve days of habit behavior for a four-patient cohort, precomputed
    so several service instances can ingest identical streams."""
    cohort = generate_cohort(4, seed=11)
    states = {p.profile.id: initial_state(p, START) for p in cohort}
    days = []
    for _ in range(WARMUP_DAYS + 2):
        row = {}
        for p in cohort:
            state = states[p.profile.id]
            row[p.profile.id] = simulate_day(p, p.habit.draw(state.rng), state)
        days.append(row)
    return SimpleNamespace(cohort=cohort, days=days)


def seed_service(api, seeded, live_days=1):
    """Register everyone, ingest the warmup days, train, then go live."""
    for p in seeded.cohort:
        api.register_patient(p.profile.to_json())
    for row in seeded.days[:WARMUP_DAYS]:
        for pid, record in row.items():
            api.ingest_record(pid, record.to_json())
    api.train()
    acks = {}
    for row in seeded.days[WARMUP_DAYS:WARMUP_DAYS + live_days]:
        for pid, record in row.items():
            acks[pid] = api.ingest_record(pid, record.to_json())
    return acks


@pytest.fixture(scope="module")
def manual(tmp_path_factory, seeded_days):
    api = Api(service_config(tmp_path_factory.mktemp("manual"), mode="manual"))
    acks = seed_service(api, seeded_days)
    return SimpleNamespace(api=api, acks=acks, **vars(seeded_days))


def live_date(offset=0):
    return START + dt.timedelta(days=WARMUP_DAYS + offset)


class TestIngest:
    def test_ack_carries_sequence_forecast_and_suggestion(self, manual):
        ack = manual.acks["p1"]
        assert set(ack) == {"seq", "patient_id", "date", "forecast", "suggestion_id"}
        assert ack["date"] == live_date().isoformat()
        assert ack["suggestion_id"] == f"p1:{live_date().isoformat()}"
        assert ack["forecast"]["observed_glucose"] > 0

    def test_non_ai_patient_gets_forecast_but_no_suggestion(self, manual):
        ack = manual.acks["p2"]
        assert ack["forecast"] is not None
        assert ack["suggestion_id"] is None
        assert manual.api.review_queue(patient_id="p2") == []

    def test_no_suggestions_before_a_model_exists(self, manual):
        # warmup ingests happened with no trained model
        items = manual.api.review_queue(patient_id="p1")
        assert all(i["date"] >= live_date().isoformat() for i in items)

    def test_duplicate_date_conflicts(self, manual):
        record = manual.days[0]["p1"]
        with pytest.raises(ConflictError, match="already ingested"):
            manual.api.ingest_record("p1", record.to_json())

    def test_unknown_patient_not_found(self, manual):
        record = manual.days[0]["p1"]
        with pytest.raises(NotFoundError):
            manual.api.ingest_record("ghost", record.to_json())

    def test_gap_in_dates_skips_the_forecast(self, manual):
        record = replace(manual.days[WARMUP_DAYS + 1]["p2"],
                         date=live_date() + dt.timedelta(days=30))
        ack = manual.api.ingest_record("p2", record.to_json())
        assert ack["forecast"] is None

    def test_incomplete_record_skips_the_suggestion(self, manual):
        record = replace(manual.days[WARMUP_DAYS + 1]["p4"], ketone=None)
        ack = manual.api.ingest_record("p4", record.to_json())
        assert ack["suggestion_id"] is None
        assert ack["forecast"] is not None

    def test_review_item_merges_suggestion_with_forecast(self, manual):
        item = manual.api.get_item(manual.acks["p1"]["suggestion_id"])
        assert item["status"] == "PendingReview"
        assert item["penalties_used"] == [1.0, 1.0, 1.0]
        assert item["keto_ratio_suggested"] == pytest.approx(
            item["suggestion"]["fat"]
            / (item["suggestion"]["net_carb"] + item["suggestion"]["protein"]))
        for violation in item["violations"]:
            assert set(violation) == {"variable", "observed", "boundary", "importance"}


class TestScoring:
    def test_message_blocked_until_scored(self, manual):
        with pytest.raises(PreconditionError, match="not been scored"):
            manual.api.daily_message("p4", live_date())

    def test_score_validation(self, manual):
        item_id = manual.acks["p1"]["suggestion_id"]
        with pytest.raises(DomainError, match="unknown rating"):
            manual.api.score_item(item_id, "Superb")
        with pytest.raises(DomainError, match="maps to score"):
            manual.api.score_item(item_id, "Bad", score=7)
        with pytest.raises(DomainError, match="unknown penalty term"):
            manual.api.score_item(item_id, "Bad", overrides={"m9": 10})
        with pytest.raises(DomainError, match=r"outside \[1, 1000\]"):
            manual.api.score_item(item_id, "Bad", overrides={"m2": 0.5})
        # all rejected attempts left the item untouched
        assert manual.api.get_item(item_id)["status"] == "PendingReview"

    def test_score_then_dispatch(self, manual):
        item_id = manual.acks["p1"]["suggestion_id"]
        scored = manual.api.score_item(item_id, "Bad", overrides={"m2": 50})
        assert scored["status"] == "Scored"
        assert scored["rating"] == "Bad"
        assert scored["score"] == 1000.0
        assert scored["assigned_penalties"] == [1000.0, 50.0, 1000.0]
        assert scored["scoring_origin"] == "nurse"
        with pytest.raises(ConflictError):
            manual.api.score_item(item_id, "Good")
        message = manual.api.daily_message("p1", live_date())
        assert set(message) == {"meal_plan", "motivation", "step_goal"}
        assert manual.api.daily_message("p1", live_date()) == message
        assert manual.api.get_item(item_id)["status"] == "Dispatched"

    def test_nurse_penalties_drive_the_next_run(self, manual):
        record = manual.days[WARMUP_DAYS + 1]["p1"]
        ack = manual.api.ingest_record("p1", record.to_json())
        item = manual.api.get_item(ack["suggestion_id"])
        assert item["penalties_used"] == [1000.0, 50.0, 1000.0]

    def test_concurrent_scores_of_one_item_admit_exactly_one(self, manual):
        item_id = f"p1:{live_date(1).isoformat()}"
        assert manual.api.get_item(item_id)["status"] == "PendingReview"
        outcomes = []

        def score():
            try:
                manual.api.score_item(item_id, "Good")
                outcomes.append("ok")
            except ConflictError:
                outcomes.append("conflict")

        threads = [threading.Thread(target=score) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert outcomes.count("ok") == 1
        assert manual.api.get_item(item_id)["assigned_penalties"] == [100.0, 100.0, 100.0]

    def test_message_for_unknown_day_not_found(self, manual):
        with pytest.raises(NotFoundError):
            manual.api.daily_message("p1", START - dt.timedelta(days=1))


class TestTraining:
    def test_train_needs_data(self, tmp_path, seeded_days):
        api = Api(service_config(tmp_path / "empty"))
        api.register_patient(seeded_days.cohort[0].profile.to_json())
        with pytest.raises(TrainingError):
            api.train()

    def test_retrain_needs_a_model(self, tmp_path):
        api = Api(service_config(tmp_path / "bare"))
        with pytest.raises(PreconditionError, match="no trained model"):
            api.retrain("keto/obese_t2d")

    def test_retrain_is_idempotent_per_week(self, manual):
        group = "keto/obese_t2d"
        first = manual.api.retrain(group)
        again = manual.api.retrain(group)
        assert first["cached"] is False
        assert again["cached"] is True
        assert again["week_key"] == first["week_key"]
        assert again["model_digest"] == first["model_digest"]

    def test_retrain_advances_the_model(self, manual):
        model = manual.api.store.models["keto/obese_t2d"]
        assert model.trained_through >= live_date()

    def test_metrics_report_logged_forecasts(self, manual):
        report = manual.api.metrics("keto/obese_t2d")
        assert report["total"] >= 1
        assert set(report["counts"]) == set("ABCDE")
        with pytest.raises(PreconditionError, match="no logged predictions"):
            manual.api.metrics("keto/nowhere")

    def test_config_tables_version_on_update(self, manual):
        lookup = manual.api.get_penalty_lookup()
        bumped = manual.api.update_penalty_lookup(lookup)
        assert bumped["version"] == lookup["version"] + 1
        table = manual.api.get_boundary_table("keto")
        bumped = manual.api.update_boundary_table(table)
        assert bumped["version"] == table["version"] + 1
        with pytest.raises(DomainError, match="unknown diet group"):
            manual.api.get_boundary_table("paleo")


class TestReplay:
    def test_replaying_the_event_log_reproduces_state(self, manual):
        live = manual.api.digest()
        replayed = Store.open(manual.api.config.resolved_data_dir())
        assert replayed.seq == live["seq"]
        assert replayed.state_digest() == live["digest"]

    def test_snapshot_then_tail_agrees(self, manual):
        manual.api.store.write_snapshot()
        record = replace(manual.days[WARMUP_DAYS + 1]["p3"],
                         date=live_date() + dt.timedelta(days=40))
        manual.api.ingest_record("p3", record.to_json())
        reopened = Store.open(manual.api.config.resolved_data_dir())
        assert reopened.state_digest() == manual.api.store.state_digest()

    def test_env_var_overrides_data_dir(self, monkeypatch, tmp_path):
        monkeypatch.setenv("ONLC_DATA_DIR", str(tmp_path / "elsewhere"))
        cfg = ServiceConfig(data_dir="ignored")
        assert cfg.resolved_data_dir() == tmp_path / "elsewhere"
        monkeypatch.delenv("ONLC_DATA_DIR")
        assert ServiceConfig(data_dir="kept").resolved_data_dir() == Path("kept")

    def test_from_json_accepts_partial_nested_configs(self):
        cfg = ServiceConfig.from_json({
            "scoring_mode": "manual",
            "twin": {"hidden_sizes": [6, 6, 3], "max_epochs": 80},
            "controller": {"swarm_size": 10},
        })
        assert cfg.scoring_mode == "manual"
        assert cfg.twin.hidden_sizes == (6, 6, 3)
        assert cfg.twin.lr_finetune == TwinConfig().lr_finetune
        assert cfg.controller.swarm_size == 10
        assert cfg.controller.iterations == ControllerConfig().iterations


@pytest.fixture(scope="module")
def client(manual):
    from fastapi.testclient import TestClient
    app = create_app(manual.api.config, store=manual.api.store)
    return TestClient(app)


@pytest.fixture(scope="module")
def auto(tmp_path_factory, seeded_days):
    api = Api(service_config(tmp_path_factory.mktemp("auto"), mode="auto"))
    acks = seed_service(api, seeded_days)
    return SimpleNamespace(api=api, acks=acks, **vars(seeded_days))


class TestHttpContract:
    """Route shapes and status codes, frozen against the API reference."""

    def test_health(self, client):
        response = client.get("/v1/health")
        assert response.status_code == 200
        assert response.json() == {"status": "ok"}

    def test_register_and_conflict(self, client, manual):
        profile = manual.cohort[0].profile.to_json() | {"id": "p9"}
        created = client.post("/v1/patients", json=profile)
        assert created.status_code == 201
        assert set(created.json()) == {"patient_id", "seq"}
        dup = client.post("/v1/patients", json=profile)
        assert dup.status_code == 409
        assert dup.json()["error"]["type"] == "ConflictError"

    def test_patient_listing_and_records(self, client):
        patients = client.get("/v1/patients").json()["patients"]
        assert {"p1", "p2", "p3", "p4"} <= {p["id"] for p in patients}
        records = client.get("/v1/patients/p1/records").json()["records"]
        assert [r["date"] for r in records] == sorted(r["date"] for r in records)
        assert client.get("/v1/patients/ghost/records").status_code == 404

    def test_ingest_status_codes(self, client, manual):
        dup = client.post("/v1/patients/p1/records",
                          json=manual.days[0]["p1"].to_json())
        assert dup.status_code == 409
        ghost = client.post("/v1/patients/ghost/records",
                            json=manual.days[0]["p1"].to_json())
        assert ghost.status_code == 404

    def test_queue_filters_and_item_fetch(self, client):
        everything = client.get("/v1/review-items").json()["items"]
        assert len(everything) >= 2
        pending = client.get("/v1/review-items",
                             params={"status": "PendingReview"}).json()["items"]
        assert all(i["status"] == "PendingReview" for i in pending)
        only_p1 = client.get("/v1/review-items",
                             params={"patient_id": "p1"}).json()["items"]
        assert all(i["patient_id"] == "p1" for i in only_p1)
        one = client.get(f"/v1/review-items/{everything[0]['id']}")
        assert one.status_code == 200
        assert client.get("/v1/review-items/nope").status_code == 404
        bad = client.get("/v1/review-items", params={"status": "Lost"})
        assert bad.status_code == 422

    def test_score_and_message_over_http(self, client, manual):
        item_id = f"p4:{live_date().isoformat()}"
        missing = client.post(f"/v1/review-items/{item_id}/score", json={})
        assert missing.status_code == 422
        scored = client.post(f"/v1/review-items/{item_id}/score",
                             json={"rating": "VeryGood"})
        assert scored.status_code == 200
        assert scored.json()["assigned_penalties"] == [1.0, 1.0, 1.0]
        rescore = client.post(f"/v1/review-items/{item_id}/score",
                              json={"rating": "Bad"})
        assert rescore.status_code == 409
        message = client.get("/v1/patients/p4/message",
                             params={"date": live_date().isoformat()})
        assert message.status_code == 200
        assert set(message.json()) == {"meal_plan", "motivation", "step_goal"}
        repeat = client.get("/v1/patients/p4/message",
                            params={"date": live_date().isoformat()})
        assert repeat.json() == message.json()
        malformed = client.get("/v1/patients/p4/message", params={"date": "yesterday"})
        assert malformed.status_code == 422

    def test_metrics_and_retrain_routes(self, client):
        ok = client.get("/v1/metrics", params={"group": "keto/obese_t2d"})
        assert ok.status_code == 200
        assert set(ok.json()) == {"total", "counts", "fractions"}
        empty = client.get("/v1/metrics", params={"group": "keto/nowhere"})
        assert empty.status_code == 412
        cached = client.post("/v1/retrain", json={"group": "keto/obese_t2d"})
        assert cached.status_code == 200
        assert cached.json()["cached"] is True

    def test_config_routes(self, client):
        lookup = client.get("/v1/config/penalty-lookup")
        assert lookup.status_code == 200
        updated = client.put("/v1/config/penalty-lookup", json=lookup.json())
        assert updated.json()["version"] == lookup.json()["version"] + 1
        table = client.get("/v1/config/boundary-table", params={"diet": "low_fat"})
        assert table.status_code == 200
        updated = client.put("/v1/config/boundary-table", json=table.json())
        assert updated.json()["version"] == table.json()["version"] + 1

    def test_digest_route_matches_cold_replay(self, client, manual):
        live = client.get("/v1/state/digest").json()
        replayed = Store.open(manual.api.config.resolved_data_dir())
        assert live["digest"] == replayed.state_digest()

    def test_bearer_token_guard(self, tmp_path):
        from fastapi.testclient import TestClient
        app = create_app(service_config(tmp_path / "guarded", token="sesame"))
        client = TestClient(app)
        assert client.get("/v1/health").status_code == 200
        assert client.get("/v1/state/digest").status_code == 401
        ok = client.get("/v1/state/digest",
                        headers={"Authorization": "Bearer sesame"})
        assert ok.status_code == 200
        wrong = client.get("/v1/state/digest",
                           headers={"Authorization": "Bearer guess"})
        assert wrong.status_code == 401


class TestAutoMode:
    def test_items_are_scored_at_creation(self, auto):
        item = auto.api.get_item(auto.acks["p1"]["suggestion_id"])
        assert item["status"] == "Scored"
        assert item["scoring_origin"] == "auto"
        assert item["rating"] is None
        assert all(1.0 <= m <= 1000.0 for m in item["assigned_penalties"])

    def test_message_needs_no_nurse(self, auto):
        message = auto.api.daily_message("p1", live_date())
        assert set(message) == {"meal_plan", "motivation", "step_goal"}

    def test_auto_penalties_feed_the_next_run(self, auto):
        previous = auto.api.get_item(auto.acks["p4"]["suggestion_id"])
        record = auto.days[WARMUP_DAYS + 1]["p4"]
        ack = auto.api.ingest_record("p4", record.to_json())
        item = auto.api.get_item(ack["suggestion_id"])
        assert item["penalties_used"] == previous["assigned_penalties"]

    def test_auto_run_replays_bit_exactly(self, auto):
        live = auto.api.digest()
        replayed = Store.open(auto.api.config.resolved_data_dir())
        assert replayed.state_digest() == live["digest"]
