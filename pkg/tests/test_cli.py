import datetime as dt
import json

import pytest

from onlc.cli import _cohort_config, _trial_config, build_parser, main
from onlc.cohort import CohortConfig
from onlc.controller import ControllerConfig
from onlc.plots import TREND_FIELDS, monthly_trends, trends_csv
from onlc.records import DailyRecord
from onlc.twin import TwinConfig


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """One small trial driven end to end through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    config = {
        "patients": 4,
        "months": 4,
        "trial": {
            "month_days": 7,
            "finetune_epochs": 60,
            "compose_messages": False,
            "twin": TwinConfig(hidden_sizes=(8, 8, 4), max_epochs=120,
                               patience=15, batch_size=16).to_json(),
            "controller": ControllerConfig(swarm_size=12, iterations=40).to_json(),
        },
    }
    config_path = root / "trial.json"
    config_path.write_text(json.dumps(config))
    out = root / "run"
    assert main(["run-trial", "--config", str(config_path),
                 "--seed", "11", "--out", str(out)]) == 0
    return out


class TestRunTrial:
    def test_outputs_written(self, run_dir):
        names = {p.name for p in run_dir.iterdir()}
        assert {"p1.csv", "p2.csv", "p3.csv", "p4.csv",
                "summary.json", "predictions.csv"} <= names
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["patients"] == 4
        assert set(summary["arms"]) == {"ai", "non_ai"}

    def test_arm_lines_printed(self, run_dir, capsys):
        # the fixture already ran; run again into a sibling dir to see stdout
        assert main(["run-trial", "--config", str(run_dir.parent / "trial.json"),
                     "--seed", "11", "--out", str(run_dir.parent / "run2")]) == 0
        out = capsys.readouterr().out
        assert "ai: n=2" in out
        assert "non_ai: n=2" in out

    def test_out_flag_is_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["run-trial", "--seed", "1"])


class TestConfigParsing:
    def test_partial_nested_overrides_keep_defaults(self):
        trial = _trial_config({"twin": {"hidden_sizes": [8, 8, 4], "max_epochs": 120},
                               "controller": {"swarm_size": 12}}, seed=None)
        assert trial.twin.hidden_sizes == (8, 8, 4)
        assert trial.twin.max_epochs == 120
        assert trial.twin.lr_pretrain == TwinConfig().lr_pretrain
        assert trial.controller.swarm_size == 12
        assert trial.controller.inertia == ControllerConfig().inertia

    def test_cohort_ranges_become_tuples(self):
        cohort = _cohort_config({"habit_steps": [4000.0, 8000.0]})
        assert cohort.habit_steps == (4000.0, 8000.0)
        assert cohort.adherence == CohortConfig().adherence

    def test_seed_flag_wins_over_document(self):
        assert _trial_config({"seed": 4}, seed=9).seed == 9
        assert _trial_config({"seed": 4}, seed=None).seed == 4

    def test_unknown_nested_key_is_an_error(self):
        with pytest.raises(TypeError):
            _trial_config({"twin": {"layers": [8, 8]}}, seed=None)


class TestReport:
    def test_renders_figures_and_delimited_exports(self, run_dir, capsys):
        assert main(["report", "--run", str(run_dir)]) == 0
        for name in ("trends.csv", "trends.png", "weights.png",
                     "zones.csv", "clarke.png"):
            assert (run_dir / name).exists(), name
        out = capsys.readouterr().out
        assert "zone  count  fraction" in out
        trends = (run_dir / "trends.csv").read_text().splitlines()
        assert trends[0] == "arm,field,month,value"
        zones = (run_dir / "zones.csv").read_text().splitlines()
        assert zones[0] == "reference,predicted,zone"
        assert len(zones) > 1

    def test_separate_output_directory(self, run_dir, tmp_path):
        assert main(["report", "--run", str(run_dir), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "trends.png").exists()

    def test_missing_summary_is_a_clean_error(self, tmp_path, capsys):
        assert main(["report", "--run", str(tmp_path)]) == 2
        assert "summary.json" in capsys.readouterr().err


class TestClarke:
    def test_zone_csv_to_file(self, tmp_path, capsys):
        pairs = tmp_path / "pairs.csv"
        pairs.write_text("reference,predicted\n134,110\n200,60\n90,90\n")
        out = tmp_path / "zones.csv"
        assert main(["clarke", "--pairs", str(pairs), "--out", str(out)]) == 0
        rows = out.read_text().splitlines()
        assert rows[0] == "reference,predicted,zone"
        assert rows[1].endswith(",A")
        assert rows[2].endswith(",E")
        assert rows[3].endswith(",A")
        assert "zone  count  fraction" in capsys.readouterr().out

    def test_zone_csv_to_stdout(self, tmp_path, capsys):
        pairs = tmp_path / "pairs.csv"
        pairs.write_text("100,100\n")
        assert main(["clarke", "--pairs", str(pairs)]) == 0
        captured = capsys.readouterr()
        assert captured.out.startswith("reference,predicted,zone")
        assert "zone  count  fraction" in captured.err

    def test_malformed_pairs_exit_cleanly(self, tmp_path, capsys):
        pairs = tmp_path / "pairs.csv"
        pairs.write_text("onecolumn\n")
        assert main(["clarke", "--pairs", str(pairs)]) == 2
        assert "error:" in capsys.readouterr().err


class TestMonthlyTrends:
    def test_hand_oracle(self):
        def record(day, glucose, steps=None):
            return DailyRecord(date=dt.date(2026, 1, 1) + dt.timedelta(days=day),
                               glucose=glucose, steps=steps, weight=200.0)

        trajectories = {
            "a": [record(0, 100.0, 4000.0), record(1, 110.0, None),
                  record(2, 120.0, 6000.0), record(3, 130.0, 6000.0)],
            "b": [record(0, 200.0, 8000.0), record(1, 210.0, 8000.0)],
        }
        arms = {"a": "ai", "b": "non_ai"}
        trends = monthly_trends(trajectories, arms, month_days=2)
        # month 1: patient a averages (100+110)/2, steps only from day 0
        assert trends["ai"]["glucose"] == [105.0, 125.0]
        assert trends["ai"]["steps"] == [4000.0, 6000.0]
        assert trends["non_ai"]["glucose"][0] == 205.0
        # patient b has no month-2 records: its arm mean is NaN there
        assert trends["non_ai"]["glucose"][1] != trends["non_ai"]["glucose"][1]

    def test_csv_covers_every_arm_field_and_month(self):
        records = [DailyRecord(date=dt.date(2026, 1, 1), glucose=100.0, weight=200.0)]
        trends = monthly_trends({"a": records}, {"a": "ai"}, month_days=7)
        rows = trends_csv(trends).splitlines()
        assert len(rows) == 1 + len(TREND_FIELDS)

    def test_serve_parser_accepts_its_flags(self):
        args = build_parser().parse_args(["serve", "--port", "9000"])
        assert args.port == 9000 and args.host == "127.0.0.1"
