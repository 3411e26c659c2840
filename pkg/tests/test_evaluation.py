import pytest
from hypothesis import given, strategies as st

from onlc.errors import DomainError
from onlc.evaluation import ZONES, clarke_zone, render_zone_csv, zone_a_fraction, zone_report


class TestClarkeZone:
    def test_review_example_is_a(self):
        # |110 - 134| = 24 <= 0.2 * 134 = 26.8
        assert clarke_zone(134.0, 110.0) == "A"

    def test_perfect_prediction_is_a(self):
        assert clarke_zone(100.0, 100.0) == "A"

    def test_diagonal_is_a(self):
        for g in (5.0, 50.0, 70.0, 130.0, 250.0, 400.0):
            assert clarke_zone(g, g) == "A"

    def test_dangerous_miss_is_e(self):
        assert clarke_zone(200.0, 60.0) == "E"
        assert clarke_zone(60.0, 200.0) == "E"

    def test_both_hypo_is_a(self):
        assert clarke_zone(55.0, 40.0) == "A"

    def test_zone_b_moderate_overestimate(self):
        assert clarke_zone(134.0, 170.0) == "B"

    def test_zone_c_overcorrection(self):
        # 70 <= ref <= 290 and pred >= ref + 110
        assert clarke_zone(100.0, 230.0) == "C"

    def test_zone_d_missed_hyper(self):
        # ref >= 240 but prediction looks normal
        assert clarke_zone(300.0, 120.0) == "D"

    def test_zone_d_missed_hypo(self):
        # ref <= 175/3 but prediction looks normal
        assert clarke_zone(50.0, 120.0) == "D"

    def test_boundary_overlap_prefers_less_severe(self):
        # ref=70, pred=84: within 20% (zone A arm) and inside the upper-left
        # D wedge; A wins
        assert clarke_zone(70.0, 84.0) == "A"
        # ref=70, pred=180: D wedge and C overlap; D wins
        assert clarke_zone(70.0, 180.0) == "D"
        # pred=180 for low ref: D band's top edge is shared with E; D wins
        assert clarke_zone(60.0, 180.0) == "D"
        # ref=240, pred=70: corner shared between the D band and the E box
        assert clarke_zone(240.0, 70.0) == "D"

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            clarke_zone(0.0, 100.0)
        with pytest.raises(DomainError):
            clarke_zone(100.0, -5.0)

    @given(
        reference=st.floats(1.0, 400.0),
        predicted=st.floats(1.0, 400.0),
    )
    def test_total_function_over_positive_grid(self, reference, predicted):
        assert clarke_zone(reference, predicted) in ZONES

    def test_partition_sweep(self):
        # every integer point of [1, 400]^2 maps to exactly one valid zone
        for ref in range(1, 401, 7):
            for pred in range(1, 401, 7):
                assert clarke_zone(float(ref), float(pred)) in ZONES


class TestZoneReport:
    def test_counts_and_fractions(self):
        pairs = [(134.0, 110.0), (100.0, 100.0), (200.0, 60.0), (134.0, 170.0)]
        report = zone_report(pairs)
        assert report.total == 4
        assert report.counts["A"] == 2
        assert report.counts["E"] == 1
        assert report.counts["B"] == 1
        assert report.zone_a_fraction == 0.5
        assert report.clinically_acceptable_fraction == 0.75

    def test_empty_report(self):
        report = zone_report([])
        assert report.total == 0
        assert report.zone_a_fraction == 0.0

    def test_zone_a_fraction_helper(self):
        assert zone_a_fraction([(100.0, 100.0), (100.0, 230.0)]) == 0.5

    def test_text_render_lists_all_zones(self):
        text = zone_report([(100.0, 100.0)]).render_text()
        for z in ZONES:
            assert f"\n{z} " in "\n" + text

    def test_csv_render(self):
        csv_text = render_zone_csv([(134.0, 110.0)])
        assert csv_text.splitlines()[0] == "reference,predicted,zone"
        assert csv_text.splitlines()[1].endswith(",A")
