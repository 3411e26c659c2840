import math

import pytest
from hypothesis import given, strategies as st

from onlc.errors import ConfigError, CoverageError, FitError
from onlc.records import Arm, ConditionGroup, DietGroup, PatientProfile
from onlc.scoring import (
    BoundaryRule,
    BoundarySnapshot,
    BoundaryTable,
    Importance,
    PenaltyBand,
    PenaltyLookup,
    Rating,
    auto_penalties,
    check_boundaries,
    default_boundary_table,
    default_penalty_lookup,
    fit_linear_penalty,
    rating_to_score,
    score_to_nearest_rating,
    snapshot_from_record,
)


def keto_profile(**overrides):
    base = dict(
        id="k1",
        diet_group=DietGroup.KETO,
        condition_group=ConditionGroup.OBESE_T2D,
        arm=Arm.AI,
        baseline_weight=199.2,
        calorie_goal=1800.0,
        min_protein=30.0,
        min_fat=90.0,
    )
    base.update(overrides)
    return PatientProfile(**base)


def lowfat_profile(**overrides):
    base = dict(
        id="l1",
        diet_group=DietGroup.LOW_FAT,
        condition_group=ConditionGroup.OBESE_KIDNEY_T2D,
        arm=Arm.AI,
        baseline_weight=210.0,
        calorie_goal=2000.0,
        min_protein=100.0,
        max_fat=55.0,
    )
    base.update(overrides)
    return PatientProfile(**base)


class TestRatings:
    def test_exact_score_map(self):
        assert rating_to_score(Rating.BAD) == 1000.0
        assert rating_to_score(Rating.OKAY) == 500.0
        assert rating_to_score(Rating.GOOD) == 100.0
        assert rating_to_score(Rating.VERY_GOOD) == 1.0

    def test_roundtrip(self):
        for rating in Rating:
            assert score_to_nearest_rating(rating_to_score(rating)) is rating

    def test_nearest_rating_for_fitted_scores(self):
        assert score_to_nearest_rating(140.0) is Rating.GOOD
        assert score_to_nearest_rating(900.0) is Rating.BAD
        assert score_to_nearest_rating(2.0) is Rating.VERY_GOOD


class TestBoundaryTables:
    def test_keto_table_has_ten_rows(self):
        table = default_boundary_table(DietGroup.KETO)
        assert len(table.rules) == 10
        by_var = {r.variable for r in table.rules}
        assert by_var == {
            "net_carb", "keto_ratio", "weight", "glucose", "protein",
            "fat", "intake_calories", "ketone", "activity_calories", "steps",
        }

    def test_lowfat_table_has_eight_rows(self):
        table = default_boundary_table(DietGroup.LOW_FAT)
        assert len(table.rules) == 8
        by_var = {r.variable for r in table.rules}
        assert by_var == {
            "net_carb", "protein", "fat", "intake_calories",
            "activity_calories", "steps", "weight", "glucose",
        }

    def test_importance_ranks(self):
        keto = {r.variable: r.importance for r in default_boundary_table(DietGroup.KETO).rules}
        assert keto["glucose"] is Importance.VERY_IMPORTANT
        assert keto["keto_ratio"] is Importance.VERY_IMPORTANT
        assert keto["protein"] is Importance.MODERATELY_IMPORTANT
        assert keto["steps"] is Importance.LOW_IMPORTANCE
        lf = {r.variable: r.importance for r in default_boundary_table(DietGroup.LOW_FAT).rules}
        assert lf["fat"] is Importance.VERY_IMPORTANT
        assert lf["net_carb"] is Importance.MODERATELY_IMPORTANT
        assert lf["steps"] is Importance.LOW_IMPORTANCE

    def test_json_roundtrip(self):
        for group in DietGroup:
            table = default_boundary_table(group)
            assert BoundaryTable.from_json(table.to_json()) == table


class TestCheckBoundaries:
    def test_clean_keto_day_passes(self):
        snap = BoundarySnapshot(
            net_carb=30.0, fat=135.0, fiber=25.0, protein=60.0,
            intake_calories=1575.0, activity_calories=1008.0, steps=6000.0,
            glucose=110.0, ketone=2.4, weight=197.6, keto_ratio=1.5,
            prev_weight=199.2,
        )
        assert check_boundaries(snap, keto_profile()) == []

    def test_glucose_violation_flagged_very_important(self):
        snap = BoundarySnapshot(glucose=134.0)
        (v,) = check_boundaries(snap, keto_profile())
        assert v.variable == "glucose"
        assert v.observed == 134.0
        assert v.importance is Importance.VERY_IMPORTANT

    def test_keto_ratio_below_threshold(self):
        snap = BoundarySnapshot(keto_ratio=0.3158)
        (v,) = check_boundaries(snap, keto_profile())
        assert v.variable == "keto_ratio"

    def test_weight_rule_uses_previous_observation(self):
        snap = BoundarySnapshot(weight=204.0, prev_weight=199.2)
        assert check_boundaries(snap, keto_profile()) == []
        snap = BoundarySnapshot(weight=205.0, prev_weight=199.2)
        (v,) = check_boundaries(snap, keto_profile())
        assert v.variable == "weight"

    def test_weight_rule_skipped_without_reference(self):
        snap = BoundarySnapshot(weight=205.0)
        assert check_boundaries(snap, keto_profile()) == []

    def test_lowfat_carb_calorie_fraction(self):
        # 4 * 300 = 1200 carb kcal; 65% of 1800 = 1170 -> violation
        snap = BoundarySnapshot(net_carb=300.0, intake_calories=1800.0)
        violations = check_boundaries(snap, lowfat_profile())
        assert [v.variable for v in violations] == ["net_carb"]
        # 4 * 290 = 1160 < 1170 -> fine
        snap = BoundarySnapshot(net_carb=290.0, intake_calories=1800.0)
        assert check_boundaries(snap, lowfat_profile()) == []

    def test_activity_margin(self):
        snap = BoundarySnapshot(activity_calories=2200.0, intake_calories=1600.0)
        (v,) = check_boundaries(snap, keto_profile())
        assert v.variable == "activity_calories"
        snap = BoundarySnapshot(activity_calories=2000.0, intake_calories=1600.0)
        assert check_boundaries(snap, keto_profile()) == []

    def test_missing_profile_goal_is_config_error(self):
        snap = BoundarySnapshot(protein=50.0)
        with pytest.raises(ConfigError, match="min_protein"):
            check_boundaries(snap, keto_profile(min_protein=None))

    def test_table_group_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            check_boundaries(
                BoundarySnapshot(), keto_profile(),
                table=default_boundary_table(DietGroup.LOW_FAT),
            )

    def test_snapshot_from_record_derives_ratio(self):
        import datetime as dt
        from onlc.records import DailyRecord

        rec = DailyRecord(
            date=dt.date(2023, 1, 5), net_carb=39.0, fat=45.2, fiber=0.0,
            protein=104.1, intake_calories=1064.0, activity_calories=1009.0,
            steps=5253.0, glucose=134.0, ketone=0.2, weight=199.2,
        )
        snap = snapshot_from_record(rec, prev_weight=199.0)
        assert snap.keto_ratio == pytest.approx(0.3158, abs=5e-4)
        violated = {v.variable for v in check_boundaries(snap, keto_profile())}
        # glucose 134 > 130, ratio < 1.5, fat < 90, ketone < 0.5, steps < 6000
        assert violated == {"glucose", "keto_ratio", "fat", "ketone", "steps"}


class TestPenaltyLookup:
    def test_shipped_glucose_bands(self):
        lookup = default_penalty_lookup()
        assert lookup.penalty("glucose", 60.0) == 1000.0
        assert lookup.penalty("glucose", 70.0) == 1.0
        assert lookup.penalty("glucose", 110.0) == 1.0
        assert lookup.penalty("glucose", 130.0) == 1.0
        assert lookup.penalty("glucose", 135.0) == 10.0
        assert lookup.penalty("glucose", 140.0) == 10.0
        assert lookup.penalty("glucose", 150.0) == 100.0
        assert lookup.penalty("glucose", 180.0) == 500.0
        assert lookup.penalty("glucose", 201.0) == 1000.0

    def test_weight_delta_bands(self):
        lookup = default_penalty_lookup()
        assert lookup.penalty("weight_delta", 0.0) == 1.0
        assert lookup.penalty("weight_delta", 5.0) == 1.0
        assert lookup.penalty("weight_delta", 7.0) == 10.0
        assert lookup.penalty("weight_delta", 14.0) == 100.0
        assert lookup.penalty("weight_delta", 30.0) == 1000.0

    def test_keto_ratio_bands(self):
        lookup = default_penalty_lookup()
        assert lookup.penalty("keto_ratio", 0.3158) == 500.0
        assert lookup.penalty("keto_ratio", 1.2) == 100.0
        assert lookup.penalty("keto_ratio", 1.5) == 1.0

    def test_unknown_variable(self):
        with pytest.raises(CoverageError):
            default_penalty_lookup().penalty("cholesterol", 1.0)

    def test_uncovered_value(self):
        with pytest.raises(CoverageError):
            default_penalty_lookup().penalty("keto_ratio", -0.5)

    def test_overlapping_bands_rejected(self):
        with pytest.raises(ConfigError, match="overlap"):
            PenaltyLookup(bands={"x": (
                PenaltyBand(0.0, 10.0, True, True, 1.0),
                PenaltyBand(10.0, 20.0, True, True, 10.0),
            )})

    def test_gapped_bands_rejected(self):
        with pytest.raises(ConfigError, match="gap"):
            PenaltyLookup(bands={"x": (
                PenaltyBand(0.0, 10.0, True, True, 1.0),
                PenaltyBand(11.0, 20.0, True, True, 10.0),
            )})

    def test_penalty_outside_scale_rejected(self):
        with pytest.raises(ConfigError):
            PenaltyBand(0.0, 1.0, True, True, 1001.0)

    def test_json_roundtrip(self):
        lookup = default_penalty_lookup()
        assert PenaltyLookup.from_json(lookup.to_json()) == lookup

    @given(x=st.floats(0.1, 400))
    def test_glucose_penalty_total_and_monotone_away_from_target(self, x):
        lookup = default_penalty_lookup()
        p = lookup.penalty("glucose", x)
        assert 1.0 <= p <= 1000.0
        if 70.0 <= x <= 130.0:
            assert p == 1.0


class TestAutoPenalties:
    class _Pred:
        def __init__(self, glucose, weight):
            self.glucose = glucose
            self.weight = weight

    def test_review_example(self):
        # predicted glucose 110 in range, weight 197.6 vs 199.2 (delta 1.6),
        # suggested ratio exactly 1.5
        m1, m2, m3 = auto_penalties(
            self._Pred(110.0, 197.6), 1.5, None, keto_profile(),
            default_penalty_lookup(), prev_weight=199.2,
        )
        assert (m1, m2, m3) == (1.0, 1.0, 1.0)

    def test_elevated_glucose(self):
        m1, m2, m3 = auto_penalties(
            self._Pred(135.0, 198.0), 0.3158, None, keto_profile(),
            default_penalty_lookup(), prev_weight=199.2,
        )
        assert m1 == 10.0
        assert m3 == 500.0


class TestLinearFit:
    def test_worked_example_monotone_increasing(self):
        bands = [
            PenaltyBand(131.0, 140.0, True, True, 10.0),
            PenaltyBand(140.0, 160.0, False, True, 100.0),
            PenaltyBand(160.0, 200.0, False, True, 500.0),
            PenaltyBand(200.0, math.inf, False, False, 1000.0),
        ]
        fit = fit_linear_penalty(bands)
        assert fit.below is None
        assert fit.above is not None
        assert fit.above.slope > 0
        # approximation is monotone above the satisfied region
        xs = [135.0, 150.0, 180.0, 210.0, 250.0]
        ys = [fit.evaluate(x) for x in xs]
        assert ys == sorted(ys)
        assert all(1.0 <= y <= 1000.0 for y in ys)
        # inside the uncovered low region the fit scores 1
        assert fit.evaluate(100.0) == 1.0

    def test_shipped_glucose_table_fits_both_sides(self):
        bands = default_penalty_lookup().bands["glucose"]
        fit = fit_linear_penalty(bands)
        assert fit.satisfied_lo == 70.0 and fit.satisfied_hi == 130.0
        # single band below -> zero-slope line at its penalty
        assert fit.below.slope == 0.0
        assert fit.evaluate(40.0) == 1000.0
        assert fit.evaluate(100.0) == 1.0
        assert fit.above.slope > 0
        assert fit.above.max_residual >= 0.0

    def test_equal_penalty_bands_fit_zero_slope(self):
        bands = [
            PenaltyBand(0.0, 10.0, True, True, 1.0),
            PenaltyBand(10.0, 20.0, False, True, 400.0),
            PenaltyBand(20.0, 30.0, False, True, 400.0),
        ]
        fit = fit_linear_penalty(bands)
        assert fit.above.slope == 0.0
        assert fit.above.intercept == 400.0
        assert fit.above.max_residual == 0.0

    def test_single_band_is_degenerate(self):
        with pytest.raises(FitError, match="degenerate"):
            fit_linear_penalty([PenaltyBand(0.0, 10.0, True, True, 1.0)])

    def test_clamped_to_scale(self):
        bands = [
            PenaltyBand(0.0, 1.0, True, True, 1.0),
            PenaltyBand(1.0, 2.0, False, True, 500.0),
            PenaltyBand(2.0, 3.0, False, True, 1000.0),
        ]
        fit = fit_linear_penalty(bands)
        assert fit.evaluate(1000.0) == 1000.0

    def test_unbounded_band_representative_point(self):
        # finite widths 9, 20, 40 -> mean 23 -> reach 11.5 past 200
        bands = [
            PenaltyBand(131.0, 140.0, True, True, 10.0),
            PenaltyBand(140.0, 160.0, False, True, 100.0),
            PenaltyBand(160.0, 200.0, False, True, 500.0),
            PenaltyBand(200.0, math.inf, False, False, 1000.0),
        ]
        from onlc.scoring import _representative_point

        side = list(bands)
        assert _representative_point(bands[-1], side) == pytest.approx(211.5)


@given(
    glucose=st.floats(20, 400),
    rating=st.sampled_from(list(Rating)),
)
def test_manual_rating_always_on_penalty_scale(glucose, rating):
    score = rating_to_score(rating)
    assert 1.0 <= score <= 1000.0
    lookup = default_penalty_lookup()
    assert 1.0 <= lookup.penalty("glucose", glucose) <= 1000.0
