import datetime as dt
import math

import pytest
from hypothesis import given, strategies as st

from onlc.errors import DomainError, ImputeError, IngestError
from onlc.records import (
    FIELD_NAMES,
    Arm,
    ConditionGroup,
    DailyRecord,
    DietGroup,
    ImputePolicy,
    PatientProfile,
    impute,
    keto_ratio,
    parse_records,
    serialize_records,
    weight_goal,
)

D = dt.date


def make_record(date=D(2023, 1, 5), **overrides):
    base = dict(
        net_carb=39.0,
        fat=45.2,
        fiber=0.0,
        protein=104.1,
        intake_calories=1064.0,
        activity_calories=1009.0,
        steps=5253.0,
        glucose=134.0,
        ketone=0.2,
        weight=199.2,
    )
    base.update(overrides)
    return DailyRecord(date=date, **base)


CANONICAL_HEADER = "date,net_carb,fat,fiber,protein,intake_calories,activity_calories,steps,glucose,ketone,weight"


class TestKetoRatio:
    def test_observed_day_example(self):
        # 45.2 / (39 + 104.1) = 45.2 / 143.1, about 0.31586
        assert keto_ratio(39, 45.2, 104.1) == pytest.approx(0.3158, abs=5e-4)

    def test_suggestion_example_hits_threshold(self):
        assert keto_ratio(30, 135, 60) == 1.5

    def test_zero_fat(self):
        assert keto_ratio(50, 0, 50) == 0.0

    def test_zero_denominator_rejected(self):
        with pytest.raises(DomainError):
            keto_ratio(0, 100, 0)

    @given(
        c=st.floats(1, 300),
        f=st.floats(0, 250),
        p=st.floats(1, 200),
        scale=st.floats(0.1, 10),
    )
    def test_scale_invariance(self, c, f, p, scale):
        # ratio of grams is dimensionless in the portion size
        assert keto_ratio(c * scale, f * scale, p * scale) == pytest.approx(
            keto_ratio(c, f, p), rel=1e-9
        )

    @given(c=st.floats(1, 300), f=st.floats(0, 250), p=st.floats(1, 200))
    def test_monotone_in_fat_antitone_in_carb(self, c, f, p):
        base = keto_ratio(c, f, p)
        assert keto_ratio(c, f + 1, p) > base
        assert keto_ratio(c + 1, f, p) <= base


class TestWeightGoal:
    def test_exact_examples(self):
        assert weight_goal(199.2) == 159.36
        assert weight_goal(100.0) == 80.0
        assert weight_goal(97.35) == 77.88

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            weight_goal(0.0)

    def test_profile_defaults_to_it(self):
        p = PatientProfile(
            id="p1",
            diet_group=DietGroup.KETO,
            condition_group=ConditionGroup.OBESE_T2D,
            arm=Arm.AI,
            baseline_weight=199.2,
        )
        assert p.weight_goal == 159.36
        assert p.group_key == "keto/obese_t2d"


class TestRecordValidation:
    def test_negative_nutrient_rejected(self):
        with pytest.raises(DomainError):
            make_record(net_carb=-1.0)

    def test_zero_glucose_rejected(self):
        with pytest.raises(DomainError):
            make_record(glucose=0.0)

    def test_zero_steps_fine(self):
        rec = make_record(steps=0.0)
        assert rec.steps == 0.0

    def test_nan_rejected(self):
        with pytest.raises(DomainError):
            make_record(fat=math.nan)

    def test_missing_fields_allowed(self):
        rec = make_record(ketone=None, glucose=None)
        assert rec.is_missing("ketone")
        assert not rec.is_complete()

    def test_unknown_imputed_flag_rejected(self):
        with pytest.raises(DomainError):
            DailyRecord(date=D(2023, 1, 1), imputed=frozenset({"bogus"}))


class TestParse:
    def test_example_row(self):
        text = CANONICAL_HEADER + "\n2023-01-05,39,45.2,0,104.1,1064,1009,5253,134,0.2,199.2\n"
        (rec,) = parse_records(text)
        assert rec.date == D(2023, 1, 5)
        assert rec.net_carb == 39.0
        assert rec.fat == 45.2
        assert rec.weight == 199.2
        assert rec.imputed == frozenset()

    def test_blank_cells_become_missing(self):
        text = CANONICAL_HEADER + "\n2023-01-05,39,45.2,0,104.1,1064,1009,5253,,,199.2\n"
        (rec,) = parse_records(text)
        assert rec.glucose is None
        assert rec.ketone is None

    def test_rows_sorted_by_date(self):
        text = (
            CANONICAL_HEADER
            + "\n2023-01-06,40,50,5,100,1100,900,6000,120,0.3,198"
            + "\n2023-01-05,39,45.2,0,104.1,1064,1009,5253,134,0.2,199.2\n"
        )
        recs = parse_records(text)
        assert [r.date for r in recs] == [D(2023, 1, 5), D(2023, 1, 6)]

    def test_duplicate_date_rejected_with_line(self):
        text = (
            CANONICAL_HEADER
            + "\n2023-01-05,39,45.2,0,104.1,1064,1009,5253,134,0.2,199.2"
            + "\n2023-01-05,40,50,5,100,1100,900,6000,120,0.3,198\n"
        )
        with pytest.raises(IngestError, match="line 3"):
            parse_records(text)

    def test_malformed_number_names_line_and_column(self):
        text = CANONICAL_HEADER + "\n2023-01-05,39,45.2,0,104.1,1064,1009,5253,abc,0.2,199.2\n"
        with pytest.raises(IngestError, match="line 2.*glucose"):
            parse_records(text)

    def test_malformed_date(self):
        text = CANONICAL_HEADER + "\n01/05/2023,39,45.2,0,104.1,1064,1009,5253,134,0.2,199.2\n"
        with pytest.raises(IngestError, match="line 2"):
            parse_records(text)

    def test_wrong_header_rejected(self):
        with pytest.raises(IngestError, match="header"):
            parse_records("date,carbs\n")

    def test_empty_stream_rejected(self):
        with pytest.raises(IngestError):
            parse_records("")

    def test_wrong_cell_count(self):
        text = CANONICAL_HEADER + "\n2023-01-05,39,45.2\n"
        with pytest.raises(IngestError, match="line 2"):
            parse_records(text)

    def test_domain_violation_reported_as_ingest_error(self):
        text = CANONICAL_HEADER + "\n2023-01-05,-3,45.2,0,104.1,1064,1009,5253,134,0.2,199.2\n"
        with pytest.raises(IngestError, match="line 2"):
            parse_records(text)


class TestSerializeRoundtrip:
    def test_example_row_roundtrips_to_same_bytes(self):
        text = CANONICAL_HEADER + "\n2023-01-05,39,45.2,0,104.1,1064,1009,5253,134,0.2,199.2\n"
        assert serialize_records(parse_records(text)) == text

    @given(
        st.lists(
            st.tuples(
                st.integers(0, 400),
                st.lists(
                    st.one_of(st.none(), st.floats(0.1, 5000, allow_nan=False)),
                    min_size=10,
                    max_size=10,
                ),
            ),
            min_size=0,
            max_size=6,
            unique_by=lambda t: t[0],
        )
    )
    def test_parse_serialize_parse_is_identity(self, rows):
        records = []
        for day_offset, values in sorted(rows):
            fields = dict(zip(FIELD_NAMES, values))
            records.append(DailyRecord(date=D(2023, 1, 1) + dt.timedelta(days=day_offset), **fields))
        text = serialize_records(records)
        reparsed = parse_records(text)
        assert reparsed == records
        assert serialize_records(reparsed) == text


class TestImpute:
    def test_linear_midpoint(self):
        recs = [
            make_record(D(2023, 1, 1), glucose=100.0),
            make_record(D(2023, 1, 2), glucose=None),
            make_record(D(2023, 1, 3), glucose=110.0),
        ]
        out = impute(recs)
        # halfway between 100 and 110 on consecutive days
        assert out[1].glucose == 105.0
        assert out[1].imputed == frozenset({"glucose"})

    def test_linear_weights_by_day_gap(self):
        recs = [
            make_record(D(2023, 1, 1), glucose=100.0),
            make_record(D(2023, 1, 2), glucose=None),
            make_record(D(2023, 1, 4), glucose=130.0),
        ]
        out = impute(recs)
        # one day of a three-day gap: 100 + 30 * (1/3) = 110
        assert out[1].glucose == pytest.approx(110.0)

    def test_boundary_fills_from_nearest(self):
        recs = [
            make_record(D(2023, 1, 1), weight=None),
            make_record(D(2023, 1, 2), weight=200.0),
            make_record(D(2023, 1, 3), weight=None),
        ]
        out = impute(recs)
        assert out[0].weight == 200.0
        assert out[2].weight == 200.0

    def test_nearest_policy(self):
        recs = [
            make_record(D(2023, 1, 1), glucose=100.0),
            make_record(D(2023, 1, 2), glucose=None),
            make_record(D(2023, 1, 4), glucose=130.0),
        ]
        out = impute(recs, ImputePolicy(method="nearest"))
        # day 2 is one day from the left neighbour, two from the right
        assert out[1].glucose == 100.0

    def test_observed_values_untouched(self):
        recs = [
            make_record(D(2023, 1, 1)),
            make_record(D(2023, 1, 2), glucose=None),
            make_record(D(2023, 1, 3)),
        ]
        out = impute(recs)
        assert out[0] == recs[0]
        assert out[2] == recs[2]

    def test_idempotent(self):
        recs = [
            make_record(D(2023, 1, 1), glucose=None, ketone=None),
            make_record(D(2023, 1, 2)),
            make_record(D(2023, 1, 5), weight=None),
        ]
        once = impute(recs)
        assert impute(once) == once
        assert all(r.is_complete() for r in once)

    def test_field_never_observed_is_an_error(self):
        recs = [
            make_record(D(2023, 1, 1), ketone=None),
            make_record(D(2023, 1, 2), ketone=None),
        ]
        with pytest.raises(ImputeError, match="ketone"):
            impute(recs)

    def test_unsorted_input_rejected(self):
        recs = [make_record(D(2023, 1, 2)), make_record(D(2023, 1, 1))]
        with pytest.raises(DomainError):
            impute(recs)

    def test_empty_series(self):
        assert impute([]) == []

    @given(
        gaps=st.lists(st.booleans(), min_size=3, max_size=12),
        lo=st.floats(80, 120),
        hi=st.floats(121, 200),
    )
    def test_linear_fill_stays_within_neighbour_envelope(self, gaps, lo, hi):
        # interpolation can never leave the [min, max] hull of observations
        if not any(not g for g in gaps):
            gaps[0] = False
        records = []
        values = []
        for i, missing in enumerate(gaps):
            v = None if missing else (lo if i % 2 == 0 else hi)
            if v is not None:
                values.append(v)
            records.append(make_record(D(2023, 1, 1) + dt.timedelta(days=i), glucose=v))
        out = impute(records)
        for rec in out:
            assert min(values) - 1e-9 <= rec.glucose <= max(values) + 1e-9
