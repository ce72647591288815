"""Time-of-week keys, sample validation and site metadata."""

from datetime import datetime, timedelta

import pytest
from hypothesis import given, strategies as st

from ramp_transfer.core import (
    Period,
    SegmentPosition,
    SiteMap,
    SiteMapError,
    TimeKey,
    TrafficSample,
    encode_time_key,
    validate_sample,
)


class TestEncodeTimeKey:
    def test_tuesday_morning(self):
        assert encode_time_key(datetime(2019, 6, 11, 6, 0)) == TimeKey(3, 6, 1)

    def test_sunday_last_slot(self):
        assert encode_time_key(datetime(2019, 4, 14, 23, 59)) == TimeKey(1, 23, 4)

    def test_thursday_afternoon(self):
        assert encode_time_key(datetime(2019, 4, 18, 15, 30)) == TimeKey(5, 15, 3)

    @given(st.integers(min_value=0, max_value=10 * 365 * 24 * 60))
    def test_always_in_range(self, minutes):
        stamp = datetime(2015, 1, 1) + timedelta(minutes=minutes)
        key = encode_time_key(stamp)
        assert 1 <= key.dow <= 7
        assert 0 <= key.hod <= 23
        assert 1 <= key.moh <= 4

    def test_consecutive_slots_are_ordered_within_a_week(self):
        start = datetime(2019, 4, 14)  # Sunday midnight
        keys = [encode_time_key(start + timedelta(minutes=15 * i))
                for i in range(7 * 24 * 4)]
        assert keys == sorted(keys)
        assert len(set(keys)) == 672


class TestTimeKeyValidation:
    @pytest.mark.parametrize("dow,hod,moh", [
        (0, 0, 1), (8, 0, 1), (1, -1, 1), (1, 24, 1), (1, 0, 0), (1, 0, 5)])
    def test_out_of_range_rejected(self, dow, hod, moh):
        with pytest.raises(ValueError):
            TimeKey(dow=dow, hod=hod, moh=moh)


def _sample(**overrides):
    base = dict(section="S01", position=SegmentPosition.UPSTREAM,
                period=Period.BEFORE, week_index=1, key=TimeKey(3, 6, 1),
                mean_speed=60.0, occupancy=10.0, flow_rate=1200.0,
                density=20.0, coverage=1.0)
    base.update(overrides)
    return TrafficSample(**base)


class TestValidateSample:
    def test_valid_sample_has_no_violations(self):
        assert validate_sample(_sample()) == []

    def test_occupancy_above_100_flagged(self):
        violations = validate_sample(_sample(occupancy=101.0))
        assert violations == ["occupancy range"]

    def test_after_sample_without_density_ok(self):
        ok = _sample(period=Period.AFTER, density=None)
        assert validate_sample(ok) == []

    def test_density_in_after_period_flagged(self):
        bad = _sample(period=Period.AFTER, density=20.0)
        assert "density only in Before" in validate_sample(bad)

    def test_multiple_violations_all_reported(self):
        bad = _sample(mean_speed=-1.0, flow_rate=-5.0, coverage=2.0)
        violations = validate_sample(bad)
        assert set(violations) == {"mean_speed negative",
                                   "flow_rate negative", "coverage range"}


SITE_DOC = {
    "sections": [{
        "section_id": "SEC1",
        "station_id": "312",
        "positions": {
            "upstream": {"lanes": 3, "length_miles": 0.6,
                         "slots": [33, 34, 35],
                         "probe_segment_ids": ["P-up"]},
            "downstream": {"lanes": 4, "length_miles": 0.4,
                           "slots": [11, 12, 13, 14],
                           "probe_segment_ids": ["1226240265"]},
            "onramp": {"lanes": 1, "length_miles": 0.3, "slots": [21],
                       "probe_segment_ids": ["P-ramp"]},
        },
    }],
    "excluded_slots": [9],
}


class TestSiteMap:
    def test_slot_lookup(self):
        sm = SiteMap.from_dict(SITE_DOC)
        assert sm.lookup_slot("312", 33) == ("SEC1", SegmentPosition.UPSTREAM)
        assert sm.lookup_slot("312", 12) == ("SEC1", SegmentPosition.DOWNSTREAM)
        assert sm.lookup_slot("312", 9) == "excluded"
        assert sm.lookup_slot("312", 99) is None
        assert sm.lookup_slot("999", 33) is None

    def test_probe_lookup(self):
        sm = SiteMap.from_dict(SITE_DOC)
        assert sm.lookup_probe_segment("1226240265") == (
            "SEC1", SegmentPosition.DOWNSTREAM)
        assert sm.lookup_probe_segment("nope") is None

    def test_round_trip(self):
        sm = SiteMap.from_dict(SITE_DOC)
        again = SiteMap.from_dict(sm.to_dict())
        assert again == sm

    def test_invalid_lanes_rejected(self):
        doc = {"sections": [{"section_id": "A", "station_id": "1",
                             "positions": {"upstream": {
                                 "lanes": 0, "length_miles": 0.5,
                                 "slots": [1], "probe_segment_ids": []}}}]}
        with pytest.raises(SiteMapError):
            SiteMap.from_dict(doc)

    def test_duplicate_section_rejected(self):
        doc = {"sections": [SITE_DOC["sections"][0],
                            SITE_DOC["sections"][0]]}
        with pytest.raises(SiteMapError):
            SiteMap.from_dict(doc)

    def test_invalid_json_rejected(self):
        with pytest.raises(SiteMapError):
            SiteMap.from_json("{not json")
