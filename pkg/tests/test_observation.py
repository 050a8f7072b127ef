import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import LineString, box

from gazewalk.observation import (
    GazeClass,
    GazeCode,
    ObservationArea,
    ParseError,
    Posture,
    dumps_csv,
    dumps_jsonl,
    filter_eligible,
    large_steps,
    parse_records,
    path_length,
)

from conftest import make_record, straight


def jsonl_line(rid="p1", n=30, code="C1", step=1.0):
    return json.dumps(
        {
            "id": rid,
            "gender": "male",
            "age_group": "adult",
            "companions": 1,
            "activities": ["typing"],
            "entry_gate": "A",
            "exit_gate": "B",
            "samples": [{"t": t, "x": t * step, "y": 0.0, "code": code} for t in range(n)],
        }
    )


# --------------------------------------------------------------------------- gaze codes


def test_every_code_has_one_class_and_posture():
    assert len(GazeCode) == 24
    for code in GazeCode:
        assert code.gaze_class in GazeClass
        assert code.posture in Posture
        assert code.is_walking == (code.posture is Posture.WALKING)


def test_class_boundaries():
    assert GazeCode.parse("C11").gaze_class is GazeClass.ENV
    assert GazeCode.parse("C12").gaze_class is GazeClass.ENV_THROUGH_SCREEN
    assert GazeCode.parse("C18").gaze_class is GazeClass.ENV_THROUGH_SCREEN
    assert GazeCode.parse("C19").gaze_class is GazeClass.SCREEN


def test_wandering_codes_are_environment_codes():
    for code in GazeCode:
        if code.is_wandering:
            assert code.gaze_class is GazeClass.ENV


def test_parse_is_case_insensitive_and_rejects_unknown():
    assert GazeCode.parse(" c3 ") is GazeCode.parse("C3")
    with pytest.raises(ValueError):
        GazeCode.parse("C25")


# --------------------------------------------------------------------------- parsing


def test_empty_file_gives_empty_list():
    assert parse_records("") == []
    assert parse_records("", format="csv", metadata="") == []


def test_thirty_samples_give_thirty_seconds():
    (rec,) = parse_records(jsonl_line(n=30))
    assert rec.duration == 30
    assert rec.id == "p1"


def test_unknown_code_names_record_and_code():
    line = jsonl_line(rid="bad7", n=5).replace('"code": "C1"}]', '"code": "C25"}]')
    with pytest.raises(ParseError) as err:
        parse_records(jsonl_line(rid="ok", n=3) + "\n" + line)
    msg = str(err.value)
    assert "bad7" in msg and "C25" in msg and "line 2" in msg


def test_non_consecutive_timestamps_rejected():
    obj = json.loads(jsonl_line(n=4))
    obj["samples"][2]["t"] = 5
    with pytest.raises(ParseError, match="non-consecutive"):
        parse_records(json.dumps(obj))


def test_missing_field_rejected():
    obj = json.loads(jsonl_line(n=4))
    del obj["exit_gate"]
    with pytest.raises(ParseError, match="exit_gate"):
        parse_records(json.dumps(obj))


def test_fractional_timestamp_rejected():
    obj = json.loads(jsonl_line(n=3))
    obj["samples"][1]["t"] = 1.5
    with pytest.raises(ParseError, match="integer second"):
        parse_records(json.dumps(obj))


def test_csv_missing_metadata_row_rejected():
    samples, _ = dumps_csv([make_record(straight(3, 1.0), "C1")])
    header = "record_id,gender,age_group,companions,activities,entry_gate,exit_gate\n"
    with pytest.raises(ParseError, match="metadata"):
        parse_records(samples, format="csv", metadata=header)


def test_large_step_flagged_not_rejected(caplog):
    rec = make_record([(0, 0), (1, 0), (6, 0)], "C1")
    assert large_steps(rec) == [1]
    (parsed,) = parse_records(dumps_jsonl([rec]))
    assert parsed == rec
    assert "longer than" in caplog.text


codes_st = st.sampled_from([c.value for c in GazeCode])


@st.composite
def record_st(draw, rid):
    pts = draw(st.lists(st.tuples(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4)), min_size=1, max_size=15))
    codes = draw(st.lists(codes_st, min_size=len(pts), max_size=len(pts)))
    acts = draw(st.sets(st.sampled_from(["typing", "navigating", "holding", "listening"]), min_size=1, max_size=2))
    rec = make_record(pts, codes, rid=rid, activities=acts)
    return replace(rec, gender=draw(st.sampled_from(["female", "male", "unknown"])), companions=draw(st.integers(0, 5)))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(), min_size=1, max_size=3).flatmap(lambda xs: st.tuples(*[record_st(f"h{i}") for i in range(len(xs))])))
def test_round_trip_both_formats(records):
    records = list(records)
    assert parse_records(dumps_jsonl(records)) == records
    samples, meta = dumps_csv(records)
    assert parse_records(samples, format="csv", metadata=meta) == records


# --------------------------------------------------------------------------- path length


def test_path_length_examples():
    assert path_length(make_record([(0, 0), (3, 4)], "C1")) == 5.0
    assert path_length(make_record([(2, 2)] * 6, "C1")) == 0.0
    assert path_length(make_record([(2, 2)], "C1")) == 0.0


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=2, max_size=20),
    st.floats(0, 2 * math.pi),
    st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)),
)
def test_path_length_rigid_invariance(points, theta, shift):
    P = np.array(points)
    R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    Q = P @ R.T + np.array(shift)
    a = path_length(make_record(P.tolist(), "C1"))
    b = path_length(make_record(Q.tolist(), "C1"))
    assert b == pytest.approx(a, rel=1e-9, abs=1e-9)


# --------------------------------------------------------------------------- eligibility


def test_short_path_excluded_just_below_threshold():
    rec = make_record(straight(21, 19.99 / 20), "C1")
    eligible, excluded = filter_eligible([rec])
    assert eligible == []
    assert excluded[0].reason == "short_path"


def test_threshold_path_is_eligible():
    # exactly 20.0 m at 1.0 m/s
    pts = [(float(i), 0.0) for i in range(21)]
    rec = make_record(pts, "C1")
    assert path_length(rec) == 20.0
    eligible, excluded = filter_eligible([rec])
    assert eligible == [rec] and excluded == []


def test_threshold_path_at_walking_pace():
    # 18 walking seconds over 20 m, then a closing stationary second: 1.1 m/s
    pts = [(i * 20.0 / 18, 0.0) for i in range(19)]
    rec = make_record(pts, ["C1"] * 18 + ["C7"])
    assert path_length(rec) == pytest.approx(20.0)
    assert 20.0 / 18 == pytest.approx(1.11, abs=0.01)
    eligible, _ = filter_eligible([rec])
    assert eligible == [rec]


def test_runner_excluded():
    rec = make_record(straight(10, 3.0)[:9] + [(25.0, 0.0)], "C1")
    assert path_length(rec) == pytest.approx(25.0)
    eligible, excluded = filter_eligible([rec])
    assert eligible == [] and excluded[0].reason == "runner"


def test_no_walking_phase_excluded():
    rec = make_record(straight(30, 1.0), "C7")
    assert not GazeCode.C7.is_walking
    _, excluded = filter_eligible([rec])
    assert excluded[0].reason == "no_walking_phase"


def test_filter_partitions_input(corpus):
    extra = [make_record(straight(5, 1.0), "C1", rid="short"), make_record(straight(30, 3.0), "C1", rid="fast")]
    records = list(corpus[:40]) + extra
    eligible, excluded = filter_eligible(records)
    assert len(eligible) + len(excluded) == len(records)
    assert {r.id for r in eligible}.isdisjoint(e.record.id for e in excluded)


# --------------------------------------------------------------------------- area


def test_area_rejects_gate_off_boundary():
    with pytest.raises(ValueError, match="boundary"):
        ObservationArea(box(0, 0, 10, 10), {"A": LineString([(5, 5), (6, 5)])})


def test_area_geojson_round_trip(area):
    again = ObservationArea.from_geojson(area.to_geojson())
    assert again.boundary.equals(area.boundary)
    assert set(again.gates) == set(area.gates)
    assert [c.gates for c in again.corridors] == [c.gates for c in area.corridors]
    assert again.grid_cell == area.grid_cell


def test_check_gates(area):
    rec = make_record(straight(3, 1.0), "C1")
    area.check_gates(rec)
    bad = replace(rec, exit_gate="Z")
    with pytest.raises(ValueError, match="Z"):
        area.check_gates(bad)
