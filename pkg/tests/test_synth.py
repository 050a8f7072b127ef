from dataclasses import replace

import numpy as np
import pytest
from shapely.geometry import LineString, Point, Polygon, box

from gazewalk.features import corpus_gaze_shares, detect_stops, extract_features
from gazewalk.figures import FigureLabel
from gazewalk.observation import ObservationArea, filter_eligible, large_steps, path_length
from gazewalk.synth import (
    Archetype,
    InfeasibleGeometry,
    default_archetypes,
    generate,
    ground_truth,
    load_archetypes,
)


def by_name(archetypes, label):
    return next(a for a in archetypes if a.name is label)


def test_empty_corpus(area, archetypes):
    assert generate(area, [replace(a, count=0) for a in archetypes], 1) == []
    assert generate(area, [], 1) == []


def test_same_seed_same_corpus(area, archetypes):
    assert generate(area, archetypes, 77) == generate(area, archetypes, 77)
    assert generate(area, archetypes, 77) != generate(area, archetypes, 78)


def test_default_counts(corpus, archetypes):
    assert len(corpus) == 350
    walkers = [r for r in corpus if r.walking_mask().all()]
    assert len(walkers) == 257
    assert sum(a.count for a in archetypes if a.stops[1] == 0) == 257


def test_records_are_eligible_and_well_formed(corpus, area):
    eligible, excluded = filter_eligible(corpus)
    assert excluded == []
    for rec in corpus:
        assert large_steps(rec) == []
        assert [s.t for s in rec.samples] == list(range(len(rec.samples)))
        assert rec.samples[0].code.is_walking
        area.check_gates(rec)
        assert all(area.boundary.buffer(1e-6).contains(Point(s.x, s.y)) for s in rec.samples)


def test_ids_recover_ground_truth(corpus, archetypes):
    labels = [ground_truth(r.id, archetypes) for r in corpus]
    for a in archetypes:
        assert labels.count(a.name) == a.count
    with pytest.raises(KeyError):
        ground_truth("nobody-0001", archetypes)


def test_family_means_match_targets(corpus, corpus_features, archetypes):
    truth = {r.id: ground_truth(r.id, archetypes) for r in corpus}
    for a in archetypes:
        fv = [v for v in corpus_features if truth[v.record_id] is a.name]
        se = a.fraction_sd / np.sqrt(a.count)
        assert abs(np.mean([v.pct_screen_walk for v in fv]) - a.screen_walk) <= 4 * se + 0.01
        assert abs(np.mean([v.pct_wander_walk for v in fv]) - a.wander_walk) <= 4 * se + 0.01
        assert abs(np.mean([v.walking_speed for v in fv]) - a.speed) <= 0.06


@pytest.mark.parametrize("label", [FigureLabel.POST_FLANEUR, FigureLabel.SMARTPHONE_ZOMBIE])
def test_means_within_standard_error(area, archetypes, label):
    # the error of the group means shrinks with the square root of the count
    base = by_name(archetypes, label)
    for n in (50, 500, 5000):
        arch = replace(base, count=n)
        fv = [extract_features(r) for r in generate(area, [arch], 11)]
        se = arch.fraction_sd / np.sqrt(n)
        assert abs(np.mean([v.pct_screen_walk for v in fv]) - arch.screen_walk) <= 4 * se
        assert abs(np.mean([v.pct_wander_walk for v in fv]) - arch.wander_walk) <= 4 * se
        speed_se = arch.speed_sd / np.sqrt(n)
        assert abs(np.mean([v.walking_speed for v in fv]) - arch.speed) <= 4 * speed_se


def test_corpus_level_descriptives(corpus, corpus_features):
    lengths = [path_length(r) for r in corpus]
    assert np.mean(lengths) == pytest.approx(26.3, abs=1.0)
    assert np.std(lengths, ddof=1) == pytest.approx(4.1, abs=1.0)
    speeds = [v.walking_speed for v in corpus_features]
    assert np.mean(speeds) == pytest.approx(1.09, abs=0.05)
    assert np.std(speeds, ddof=1) == pytest.approx(0.29, abs=0.05)
    assert corpus_gaze_shares(corpus)["env"] == pytest.approx(0.641, abs=0.02)


def test_stop_durations(corpus):
    eps = [e for r in corpus for e in detect_stops(r)]
    assert eps
    assert max(e.duration for e in eps) <= 114
    assert max(e.wander_seconds for e in eps) <= max(e.screen_seconds for e in eps)


def test_linear_routes_stay_in_their_corridor(corpus, area, archetypes):
    corridors = {g: c.polygon.buffer(0.06) for c in area.corridors for g in c.gates}
    linear = {a.id_prefix for a in archetypes if a.path_style == "linear_flow"}
    checked = 0
    for rec in corpus:
        if rec.id.rsplit("-", 1)[0] not in linear:
            continue
        assert corridors[rec.entry_gate].contains(LineString(rec.positions()))
        checked += 1
    assert checked > 200


def test_organic_routes_visit_the_landmark(corpus, area, archetypes):
    near = area.landmarks[0].buffer(5.0)
    organic = {a.id_prefix for a in archetypes if a.path_style == "organic_wander"}

    def share(recs):
        pts = np.vstack([r.positions() for r in recs])
        return np.mean([near.contains(Point(p)) for p in pts])

    org = [r for r in corpus if r.id.rsplit("-", 1)[0] in organic]
    lin = [r for r in corpus if r.id.rsplit("-", 1)[0] not in organic]
    assert share(org) > 0.3 > share(lin)


def test_gates_too_close(area, archetypes):
    linear = [a for a in archetypes if a.path_style == "linear_flow"]
    with pytest.raises(InfeasibleGeometry, match="at least 50"):
        generate(area, linear, 1, min_path=50.0)
    organic = [a for a in archetypes if a.path_style == "organic_wander"]
    with pytest.raises(InfeasibleGeometry, match="organic"):
        generate(area, organic, 1, min_path=80.0)


def test_needs_two_gates(archetypes):
    square = box(0, 0, 30, 30)
    one_gate = ObservationArea(square, {"A": LineString([(0, 5), (0, 8)])})
    with pytest.raises(InfeasibleGeometry, match="two gates"):
        generate(one_gate, archetypes, 1)


def test_organic_needs_landmark(archetypes):
    square = Polygon([(0, 0), (30, 0), (30, 30), (0, 30)])
    gates = {"A": LineString([(0, 5), (0, 8)]), "B": LineString([(30, 5), (30, 8)])}
    pf = [by_name(archetypes, FigureLabel.POST_FLANEUR)]
    with pytest.raises(InfeasibleGeometry, match="landmark"):
        generate(ObservationArea(square, gates), pf, 1)


def test_seed_range(area, archetypes):
    with pytest.raises(ValueError, match="seed"):
        generate(area, archetypes, -1)
    with pytest.raises(ValueError, match="seed"):
        generate(area, archetypes, 2**64)


@pytest.mark.parametrize(
    "bad",
    [
        {"screen_walk": 1.2},
        {"screen_walk": 0.7, "wander_walk": 0.5},
        {"count": -1},
        {"speed": 0.0},
        {"stops": (1, 2)},
        {"stops": (2, 1)},
        {"path_style": "zigzag"},
        {"age_weights": {"toddler": 1.0}},
        {"stops": (1, 1), "screen_stat": 0.5, "wander_stat": 0.2, "stop_seconds": (10, 200)},
    ],
)
def test_archetype_validation(bad):
    base = {"name": "POST_FLANEUR", "count": 5, "screen_walk": 0.1, "wander_walk": 0.7}
    with pytest.raises(ValueError):
        Archetype(**{**base, **bad})


def test_archetype_loading_round_trip(tmp_path):
    import yaml

    arch = default_archetypes()
    path = tmp_path / "a.yaml"
    path.write_text(yaml.safe_dump({"archetypes": [a.to_dict() for a in arch]}))
    assert load_archetypes(path) == arch
    assert load_archetypes([a.to_dict() for a in arch]) == arch
    with pytest.raises(ValueError, match="unique"):
        load_archetypes([arch[0].to_dict(), arch[0].to_dict()])
