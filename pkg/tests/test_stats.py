import math
from importlib import resources

import numpy as np
import pytest

from gazewalk.stats import (
    CodingMismatch,
    CountRow,
    SampleSizeParams,
    cochran_n,
    cochran_n0,
    descriptive_report,
    disagreement_rates,
    read_counts,
    smartphone_share_table,
    t_test,
    table_to_csv,
)

from conftest import make_record, straight
from oracles import permutation_p


def bundled_counts():
    return read_counts(resources.files("gazewalk").joinpath("data/passersby_counts.csv").read_text())


# --------------------------------------------------------------------------- t-test


def test_identical_groups():
    res = t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert res.t == 0.0 and res.p == 1.0


def test_swap_negates_t():
    a, b = [0.9, 1.0, 0.8, 1.1], [1.2, 1.3, 1.1, 1.25, 1.15]
    ab, ba = t_test(a, b), t_test(b, a)
    assert ab.t == -ba.t and ab.p == ba.p and ab.df == ba.df


def test_scale_and_shift_invariance(rng):
    a, b = rng.normal(0.93, 0.28, 30), rng.normal(1.13, 0.26, 30)
    base = t_test(a, b)
    for scale, shift in ((2.0, 0.0), (1.0, 5.0), (0.25, -3.0)):
        res = t_test(a * scale + shift, b * scale + shift)
        assert res.t == pytest.approx(base.t, rel=1e-12)
        assert res.p == pytest.approx(base.p, rel=1e-10)


def test_pooled_df():
    # 67 records split into two groups of 30 and 37
    res = t_test(np.linspace(0, 1, 30), np.linspace(0.2, 1.5, 37))
    assert res.df == 65


def test_welch_variant():
    from scipy import stats as sps

    a, b = [1.0, 1.2, 0.9, 1.4, 1.1], [2.0, 2.9, 1.5, 3.8]
    res = t_test(a, b, "welch")
    ref = sps.ttest_ind(a, b, equal_var=False)
    assert res.t == pytest.approx(ref.statistic, rel=1e-12)
    assert res.p == pytest.approx(ref.pvalue, rel=1e-10)
    assert res.df < 7


def test_t_test_errors():
    with pytest.raises(ValueError, match="degenerate"):
        t_test([1.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError, match="at least two"):
        t_test([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        t_test([1.0, 2.0], [1.0, 2.0], "paired")


def test_report_format():
    res = t_test([0.9, 1.0, 0.8], [1.2, 1.3, 1.1])
    assert res.report().startswith("t(4) = -")


def test_p_matches_permutation_oracle():
    r = np.random.default_rng(7)
    a, b = r.normal(0.0, 1.0, 30), r.normal(0.5, 1.0, 30)
    assert abs(t_test(a, b).p - permutation_p(a, b, draws=1_000_000, seed=1)) <= 0.01


# --------------------------------------------------------------------------- sample size


def test_cochran_reference_value():
    assert cochran_n(SampleSizeParams(350)) == 153


def test_cochran_limits():
    n0 = cochran_n0(0.90, 0.05)
    assert n0 == pytest.approx(270.55, abs=0.01)
    assert cochran_n(SampleSizeParams(10**9)) == 271
    assert cochran_n(SampleSizeParams(350, precision=0.5)) == 3
    assert cochran_n(SampleSizeParams(1)) == 1


def test_cochran_monotone_and_bounded():
    prev = 0
    for N in range(1, 3000, 7):
        n = cochran_n(SampleSizeParams(N))
        assert prev <= n <= min(N, math.ceil(cochran_n0(0.90, 0.05)))
        prev = n
    tight = [cochran_n(SampleSizeParams(350, precision=e)) for e in (0.10, 0.05, 0.03, 0.01)]
    assert tight == sorted(tight)


@pytest.mark.parametrize("bad", [{"N": 0}, {"N": 5, "confidence": 1.0}, {"N": 5, "precision": 0.0}, {"N": 5, "proportion": 1.5}])
def test_sample_size_validation(bad):
    with pytest.raises(ValueError):
        SampleSizeParams(**bad)


# --------------------------------------------------------------------------- coder disagreement


def coding(n, flips=0, attr="gaze"):
    return {f"r{i}": {attr: "A" if i >= flips else "B"} for i in range(n)}


def test_identical_codings_zero():
    c = coding(20)
    assert disagreement_rates(c, dict(c), ["gaze"]) == {"gaze": 0.0}


@pytest.mark.parametrize("flips,expected", [(6, 3.92), (3, 1.96), (2, 1.31), (1, 0.65)])
def test_reported_rates(flips, expected):
    rate = disagreement_rates(coding(153), coding(153, flips), ["gaze"])["gaze"]
    assert round(rate, 2) == expected


def test_mismatched_ids():
    with pytest.raises(CodingMismatch) as info:
        disagreement_rates(coding(3), {"r0": {}, "r9": {}}, ["gaze"])
    assert info.value.only_a == {"r1", "r2"} and info.value.only_b == {"r9"}


def test_rates_in_range(rng):
    for _ in range(20):
        n = int(rng.integers(1, 50))
        a = {str(i): {"x": int(rng.integers(3)), "y": int(rng.integers(2))} for i in range(n)}
        b = {str(i): {"x": int(rng.integers(3)), "y": int(rng.integers(2))} for i in range(n)}
        for v in disagreement_rates(a, b, ["x", "y"]).values():
            assert 0.0 <= v <= 100.0


# --------------------------------------------------------------------------- descriptive tables


def test_bundled_share_table():
    rows = {r["age_group"]: r for r in smartphone_share_table(bundled_counts())}
    overall = rows["overall"]
    assert (overall["users_total"], overall["passersby_total"]) == (455, 5809)
    expected = {"overall": 7.83, "teenager": 22.53, "young_adult": 24.62, "adult": 4.79, "elderly": 2.69}
    for age, pct in expected.items():
        assert rows[age]["pct_total"] == pytest.approx(pct, abs=0.01)
    assert (rows["teenager"]["users_total"], rows["teenager"]["passersby_total"]) == (73, 324)


def test_empty_counts_give_zero_table():
    (row,) = smartphone_share_table([])
    assert row["age_group"] == "overall" and row["pct_total"] == 0.0
    rows = smartphone_share_table([CountRow("adult", "female", 0, 0)])
    assert all(r["pct_total"] == 0.0 for r in rows)


def test_descriptive_report():
    recs = [
        make_record(straight(10, 1.0), "C19", rid="a", activities=("typing", "photo_taking")),
        make_record(straight(10, 1.0), ["C1"] * 5 + ["C22"] * 3 + ["C1"] * 2, rid="b", activities=("navigating",)),
    ]
    rep = descriptive_report(bundled_counts(), recs)
    acts = {r["activity"]: r for r in rep["activities"]}
    assert acts["typing"]["count"] == 1 and acts["typing"]["pct_of_users"] == 50.0
    assert sum(r["count"] for r in rep["activities"]) == 3
    stops = {r["category"]: r for r in rep["stop_behaviour"]}
    assert stops["paused"]["count"] == 1
    assert stops["used_phone_only_when_stationary"]["count"] == 1
    empty = descriptive_report([], [])
    assert all(r["pct"] == 0.0 for r in empty["companions"])


def test_table_to_csv():
    assert table_to_csv([]) == ""
    text = table_to_csv([{"a": 1, "b": 2.0 / 3}, {"a": 2, "b": None, "c": "x"}])
    assert text.splitlines() == ["a,b,c", "1,0.67,", "2,,x"]
    assert "0.6666666666666666" in table_to_csv([{"b": 2.0 / 3}], decimals=None)
