import math

import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_relative, log_geomean

from inferbench.analytics import (BaselinePolicy, DeviceRecord, bundled_table, ingest_table, load_table,
                                  published_deviation, rank, relative_performance, round_half_away)
from inferbench.errors import IngestError

TOP, BEST = BaselinePolicy.TOP_RECORD, BaselinePolicy.PER_TEST_BEST

KIRIN_990 = [6, 18, 37, 36, 42, 19]
KIRIN_810 = [10, 34, 82, 72, 122, 42]
TIGER_T710 = [13, 35, 80, 76, 135, 43]


def _rec(name, lats, soc=None):
    return DeviceRecord(name, soc or name, "", {f"t{i}": float(v) for i, v in enumerate(lats) if v is not None})


class TestIngest:
    def test_float_fixture(self):
        recs = bundled_table("float")
        assert len(recs) == 24
        assert all(len(r.per_test_latency_ms) == 6 for r in recs)
        assert recs[0].soc_name == "HiSilicon Kirin 990"
        assert recs[0].metadata["published_relative_perf"] == "100"

    def test_quant_fixture(self):
        recs = bundled_table("quant")
        assert len(recs) == 25
        assert all(len(r.per_test_latency_ms) == 5 for r in recs)

    def test_duplicate_soc_distinguished_by_accelerator(self):
        socs = [r.soc_name for r in bundled_table("float")]
        assert socs.count("Exynos 9820 Octa") == 2

    def test_blank_cells_absent(self):
        recs = ingest_table("device_name,soc_name,a,b\nd1,s1,1.5,\nd2,s2,,2\n")
        assert recs[0].per_test_latency_ms == {"a": 1.5}
        assert recs[1].per_test_latency_ms == {"b": 2.0}

    def test_tab_delimited(self):
        recs = ingest_table("device_name\tsoc_name\taccelerator\tx\nd\ts\tNPU\t3\n")
        assert recs[0].accelerator == "NPU" and recs[0].per_test_latency_ms == {"x": 3.0}

    def test_non_numeric_cell_reports_row(self):
        with pytest.raises(IngestError, match="row 3: .*'fast'"):
            ingest_table("device_name,soc_name,a\nd1,s1,1\nd2,s2,fast\n")

    def test_non_positive(self):
        with pytest.raises(IngestError, match="row 2"):
            ingest_table("device_name,soc_name,a\nd1,s1,0\n")

    def test_ragged_row(self):
        with pytest.raises(IngestError, match="row 2"):
            ingest_table("device_name,soc_name,a\nd1,s1,1,2\n")

    def test_duplicate_key(self):
        with pytest.raises(IngestError, match="row 3: duplicate"):
            ingest_table("device_name,soc_name,a\nd,s,1\nd,s,2\n")

    @pytest.mark.parametrize("doc", ["", "   \n", "device_name,a\nd,1\n", "device_name,soc_name,a\n",
                                     "device_name,soc_name,a,a\nd,s,1,2\n"])
    def test_bad_documents(self, doc):
        with pytest.raises(IngestError):
            ingest_table(doc)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestError):
            load_table(tmp_path / "nope.csv")


class TestRelativePerformance:
    def test_kirin_810_vs_990(self):
        recs = [_rec("990", KIRIN_990), _rec("810", KIRIN_810), _rec("t710", TIGER_T710)]
        for policy in BaselinePolicy:
            p = relative_performance(recs, policy)
            assert p[("990", "990")] == 100.0
            assert round_half_away(p[("810", "810")]) == 47
            assert abs(p[("t710", "t710")] - 43) <= 2

    def test_matches_oracle_on_fixture(self):
        recs = bundled_table("float")
        base = recs[0].per_test_latency_ms
        expect = brute_relative({r.key: r.per_test_latency_ms for r in recs}, base)
        got = relative_performance(recs, TOP)
        for k in expect:
            assert got[k] == pytest.approx(expect[k], rel=1e-12)

    def test_identity(self):
        p = relative_performance([_rec("a", [1, 2, 3, 4])], TOP)
        assert p == {("a", "a"): 100.0}

    def test_missing_cells_use_intersection(self):
        recs = [_rec("a", [1, 1, 1, 1, 1]), _rec("b", [2, 2, 2, 2, None])]
        assert relative_performance(recs, TOP)[("b", "b")] == pytest.approx(50.0)

    def test_min_overlap(self):
        recs = [_rec("a", [1, 1, 1, 1, 1]), _rec("b", [2, 2, None, None, None])]
        with pytest.raises(IngestError, match="b"):
            relative_performance(recs, TOP)
        assert relative_performance(recs, TOP, min_overlap=2)[("b", "b")] == pytest.approx(50.0)

    def test_empty_overlap(self):
        # every baseline covers all tests, so only a record without data has no overlap
        recs = [DeviceRecord("a", "a", "", {"x": 1.0, "y": 1.0}), DeviceRecord("b", "b", "", {})]
        for policy in BaselinePolicy:
            with pytest.raises(IngestError, match="b .*shares no test"):
                relative_performance(recs, policy, min_overlap=1)

    def test_top_record_needs_full_coverage(self):
        recs = [_rec("a", [1, None, 1, 1, 1]), _rec("b", [None, 2, 2, 2, 2])]
        with pytest.raises(IngestError, match="covers every test"):
            relative_performance(recs, TOP)
        assert max(relative_performance(recs, BEST).values()) == 100.0

    def test_policy_parse(self):
        assert BaselinePolicy.parse("per_test_best") is BEST
        with pytest.raises(ValueError):
            BaselinePolicy.parse("median")


_lat = st.floats(0.5, 5000)


@st.composite
def tables(draw):
    n_tests = draw(st.integers(1, 6))
    n = draw(st.integers(1, 8))
    return [_rec(f"d{i}", draw(st.lists(_lat, min_size=n_tests, max_size=n_tests))) for i in range(n)]


@settings(max_examples=100)
@given(tables(), st.floats(0.01, 100), st.sampled_from(list(BaselinePolicy)))
def test_scale_invariance(recs, lam, policy):
    scaled = [DeviceRecord(r.device_name, r.soc_name, "", {k: v * lam for k, v in r.per_test_latency_ms.items()})
              for r in recs]
    a, b = relative_performance(recs, policy), relative_performance(scaled, policy)
    for k in a:
        assert b[k] == pytest.approx(a[k], rel=1e-9)


@settings(max_examples=100)
@given(tables())
def test_top_record_fixed_point(recs):
    p = relative_performance(recs, TOP)
    assert sum(1 for v in p.values() if v == 100.0) >= 1
    assert max(p.values()) <= 100.0 * (1 + 1e-12)


@settings(max_examples=100)
@given(tables())
def test_policies_agree_under_full_coverage(recs):
    a, b = relative_performance(recs, TOP), relative_performance(recs, BEST)
    for k in a:
        assert b[k] == pytest.approx(a[k], rel=1e-9)


@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=20))
def test_geomean_vs_log_oracle(ratios):
    base = {f"t{i}": 1.0 for i in range(len(ratios))}
    rec = DeviceRecord("x", "x", "", {f"t{i}": 1 / r for i, r in enumerate(ratios)})
    p = relative_performance([DeviceRecord("b", "b", "", base), rec], BEST, min_overlap=1)
    top = max(1.0, log_geomean(ratios))
    assert p[("x", "x")] == pytest.approx(100 * log_geomean(ratios) / top, rel=1e-12)


class TestRank:
    def test_float_table(self):
        recs = bundled_table("float")
        ranking = rank(recs, relative_performance(recs, TOP))
        assert [e.rank for e in ranking] == list(range(1, 25))
        assert ranking[0].record.soc_name == "HiSilicon Kirin 990" and ranking[0].display_percent == 100

    def test_quant_table(self):
        recs = bundled_table("quant")
        ranking = rank(recs, relative_performance(recs, TOP))
        assert ranking[0].record.soc_name == "Snapdragon 855 Plus"

    def test_ties(self):
        recs = [_rec("z", [1], soc="B"), _rec("y", [1], soc="A"), _rec("x", [1], soc="A")]
        ranking = rank(recs, relative_performance(recs, TOP))
        assert [(e.record.soc_name, e.record.device_name) for e in ranking] == [("A", "x"), ("A", "y"), ("B", "z")]

    def test_singleton(self):
        recs = [_rec("a", [3.0])]
        [entry] = rank(recs, relative_performance(recs, TOP))
        assert entry.rank == 1 and entry.relative_perf_percent == 100.0

    @given(tables())
    def test_deterministic(self, recs):
        p = relative_performance(recs, BEST)
        assert rank(recs, p) == rank(list(reversed(recs)), p)


def test_round_half_away():
    assert [round_half_away(x) for x in (0.5, 1.5, 2.5, -0.5, -2.5, 47.49)] == [1, 2, 3, -1, -3, 47]


def test_published_deviation():
    recs = bundled_table("float")
    dev = published_deviation(recs, relative_performance(recs, TOP))
    assert all(abs(d) < 2 for d in dev.values())


@pytest.mark.parametrize("table", ["float", "quant"])
def test_truncated_percent_matches_published_column(table):
    # the published column behaves like floor(); display rounding is half-away by design
    records = bundled_table(table)
    for policy in BaselinePolicy:
        pct = relative_performance(records, policy)
        for r in records:
            assert math.floor(pct[r.key] + 1e-9) == int(r.metadata["published_relative_perf"]), r.key
