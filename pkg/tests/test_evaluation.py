import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from blecollab import DegenerateInputError
from blecollab.evaluation import (
    MetricsReport,
    comparison_table,
    compute_metrics,
    ecdf,
    metrics_csv,
    read_metrics_csv,
    relative_difference,
)

errs = st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=200)


def _report(mean, **kw):
    base = dict(rmse=mean, mean=mean, median=mean, p75=mean, p90=mean, count=10)
    base.update(kw)
    return MetricsReport(**base)


def test_metrics_examples():
    m = compute_metrics([3, 4])
    assert m.mean == 3.5 and m.median == 3.5
    assert m.rmse == pytest.approx(3.53553, abs=1e-5)
    z = compute_metrics([0.0] * 7)
    assert (z.rmse, z.mean, z.median, z.p75, z.p90) == (0, 0, 0, 0, 0)
    c = compute_metrics([2.5] * 9)
    assert all(v == pytest.approx(2.5, abs=1e-12) for v in c.values().values())
    with pytest.raises(DegenerateInputError):
        compute_metrics([])


@given(errs)
def test_metrics_match_oracle(values):
    m = compute_metrics(values, include_p70=True)
    o = oracles.metrics(values)
    for k, v in o.items():
        assert getattr(m, k) == pytest.approx(v, abs=1e-9)
    assert m.p70 == pytest.approx(oracles.percentile(values, 70), abs=1e-9)
    assert m.median <= m.p75 <= m.p90


def test_relative_difference_table_values():
    d = relative_difference(_report(5.36), _report(4.55))
    assert d["mean"] == pytest.approx(15.11, abs=0.01)
    d = relative_difference(_report(5.0, median=5.54), _report(5.0, median=4.84))
    assert d["median"] == pytest.approx(12.63, abs=0.01)
    same = _report(3.0, p90=7.0)
    assert all(v == 0 for v in relative_difference(same, same).values())


def test_relative_difference_zero_baseline():
    d = relative_difference(_report(0.0, rmse=1.0), _report(1.0))
    assert d["mean"] is None and d["rmse"] == 0.0


def test_ecdf_examples():
    assert ecdf([1, 2, 2, 4]) == [(1, 0.25), (2, 0.75), (4, 1.0)]
    assert ecdf([3.3]) == [(3.3, 1.0)]
    with pytest.raises(DegenerateInputError):
        ecdf([])


@given(errs)
def test_ecdf_properties(values):
    pts = ecdf(values)
    xs = [p[0] for p in pts]
    ps = [p[1] for p in pts]
    assert xs == sorted(set(values))
    assert all(a <= b for a, b in zip(ps, ps[1:]))
    assert ps[-1] == 1.0
    for x, p in pts:
        assert p == pytest.approx(sum(v <= x for v in values) / len(values), abs=1e-12)


def test_metrics_csv_round_trip(tmp_path):
    reports = {"Lat1": compute_metrics([1.0, 2.0, 3.5]), "Fused": compute_metrics([0.5, 1.5])}
    path = tmp_path / "m.csv"
    path.write_text(metrics_csv(reports))
    assert path.read_text().splitlines()[0] == "phase,count,rmse,mean,median,p75,p90"
    assert read_metrics_csv(path) == reports


def test_metrics_csv_missing_column(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("phase,count,rmse,mean,median,p75\nLat1,3,1,1,1,1\n")
    with pytest.raises(ValueError, match="p90"):
        read_metrics_csv(path)


def test_comparison_table_format():
    text = comparison_table(_report(5.36), _report(4.55), "Lateration", "Collaborative")
    assert "down 15.11%" in text
    assert "Mean" in text and "90th percentile" in text
    assert "0.00%" in comparison_table(_report(2.0), _report(2.0))
    assert "up " in comparison_table(_report(2.0), _report(3.0))
