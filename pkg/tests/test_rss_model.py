import numpy as np
import pytest
from hypothesis import given, strategies as st

from blecollab import LdplParams, ldpl_distance, ldpl_rss

S8 = LdplParams(rss_at_d0=-68.88)  # Galaxy S8 registration value
A7 = LdplParams(rss_at_d0=-62.39)  # Galaxy A7 Duos


def test_forward_examples():
    assert ldpl_rss(S8, 1.0) == pytest.approx(-68.88, abs=1e-12)
    assert ldpl_rss(S8, 10.0) == pytest.approx(-89.88, abs=1e-12)
    assert ldpl_rss(S8, 5.0) == pytest.approx(-83.56, abs=0.01)


def test_inverse_examples():
    assert ldpl_distance(S8, -68.88) == pytest.approx(1.0, abs=1e-12)
    assert ldpl_distance(A7, -83.0) == pytest.approx(9.58, abs=0.01)
    assert ldpl_distance(S8, -89.88) == pytest.approx(10.0, abs=1e-9)


def test_defaults():
    assert S8.eta == 2.1 and S8.d0 == 1.0


@pytest.mark.parametrize("d", [0.0, -1.0])
def test_nonpositive_distance(d):
    with pytest.raises(ValueError):
        ldpl_rss(S8, d)


def test_invalid_params():
    with pytest.raises(ValueError):
        LdplParams(-60, eta=0)
    with pytest.raises(ValueError):
        LdplParams(-60, d0=0)


@given(st.floats(0.1, 50), st.floats(-100, -30), st.floats(1.0, 5.0))
def test_round_trip(d, rss0, eta):
    p = LdplParams(rss0, eta)
    assert abs(ldpl_distance(p, ldpl_rss(p, d)) - d) < 1e-9 * d


def test_monotone():
    d = np.linspace(0.1, 50, 500)
    assert np.all(np.diff(ldpl_rss(S8, d)) < 0)
    rss = np.linspace(-110, -40, 500)
    assert np.all(np.diff(ldpl_distance(S8, rss)) < 0)
