from fractions import Fraction
from itertools import product

import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps
from scipy.special import ndtri

from iscap import stats


@pytest.mark.parametrize("q", [50, 80, 90, 95, 97.5, 99, 99.9, 99.999])
def test_z_quantile_matches_ndtri(q):
    # two-sided critical value
    assert stats.z_quantile(q) == pytest.approx(ndtri((100 + q) / 200), abs=2e-8)


def test_z_quantile_domain():
    assert stats.z_quantile(0) == 0.0
    with pytest.raises(ValueError):
        stats.z_quantile(100)
    with pytest.raises(ValueError):
        stats.z_quantile(-1)


def test_normal_ppf_tails():
    for p in (1e-10, 1e-4, 0.02, 0.5, 0.98, 1 - 1e-6):
        assert stats.normal_ppf(p) == pytest.approx(ndtri(p), rel=1e-8, abs=1e-8)


def test_proportion_bound_nominal_row():
    b = stats.proportion_bound(0.052, 1479, 99)
    assert b.sigma_q == pytest.approx(0.01487, abs=5e-5)
    assert b.gamma == pytest.approx(0.06687, abs=5e-5)


def test_proportion_bound_lower_direction():
    b = stats.proportion_bound(0.035, 3769, 99, direction="lower")
    assert b.gamma == pytest.approx(0.035 - 0.00771, abs=5e-5)
    assert b.direction == "lower"


def test_proportion_bound_rejects_small_n():
    with pytest.raises(ValueError):
        stats.proportion_bound(0.1, 30, 99)
    b = stats.proportion_bound(0.1, 30, 99, method="exact")
    assert b.method == "exact"


def test_proportion_bound_clipped():
    assert stats.proportion_bound(0.99, 40, 99.99).gamma == 1.0
    assert stats.proportion_bound(0.01, 40, 99.99, direction="lower").gamma == 0.0


@pytest.mark.parametrize("k,n", [(0, 10), (3, 10), (10, 10), (5, 67), (77, 1479)])
def test_clopper_pearson_defining_equation(k, n):
    q = 99.0
    alpha = 1 - q / 100
    up = stats.clopper_pearson(k / n, n, q, "upper")
    lo = stats.clopper_pearson(k / n, n, q, "lower")
    if k < n:
        # P(X <= k | up) = alpha / 2
        assert 1 - stats.binomial_tail(n, k + 1, up) == pytest.approx(alpha / 2, rel=1e-6)
    else:
        assert up == 1.0
    if k > 0:
        assert stats.binomial_tail(n, k, lo) == pytest.approx(alpha / 2, rel=1e-6)
    else:
        assert lo == 0.0


def _brute_tail(n, k, p):
    # sum over all 2^n outcome strings
    p = Fraction(p)
    tot = Fraction(0)
    for bits in product((0, 1), repeat=n):
        s = sum(bits)
        if s >= k:
            tot += p ** s * (1 - p) ** (n - s)
    return float(tot)


@pytest.mark.parametrize("n", range(0, 13))
def test_binomial_tail_brute_force(n):
    for k in range(0, n + 2):
        for p in (0.0, 0.013, 0.2, 0.5, 0.77, 1.0):
            assert abs(stats.binomial_tail(n, k, p) - _brute_tail(n, k, p)) <= 1e-12


@pytest.mark.parametrize("n,k,p", [(55, 14, 0.067), (55, 14, 0.110), (55, 14, 0.5),
                                   (1000, 10, 1e-4), (5000, 2500, 0.5), (200, 1, 1e-9)])
def test_binomial_tail_matches_scipy(n, k, p):
    assert stats.binomial_tail(n, k, p) == pytest.approx(sps.binom.sf(k - 1, n, p), rel=1e-9)


def test_binomial_tail_frozen_values():
    # scipy binom.sf(13, 55, p)
    assert stats.binomial_tail(55, 14, 0.067) == pytest.approx(1.153138e-5, rel=1e-6)
    assert stats.binomial_tail(55, 14, 0.110) == pytest.approx(2.061357e-3, rel=1e-6)


def test_binomial_tail_edges():
    assert stats.binomial_tail(10, 0, 0.3) == 1.0
    assert stats.binomial_tail(10, 11, 0.3) == 0.0
    assert stats.binomial_tail(10, 3, 0.0) == 0.0
    assert stats.binomial_tail(10, 3, 1.0) == 1.0
    with pytest.raises(ValueError):
        stats.binomial_tail(10, 3, 1.5)


@given(st.integers(1, 300), st.floats(0, 1), st.floats(0, 1), st.data())
def test_binomial_tail_monotone_in_p(n, p1, p2, data):
    k = data.draw(st.integers(0, n + 1))
    lo, hi = sorted((p1, p2))
    a, b = stats.binomial_tail(n, k, lo), stats.binomial_tail(n, k, hi)
    assert 0.0 <= a <= 1.0 and 0.0 <= b <= 1.0
    assert a <= b + 1e-12


@given(st.integers(1, 200), st.floats(0, 1))
def test_binomial_tail_decreasing_in_k(n, p):
    vals = [stats.binomial_tail(n, k, p) for k in range(n + 2)]
    assert all(x >= y - 1e-12 for x, y in zip(vals, vals[1:]))
