import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairgate import wald
from fairgate.data import INTERCEPT_COLUMN, Column
from fairgate.regress import LINEAR, ModelFit

from oracles import chi2_sf_quad, general_wald_mp

finite = st.floats(-10, 10, allow_nan=False)
positive = st.floats(1e-3, 5)


def fit(cols, coef, se, converged=True):
    return ModelFit(LINEAR, tuple(cols), np.asarray(coef, float), np.asarray(se, float), 1.0, 100, len(cols),
                    converged, 1)


def test_wald_statistic_by_hand():
    assert wald.wald_statistic(1.0, 0.5, 0.0, 0.5) == pytest.approx(2.0)
    assert wald.wald_statistic(0.3, 0.0, 0.3, 0.1) == 0.0
    assert wald.wald_statistic(1.0, 0.0, 0.0, 0.0) is None
    assert wald.wald_statistic(1.0, 1e-7, 0.0, 1e-7) is None
    with pytest.raises(wald.WaldError):
        wald.wald_statistic(1.0, -0.1, 0.0, 0.1)


@pytest.mark.parametrize("w", [0.01, 0.1, 1, 3.841, 10, 30])
def test_chi2_sf_matches_quadrature(w):
    assert wald.chi2_sf(w) == pytest.approx(chi2_sf_quad(w), abs=1e-6)


@pytest.mark.parametrize("df", [2, 3, 5])
@pytest.mark.parametrize("w", [0.5, 4.0, 12.0])
def test_chi2_sf_higher_df_matches_quadrature(w, df):
    assert wald.chi2_sf(w, df) == pytest.approx(chi2_sf_quad(w, df), abs=1e-8)


def test_chi2_critical_value():
    assert wald.chi2_sf(wald.CHI2_1_CRIT_05) == pytest.approx(0.05, abs=1e-12)
    assert wald.chi2_sf(0.0) == 1.0
    with pytest.raises(wald.WaldError):
        wald.chi2_sf(-1.0)
    with pytest.raises(wald.WaldError):
        wald.chi2_sf(1.0, 0)


@settings(max_examples=200)
@given(finite, positive, finite, positive)
def test_wald_statistic_properties(b, sb, z, sz):
    w = wald.wald_statistic(b, sb, z, sz)
    assert w >= 0
    assert w == pytest.approx(wald.wald_statistic(z, sz, b, sb))
    assert w == pytest.approx(wald.wald_statistic(b + 3.0, sb, z + 3.0, sz), rel=1e-9, abs=1e-9)
    assert 0.0 <= wald.chi2_sf(w) <= 1.0


@settings(max_examples=100)
@given(st.floats(0, 50), st.floats(0, 50))
def test_chi2_sf_is_decreasing(a, b):
    lo, hi = sorted((a, b))
    assert wald.chi2_sf(lo) >= wald.chi2_sf(hi)


# --- wald_test --------------------------------------------------------------

A, B, C = Column("f", "a"), Column("f", "b"), Column("g")
S = Column("s")


def test_wald_test_rows_and_flags():
    m = fit([INTERCEPT_COLUMN, A, B, C], [0.1, 1.0, 0.2, 0.0], [0.1, 0.1, 0.1, 0.0])
    mp = fit([INTERCEPT_COLUMN, A, B, S, C], [0.5, 0.5, 0.21, 0.3, 0.0], [0.1, 0.1, 0.1, 0.1, 0.0])
    rep = wald.wald_test(m, mp, alpha=0.05)
    assert [r.column for r in rep.rows] == [A, B, C]
    assert rep.sensitive == "s"
    ra = rep.row("a")
    assert ra.W == pytest.approx(0.25 / 0.02)
    assert ra.p == pytest.approx(math.erfc(math.sqrt(ra.W / 2)))
    assert rep.row("g").W is None and rep.row("g").p is None
    assert rep.flagged == {A}
    assert rep.flagged_labels == ["a"]
    assert "N/A" in rep.to_csv().splitlines()[3]
    text = rep.to_text()
    assert "a " in text and "*" in text and "flagged: a" in text


def test_bonferroni_divides_by_tested_rows():
    m = fit([A, B], [1.0, 0.0], [0.1, 0.1])
    mp = fit([A, B, S], [0.7, 0.0, 1.0], [0.1, 0.1, 0.1])
    plain = wald.wald_test(m, mp, alpha=0.05)
    strict = wald.wald_test(m, mp, alpha=0.05, bonferroni=True)
    assert strict.effective_alpha == pytest.approx(0.025)
    p = plain.row("a").p
    assert 0.025 < p < 0.05
    assert plain.flagged == {A} and strict.flagged == frozenset()


def test_se_rounding():
    m = fit([A], [1.0], [0.01449])
    mp = fit([A, S], [0.9, 1.0], [0.01451, 0.1])
    r = wald.wald_test(m, mp, se_decimals=3).rows[0]
    assert (r.se_beta, r.se_zeta) == (0.014, 0.015)
    assert r.W == pytest.approx(0.01 / (0.014**2 + 0.015**2))


def test_pair_validation():
    m = fit([A, B], [1, 1], [1, 1])
    with pytest.raises(wald.WaldError):
        wald.wald_test(m, fit([A, S], [1, 1], [1, 1]))
    with pytest.raises(wald.WaldError):
        wald.wald_test(m, fit([A, B, S, C], [1] * 4, [1] * 4))
    with pytest.raises(wald.WaldError):
        wald.wald_test(m, fit([A, B, S], [1] * 3, [1] * 3, converged=False))
    with pytest.raises(wald.WaldError):
        wald.wald_test(m, fit([A, B, S], [1] * 3, [1] * 3), alpha=1.5)
    assert wald.check_pair(m, fit([B, A], [1, 1], [1, 1])) is None


# --- general form -------------------------------------------------------------

def random_spd(rng, m):
    a = rng.normal(size=(m, m))
    return a @ a.T + m * np.eye(m)


@pytest.mark.parametrize("seed", range(5))
def test_general_wald_matches_extended_precision(seed):
    rng = np.random.default_rng(seed)
    m, k = 6, 3
    H = rng.normal(size=(k, m))
    c = rng.normal(size=k)
    theta = rng.normal(size=m)
    sigma = random_spd(rng, m)
    d = rng.uniform(0.5, 2, m)
    res = wald.general_wald(H, c, theta, sigma, d)
    ref = general_wald_mp(H, c, theta, sigma, d)
    assert res.W == pytest.approx(ref, rel=1e-8)
    assert res.df == k
    assert res.p == pytest.approx(chi2_sf_quad(ref, k), abs=1e-8)
    assert wald.general_wald(H, c, theta, sigma, np.diag(d)).W == pytest.approx(res.W, rel=1e-12)


def test_general_wald_reduces_to_pairwise_form():
    n_x, n_s = 3, 1
    beta, gamma, zeta = np.array([0.4, -0.2, 0.1]), np.array([0.7]), np.array([0.1, -0.25, 0.1])
    se_b, se_z = np.array([0.1, 0.05, 0.2]), np.array([0.12, 0.06, 0.2])
    theta = np.concatenate([beta, gamma, zeta])
    sigma = np.diag(np.concatenate([se_b**2, [0.3], se_z**2]))
    for i in range(n_x):
        res = wald.general_wald(wald.pair_selector(n_x, n_s, i), [0.0], theta, sigma)
        assert res.W == pytest.approx(wald.wald_statistic(beta[i], se_b[i], zeta[i], se_z[i]))


def test_general_wald_errors(rng):
    sigma = random_spd(rng, 3)
    with pytest.raises(wald.SingularMatrix):
        wald.general_wald(np.array([[1, 0, 0], [2, 0, 0]]), [0, 0], np.ones(3), sigma)
    asym = sigma.copy()
    asym[0, 1] += 1
    with pytest.raises(wald.WaldError):
        wald.general_wald(np.eye(3), np.zeros(3), np.ones(3), asym)
    with pytest.raises(wald.WaldError):
        wald.general_wald(np.eye(3), np.zeros(2), np.ones(3), sigma)
    with pytest.raises(wald.WaldError):
        wald.general_wald(np.eye(3), np.zeros(3), np.ones(3), sigma, D=np.array([1.0, -1.0, 1.0]))
