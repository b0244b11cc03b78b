from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parisian_knockin.model import (Degeneracy, DegeneracyThresholds, MarketParams,
                                    ParisianContract, Region, StatePoint, ValidationError,
                                    classify, from_dimensionless, state_to_slide,
                                    to_dimensionless)

rates = st.floats(0.0, 0.2)
vols = st.floats(0.05, 1.0)


def test_dimensionless_examples():
    dp = to_dimensionless(MarketParams(0.04, 0.02, 0.2), ParisianContract(100, 100, 0.1, 1))
    assert (dp.gamma, dp.q, dp.k, dp.x_bar) == pytest.approx((2.0, 1.0, 0.0, 0.0), abs=1e-14)
    dp = to_dimensionless(MarketParams(0.0, 0.0, 0.2), ParisianContract(100, 90, 0.1, 1))
    assert (dp.gamma, dp.q, dp.k) == (0.0, 0.0, -1.0)
    dp = to_dimensionless(MarketParams(0.05, 0.03, 0.3), ParisianContract(100, 90, 0.1, 1))
    assert dp.J_bar_d == pytest.approx(0.0045, rel=1e-14)
    assert dp.T_d == pytest.approx(0.045, rel=1e-14)


@pytest.mark.parametrize("kw", [dict(r=0.05, D=0.0, sigma=0.0), dict(r=-0.01, D=0.0, sigma=0.2),
                                dict(r=0.05, D=-0.1, sigma=0.2)])
def test_market_invariants(kw):
    with pytest.raises(ValidationError):
        MarketParams(**kw)


@pytest.mark.parametrize("kw", [dict(K=0, S_bar=95, J_bar=0.05, T=1),
                                dict(K=100, S_bar=0, J_bar=0.05, T=1),
                                dict(K=100, S_bar=95, J_bar=-0.1, T=1),
                                dict(K=100, S_bar=95, J_bar=0.05, T=0)])
def test_contract_invariants(kw):
    with pytest.raises(ValidationError):
        ParisianContract(**kw)


@given(r=rates, D=rates, sigma=vols, sbar=st.floats(10, 500), jbar=st.floats(0.001, 0.5),
       T=st.floats(0.6, 3.0))
def test_round_trip_and_identity(r, D, sigma, sbar, jbar, T):
    mp, c = MarketParams(r, D, sigma), ParisianContract(100.0, sbar, jbar, T)
    dp = to_dimensionless(mp, c)
    assert dp.k + dp.q + 1 == pytest.approx(dp.gamma, abs=1e-12)
    mp2, c2 = from_dimensionless(dp)
    for a, b in [(mp.r, mp2.r), (mp.D, mp2.D), (mp.sigma, mp2.sigma), (c.S_bar, c2.S_bar),
                 (c.J_bar, c2.J_bar), (c.T, c2.T), (c.K, c2.K)]:
        assert a == pytest.approx(b, rel=1e-13, abs=1e-15)


@given(S=st.floats(1, 200), sigma=vols, r=rates, D=rates)
@settings(max_examples=50)
def test_dimensionless_operator(S, sigma, r, D):
    # apply the dimensional operator to V = K f(x) with f = exp(a x) and compare
    K, a = 100.0, 0.7
    mp = MarketParams(r, D, sigma)
    dp = to_dimensionless(mp, ParisianContract(K, 95, 0.05, 1))
    x = math.log(S / K)
    f = math.exp(a * x)
    V, V_S, V_SS = K * f, K * a * f / S, K * a * (a - 1) * f / S ** 2
    dim = 0.5 * sigma ** 2 * S ** 2 * V_SS + (r - D) * S * V_S - r * V
    dimless = (a * a + dp.k * a - dp.gamma) * f
    assert dim == pytest.approx(0.5 * sigma ** 2 * K * dimless, rel=1e-10, abs=1e-12)


def test_state_to_slide_examples():
    mp, c = MarketParams(0.05, 0.04, 0.2), ParisianContract(100, 95, 0.05, 1)
    dp = to_dimensionless(mp, c)
    s = state_to_slide(StatePoint(90, 0.3, 0.0), c, dp)
    assert s.region is Region.II and s.l == 0.0
    assert s.tau == pytest.approx((1 - 0.05 - 0.3) * 0.02)
    s = state_to_slide(StatePoint(90, 0.3, 0.05), c, dp)
    assert s.l == pytest.approx(dp.J_bar_d)
    assert s.tau == pytest.approx((1 - 0.05 - 0.25) * 0.02)
    s = state_to_slide(StatePoint(120, 0.3, 0.0), c, dp)
    assert s.region is Region.I and s.l is None
    assert s.x == pytest.approx(math.log(1.2))


@given(t=st.floats(0.05, 0.9), J1=st.floats(0, 0.05), J2=st.floats(0, 0.05))
def test_state_to_slide_injective(t, J1, J2):
    mp, c = MarketParams(0.05, 0.04, 0.2), ParisianContract(100, 95, 0.05, 1)
    dp = to_dimensionless(mp, c)
    a = state_to_slide(StatePoint(90, t, J1), c, dp)
    b = state_to_slide(StatePoint(90, t, J2), c, dp)
    if J1 != J2:
        assert (a.tau, a.l) != (b.tau, b.l)


@pytest.mark.parametrize("sp", [StatePoint(-1, 0, 0), StatePoint(100, 2, 0),
                                StatePoint(90, 0, 0.06), StatePoint(100, 0, 0.01)])
def test_state_invariants(sp):
    with pytest.raises(ValidationError):
        sp.validate(ParisianContract(100, 95, 0.05, 1))


def test_classify_examples():
    assert classify(ParisianContract(100, 95, 1.2, 1.0)) is Degeneracy.WORTHLESS
    assert classify(ParisianContract(100, 95, 0.0, 1.0)) is Degeneracy.ONE_TOUCH_LIMIT
    assert classify(ParisianContract(100, 1e4, 0.05, 1.0)) is Degeneracy.VANILLA_AMERICAN_LIMIT
    assert classify(ParisianContract(100, 95, 0.05, 1.0)) is Degeneracy.NON_DEGENERATE
    th = DegeneracyThresholds(s_max_rel=1e6)
    assert classify(ParisianContract(100, 1e4, 0.05, 1.0), th) is Degeneracy.NON_DEGENERATE


@given(lam=st.floats(1e-3, 1e3), sbar=st.sampled_from([1e-9, 95.0, 1e4, 1e9]),
       jbar=st.sampled_from([0.0, 0.05, 2.0]))
def test_classify_scale_invariant(lam, sbar, jbar):
    a = classify(ParisianContract(100.0, sbar, jbar, 1.0))
    b = classify(ParisianContract(100.0 * lam, sbar * lam, jbar, 1.0))
    assert a is b


def test_classify_threshold_edge():
    # S_bar exactly at 100 K stays flagged under any rescaling
    c = ParisianContract(100.0 * 53.11910275821484, 1e4 * 53.11910275821484, 0.05, 1.0)
    assert classify(c) is Degeneracy.VANILLA_AMERICAN_LIMIT
