from __future__ import annotations

import numpy as np
import pytest

from parisian_knockin.model import MarketParams, ParisianContract, StatePoint
from parisian_knockin.montecarlo import (BiasStudy, EmbeddedCall, McConfig, bias_study,
                                         estimate_dict, simulate_price,
                                         simulate_price_extrapolated, write_bias_csv)

from .conftest import DEFAULT_CONTRACT, DEFAULT_MARKET, EUROPEAN_CONTRACT

C = DEFAULT_CONTRACT
SMALL = McConfig(n_paths=4000, n_steps_per_year=2000, seed=7)


@pytest.fixture(scope="module")
def payoff(default_pricer):
    return EmbeddedCall(DEFAULT_MARKET, C, default_pricer.surface)


def test_knocked_in_state_is_deterministic(payoff, default_pricer):
    sp = StatePoint(90.0, 0.3, C.J_bar)
    est = simulate_price(DEFAULT_MARKET, C, sp, SMALL, payoff)
    assert est.std_error == 0.0 and est.knock_in_fraction == 1.0
    assert est.mean == pytest.approx(default_pricer.price(sp).price, rel=1e-9)


def test_far_above_barrier_short_maturity():
    c = ParisianContract(100.0, 95.0, 0.04, 0.05)
    est = simulate_price(DEFAULT_MARKET, c, StatePoint(3 * 95.0, 0.0, 0.0), SMALL)
    assert est.mean < 1e-3 * c.K


def test_reproducible(payoff):
    sp = StatePoint(100.0, 0.0, 0.0)
    a = simulate_price(DEFAULT_MARKET, C, sp, SMALL, payoff)
    b = simulate_price(DEFAULT_MARKET, C, sp, SMALL, payoff)
    assert a == b
    other = simulate_price(DEFAULT_MARKET, C, sp,
                           McConfig(SMALL.n_paths, SMALL.n_steps_per_year, 8), payoff)
    assert other.mean != a.mean


def test_antithetic_does_not_hurt(payoff):
    sp = StatePoint(100.0, 0.0, 0.0)
    anti = simulate_price(DEFAULT_MARKET, C, sp, SMALL, payoff)
    plain = simulate_price(DEFAULT_MARKET, C, sp,
                           McConfig(SMALL.n_paths, SMALL.n_steps_per_year, 7, False), payoff)
    assert anti.std_error <= 1.1 * plain.std_error


def test_bounds_and_fields(payoff, default_pricer):
    sp = StatePoint(100.0, 0.0, 0.0)
    est = simulate_price(DEFAULT_MARKET, C, sp, SMALL, payoff)
    cap = default_pricer.surface.value_at(0.0, 0.02) * C.K
    assert 0.0 <= est.mean <= cap
    assert 0.0 < est.knock_in_fraction < 1.0
    d = estimate_dict(est)
    assert d["seed"] == 7 and d["n_paths"] == 4000


def test_european_estimate_near_pricer(european_pricer):
    sp = StatePoint(100.0, 0.0, 0.0)
    cfg = McConfig(n_paths=20_000, n_steps_per_year=8000, seed=11)
    ex = simulate_price_extrapolated(DEFAULT_MARKET, EUROPEAN_CONTRACT, sp, cfg)
    ref = european_pricer.price(sp).price
    assert abs(ex.extrapolated.mean - ref) <= 4 * ex.extrapolated.std_error
    # discrete monitoring overprices: the coarse level sits above the fine one
    assert ex.coarse.mean > ex.fine.mean


def test_extrapolated_identity(payoff):
    ex = simulate_price_extrapolated(DEFAULT_MARKET, C, StatePoint(100.0, 0.0, 0.0), SMALL,
                                     payoff=payoff)
    r = ex.ratio ** ex.rate
    assert ex.extrapolated.mean == pytest.approx((r * ex.fine.mean - ex.coarse.mean) / (r - 1))
    with pytest.raises(ValueError):
        simulate_price_extrapolated(DEFAULT_MARKET, C, StatePoint(100.0, 0.0, 0.0), SMALL,
                                    ratio=1, payoff=payoff)


def test_bias_study(tmp_path, payoff):
    sp = StatePoint(100.0, 0.0, 0.0)
    base = McConfig(n_paths=2000, seed=3)
    study = bias_study(DEFAULT_MARKET, C, sp, (2000, 500, 1000), base)
    assert [r.n_steps_per_year for r in study.rows] == [500, 1000, 2000]
    r = 2 ** 0.5
    assert study.extrapolated == pytest.approx((r * study.rows[-1].mean - study.rows[-2].mean)
                                               / (r - 1))
    path = tmp_path / "bias.csv"
    write_bias_csv(path, study, base)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("n_steps_per_year,mean") and len(lines) == 5
    with pytest.raises(ValueError):
        bias_study(DEFAULT_MARKET, C, sp, (500, 1000), base)


@pytest.mark.parametrize("kw", [dict(n_paths=1), dict(n_steps_per_year=10),
                                dict(n_paths=3, antithetic=True), dict(seed=-1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        McConfig(**kw)
