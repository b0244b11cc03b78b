from __future__ import annotations

import math

import numpy as np
import pytest

from parisian_knockin.model import EmbeddedStyle, to_dimensionless
from parisian_knockin.vanilla import VanillaSurface, build_surface, payoff
from parisian_knockin.window_solver import (DUMP_TERM_COLUMNS, WindowFunction, WindowSolver,
                                            WindowSolverConfig, WindowSolverError, solve_U,
                                            solve_W0, solve_W1, solve_Wnext)

from .conftest import DEFAULT_CONTRACT, DEFAULT_MARKET

DP = to_dimensionless(DEFAULT_MARKET, DEFAULT_CONTRACT)
J = DP.J_bar_d


def residual_probes(n_windows: int = 3, per_window: int = 20) -> np.ndarray:
    return np.concatenate([J * (i + (np.arange(per_window) + 0.5) / per_window)
                           for i in range(n_windows)])


def continuity_gaps(solver: WindowSolver, n_max: int = 2) -> list[tuple[float, float]]:
    """``(|W_{n+1}(nJ) - W_n(nJ)|, max(1, W_n(nJ)))`` for ``n = 0..n_max``."""
    solver.ensure((n_max + 1) * J)
    out = []
    wins = solver.set.all_windows()
    for n in range(n_max + 1):
        left = float(wins[n].value_v(wins[n].v_max))
        right = float(wins[n + 1].value_v(0.0))
        out.append((abs(right - left), max(1.0, left)))
    return out


@pytest.fixture(scope="module")
def european_surface():
    return build_surface(DP, EmbeddedStyle.EUROPEAN)


@pytest.fixture(scope="module")
def european_solver(european_surface):
    s = WindowSolver(DP, european_surface)
    s.ensure(3 * J)
    return s


@pytest.fixture(scope="module")
def zero_surface(european_surface):
    s = european_surface
    return VanillaSurface(EmbeddedStyle.AMERICAN, s.x, s.theta, np.zeros_like(s.values), DP)


def test_w0_default_is_zero(european_surface):
    w0 = solve_W0(european_surface)
    assert w0.is_zero and w0.start == -J and w0.end == 0.0
    assert float(w0.value_global(-0.5 * J)) == 0.0


def test_w0_vanilla_mode(european_surface):
    w0 = solve_W0(european_surface, WindowSolverConfig(initial_window="vanilla"))
    assert float(w0.value_v(w0.v_max)) == pytest.approx(
        european_surface.value_at(DP.x_bar, J), rel=1e-12)
    assert float(w0.value_v(0.0)) == pytest.approx(payoff(DP.x_bar), abs=1e-12)
    assert abs(float(w0.value_v(0.0))) <= 1e-15     # S_bar <= K


def test_zero_embedded_gives_zero_windows(zero_surface):
    w1 = solve_W1(zero_surface)
    assert np.all(w1.values == 0.0)
    solver = WindowSolver(DP, zero_surface)
    solver.ensure(2 * J)
    w3 = solve_Wnext(2, solver.set, zero_surface)
    assert np.all(w3.values == 0.0)


def test_continuity_european(european_solver):
    for gap, scale in continuity_gaps(european_solver):
        assert gap <= 1e-3 * scale


def test_continuity_american(default_pricer):
    for gap, scale in continuity_gaps(default_pricer.solver):
        assert gap <= 1e-3 * scale


def test_residual_european(european_solver):
    ratio = european_solver.residual_ratio(residual_probes())
    assert ratio.max() <= 10.0


@pytest.mark.slow
def test_residual_american(default_pricer):
    ratio = default_pricer.solver.residual_ratio(residual_probes())
    assert ratio.max() <= 10.0


def test_bounded_by_knocked_in_value(default_pricer):
    ws = default_pricer.solver.ensure(3 * J)
    _, tau, w = ws.nodes()
    cap = default_pricer.surface.value_at(np.full(tau.size, DP.x_bar), tau + J)
    assert np.all(w >= -1e-10)
    assert np.all(w <= cap + 1e-10)


def test_node_refinement(european_surface, european_solver):
    fine = WindowSolver(DP, european_surface, WindowSolverConfig(nodes=128))
    fine.ensure(3 * J)
    _, tau, w = european_solver.set.nodes()
    ref = fine.set.value(tau)
    assert np.max(np.abs(w - ref) / np.maximum(np.abs(ref), 1e-3)) <= 1e-4


def test_U_matches_window_and_small_time_limit(european_surface, european_solver):
    ws = european_solver.set
    w2 = ws.windows[1]
    t = w2.v[[5, 20, 40]] ** 2
    np.testing.assert_allclose(solve_U(t, 1, ws, european_surface), w2.values[[5, 20, 40]],
                               rtol=1e-10, atol=1e-13)
    u0_end = float(ws.windows[0].value_v(ws.windows[0].v_max))
    assert solve_U(1e-6, 1, ws, european_surface)[0] == pytest.approx(u0_end, abs=1e-3)
    w1 = ws.windows[0]
    np.testing.assert_allclose(solve_U(w1.v[7:9] ** 2, 0, ws, european_surface),
                               w1.values[7:9], rtol=1e-10, atol=1e-13)


def test_solve_wnext_matches_cached(european_surface, european_solver):
    ws = european_solver.set
    sub = type(ws)(ws.kp, ws.w0, ws.windows[:2])
    w3 = solve_Wnext(2, sub, european_surface)
    np.testing.assert_allclose(w3.values, ws.windows[2].values, rtol=1e-12, atol=1e-14)
    with pytest.raises(WindowSolverError):
        solve_Wnext(3, sub, european_surface)


def test_dump_csv(tmp_path, european_solver):
    path = tmp_path / "w.csv"
    european_solver.set.dump_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == ["window", "tau", "W", *DUMP_TERM_COLUMNS]
    row = lines[10].split(",")
    assert float(row[2]) == pytest.approx(sum(float(x) for x in row[3:]), rel=1e-9, abs=1e-15)


def test_trace_beyond_solved_end(european_solver):
    with pytest.raises(WindowSolverError):
        european_solver.set.value(european_solver.set.end + J)


def test_config_and_window_invariants():
    with pytest.raises(ValueError):
        WindowSolverConfig(nodes=2)
    with pytest.raises(ValueError):
        WindowSolverConfig(initial_window="bogus")
    with pytest.raises(ValueError):
        WindowFunction(1, 0.0, J, np.array([0.0, 0.1]), np.zeros(2))


def test_spline_representation_close(european_surface, european_solver):
    sp = WindowSolver(DP, european_surface, WindowSolverConfig(representation="spline"))
    sp.ensure(J)
    tau = J * np.linspace(0.05, 0.95, 7)
    np.testing.assert_allclose(sp.set.value(tau), european_solver.set.value(tau), rtol=1e-3,
                               atol=1e-12)
