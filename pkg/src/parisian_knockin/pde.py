"""Finite-difference oracle for the coupled two-region problem.

Backward time is the embedded option's ``theta = sigma^2 (T - t) / 2``.
Region I holds ``V1(x, theta)`` on ``x >= x_bar``; region II holds
``V2(x, theta, l)`` on ``x <= x_bar`` with ``l`` the elapsed clock:

    V1_theta = L V1                      (V1 = 0 for theta <= J_bar_d)
    V2_theta - V2_l = L V2               (V2(., ., J_bar_d) = C_A)
    V2(x_bar, ., l) = V1(x_bar, .)       (the clock resets at the barrier)

The clock advances one node per time step, so the ``l`` advection is exact
and only diffusion is discretized (implicit in ``x``).  Every step first
solves the zero-clock line jointly with region I as a single line through
``x_bar``; the smooth-pasting (connectivity) condition therefore emerges
from the scheme instead of being imposed, and the shared barrier value is
obtained without iteration.  The clock lines ``l > 0`` follow with the new
barrier value as Dirichlet data.  Implicit Euler on two grids (``N`` and
``2N`` clock steps) is Richardson-combined for second order in time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .model import (Degeneracy, DimlessParams, MarketParams, ParisianContract, StatePoint,
                    ValidationError, classify, to_dimensionless)
from .vanilla import (SURFACE_FORMAT, SURFACE_FORMAT_VERSION, VanillaSurface, build_surface,
                      load_grid, save_grid)


class PdeError(RuntimeError):
    pass


@dataclass(frozen=True)
class PdeResolution:
    n_x: int = 801               # nodes across both regions
    n_J: int = 80                # clock steps per J_bar (also sets the time step)
    half_width: float = 8.0      # x half-range in units of sqrt(T_d), around the barrier
    richardson: bool = True

    def __post_init__(self):
        if self.n_x < 11:
            raise ValueError("n_x must be at least 11")
        if self.n_J < 2:
            raise ValueError("n_J must be at least 2")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")


@dataclass
class PdeSolution:
    """Fields on the grid; all values dimensionless (multiply by K)."""

    params: DimlessParams
    x: np.ndarray                # full grid, x[i_bar] == x_bar
    i_bar: int
    theta: np.ndarray            # backward times
    trace: np.ndarray            # W at each theta
    V1: np.ndarray               # (n_theta, n_x - i_bar) region-I values
    l: np.ndarray                # clock nodes
    V2_final: np.ndarray         # (n_l, i_bar + 1) region-II values at theta[-1]
    connectivity: np.ndarray     # dV1/dx - dV2/dx at the barrier, per theta
    sweeps: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def x1(self) -> np.ndarray:
        return self.x[self.i_bar:]

    @property
    def x2(self) -> np.ndarray:
        return self.x[:self.i_bar + 1]

    def save(self, path) -> None:
        header = {"format": SURFACE_FORMAT, "version": SURFACE_FORMAT_VERSION,
                  "kind": "pde_solution", "i_bar": self.i_bar, "sweeps": self.sweeps,
                  "params": {f: getattr(self.params, f) for f in
                             ("gamma", "q", "k", "x_bar", "J_bar_d", "T_d", "sigma", "K")}}
        save_grid(path, header, {"x": self.x, "theta": self.theta, "trace": self.trace,
                                 "V1": self.V1, "l": self.l, "V2_final": self.V2_final,
                                 "connectivity": self.connectivity})

    @classmethod
    def load(cls, path) -> "PdeSolution":
        header, a = load_grid(path, kind="pde_solution")
        return cls(DimlessParams(**header["params"]), a["x"], int(header["i_bar"]), a["theta"],
                   a["trace"], a["V1"], a["l"], a["V2_final"], a["connectivity"],
                   int(header["sweeps"]))


def _operator_bands(n: int, h: float, dp: DimlessParams, dt: float) -> np.ndarray:
    """Banded ``I - dt L`` for ``L = d_xx + k d_x - gamma`` with Dirichlet ends."""
    a = dt * (1.0 / h ** 2 - 0.5 * dp.k / h)      # coefficient of u_{i-1}
    b = 1.0 + dt * (2.0 / h ** 2 + dp.gamma)
    c = dt * (1.0 / h ** 2 + 0.5 * dp.k / h)      # coefficient of u_{i+1}
    ab = np.zeros((3, n))
    ab[0, 1:] = -c
    ab[1, :] = b
    ab[2, :-1] = -a
    ab[1, 0] = ab[1, -1] = 1.0
    ab[0, 1] = 0.0
    ab[2, -2] = 0.0
    return ab


def _march(dp: DimlessParams, surface: VanillaSurface, x: np.ndarray, i_bar: int,
           n_J: int):
    J = dp.J_bar_d
    dt = J / n_J
    n_steps = int(round(dp.T_d / dt))
    if abs(n_steps * dt - dp.T_d) > 1e-9 * dp.T_d:
        # final partial step is avoided by shrinking dt so both grids align
        n_steps = int(math.ceil(dp.T_d / dt))
    dt_eff = dp.T_d / n_steps
    h = x[1] - x[0]
    theta = dt_eff * np.arange(n_steps + 1)
    x2 = x[:i_bar + 1]
    n_l = n_J + 1
    # V2[j] at clock l_j = j * dt; row n_J is the knock-in row
    V2 = np.zeros((n_l, x2.size))
    V1 = np.zeros((n_steps + 1, x.size - i_bar))
    trace = np.zeros(n_steps + 1)
    conn = np.zeros(n_steps + 1)
    full_ab = _operator_bands(x.size, h, dp, dt_eff)
    half_ab = _operator_bands(x2.size, h, dp, dt_eff)
    V2[n_J] = surface.value_at(x2, np.zeros(x2.size))
    for n in range(1, n_steps + 1):
        th = theta[n]
        # zero-clock line jointly with region I
        rhs = np.empty(x.size)
        rhs[:i_bar] = V2[1, :i_bar]
        rhs[i_bar:] = V1[n - 1]
        rhs[0] = 0.0
        rhs[-1] = 0.0
        line = solve_banded((1, 1), full_ab, rhs)
        if th <= J * (1 + 1e-12):
            # no time left to knock in from a fresh excursion
            line[:] = 0.0
        # clock lines 1..n_J-1 shift along the characteristic
        prev = V2[2:n_J + 1].copy()
        rhs2 = prev.T.copy()                       # (x2, n_J - 1)
        rhs2[0, :] = 0.0
        rhs2[-1, :] = line[i_bar]
        V2[1:n_J] = solve_banded((1, 1), half_ab, rhs2).T
        V2[0] = line[:i_bar + 1]
        V2[n_J] = surface.value_at(x2, np.full(x2.size, th))
        V1[n] = line[i_bar:]
        trace[n] = line[i_bar]
        conn[n] = ((-3 * line[i_bar] + 4 * line[i_bar + 1] - line[i_bar + 2])
                   - (3 * line[i_bar] - 4 * line[i_bar - 1] + line[i_bar - 2])) / (2 * h)
    l = dt_eff * np.arange(n_l)
    return theta, trace, V1, l, V2, conn


def solve_coupled(mp: MarketParams, c: ParisianContract,
                  resolution: PdeResolution | None = None,
                  surface: VanillaSurface | None = None) -> PdeSolution:
    """March both regions from expiry to ``t = 0``."""
    res = resolution or PdeResolution()
    if classify(c) is not Degeneracy.NON_DEGENERATE:
        raise ValidationError("the PDE oracle handles non-degenerate contracts only")
    dp = to_dimensionless(mp, c)
    surface = surface or build_surface(dp, c.embedded_style)
    half = res.half_width * math.sqrt(dp.T_d)
    lo, hi = surface.x_range
    lo = max(lo, dp.x_bar - half)
    hi = min(hi, dp.x_bar + half)
    n_below = int(round((res.n_x - 1) * (dp.x_bar - lo) / (hi - lo)))
    h = (dp.x_bar - lo) / n_below
    n_above = int(math.floor((hi - dp.x_bar) / h))
    x = dp.x_bar + h * np.arange(-n_below, n_above + 1)
    i_bar = n_below
    coarse = _march(dp, surface, x, i_bar, res.n_J)
    if not res.richardson:
        theta, trace, V1, l, V2, conn = coarse
    else:
        fine = _march(dp, surface, x, i_bar, 2 * res.n_J)
        theta = coarse[0]
        trace = 2 * fine[1][::2] - coarse[1]
        V1 = 2 * fine[2][::2] - coarse[2]
        l = coarse[3]
        V2 = 2 * fine[4][::2] - coarse[4]
        conn = 2 * fine[5][::2] - coarse[5]
    if not (np.all(np.isfinite(V1)) and np.all(np.isfinite(V2))):
        raise PdeError("non-finite values in the PDE solution")
    return PdeSolution(dp, x, i_bar, theta, trace, V1, l, V2, conn,
                       meta={"n_x": x.size, "n_J": res.n_J, "richardson": res.richardson})


def extract_trace(sol: PdeSolution) -> tuple[np.ndarray, np.ndarray]:
    """Barrier values ``W`` against region-I time ``tau = theta - J_bar_d``."""
    return sol.theta - sol.params.J_bar_d, sol.trace.copy()


def price_at(sol: PdeSolution, c: ParisianContract, sp: StatePoint) -> float:
    """Price at ``t = 0`` (the final time level) in currency units."""
    sp.validate(c)
    if abs(sp.t) > 1e-12:
        raise ValidationError("the stored PDE fields give prices at t = 0 only")
    x = math.log(sp.S / c.K)
    dp = sol.params
    if sp.S > c.S_bar:
        if x > sol.x1[-1]:
            return 0.0
        return c.K * float(np.interp(x, sol.x1, sol.V1[-1]))
    if x < sol.x2[0]:
        return 0.0
    l = 0.5 * dp.sigma ** 2 * sp.J
    rows = np.array([np.interp(x, sol.x2, row) for row in sol.V2_final])
    return c.K * float(np.interp(l, sol.l, rows))
