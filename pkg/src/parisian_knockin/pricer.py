"""Price assembly from the solved barrier trace.

Region I (``S > S_bar``) at ``tau`` inside window ``n + 1``:

    V1 = G(x, tau - n J; f_n) + int_{n J}^{tau} W(s) g1(x, tau - s) ds

Region II (``S <= S_bar``, elapsed clock ``l``, remaining ``l_r = J - l``),
with ``tau_b`` the slide base and ``tau_now = tau_b - l``:

    V2 = F(x, l_r; tau_b) + int_{tau_now - l_r}^{tau_now} W(s) g2(x, tau_now - s) ds

All values are dimensionless and multiplied by ``K`` on the way out.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kernels import F, G, KernelParams, boundary_potential
from .model import (DEGENERACY_MESSAGES, Degeneracy, DegeneracyThresholds, EmbeddedStyle,
                    MarketParams, ParisianContract, Region, StatePoint, ValidationError,
                    classify, to_dimensionless)
from .vanilla import VanillaResolution, VanillaSurface, build_surface
from .window_solver import WindowSolver, WindowSolverConfig


class DegenerateContractError(ValidationError):
    """The contract is in a limit this engine does not price."""


@dataclass(frozen=True)
class PricerConfig:
    vanilla: VanillaResolution = field(default_factory=VanillaResolution)
    windows: WindowSolverConfig = field(default_factory=WindowSolverConfig)
    thresholds: DegeneracyThresholds = field(default_factory=DegeneracyThresholds)
    # finite-difference step in x for delta (Richardson with h and h/2)
    delta_step: float = 1e-3


@dataclass(frozen=True)
class PriceResult:
    price: float
    dimensionless_value: float
    region: Region
    windows_used: int
    quadrature_error_estimate: float
    delta: float | None = None
    degeneracy: Degeneracy = Degeneracy.NON_DEGENERATE
    message: str = ""

    def __post_init__(self):
        if not math.isfinite(self.price):
            raise ValueError("price must be finite")


class ParisianPricer:
    """Prices one contract at any number of state points.

    The vanilla surface and the window solve are built lazily and cached,
    so a price table costs a single window solve.
    """

    def __init__(self, mp: MarketParams, contract: ParisianContract,
                 cfg: PricerConfig | None = None):
        self.mp, self.contract = mp, contract
        self.cfg = cfg or PricerConfig()
        self.degeneracy = classify(contract, self.cfg.thresholds)
        if self.degeneracy is Degeneracy.ONE_TOUCH_LIMIT:
            raise DegenerateContractError(DEGENERACY_MESSAGES[self.degeneracy])
        self.dp = to_dimensionless(mp, contract)
        self._surface: VanillaSurface | None = None
        self._solver: WindowSolver | None = None

    # -- cached building blocks ---------------------------------------------

    @property
    def surface(self) -> VanillaSurface:
        if self._surface is None:
            dp = self.dp
            if self.degeneracy is Degeneracy.VANILLA_AMERICAN_LIMIT:
                # the barrier is irrelevant; cover the strike region only
                dp = dataclasses.replace(dp, x_bar=0.0)
            self._surface = build_surface(dp, self.contract.embedded_style, self.cfg.vanilla)
        return self._surface

    @property
    def solver(self) -> WindowSolver:
        if self._solver is None:
            self._solver = WindowSolver(self.dp, self.surface, self.cfg.windows)
        return self._solver

    @property
    def kp(self) -> KernelParams:
        return KernelParams.from_dimless(self.dp)

    # -- time maps ---------------------------------------------------------

    def _half_var(self) -> float:
        return 0.5 * self.mp.sigma ** 2

    def tau(self, t: float) -> float:
        return (self.contract.T - self.contract.J_bar - t) * self._half_var()

    def theta(self, t: float) -> float:
        return (self.contract.T - t) * self._half_var()

    # -- dimensionless assembly ----------------------------------------------

    def embedded_value(self, x, t: float) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros(x.size)
        ok = np.isfinite(x)
        if ok.any():
            out[ok] = self.surface.value_at(x[ok], np.full(ok.sum(), self.theta(t)))
        return out

    def region1_value(self, x, tau: float) -> tuple[np.ndarray, np.ndarray, int]:
        """``V1(x, tau)`` for ``x >= x_bar``; returns (values, errors, windows used)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if tau <= 0:
            return np.zeros(x.size), np.zeros(x.size), 0
        solver = self.solver
        wset = solver.ensure(tau)
        J = self.dp.J_bar_d
        n = max(int(math.ceil(tau / J - 1e-12)) - 1, 0)
        tt = tau - n * J
        qcfg = self.cfg.windows.quadrature
        val, err = boundary_potential(x - self.dp.x_bar, tau, n * J, wset, self.kp, 1.0, qcfg,
                                      return_error=True)
        if n > 0 and tt > 0:
            g, g_err = G(x, tt, solver.profile(n), self.kp, qcfg, return_error=True)
            val, err = val + g, err + g_err
        elif n > 0:
            val = solver.profile(n)(x)
        return val, err, solver.n_windows_for(tau)

    def region2_value(self, x, tau_b: float, l: float) -> tuple[np.ndarray, np.ndarray, int]:
        """``V2`` for ``x <= x_bar`` on the slide with base ``tau_b`` and elapsed clock ``l``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        J = self.dp.J_bar_d
        l_rem = J - l
        if tau_b < 0:
            # knock-in could only complete after expiry
            return np.zeros(x.size), np.zeros(x.size), 0
        out, err = np.zeros(x.size), np.zeros(x.size)
        ok = np.isfinite(x)
        if l_rem <= 0:
            out[ok] = self.surface.value_at(x[ok], np.full(ok.sum(), tau_b))
            return out, err, 0
        xs = x[ok]
        qcfg = self.cfg.windows.quadrature
        f_val, f_err = F(xs, l_rem, tau_b, self.surface, self.kp, qcfg, return_error=True)
        tau_now = tau_b - l
        used = 0
        if tau_now > 0:
            wset = self.solver.ensure(tau_now)
            p_val, p_err = boundary_potential(self.dp.x_bar - xs, tau_now, tau_now - l_rem, wset,
                                              self.kp, -1.0, qcfg, return_error=True)
            f_val, f_err = f_val + p_val, f_err + p_err
            used = self.solver.n_windows_for(tau_now)
        out[ok], err[ok] = f_val, f_err
        return out, err, used

    def _classify_state(self, sp: StatePoint) -> Region:
        sp.validate(self.contract)
        if sp.S <= self.contract.S_bar and sp.J >= self.contract.J_bar:
            return Region.KNOCKED_IN
        return Region.I if sp.S > self.contract.S_bar else Region.II

    def _dimless(self, S: np.ndarray, t: float, J: float, region: Region):
        with np.errstate(divide="ignore"):
            x = np.log(S / self.contract.K)
        if region is Region.KNOCKED_IN:
            return self.embedded_value(x, t), np.zeros(x.size), 0
        if region is Region.I:
            return self.region1_value(x, self.tau(t))
        return self.region2_value(x, self.tau(t - J), self._half_var() * J)

    # -- public API ----------------------------------------------------------

    def price(self, sp: StatePoint, with_delta: bool = False) -> PriceResult:
        c = self.contract
        sp.validate(c)
        if self.degeneracy is not Degeneracy.NON_DEGENERATE:
            return self._degenerate(sp, with_delta)
        region = self._classify_state(sp)
        val, err, used = self._dimless(np.array([sp.S]), sp.t, sp.J, region)
        v = max(float(val[0]), 0.0)
        delta = self.delta(sp) if with_delta else None
        return PriceResult(price=c.K * v, dimensionless_value=v, region=region,
                           windows_used=used, quadrature_error_estimate=c.K * float(err[0]),
                           delta=delta)

    def _degenerate(self, sp: StatePoint, with_delta: bool) -> PriceResult:
        c = self.contract
        msg = DEGENERACY_MESSAGES[self.degeneracy]
        if self.degeneracy is Degeneracy.WORTHLESS:
            return PriceResult(0.0, 0.0, Region.DEGENERATE, 0, 0.0,
                               0.0 if with_delta else None, self.degeneracy, msg)
        x = math.log(sp.S / c.K) if sp.S > 0 else -math.inf
        v = float(self.embedded_value([x], sp.t)[0])
        delta = None
        if with_delta:
            delta = self._embedded_delta(sp) if sp.S > 0 else 0.0
        return PriceResult(c.K * v, v, Region.DEGENERATE, 0, 0.0, delta, self.degeneracy, msg)

    def _embedded_delta(self, sp: StatePoint) -> float:
        x = math.log(sp.S / self.contract.K)
        dx = float(self.surface.delta_x_at(np.array([x]), np.array([self.theta(sp.t)]))[0])
        return self.contract.K * dx / sp.S

    def delta(self, sp: StatePoint) -> float:
        """``dV/dS`` by Richardson-extrapolated finite differences in ``x``.

        Stencils never cross the barrier: points within ``2h`` of it use
        one-sided second-order differences inside their own region.
        """
        c = self.contract
        region = self._classify_state(sp)
        if self.degeneracy is Degeneracy.WORTHLESS or sp.S <= 0:
            return 0.0
        if region is Region.KNOCKED_IN or self.degeneracy is Degeneracy.VANILLA_AMERICAN_LIMIT:
            return self._embedded_delta(sp)
        x0 = math.log(sp.S / c.K)
        h = self.cfg.delta_step
        xb = self.dp.x_bar
        if region is Region.I:
            side = 1.0 if x0 - 2 * h < xb else 0.0
        else:
            side = -1.0 if x0 + 2 * h > xb else 0.0

        def derivative(step):
            if side == 0.0:
                xs = np.array([x0 - step, x0 + step])
                v, _, _ = self._dimless(c.K * np.exp(xs), sp.t, sp.J, region)
                return (v[1] - v[0]) / (2 * step)
            xs = x0 + side * step * np.arange(3)
            v, _, _ = self._dimless(c.K * np.exp(xs), sp.t, sp.J, region)
            return side * (-3 * v[0] + 4 * v[1] - v[2]) / (2 * step)

        dvdx = (4.0 * derivative(0.5 * h) - derivative(h)) / 3.0
        return c.K * dvdx / sp.S

    def price_surface(self, S_values: Sequence[float], t: float, J: float = 0.0,
                      with_delta: bool = False) -> list[PriceResult]:
        """Prices along an ``S`` grid at fixed ``(t, J)``; each region is one batch."""
        S = np.asarray(S_values, dtype=float)
        if S.ndim != 1 or S.size == 0:
            raise ValidationError("S_values must be a non-empty 1-D sequence")
        c = self.contract
        results: list[PriceResult | None] = [None] * S.size
        if self.degeneracy is not Degeneracy.NON_DEGENERATE:
            return [self.price(StatePoint(float(s), t, J if s <= c.S_bar else 0.0), with_delta)
                    for s in S]
        groups: dict[Region, list[int]] = {}
        for i, s in enumerate(S):
            jj = J if s <= c.S_bar else 0.0
            groups.setdefault(self._classify_state(StatePoint(float(s), t, jj)), []).append(i)
        for region, idx in groups.items():
            jj = 0.0 if region is Region.I else J
            val, err, used = self._dimless(S[idx], t, jj, region)
            for i, v, e in zip(idx, val, err):
                v = max(float(v), 0.0)
                d = self.delta(StatePoint(float(S[i]), t, jj)) if with_delta else None
                results[i] = PriceResult(c.K * v, v, region, used, c.K * float(e), d)
        return results  # type: ignore[return-value]

    def barrier_derivatives(self, taus, h: float = 1e-4) -> tuple[np.ndarray, np.ndarray]:
        """One-sided ``dV/dx`` at the barrier from the assembled fields.

        Region I from above (``V1`` at ``x_bar + h, x_bar + 2h``), region II from
        below on a fresh slide (``V2`` at ``x_bar - h, x_bar - 2h``, ``l = 0``);
        both share the barrier value ``W(tau)``.
        """
        taus = np.atleast_1d(np.asarray(taus, dtype=float))
        xb = self.dp.x_bar
        d1, d2 = np.empty(taus.size), np.empty(taus.size)
        for i, tau in enumerate(taus):
            up, _, _ = self.region1_value(xb + h * np.arange(3), tau)
            dn, _, _ = self.region2_value(xb - h * np.arange(3), tau, 0.0)
            d1[i] = (-3 * up[0] + 4 * up[1] - up[2]) / (2 * h)
            d2[i] = (3 * dn[0] - 4 * dn[1] + dn[2]) / (2 * h)
        return d1, d2


def price(mp: MarketParams, c: ParisianContract, sp: StatePoint,
          cfg: PricerConfig | None = None) -> PriceResult:
    return ParisianPricer(mp, c, cfg).price(sp)


def delta(mp: MarketParams, c: ParisianContract, sp: StatePoint,
          cfg: PricerConfig | None = None) -> float:
    return ParisianPricer(mp, c, cfg).delta(sp)


def price_surface(mp: MarketParams, c: ParisianContract, S_values: Sequence[float],
                  t: float, J: float = 0.0, cfg: PricerConfig | None = None,
                  with_delta: bool = False) -> list[PriceResult]:
    return ParisianPricer(mp, c, cfg).price_surface(S_values, t, J, with_delta)


CSV_COLUMNS = ["S", "t", "J", "price", "delta", "region", "windows_used", "err_estimate"]


def write_price_csv(path, rows: Sequence[tuple[float, float, float, PriceResult]]) -> None:
    """Write ``(S, t, J, result)`` rows with 12 significant digits."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for S, t, J, res in rows:
            d = "" if res.delta is None else f"{res.delta:.12g}"
            wr.writerow([f"{S:.12g}", f"{t:.12g}", f"{J:.12g}", f"{res.price:.12g}", d,
                         res.region.value, res.windows_used,
                         f"{res.quadrature_error_estimate:.12g}"])
