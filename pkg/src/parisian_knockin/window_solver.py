"""Moving-window recursion for the barrier trace ``W(tau) = V(x_bar, tau)``.

The region-I time axis ``[0, T_d - J_bar_d]`` is cut into windows of length
``J_bar_d``.  Window ``n + 1`` is computed from window ``n`` and the region-I
profile ``f_n`` at the window start, so the global Volterra problem becomes a
sequence of explicit integrals.

Each window is stored as a function of ``v = sqrt(tau - start)``.  The trace
carries a ``sqrt(tau - start)`` component at every window start, which is a
polynomial in ``v``; in ``v`` every term of the recursion is smooth, so a
Chebyshev interpolant on Lobatto nodes converges spectrally.  (A cubic spline
in ``v`` is available for comparison; its interpolation error is amplified by
the half-derivative in the barrier flux.)

With ``U0`` the previous window expressed on ``[-J_bar_d, 0]`` and ``t``
the local time, the recursion is ``W_{n+1}(t) = A + B + C + D + E``:

* A: direct-Gaussian smoothing of ``f_n`` at the barrier;
* B: ``U0(0) exp(-c t) / 2``;
* C: ``-exp(-c J) / (2 pi sqrt(J)) int_0^t exp(-c (t-s)) U0(s - J) / sqrt(t-s) ds``;
* D: ``int_0^t exp(-c (t-s)) Q(n J + s) / sqrt(t-s) ds`` with ``Q`` the
  knock-in flux of the embedded call;
* E: ``-(1/pi) int_0^t exp(-c (t-s)) / sqrt(t-s)
  int_{sqrt s}^{sqrt J} exp(-c u^2) (c U0 + U0')(s - u^2) du ds``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .kernels import (SQRT_PI, W_CUT, F_barrier_flux, InitialProfile, KernelParams,
                      PiecewiseChebyshev, gaussian_smoothing, knock_in_flux_table)
from .model import DimlessParams
from .quadrature import DEFAULT_CONFIG, QuadratureConfig, integrate_batch

if TYPE_CHECKING:
    from .vanilla import VanillaSurface

HALF_PI = 0.5 * math.pi
DUMP_TERM_COLUMNS = ("term1", "term2", "term3", "term4", "term5")


class WindowSolverError(RuntimeError):
    pass


def lobatto_nodes(v_max: float, m: int) -> np.ndarray:
    """Chebyshev-Lobatto points on ``[0, v_max]``, both ends included."""
    return 0.5 * v_max * (1.0 - np.cos(np.pi * np.arange(m + 1) / m))


@dataclass
class WindowFunction:
    """One window of the barrier trace on ``[start, start + length]``.

    ``representation="chebyshev"`` expects Chebyshev-Lobatto nodes in ``v``
    and interpolates with a Chebyshev series; ``"spline"`` takes any nodes
    and uses a not-a-knot cubic spline.
    """

    index: int
    start: float
    length: float
    v: np.ndarray
    values: np.ndarray
    is_zero: bool = False
    representation: str = "chebyshev"
    terms: np.ndarray | None = None     # (5, nodes) contributions A..E, diagnostics only
    _f: Callable | None = field(default=None, init=False, repr=False)
    _df: Callable | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.is_zero:
            return
        if self.v.size < 4:
            raise ValueError("a window needs at least four nodes")
        if self.representation == "chebyshev":
            cheb = np.polynomial.Chebyshev.fit(self.v, self.values, self.v.size - 1,
                                               domain=[0.0, self.v_max])
            self._f, self._df = cheb, cheb.deriv()
        elif self.representation == "spline":
            spline = CubicSpline(self.v, self.values, bc_type="not-a-knot")
            self._f, self._df = spline, spline.derivative()
        else:
            raise ValueError("representation must be 'chebyshev' or 'spline'")

    @classmethod
    def zero(cls, index: int, start: float, length: float) -> "WindowFunction":
        v = np.array([0.0, math.sqrt(length)])
        return cls(index, start, length, v, np.zeros(2), is_zero=True)

    @property
    def end(self) -> float:
        return self.start + self.length

    @property
    def v_max(self) -> float:
        return math.sqrt(self.length)

    def value_v(self, v):
        v = np.asarray(v, dtype=float)
        if self.is_zero:
            return np.zeros_like(v)
        return self._f(np.clip(v, 0.0, self.v_max))

    def dvalue_v(self, v):
        v = np.asarray(v, dtype=float)
        if self.is_zero:
            return np.zeros_like(v)
        return self._df(np.clip(v, 0.0, self.v_max))

    def value_global(self, s):
        s = np.asarray(s, dtype=float)
        return self.value_v(np.sqrt(np.clip(s - self.start, 0.0, self.length)))

    def dphi_dv(self, v, c: float, shift: float):
        """``d/dv [exp(c (v^2 + shift)) W(v)]``."""
        v = np.asarray(v, dtype=float)
        return np.exp(c * (v * v + shift)) * (2.0 * c * v * self.value_v(v) + self.dvalue_v(v))


@dataclass
class WindowSet:
    """Windows ``W_1 .. W_N`` covering ``[0, end]`` plus the pre-history ``W_0``."""

    kp: KernelParams
    w0: WindowFunction
    windows: list[WindowFunction] = field(default_factory=list)

    @property
    def end(self) -> float:
        return self.windows[-1].end if self.windows else 0.0

    def all_windows(self) -> list[WindowFunction]:
        return [self.w0, *self.windows]

    def value(self, tau):
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        if np.any(tau > self.end * (1 + 1e-12) + 1e-15):
            raise WindowSolverError(f"trace requested at tau={tau.max()} beyond solved end {self.end}")
        out = np.empty(tau.size)
        flat = tau.ravel()
        neg = flat < 0
        out[neg] = self.w0.value_global(flat[neg])
        if (~neg).any():
            J = self.kp.J_bar_d
            idx = np.minimum((flat[~neg] / J).astype(int), len(self.windows) - 1)
            vals = np.empty(idx.size)
            for i in np.unique(idx):
                m = idx == i
                vals[m] = self.windows[i].value_global(flat[~neg][m])
            out[~neg] = vals
        return out.reshape(tau.shape)

    def nodes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(window_index, tau, value)`` for every stored node."""
        idx, tau, val = [], [], []
        for w in self.windows:
            idx.append(np.full(w.v.size, w.index))
            tau.append(w.start + w.v ** 2)
            val.append(w.values)
        if not idx:
            return np.zeros(0, int), np.zeros(0), np.zeros(0)
        return np.concatenate(idx), np.concatenate(tau), np.concatenate(val)

    def dump_csv(self, path) -> None:
        """Node table: ``window, tau, W, term1..term5`` (terms A..E, blank if unknown)."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["window", "tau", "W", *DUMP_TERM_COLUMNS])
            for w in self.windows:
                tau = w.start + w.v ** 2
                for j in range(w.v.size):
                    terms = ([f"{x:.12g}" for x in w.terms[:, j]] if w.terms is not None
                             else [""] * 5)
                    wr.writerow([w.index, f"{tau[j]:.12g}", f"{w.values[j]:.12g}", *terms])


@dataclass(frozen=True)
class WindowSolverConfig:
    nodes: int = 64
    representation: str = "chebyshev"
    # "zero": nothing can knock in on a slide that starts after the last
    # admissible start; "vanilla" reproduces the embedded-call pre-history
    initial_window: str = "zero"
    profile_degree: int = 64
    quadrature: QuadratureConfig = DEFAULT_CONFIG
    # node values are integrated this much tighter than `quadrature`: the
    # barrier flux is a half-derivative of W and amplifies node noise
    node_tolerance_factor: float = 0.01

    def __post_init__(self):
        if self.nodes < 4:
            raise ValueError("nodes must be at least 4")
        if not 0 < self.node_tolerance_factor <= 1:
            raise ValueError("node_tolerance_factor must lie in (0, 1]")
        if self.initial_window not in ("zero", "vanilla"):
            raise ValueError("initial_window must be 'zero' or 'vanilla'")
        if self.representation not in ("chebyshev", "spline"):
            raise ValueError("representation must be 'chebyshev' or 'spline'")

    def node_v(self, length: float) -> np.ndarray:
        vmax = math.sqrt(length)
        if self.representation == "chebyshev":
            return lobatto_nodes(vmax, self.nodes)
        return vmax * np.linspace(0.0, 1.0, self.nodes + 1)


class WindowSolver:
    """Computes windows on demand and caches them."""

    def __init__(self, dp: DimlessParams, surface: "VanillaSurface",
                 cfg: WindowSolverConfig | None = None, w0: WindowFunction | None = None):
        self.dp = dp
        self.kp = KernelParams.from_dimless(dp)
        self.surface = surface
        self.cfg = cfg or WindowSolverConfig()
        J = self.kp.J_bar_d
        if w0 is None and self.cfg.initial_window == "zero":
            w0 = WindowFunction.zero(0, -J, J)
        elif w0 is None:
            v = self.cfg.node_v(J)
            vals = surface.value_at(np.full(v.size, dp.x_bar), v * v)
            w0 = WindowFunction(0, -J, J, v, vals, representation=self.cfg.representation)
        self.set = WindowSet(self.kp, w0)
        self._profiles: dict[int, InitialProfile] = {}
        self._flux_table: PiecewiseChebyshev | None = None
        q = self.cfg.quadrature
        f = self.cfg.node_tolerance_factor
        self.node_quadrature = QuadratureConfig(q.abs_tol * f, q.rel_tol * f,
                                                q.max_subdivisions, q.gauss_order)

    @property
    def flux_table(self) -> PiecewiseChebyshev:
        if self._flux_table is None:
            self._flux_table = knock_in_flux_table(self.surface, self.kp, max(self.horizon, 1e-300),
                                                   self.node_quadrature)
        return self._flux_table

    @property
    def horizon(self) -> float:
        return self.dp.horizon

    def n_windows_for(self, tau: float) -> int:
        if tau <= 0:
            return 0
        return int(math.ceil(min(tau, self.horizon) / self.kp.J_bar_d - 1e-12))

    def ensure(self, tau: float) -> WindowSet:
        """Solve windows until the trace covers ``[0, min(tau, horizon)]``."""
        need = self.n_windows_for(tau)
        while len(self.set.windows) < need:
            self.set.windows.append(self._solve_next())
        return self.set

    def profile(self, n: int) -> InitialProfile:
        if n not in self._profiles:
            J = self.kp.J_bar_d
            self._profiles[n] = InitialProfile(n, self.set, self.kp, width=2.0 * W_CUT * math.sqrt(J),
                                               degree=self.cfg.profile_degree,
                                               cfg=self.node_quadrature)
        return self._profiles[n]

    def _solve_next(self) -> WindowFunction:
        n = len(self.set.windows)
        kp, J, c = self.kp, self.kp.J_bar_d, self.kp.c
        start = n * J
        length = min(J, self.horizon - start)
        if length <= 0:
            raise WindowSolverError("no window left before the horizon")
        v = self.cfg.node_v(length)
        t = v * v
        u0 = self.set.w0 if n == 0 else self.set.windows[n - 1]
        terms = self.window_terms(n, t, u0)
        values = terms.sum(axis=0)
        if not np.all(np.isfinite(values)):
            raise WindowSolverError(f"non-finite value in window {n + 1}")
        return WindowFunction(n + 1, start, length, v, values,
                              representation=self.cfg.representation, terms=terms)

    def window_terms(self, n: int, t: np.ndarray, u0: WindowFunction) -> np.ndarray:
        """The five contributions A..E at local times ``t``, shape ``(5, len(t))``."""
        kp, J, c = self.kp, self.kp.J_bar_d, self.kp.c
        qcfg = self.node_quadrature
        t = np.asarray(t, dtype=float)
        out = np.zeros((5, t.size))
        # A
        out[0] = gaussian_smoothing(t, self.profile(n), kp, qcfg)
        # B
        out[1] = 0.5 * float(u0.value_v(u0.v_max)) * np.exp(-c * t)
        pos = np.flatnonzero(t > 0)
        if pos.size == 0:
            return out
        tp = t[pos]
        st = np.sqrt(tp)
        zeros, ends = np.zeros(pos.size), np.full(pos.size, HALF_PI)

        def weight(phi, i):
            # ds / sqrt(t - s) with s = t sin^2(phi), times exp(-c (t - s))
            return 2.0 * st[i][:, None] * np.sin(phi) * np.exp(-c * tp[i][:, None] * np.cos(phi) ** 2)

        # C
        if not u0.is_zero:
            def fC(phi, i):
                return weight(phi, i) * u0.value_v(st[i][:, None] * np.sin(phi))

            vC, _ = integrate_batch(fC, zeros, ends, qcfg)
            out[2, pos] = -math.exp(-c * J) / (2.0 * math.pi * math.sqrt(J)) * vC

        # D
        base = n * J
        table = self.flux_table

        def fD(phi, i):
            return weight(phi, i) * table(base + tp[i][:, None] * np.sin(phi) ** 2)

        vD, _ = integrate_batch(fD, zeros, ends, qcfg)
        out[3, pos] = vD

        # E
        if not u0.is_zero:
            def fE(phi, i):
                s = (tp[i][:, None] * np.sin(phi) ** 2).ravel()
                R = np.sqrt(s + J)
                lo = np.arcsin(np.sqrt(s) / R)
                hi = np.arcsin(math.sqrt(J) / R)

                def g(psi, j):
                    return u0.dphi_dv(R[j][:, None] * np.sin(psi), c, -J)

                inner, _ = integrate_batch(g, lo, hi, qcfg)
                inner = 0.5 * np.exp(-c * s) * inner
                return weight(phi, i) * inner.reshape(phi.shape)

            vE, _ = integrate_batch(fE, zeros, ends, qcfg)
            out[4, pos] = -vE / math.pi
        return out

    # -- diagnostics ---------------------------------------------------

    def abel_flux_integral(self, tau, lower):
        """``int_{lower}^{tau} phi'(s) / sqrt(tau - s) ds`` with ``phi = exp(c s) W(s)``.

        Window by window in ``v``, then ``v = R sin(psi)`` with ``R^2 = tau - start``.
        """
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        lower = np.broadcast_to(np.asarray(lower, dtype=float), tau.shape)
        c, qcfg = self.kp.c, self.cfg.quadrature
        total = np.zeros(tau.size)
        for win in self.set.all_windows():
            if win.is_zero:
                continue
            p = np.maximum(lower, win.start)
            q = np.minimum(tau, win.end)
            sel = np.flatnonzero(q > p)
            if sel.size == 0:
                continue
            R = np.sqrt(tau[sel] - win.start)
            lo = np.arcsin(np.clip(np.sqrt(p[sel] - win.start) / R, 0.0, 1.0))
            hi = np.arcsin(np.clip(np.sqrt(q[sel] - win.start) / R, 0.0, 1.0))

            def f(psi, i, R=R, win=win):
                return win.dphi_dv(R[i][:, None] * np.sin(psi), c, win.start)

            vals, _ = integrate_batch(f, lo, hi, qcfg)
            total[sel] += vals
        return total

    def connectivity_residual(self, tau):
        """Mismatch of the two barrier fluxes ``dV/dx`` at ``tau`` (interior points).

        Both sides are evaluated from the stored trace in regularized form, so
        the check is independent of the way the windows were assembled.
        """
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        kp, c, J = self.kp, self.kp.c, self.kp.J_bar_d
        self.ensure(float(tau.max()))
        W = self.set.value(tau)
        phi = np.exp(c * tau) * W
        phi0 = float(self.set.value(np.array([0.0]))[0])
        flux_I = np.exp(-c * tau) * (-0.5 * kp.k * phi
                                     - (phi0 / np.sqrt(tau) + self.abel_flux_integral(tau, 0.0)) / SQRT_PI)
        back = tau - J
        w_back = self.set.value(back)
        phi_back = np.exp(c * back) * w_back
        flux_II = (-0.5 * kp.k * W
                   + F_barrier_flux(tau, J, self.surface, kp, self.cfg.quadrature)
                   + np.exp(-c * tau) / SQRT_PI * (phi_back / math.sqrt(J)
                                                   + self.abel_flux_integral(tau, back)))
        return flux_I - flux_II

    def residual_ratio(self, tau) -> np.ndarray:
        """``|residual| / max(abs_tol, rel_tol |dF/dx|)`` with the configured tolerances.

        The barrier flux of the inhomogeneous term sets the scale of the
        equation, so the relative tolerance is taken against it.
        """
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        q = self.cfg.quadrature
        res = self.connectivity_residual(tau)
        scale = np.abs(F_barrier_flux(tau, self.kp.J_bar_d, self.surface, self.kp, q))
        return np.abs(res) / np.maximum(q.abs_tol, q.rel_tol * scale)


# Operation-level entry points; each builds on a WindowSolver.

def solve_W0(surface: "VanillaSurface", cfg: WindowSolverConfig | None = None) -> WindowFunction:
    """Pre-history window on ``[-J_bar_d, 0]`` (zero unless ``initial_window="vanilla"``)."""
    return WindowSolver(surface.params, surface, cfg).set.w0


def solve_W1(surface: "VanillaSurface", W0: WindowFunction | None = None,
             cfg: WindowSolverConfig | None = None) -> WindowFunction:
    solver = WindowSolver(surface.params, surface, cfg, w0=W0)
    solver.ensure(min(solver.kp.J_bar_d, solver.horizon))
    return solver.set.windows[0]


def solve_Wnext(n: int, windows: WindowSet, surface: "VanillaSurface",
                cfg: WindowSolverConfig | None = None) -> WindowFunction:
    """Window ``n + 1`` given windows ``1..n`` in ``windows`` (which is not modified)."""
    if len(windows.windows) != n:
        raise WindowSolverError(f"expected {n} solved windows, found {len(windows.windows)}")
    solver = WindowSolver(surface.params, surface, cfg, w0=windows.w0)
    solver.set.windows.extend(windows.windows)
    return solver._solve_next()


def solve_U(tau_tilde, n: int, windows: WindowSet, surface: "VanillaSurface",
            cfg: WindowSolverConfig | None = None) -> np.ndarray:
    """``U(tau_tilde) = W_{n+1}(n J_bar_d + tau_tilde)`` evaluated directly from the five terms."""
    solver = WindowSolver(surface.params, surface, cfg, w0=windows.w0)
    solver.set.windows.extend(windows.windows[:n])
    u0 = windows.w0 if n == 0 else windows.windows[n - 1]
    t = np.atleast_1d(np.asarray(tau_tilde, dtype=float))
    return solver.window_terms(n, t, u0).sum(axis=0)
