"""Embedded call values C_A(x, theta) in dimensionless units.

``theta`` is the embedded option's own time to expiry, ``sigma^2 (T - t) / 2``,
and values are quoted per unit strike.  The American surface solves

    C_theta = C_xx + k C_x - gamma C,   C >= max(e^x - 1, 0)

by Crank-Nicolson with projected SOR and a Rannacher start.  The European
surface evaluates the closed form directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RectBivariateSpline
from scipy.special import ndtr

from .model import DimlessParams, EmbeddedStyle

SURFACE_FORMAT = "parisian-knockin/grid"
SURFACE_FORMAT_VERSION = 1


class CoverageError(ValueError):
    """A query fell outside the grid the surface was built on."""


class VanillaSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class VanillaResolution:
    n_x: int = 801
    n_theta: int = 401
    psor_tol: float = 1e-9
    omega: float = 1.5
    max_psor_iter: int = 10_000
    half_width: float = 10.0  # in units of sqrt(T_d)
    rannacher_steps: int = 0  # leading CN steps replaced by two implicit half-steps
    # spline degree across theta; quintic keeps the time integrals of the
    # surface smooth enough for the barrier-flux half-derivative
    theta_degree: int = 5

    def __post_init__(self):
        if self.n_x < 2 or self.n_theta < 2:
            raise ValueError("resolution needs at least 2 nodes per axis")
        if self.theta_degree not in (1, 3, 5):
            raise ValueError("theta_degree must be 1, 3 or 5")
        if self.n_theta <= self.theta_degree:
            raise ValueError("n_theta must exceed theta_degree")


def payoff(x):
    return np.maximum(np.expm1(x), 0.0)


def european_call(x, theta, dp: DimlessParams):
    """Closed-form call with continuous dividend yield, per unit strike."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    x, theta = np.broadcast_arrays(x, theta)
    out = np.array(payoff(x), dtype=float)
    pos = theta > 0
    if np.any(pos):
        xs, ts = x[pos], theta[pos]
        vol = np.sqrt(2.0 * ts)
        d1 = (xs + (dp.gamma - dp.q + 1.0) * ts) / vol
        d2 = d1 - vol
        out[pos] = np.exp(xs - dp.q * ts) * ndtr(d1) - np.exp(-dp.gamma * ts) * ndtr(d2)
    return out if out.ndim else float(out)


def european_call_theta(x, theta, dp: DimlessParams):
    """d/dtheta of :func:`european_call`; requires ``theta > 0``."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    vol = np.sqrt(2.0 * theta)
    d1 = (x + (dp.gamma - dp.q + 1.0) * theta) / vol
    d2 = d1 - vol
    fwd = np.exp(x - dp.q * theta)
    dens = np.exp(-0.5 * d1 * d1) / math.sqrt(2.0 * math.pi)
    out = (-dp.q * fwd * ndtr(d1) + dp.gamma * np.exp(-dp.gamma * theta) * ndtr(d2)
           + fwd * dens / vol)
    return out if out.ndim else float(out)


def perpetual_boundary(dp: DimlessParams) -> float:
    """Log-moneyness of the perpetual American call exercise boundary (inf if D = 0)."""
    if dp.q <= 0:
        return math.inf
    beta = 0.5 * (-dp.k + math.sqrt(dp.k * dp.k + 4.0 * dp.gamma))
    if beta <= 1.0:
        return math.inf
    return math.log(beta / (beta - 1.0))


def _psor_step(sub, diag, sup, rhs, guess, obstacle, omega, tol, max_iter):
    """Solve the interior tridiagonal LCP with red-black projected SOR."""
    v = guess.copy()
    n = v.size
    even = np.arange(1, n - 1, 2)
    odd = np.arange(2, n - 1, 2)
    for it in range(max_iter):
        change = 0.0
        for idx in (even, odd):
            y = (rhs[idx] - sub * v[idx - 1] - sup * v[idx + 1]) / diag
            new = np.maximum(obstacle[idx], v[idx] + omega * (y - v[idx]))
            change = max(change, float(np.max(np.abs(new - v[idx]), initial=0.0)))
            v[idx] = new
        if change < tol:
            return v, it + 1
    raise VanillaSolverError(f"PSOR did not converge in {max_iter} iterations")


def _solve_american(x, theta, dp: DimlessParams, res: VanillaResolution) -> np.ndarray:
    dx = x[1] - x[0]
    g = payoff(x)
    vals = np.empty((x.size, theta.size))
    vals[:, 0] = g
    a_l = 1.0 / dx ** 2 - 0.5 * dp.k / dx
    a_d = -2.0 / dx ** 2 - dp.gamma
    a_u = 1.0 / dx ** 2 + 0.5 * dp.k / dx

    def boundary(th):
        hi = max(math.exp(x[-1] - dp.q * th) - math.exp(-dp.gamma * th), math.expm1(x[-1]))
        return 0.0, hi

    def apply_L(v):
        out = np.zeros_like(v)
        out[1:-1] = a_l * v[:-2] + a_d * v[1:-1] + a_u * v[2:]
        return out

    def step(v, th_new, dt, implicit_weight):
        # (I - w dt L) v_new = (I + (1-w) dt L) v
        rhs = v + (1.0 - implicit_weight) * dt * apply_L(v)
        lo, hi = boundary(th_new)
        guess = v.copy()
        guess[0], guess[-1] = lo, hi
        sub = -implicit_weight * dt * a_l
        diag = 1.0 - implicit_weight * dt * a_d
        sup = -implicit_weight * dt * a_u
        new, _ = _psor_step(sub, diag, sup, rhs, guess, g, res.omega,
                            res.psor_tol, res.max_psor_iter)
        new[0], new[-1] = lo, hi
        return new

    # the first step starts from the closed form: the strike kink is not
    # resolvable by the grid at theta ~ one time step
    v = np.maximum(european_call(x, theta[1], dp), g)
    lo, hi = boundary(theta[1])
    v[0], v[-1] = lo, hi
    vals[:, 1] = v
    for j in range(2, theta.size):
        dt = theta[j] - theta[j - 1]
        if j <= 1 + res.rannacher_steps:
            v = step(v, theta[j - 1] + 0.5 * dt, 0.5 * dt, 1.0)
            v = step(v, theta[j], 0.5 * dt, 1.0)
        else:
            v = step(v, theta[j], dt, 0.5)
        vals[:, j] = v
    return vals


@dataclass
class ExerciseBoundary:
    theta: np.ndarray
    x_star: np.ndarray


@dataclass
class VanillaSurface:
    style: EmbeddedStyle
    x: np.ndarray
    theta: np.ndarray
    values: np.ndarray
    params: DimlessParams
    theta_degree: int = 5
    _spline: RectBivariateSpline | None = field(default=None, repr=False)

    def __post_init__(self):
        self.style = EmbeddedStyle(self.style)
        if self.style is EmbeddedStyle.AMERICAN:
            self._spline = RectBivariateSpline(self.x, self.theta, self.values,
                                               kx=3, ky=self.theta_degree, s=0)

    @property
    def x_range(self) -> tuple[float, float]:
        return float(self.x[0]), float(self.x[-1])

    @property
    def theta_max(self) -> float:
        return float(self.theta[-1])

    def theta_breakpoints(self) -> np.ndarray | None:
        """Knots in theta between which the interpolant is a cubic polynomial.

        ``None`` for the closed-form European surface.
        """
        if self._spline is None:
            return None
        return np.unique(self._spline.get_knots()[1])

    def x_breakpoints(self) -> np.ndarray | None:
        """Knots in x between which the interpolant is a cubic polynomial."""
        if self._spline is None:
            return None
        return np.unique(self._spline.get_knots()[0])

    def covers(self, x, theta) -> np.ndarray:
        x = np.asarray(x)
        theta = np.asarray(theta)
        tol = 1e-12 * max(1.0, self.theta_max)
        return ((x >= self.x[0]) & (x <= self.x[-1])
                & (theta >= -tol) & (theta <= self.theta_max + tol))

    def _check(self, x, theta):
        if not np.all(self.covers(x, theta)):
            raise CoverageError(
                f"query outside surface coverage x in [{self.x[0]:.4f}, {self.x[-1]:.4f}], "
                f"theta in [0, {self.theta_max:.6g}]")

    def value_at(self, x, theta):
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        x, theta = np.broadcast_arrays(x, theta)
        self._check(x, theta)
        theta = np.clip(theta, 0.0, self.theta_max)
        if self.style is EmbeddedStyle.EUROPEAN:
            out = np.asarray(european_call(x, theta, self.params), dtype=float)
        else:
            out = self._spline.ev(x, theta)
            at_expiry = theta == 0.0
            if np.any(at_expiry):
                out = np.where(at_expiry, payoff(x), out)
        return out if out.ndim else float(out)

    def value_clamped(self, x, theta):
        """Value with queries clamped into coverage; returns ``(values, n_clamped)``."""
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        inside = self.covers(x, theta)
        xc = np.clip(x, self.x[0], self.x[-1])
        tc = np.clip(theta, 0.0, self.theta_max)
        vals = np.asarray(self.value_at(xc, tc), dtype=float)
        # above the grid the call is deep in the money; extend by the forward value
        above = x > self.x[-1]
        if np.any(above):
            vals = np.where(above, np.maximum(vals + np.exp(x) - np.exp(xc), 0.0), vals)
        return vals, int(np.count_nonzero(~inside))

    def theta_at(self, x, theta):
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        x, theta = np.broadcast_arrays(x, theta)
        self._check(x, theta)
        if self.style is EmbeddedStyle.EUROPEAN:
            out = np.asarray(european_call_theta(x, np.maximum(theta, 1e-300), self.params))
        else:
            out = self._spline.ev(x, theta, dy=1)
        return out if out.ndim else float(out)

    def delta_x_at(self, x, theta):
        """d/dx of the dimensionless value."""
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        x, theta = np.broadcast_arrays(x, theta)
        self._check(x, theta)
        if self.style is EmbeddedStyle.EUROPEAN:
            h = 1e-5
            out = (np.asarray(european_call(x + h, theta, self.params))
                   - np.asarray(european_call(x - h, theta, self.params))) / (2 * h)
        else:
            out = self._spline.ev(x, theta, dx=1)
        return out if out.ndim else float(out)

    def exercise_boundary(self) -> ExerciseBoundary:
        """Smallest grid x at which the stored value sits on the payoff, per theta."""
        g = payoff(self.x)
        xs = np.full(self.theta.size, np.inf)
        for j in range(1, self.theta.size):
            on = (np.abs(self.values[:, j] - g) <= 1e-10) & (self.x > 0)
            if on.any():
                xs[j] = self.x[np.argmax(on)]
        xs[0] = max(0.0, math.log(max(1.0, self.params.gamma / self.params.q))) \
            if self.params.q > 0 else np.inf
        return ExerciseBoundary(self.theta.copy(), xs)

    # -- cache file ---------------------------------------------------------
    def save(self, path) -> None:
        header = {
            "format": SURFACE_FORMAT,
            "version": SURFACE_FORMAT_VERSION,
            "kind": "vanilla_surface",
            "style": self.style.value,
            "theta_degree": self.theta_degree,
            "params": {f: getattr(self.params, f) for f in
                       ("gamma", "q", "k", "x_bar", "J_bar_d", "T_d", "sigma", "K")},
        }
        save_grid(path, header, {"x": self.x, "theta": self.theta, "values": self.values})

    @classmethod
    def load(cls, path) -> "VanillaSurface":
        header, arrays = load_grid(path, kind="vanilla_surface")
        dp = DimlessParams(**header["params"])
        return cls(style=header["style"], x=arrays["x"], theta=arrays["theta"],
                   values=arrays["values"], params=dp,
                   theta_degree=int(header.get("theta_degree", 3)))


def save_grid(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write axes and values as ``.npz`` with a JSON version header."""
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header, sort_keys=True)),
                 **{k: np.asarray(v) for k, v in arrays.items()})


def load_grid(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(Path(path), allow_pickle=False) as data:
        if "__header__" not in data:
            raise ValueError(f"{path}: missing version header")
        header = json.loads(str(data["__header__"]))
        if header.get("format") != SURFACE_FORMAT:
            raise ValueError(f"{path}: unknown format {header.get('format')!r}")
        if header.get("version") != SURFACE_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {header.get('version')}")
        if kind is not None and header.get("kind") != kind:
            raise ValueError(f"{path}: expected {kind}, found {header.get('kind')}")
        arrays = {k: data[k].copy() for k in data.files if k != "__header__"}
    return header, arrays


def coverage_for(dp: DimlessParams, res: VanillaResolution) -> tuple[float, float]:
    w = res.half_width * math.sqrt(dp.T_d)
    return min(dp.x_bar, 0.0) - w, max(dp.x_bar, 0.0) + w


def build_surface(dp: DimlessParams, style=EmbeddedStyle.AMERICAN,
                  resolution: VanillaResolution | None = None,
                  x_range: tuple[float, float] | None = None) -> VanillaSurface:
    """Tabulate the embedded call on ``x_range`` x ``[0, T_d]``."""
    res = resolution or VanillaResolution()
    style = EmbeddedStyle(style)
    lo, hi = x_range or coverage_for(dp, res)
    base_dx = (hi - lo) / (res.n_x - 1)
    theta = np.linspace(0.0, dp.T_d, res.n_theta)

    if style is EmbeddedStyle.EUROPEAN:
        x = np.linspace(lo, hi, res.n_x)
        return VanillaSurface(style, x, theta, european_call(x[:, None], theta[None, :], dp), dp,
                              res.theta_degree)

    x_perp = perpetual_boundary(dp)
    for attempt in range(3):
        n = int(round((hi - lo) / base_dx)) + 1
        x = np.linspace(lo, hi, n)
        vals = _solve_american(x, theta, dp, res)
        if dp.q <= 0:
            return VanillaSurface(style, x, theta, vals, dp, res.theta_degree)
        exercised = np.abs(vals[-2, 1:] - payoff(x[-2])) <= 1e-9
        if exercised.all():
            return VanillaSurface(style, x, theta, vals, dp, res.theta_degree)
        if not math.isfinite(x_perp) or attempt == 2:
            break
        hi = max(hi + 1.0, min(x_perp + 0.5, hi + 6.0))
    raise VanillaSolverError("grid cannot bracket the early-exercise boundary; "
                             "widen the x-range")
