"""Green-function kernels of the two pricing regions.

With ``c = k^2/4 + gamma`` and ``a = x - x_bar``, the half-line boundary
kernel is

    g1(x, tau) = a / (2 sqrt(pi) tau^{3/2}) exp(-c tau - a^2/(4 tau) - k a / 2)

and ``g2 = -g1``.  ``F`` and ``G`` are method-of-images convolutions of the
initial data on the lower and upper half-lines respectively.

Potentials of the form ``int W(s) g(x, t - s) ds`` are evaluated window by
window.  On each window segment the lower half is integrated in the window's
own variable ``v = sqrt(s - start)`` (where ``W`` is smooth) and the upper
half in ``u = a / (2 sqrt(t - s))`` which turns the approach to the delta
limit into a Gaussian tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np

from .model import DimlessParams
from .quadrature import DEFAULT_CONFIG, QuadratureConfig, integrate_batch

if TYPE_CHECKING:
    from .vanilla import VanillaSurface
    from .window_solver import WindowSet

SQRT_PI = math.sqrt(math.pi)
# exp(-W_CUT^2) is below double precision relative to O(1) terms
W_CUT = 8.0


@dataclass(frozen=True)
class KernelParams:
    k: float
    gamma: float
    x_bar: float
    J_bar_d: float

    def __post_init__(self):
        if not self.J_bar_d > 0:
            raise ValueError("J_bar_d must be positive")

    @property
    def c(self) -> float:
        return 0.25 * self.k * self.k + self.gamma

    @classmethod
    def from_dimless(cls, dp: DimlessParams) -> "KernelParams":
        return cls(k=dp.k, gamma=dp.gamma, x_bar=dp.x_bar, J_bar_d=dp.J_bar_d)


def g1(x, tau, kp: KernelParams):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("g1 requires tau > 0")
    a = np.asarray(x, dtype=float) - kp.x_bar
    return a / (2.0 * SQRT_PI * tau ** 1.5) * np.exp(-kp.c * tau - a * a / (4.0 * tau) - 0.5 * kp.k * a)


def g2(x, tau, kp: KernelParams):
    return -g1(x, tau, kp)


def split_at(lo, hi, breaks: np.ndarray | None):
    """Cut each ``[lo_i, hi_i]`` at the interior ``breaks``.

    Returns ``(owner, a, b)`` describing the pieces; integrals over the pieces
    are summed back with ``np.add.at(total, owner, pieces)``.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if breaks is None or breaks.size == 0:
        return np.arange(lo.size), lo, hi
    owners, starts, ends = [], [], []
    for i, (a, b) in enumerate(zip(lo, hi)):
        lo_i, hi_i = min(a, b), max(a, b)
        inner = breaks[(breaks > lo_i) & (breaks < hi_i)]
        pts = np.concatenate([[lo_i], inner, [hi_i]])
        if a > b:
            pts = pts[::-1]
        owners.append(np.full(pts.size - 1, i))
        starts.append(pts[:-1])
        ends.append(pts[1:])
    return np.concatenate(owners), np.concatenate(starts), np.concatenate(ends)


def _w_breaks(surface: "VanillaSurface", origin: float, scale: float, sign: float):
    """Surface x-knots mapped to ``w`` with ``z = origin + sign * scale * w``."""
    xb = surface.x_breakpoints()
    if xb is None:
        return None
    return np.sort(sign * (xb - origin) / scale)


def F(x, l, tau, surface: "VanillaSurface", kp: KernelParams,
      cfg: QuadratureConfig | None = None, return_error: bool = False):
    """Image-method convolution of ``C_A(., tau)`` over ``(-inf, x_bar]``.

    Vectorized over ``x`` (and broadcast ``l``, ``tau``); requires ``x <= x_bar``
    and ``l > 0``.  The integration variable is ``z = x - 2 sqrt(l) w``.
    """
    x, l, tau = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (x, l, tau))
    x, l, tau = np.broadcast_arrays(x, l, tau)
    shape = x.shape
    x, l, tau = x.ravel(), l.ravel(), tau.ravel()
    if np.any(l <= 0):
        raise ValueError("F requires l > 0")
    if np.any(x > kp.x_bar + 1e-14):
        raise ValueError("F is defined for x <= x_bar")
    sl = np.sqrt(l)
    z_lo = surface.x[0]
    w_lo = (x - kp.x_bar) / (2.0 * sl)          # z = x_bar
    w_hi = np.minimum(np.maximum(w_lo, 0.0) + W_CUT, (x - z_lo) / (2.0 * sl))
    w_hi = np.maximum(w_hi, w_lo)
    k, c, xb = kp.k, kp.c, kp.x_bar

    # integrate in z so the surface's x-knots are common breakpoints
    z_top = np.full(x.size, xb)
    z_bot = x - 2.0 * sl * w_hi
    owner, za, zb = split_at(z_bot, z_top, surface.x_breakpoints())

    def f(z, j):
        i = owner[j]
        xi, si, li, ti = x[i][:, None], sl[i][:, None], l[i][:, None], tau[i][:, None]
        w = (xi - z) / (2.0 * si)
        image = (xi + z - 2.0 * xb) ** 2 / (4.0 * li)
        kern = np.exp(-0.5 * k * (xi - z) - c * li) * (np.exp(-w * w) - np.exp(-image))
        return kern / (2.0 * SQRT_PI * si) * surface.value_at(z, np.broadcast_to(ti, z.shape))

    pv, pe = integrate_batch(f, za, zb, cfg)
    vals, errs = np.zeros(x.size), np.zeros(x.size)
    np.add.at(vals, owner, pv)
    np.add.at(errs, owner, pe)
    vals = vals.reshape(shape)
    if return_error:
        return vals, errs.reshape(shape)
    return vals


def F_barrier_flux(theta, l: float, surface: "VanillaSurface", kp: KernelParams,
                   cfg: QuadratureConfig | None = None):
    """``dF/dx`` at ``x = x_bar`` for slide length ``l``, vectorized over ``theta``.

        dF/dx = -int (x_bar - z) / (2 sqrt(pi) l^{3/2})
                     exp(-k (x_bar - z)/2 - c l - (x_bar - z)^2/(4 l)) C_A(z, theta) dz
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    shape = theta.shape
    th = theta.ravel()
    sl = math.sqrt(l)
    k, c, xb = kp.k, kp.c, kp.x_bar
    w_hi = min(W_CUT, (xb - surface.x[0]) / (2.0 * sl))

    owner, wa, wb = split_at(np.zeros(th.size), np.full(th.size, w_hi),
                             _w_breaks(surface, xb, 2.0 * sl, -1.0))

    def f(w, j):
        z = xb - 2.0 * sl * w
        ca = surface.value_at(z, np.broadcast_to(th[owner[j]][:, None], z.shape))
        return w * np.exp(-w * w - k * sl * w) * ca

    pv, _ = integrate_batch(f, wa, wb, cfg)
    vals = np.zeros(th.size)
    np.add.at(vals, owner, pv)
    return (-2.0 * math.exp(-c * l) / (SQRT_PI * sl) * vals).reshape(shape)


class PiecewiseChebyshev:
    """Piecewise Chebyshev interpolant of a vectorized function.

    With a piecewise-cubic ``f`` and ``degree >= 3`` on its own breakpoints
    the representation is exact up to rounding.
    """

    def __init__(self, breaks, degree: int, f: Callable[[np.ndarray], np.ndarray]):
        self.breaks = np.asarray(breaks, dtype=float)
        if self.breaks.size < 2 or np.any(np.diff(self.breaks) <= 0):
            raise ValueError("breaks must be strictly increasing with at least two entries")
        nodes = np.cos(np.pi * (2 * np.arange(degree + 1) + 1) / (2 * (degree + 1)))
        self.mid = 0.5 * (self.breaks[1:] + self.breaks[:-1])
        self.half = 0.5 * np.diff(self.breaks)
        pts = self.mid[:, None] + self.half[:, None] * nodes[None, :]
        vals = np.asarray(f(pts.ravel()), dtype=float).reshape(pts.shape)
        vander = np.polynomial.chebyshev.chebvander(nodes, degree)
        self.coef = np.linalg.solve(vander, vals.T)      # (degree + 1, pieces)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        i = np.clip(np.searchsorted(self.breaks, flat, side="right") - 1, 0, self.mid.size - 1)
        u = (flat - self.mid[i]) / self.half[i]
        out = np.polynomial.chebyshev.chebval(u, self.coef[:, i], tensor=False)
        return out.reshape(t.shape)


def knock_in_flux_table(surface: "VanillaSurface", kp: KernelParams, theta_max: float,
                        cfg: QuadratureConfig | None = None,
                        smooth_spacing: float | None = None) -> PiecewiseChebyshev:
    """Tabulate ``Q(theta) = -dF/dx(x_bar, J_bar; theta) / (2 sqrt(pi))`` on ``[0, theta_max]``.

    A spline surface makes ``Q`` a polynomial of the surface's theta degree
    between its theta knots, which the pieces reproduce exactly; a closed-form
    surface is covered by degree-7 pieces of width ``smooth_spacing``.
    """
    J = kp.J_bar_d
    knots = surface.theta_breakpoints()
    if knots is not None:
        breaks = knots[knots < theta_max]
        nxt = knots[knots >= theta_max]
        breaks = np.append(breaks, nxt[0] if nxt.size else theta_max)
        degree = max(surface.theta_degree, 3)
    else:
        h = smooth_spacing or J / 16.0
        breaks = np.linspace(0.0, theta_max, max(int(math.ceil(theta_max / h)), 1) + 1)
        degree = 7
    return PiecewiseChebyshev(
        breaks, degree, lambda th: -F_barrier_flux(th, J, surface, kp, cfg) / (2.0 * SQRT_PI))


def G(x, tau_t, f_n: Callable[[np.ndarray], np.ndarray], kp: KernelParams,
      cfg: QuadratureConfig | None = None, return_error: bool = False):
    """Image-method convolution of ``f_n`` over ``[x_bar, inf)`` at time ``tau_t``.

    Vectorized over ``x >= x_bar``; ``z = x + 2 sqrt(tau_t) w``.
    """
    x, tt = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (x, tau_t))
    x, tt = np.broadcast_arrays(x, tt)
    shape = x.shape
    x, tt = x.ravel(), tt.ravel()
    if np.any(tt <= 0):
        raise ValueError("G requires tau_t > 0")
    if np.any(x < kp.x_bar - 1e-14):
        raise ValueError("G is defined for x >= x_bar")
    st = np.sqrt(tt)
    w_lo = np.maximum((kp.x_bar - x) / (2.0 * st), -W_CUT)
    w_hi = np.maximum(w_lo, 0.0) + W_CUT
    k, c, xb = kp.k, kp.c, kp.x_bar

    def f(w, i):
        xi, si, ti = x[i][:, None], st[i][:, None], tt[i][:, None]
        z = xi + 2.0 * si * w
        image = (xi + z - 2.0 * xb) ** 2 / (4.0 * ti)
        kern = np.exp(0.5 * k * (z - xi)) * (np.exp(-w * w) - np.exp(-image))
        return kern * f_n(z)

    vals, errs = integrate_batch(f, w_lo, w_hi, cfg)
    scale = np.exp(-c * tt) / SQRT_PI
    if return_error:
        return (scale * vals).reshape(shape), (scale * errs).reshape(shape)
    return (scale * vals).reshape(shape)


def gaussian_smoothing(tau_t, f_n: Callable[[np.ndarray], np.ndarray], kp: KernelParams,
                       cfg: QuadratureConfig | None = None):
    """Direct-Gaussian (no image) convolution of ``f_n`` evaluated at ``x_bar``.

        int_{x_bar}^inf exp(-k (x_bar - z)/2 - c tau_t) / (2 sqrt(pi tau_t))
                        exp(-(x_bar - z)^2 / (4 tau_t)) f_n(z) dz

    Tends to ``f_n(x_bar) / 2`` as ``tau_t -> 0``.
    """
    tt = np.atleast_1d(np.asarray(tau_t, dtype=float))
    out = np.empty(tt.size)
    zero = tt <= 0
    if np.any(zero):
        out[zero] = 0.5 * float(np.asarray(f_n(np.array([kp.x_bar])))[0])
    pos = np.flatnonzero(~zero)
    if pos.size:
        st = np.sqrt(tt[pos])
        k, xb = kp.k, kp.x_bar

        def f(w, i):
            si = st[i][:, None]
            return np.exp(-w * w + k * si * w) * f_n(xb + 2.0 * si * w)

        vals, _ = integrate_batch(f, np.zeros(pos.size), np.full(pos.size, W_CUT), cfg)
        out[pos] = np.exp(-kp.c * tt[pos]) / SQRT_PI * vals
    return out


def boundary_potential(a, t_end, t_start, windows: "WindowSet", kp: KernelParams,
                       k_sign: float = 1.0, cfg: QuadratureConfig | None = None,
                       return_error: bool = False):
    """``int_{t_start}^{t_end} W(s) a/(2 sqrt(pi) (t_end-s)^{3/2})
    exp(-c (t_end-s) - a^2/(4 (t_end-s)) - k_sign k a/2) ds`` for ``a >= 0``.

    ``k_sign = +1`` gives the region-I potential with ``g1`` (``a = x - x_bar``);
    ``k_sign = -1`` the region-II potential with ``g2`` (``a = x_bar - x``).
    """
    cfg = cfg or DEFAULT_CONFIG
    a, t_end, t_start = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (a, t_end, t_start))
    a, t_end, t_start = np.broadcast_arrays(a, t_end, t_start)
    shape = a.shape
    a, t_end, t_start = a.ravel().copy(), t_end.ravel(), t_start.ravel()
    if np.any(a < 0):
        raise ValueError("boundary_potential requires a >= 0")
    out = np.zeros(a.size)
    err = np.zeros(a.size)
    live = t_end > t_start
    at_barrier = live & (a == 0)
    if np.any(at_barrier):
        out[at_barrier] = windows.value(t_end[at_barrier])
    live &= a > 0
    c, k = kp.c, kp.k
    for win in windows.all_windows():
        if win.is_zero:
            continue
        p = np.maximum(t_start, win.start)
        q = np.minimum(t_end, win.end)
        sel = np.flatnonzero(live & (q > p))
        if sel.size == 0:
            continue
        ai, te, pi_, qi = a[sel], t_end[sel], p[sel], q[sel]
        mid = 0.5 * (pi_ + qi)
        drift = np.exp(-0.5 * k_sign * k * ai)

        # lower half in the window variable v
        v_lo = np.sqrt(np.maximum(pi_ - win.start, 0.0))
        v_hi = np.sqrt(np.maximum(mid - win.start, 0.0))

        def f_low(v, i, ai=ai, te=te):
            s = win.start + v * v
            dt = te[i][:, None] - s
            aa = ai[i][:, None]
            g = aa / (2.0 * SQRT_PI * dt ** 1.5) * np.exp(-c * dt - aa * aa / (4.0 * dt))
            return 2.0 * v * g * win.value_v(v)

        low, e_low = integrate_batch(f_low, v_lo, v_hi, cfg)

        # upper half in u = a / (2 sqrt(t_end - s))
        u_lo = ai / (2.0 * np.sqrt(te - mid))
        gap = te - qi
        with np.errstate(divide="ignore"):
            u_hi = np.where(gap > 0, ai / (2.0 * np.sqrt(np.where(gap > 0, gap, 1.0))), np.inf)
        u_hi = np.minimum(u_hi, u_lo + W_CUT)
        u_hi = np.maximum(u_hi, u_lo)

        def f_up(u, i, ai=ai, te=te):
            aa = ai[i][:, None]
            dt = aa * aa / (4.0 * u * u)
            s = te[i][:, None] - dt
            return 2.0 / SQRT_PI * np.exp(-u * u - c * dt) * win.value_global(s)

        up, e_up = integrate_batch(f_up, u_lo, u_hi, cfg)
        out[sel] += drift * (low + up)
        err[sel] += drift * (e_low + e_up)
    if return_error:
        return out.reshape(shape), err.reshape(shape)
    return out.reshape(shape)


def f_n(x, n: int, windows: "WindowSet", kp: KernelParams,
        cfg: QuadratureConfig | None = None):
    """Region-I price at the start of window ``n + 1``: ``V1(x, n J_bar)``.

    Defined for ``x >= x_bar``; at the barrier it equals ``W_n(n J_bar)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < kp.x_bar - 1e-14):
        raise ValueError("f_n is defined for x >= x_bar")
    t_end = n * kp.J_bar_d
    if n == 0:
        return np.zeros_like(x)
    return boundary_potential(np.maximum(x - kp.x_bar, 0.0), t_end, 0.0, windows, kp, 1.0, cfg)


class InitialProfile:
    """``f_n`` tabulated by Chebyshev interpolation near the barrier.

    Inside ``[x_bar, x_bar + width]`` the interpolant is used; outside, the
    potential is evaluated directly.
    """

    def __init__(self, n: int, windows: "WindowSet", kp: KernelParams,
                 width: float, degree: int = 64, cfg: QuadratureConfig | None = None):
        self.n, self.windows, self.kp, self.cfg = n, windows, kp, cfg
        self.lo, self.hi = kp.x_bar, kp.x_bar + width
        if n == 0:
            self._cheb = None
        else:
            self._cheb = np.polynomial.chebyshev.Chebyshev.interpolate(
                lambda z: f_n(z, n, windows, kp, cfg), degree, domain=[self.lo, self.hi])

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self._cheb is None:
            return np.zeros_like(z)
        flat = z.ravel()
        out = np.empty(flat.size)
        inside = (flat >= self.lo) & (flat <= self.hi)
        out[inside] = self._cheb(flat[inside])
        if not inside.all():
            out[~inside] = f_n(flat[~inside], self.n, self.windows, self.kp, self.cfg)
        return out.reshape(z.shape)
