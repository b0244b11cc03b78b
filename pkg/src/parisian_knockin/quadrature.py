"""Adaptive Gauss-Legendre quadrature for the pricing kernels.

All integrands are vectorized.  The workhorse is :func:`integrate_batch`,
which integrates many integrals at once: the integrand receives a
``(panels, points)`` array of abscissae together with the index of the
integral each panel belongs to, so per-integral parameters can be gathered
with ``params[idx][:, None]``.

Endpoint singularities are removed by substitution before the Gauss rule is
applied; no weighted rules are used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadratureConfig:
    abs_tol: float = 1e-11
    rel_tol: float = 1e-9
    max_subdivisions: int = 4000
    gauss_order: int = 16

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.gauss_order < 2:
            raise ValueError("gauss_order must be at least 2")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be positive")


DEFAULT_CONFIG = QuadratureConfig()


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def _panel_sum(f, lo, hi, idx, nodes, weights):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = mid[:, None] + half[:, None] * nodes[None, :]
    fx = np.asarray(f(x, idx), dtype=float)
    return half * (fx @ weights)


def integrate_batch(f: Callable[[np.ndarray, np.ndarray], np.ndarray],
                    a, b, cfg: QuadratureConfig | None = None,
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Integrate ``f(., i)`` over ``[a[i], b[i]]`` for every ``i``.

    Panels are bisected until the difference between the one-panel and the
    two-half-panel estimates falls below the panel's share of
    ``max(abs_tol, rel_tol * |I_i|)``.  Returns ``(values, error_estimates)``.
    """
    cfg = cfg or DEFAULT_CONFIG
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    a, b = np.broadcast_arrays(a, b)
    m = a.size
    values = np.zeros(m)
    errors = np.zeros(m)
    if m == 0:
        return values, errors
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise QuadratureError("integration limits must be finite")
    nodes, weights = gauss_legendre(cfg.gauss_order)

    idx = np.flatnonzero(b != a)
    lo, hi = a[idx].copy(), b[idx].copy()
    length = np.abs(b - a)
    coarse = _panel_sum(f, lo, hi, idx, nodes, weights)
    panels_used = np.ones(m, dtype=int)
    tol = None
    while idx.size:
        mid = 0.5 * (lo + hi)
        left = _panel_sum(f, lo, mid, idx, nodes, weights)
        right = _panel_sum(f, mid, hi, idx, nodes, weights)
        fine = left + right
        err = np.abs(fine - coarse)
        if not np.all(np.isfinite(fine)):
            raise QuadratureError("non-finite integrand value")
        if tol is None:
            estimate = np.zeros(m)
            np.add.at(estimate, idx, fine)
            tol = np.maximum(cfg.abs_tol, cfg.rel_tol * np.abs(estimate))
        share = np.abs(hi - lo) / np.where(length[idx] > 0, length[idx], 1.0)
        done = (err <= tol[idx] * share) | (np.abs(hi - lo) <= 1e-15 * (1.0 + np.abs(lo)))
        np.add.at(values, idx[done], fine[done])
        np.add.at(errors, idx[done], err[done])
        keep = ~done
        if not keep.any():
            break
        np.add.at(panels_used, idx[keep], 1)
        if panels_used.max() > cfg.max_subdivisions:
            raise QuadratureError(
                f"no convergence within {cfg.max_subdivisions} subdivisions")
        idx_k, lo_k, mid_k, hi_k = idx[keep], lo[keep], mid[keep], hi[keep]
        idx = np.concatenate([idx_k, idx_k])
        lo = np.concatenate([lo_k, mid_k])
        hi = np.concatenate([mid_k, hi_k])
        coarse = np.concatenate([left[keep], right[keep]])
    return values, errors


def integrate(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
              cfg: QuadratureConfig | None = None) -> tuple[float, float]:
    """Adaptive integral of a vectorized scalar function over ``[a, b]``."""
    v, e = integrate_batch(lambda x, _: f(x), [a], [b], cfg)
    return float(v[0]), float(e[0])


def integrate_sqrt_singular(f, a: float, b: float, singular_end: str = "upper",
                            cfg: QuadratureConfig | None = None) -> tuple[float, float]:
    """Integral of ``f`` with an inverse-square-root singularity at one end.

    With ``singular_end="upper"`` the substitution ``s = b - u^2`` turns
    ``f(s) ds`` into the bounded integrand ``2 u f(b - u^2) du``.
    """
    if b <= a:
        return 0.0, 0.0
    L = math.sqrt(b - a)
    if singular_end == "upper":
        g = lambda u: 2.0 * u * f(b - u * u)
    elif singular_end == "lower":
        g = lambda u: 2.0 * u * f(a + u * u)
    else:
        raise ValueError("singular_end must be 'upper' or 'lower'")
    return integrate(g, 0.0, L, cfg)


def integrate_sqrt_endpoints(f, a: float, b: float,
                             cfg: QuadratureConfig | None = None) -> tuple[float, float]:
    """Integral with square-root behaviour (or 1/sqrt singularities) at both ends.

    Uses ``s = a + (b - a) sin^2(phi)``, ``ds = (b - a) sin(2 phi) dphi``.
    """
    if b <= a:
        return 0.0, 0.0
    w = b - a
    g = lambda p: w * np.sin(2.0 * p) * f(a + w * np.sin(p) ** 2)
    return integrate(g, 0.0, 0.5 * math.pi, cfg)


def integrate_gaussian_tail(f, a: float, direction: int = 1, center: float = 0.0,
                            l: float = 0.25, cfg: QuadratureConfig | None = None,
                            ) -> tuple[float, float]:
    """Semi-infinite integral of an integrand dominated by ``exp(-(z-center)^2/(4l))``.

    The range is cut ten standard deviations (``10 sqrt(2 l)``) past the
    centre, or past ``a`` if that lies further out.  The returned error
    includes a bound on the discarded tail.
    """
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    sd = math.sqrt(2.0 * l)
    if direction == 1:
        end = max(a, center) + 10.0 * sd
        v, e = integrate(f, a, end, cfg)
    else:
        end = min(a, center) - 10.0 * sd
        v, e = integrate(f, end, a, cfg)
    fe = abs(float(np.asarray(f(np.array([end])))[0]))
    dist = abs(end - center)
    tail = fe * 2.0 * sd * sd / dist if dist > 0 else fe * sd
    return v, e + tail


def integrate_2d_nested(outer: tuple[float, float],
                        inner: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
                        f: Callable[[np.ndarray, np.ndarray], np.ndarray],
                        cfg: QuadratureConfig | None = None) -> tuple[float, float]:
    """``int_{outer} int_{inner(s)} f(s, t) dt ds`` with s-dependent inner limits.

    ``inner(s)`` maps an array of outer abscissae to ``(lo, hi)`` arrays.
    Each outer node triggers one inner adaptive integration; all inner
    integrals belonging to one outer refinement level are done as a batch.
    """
    cfg = cfg or DEFAULT_CONFIG
    inner_err = [0.0]

    def outer_f(s, _):
        shape = s.shape
        flat = s.ravel()
        lo, hi = inner(flat)
        vals, errs = integrate_batch(lambda t, i: f(flat[i][:, None], t), lo, hi, cfg)
        inner_err[0] = max(inner_err[0], float(errs.max(initial=0.0)))
        return vals.reshape(shape)

    a, b = outer
    v, e = integrate_batch(outer_f, [a], [b], cfg)
    return float(v[0]), float(e[0]) + abs(b - a) * inner_err[0]
