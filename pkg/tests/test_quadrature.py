"""Closed-form battery for the quadrature layer.

The battery is also run by the acceptance gate (oracle self-tests).
"""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from parisian_knockin.quadrature import (QuadratureConfig, QuadratureError, integrate,
                                         integrate_2d_nested, integrate_gaussian_tail,
                                         integrate_sqrt_endpoints, integrate_sqrt_singular)

from .oracles import midpoint_2d, trapezoid

CFG = QuadratureConfig()


def _case_sqrt_1():
    return integrate_sqrt_singular(lambda s: 1 / np.sqrt(1 - s), 0, 1, "upper", CFG), 2.0


def _case_sqrt_2():
    return integrate_sqrt_singular(lambda s: s / np.sqrt(1 - s), 0, 1, "upper", CFG), 4 / 3


def _case_sqrt_decay():
    c, tau = 2.25, 0.045
    got = integrate_sqrt_singular(lambda s: np.exp(-c * (tau - s)) / np.sqrt(tau - s), 0, tau,
                                  "upper", CFG)
    return got, math.sqrt(math.pi / c) * erf(math.sqrt(c * tau))


def _case_gauss_half():
    return integrate_gaussian_tail(lambda z: np.exp(-z * z), 0.0, -1, 0.0, 0.5, CFG), \
        math.sqrt(math.pi) / 2


def _case_gauss_moment():
    return integrate_gaussian_tail(lambda z: z * np.exp(-z * z), 0.0, 1, 0.0, 0.5, CFG), 0.5


def _case_triangle():
    return integrate_2d_nested((0, 1), lambda s: (np.zeros_like(s), s),
                               lambda s, t: np.ones_like(s * t), CFG), 0.5


def _case_separable():
    return integrate_2d_nested((0, 1), lambda s: (np.zeros_like(s), np.ones_like(s)),
                               lambda s, t: np.exp(-(s * s + t * t)), CFG), \
        (math.sqrt(math.pi) / 2 * erf(1.0)) ** 2


BATTERY = {
    "sqrt_singular_unit": _case_sqrt_1,
    "sqrt_singular_linear": _case_sqrt_2,
    "sqrt_singular_decay": _case_sqrt_decay,
    "gaussian_half_line": _case_gauss_half,
    "gaussian_first_moment": _case_gauss_moment,
    "nested_triangle": _case_triangle,
    "nested_separable": _case_separable,
}


def run_battery() -> dict[str, tuple[float, float, float]]:
    """name -> (value, error estimate, exact)."""
    out = {}
    for name, case in BATTERY.items():
        (v, e), exact = case()
        out[name] = (v, e, exact)
    return out


@pytest.mark.parametrize("name", sorted(BATTERY))
def test_battery_case(name):
    (v, e), exact = BATTERY[name]()
    tol = max(CFG.abs_tol, CFG.rel_tol * abs(exact))
    assert abs(v - exact) <= 10 * tol
    # the reported error bounds the true error, up to rounding in the reference itself
    assert abs(v - exact) <= e + 64 * np.finfo(float).eps * max(abs(exact), 1.0)


def test_halving_tolerance_does_not_hurt():
    loose = QuadratureConfig(1e-7, 1e-7)
    tight = QuadratureConfig(5e-8, 5e-8)
    f = lambda s: np.exp(-2.25 * (0.045 - s)) / np.sqrt(0.045 - s)
    exact = math.sqrt(math.pi / 2.25) * erf(math.sqrt(2.25 * 0.045))
    e_loose = abs(integrate_sqrt_singular(f, 0, 0.045, "upper", loose)[0] - exact)
    e_tight = abs(integrate_sqrt_singular(f, 0, 0.045, "upper", tight)[0] - exact)
    assert e_tight <= e_loose + 1e-15


def test_lower_singularity_and_endpoints():
    v, _ = integrate_sqrt_singular(lambda s: 1 / np.sqrt(s), 0, 4, "lower", CFG)
    assert v == pytest.approx(4.0, rel=1e-12)
    v, _ = integrate_sqrt_endpoints(lambda s: 1 / np.sqrt(s * (1 - s)), 0, 1, CFG)
    assert v == pytest.approx(math.pi, rel=1e-12)


def test_f_kernel_inner_integral_against_trapezoid():
    # k=0, gamma=1, l=0.01, x = x_bar = 0 offset by -0.05 so the image pair does not cancel
    l, x = 0.01, -0.05
    kern = lambda z: (np.exp(-(x - z) ** 2 / (4 * l)) - np.exp(-(x + z) ** 2 / (4 * l))) \
        / (2 * math.sqrt(math.pi * l)) * math.exp(-l)
    v, _ = integrate_gaussian_tail(kern, 0.0, -1, x, l, CFG)
    ref = trapezoid(kern, x - 10 * math.sqrt(2 * l), 0.0)
    assert v == pytest.approx(ref, abs=1e-8)


def test_nested_term_against_midpoint_oracle():
    # memory-free nested term with W0 = 1, k = 0, gamma = 1: c = 1
    c, J, tau = 1.0, 0.01, 0.005

    # s = tau - w^2 removes the outer 1/sqrt(tau - s); the integrand in (w, u) is bounded
    def f(w, u):
        return 2.0 * np.exp(-c * w * w) * np.exp(-c * u * u) * c

    v, _ = integrate_2d_nested((0.0, math.sqrt(tau)),
                               lambda w: (np.sqrt(tau - w * w), np.full_like(w, math.sqrt(J))),
                               f, CFG)
    ref = midpoint_2d(lambda w, u: np.where(u >= np.sqrt(tau - w * w), f(w, u), 0.0),
                      0.0, math.sqrt(tau), 0.0, math.sqrt(J), n=2000)
    assert v == pytest.approx(ref, abs=1e-6)


@given(a=st.floats(-3, 3), b=st.floats(-3, 3))
@settings(max_examples=30, deadline=None)
def test_linearity(a, b):
    f = lambda x: np.sin(3 * x)
    g = lambda x: np.exp(-x * x)
    vf, ef = integrate(f, 0, 2, CFG)
    vg, eg = integrate(g, 0, 2, CFG)
    vh, eh = integrate(lambda x: a * f(x) + b * g(x), 0, 2, CFG)
    assert abs(vh - (a * vf + b * vg)) <= 10 * (eh + abs(a) * ef + abs(b) * eg) + 1e-14


def test_budget_exhaustion_raises():
    with pytest.raises(QuadratureError):
        integrate(lambda x: np.sign(np.sin(1e4 * x)), 0, 1,
                  QuadratureConfig(1e-14, 1e-14, max_subdivisions=8))


@pytest.mark.parametrize("kw", [dict(abs_tol=0), dict(rel_tol=-1), dict(gauss_order=1)])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        QuadratureConfig(**kw)
