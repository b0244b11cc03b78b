"""Parisian down-and-in call pricing by the moving-window semi-analytic method,
with finite-difference and Monte Carlo verification oracles."""

from .model import (Degeneracy, EmbeddedStyle, MarketParams, ParisianContract, Region,
                    StatePoint, ValidationError)
from .montecarlo import McConfig, McEstimate, simulate_price, simulate_price_extrapolated
from .pde import PdeResolution, price_at, solve_coupled
from .pricer import ParisianPricer, PricerConfig, PriceResult, delta, price, price_surface

__all__ = [
    "Degeneracy", "EmbeddedStyle", "MarketParams", "ParisianContract", "Region", "StatePoint",
    "ValidationError", "McConfig", "McEstimate", "simulate_price",
    "simulate_price_extrapolated", "PdeResolution", "price_at", "solve_coupled",
    "ParisianPricer", "PricerConfig", "PriceResult", "delta", "price", "price_surface",
]
