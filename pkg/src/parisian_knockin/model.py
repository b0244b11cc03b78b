"""Contract inputs, nondimensionalization and slide geometry.

Conventions used throughout the package:

* log-moneyness ``x = ln(S/K)``; prices are reported in units of ``K``;
* ``gamma = 2r/sigma^2``, ``q = 2D/sigma^2``, ``k = gamma - q - 1``;
* dimensionless time runs backwards from ``T - J_bar``:
  ``tau = (T - J_bar - t) sigma^2 / 2``;
* the embedded option is queried by its own time to expiry
  ``theta = (T - t) sigma^2 / 2``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field


class EmbeddedStyle(str, enum.Enum):
    AMERICAN = "american"
    EUROPEAN = "european"


class Degeneracy(str, enum.Enum):
    NON_DEGENERATE = "non_degenerate"
    WORTHLESS = "worthless"
    ONE_TOUCH_LIMIT = "one_touch_limit"
    VANILLA_AMERICAN_LIMIT = "vanilla_american_limit"


class Region(str, enum.Enum):
    I = "I"
    II = "II"
    KNOCKED_IN = "knocked_in"
    DEGENERATE = "degenerate"


class ValidationError(ValueError):
    """Raised when inputs violate a documented invariant."""


@dataclass(frozen=True)
class MarketParams:
    r: float
    D: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValidationError(f"sigma must be positive, got {self.sigma}")
        if self.r < 0:
            raise ValidationError(f"r must be non-negative, got {self.r}")
        if self.D < 0:
            raise ValidationError(f"D must be non-negative, got {self.D}")


@dataclass(frozen=True)
class ParisianContract:
    K: float
    S_bar: float
    J_bar: float
    T: float
    embedded_style: EmbeddedStyle = EmbeddedStyle.AMERICAN

    def __post_init__(self):
        if not self.K > 0:
            raise ValidationError(f"K must be positive, got {self.K}")
        if not self.S_bar > 0:
            raise ValidationError(f"S_bar must be positive, got {self.S_bar}")
        if not self.T > 0:
            raise ValidationError(f"T must be positive, got {self.T}")
        if self.J_bar < 0:
            raise ValidationError(f"J_bar must be non-negative, got {self.J_bar}")
        object.__setattr__(self, "embedded_style", EmbeddedStyle(self.embedded_style))


@dataclass(frozen=True)
class StatePoint:
    """Spot ``S``, calendar time ``t`` and elapsed time below the barrier ``J``."""

    S: float
    t: float
    J: float = 0.0

    def validate(self, c: ParisianContract) -> None:
        if self.S < 0:
            raise ValidationError(f"S must be non-negative, got {self.S}")
        if not 0 <= self.t <= c.T:
            raise ValidationError(f"t must lie in [0, T={c.T}], got {self.t}")
        if self.J < 0:
            raise ValidationError(f"J must be non-negative, got {self.J}")
        if self.J > c.J_bar:
            raise ValidationError(
                f"J={self.J} exceeds J_bar={c.J_bar}: the option is already "
                "knocked in, price the embedded call directly")
        if self.J > 0 and self.S > c.S_bar:
            raise ValidationError("a running barrier clock requires S <= S_bar")


@dataclass(frozen=True)
class DimlessParams:
    gamma: float
    q: float
    k: float
    x_bar: float
    J_bar_d: float
    T_d: float
    # retained so the mapping can be inverted exactly
    sigma: float = field(repr=False)
    K: float = field(repr=False)

    @property
    def c(self) -> float:
        """Decay constant ``k^2/4 + gamma`` of the heat-kernel transform."""
        return 0.25 * self.k * self.k + self.gamma

    @property
    def horizon(self) -> float:
        """Length of the region-I time axis, ``T_d - J_bar_d``."""
        return self.T_d - self.J_bar_d


@dataclass(frozen=True)
class DimlessState:
    x: float
    tau: float
    l: float | None = None
    region: Region = Region.I


@dataclass(frozen=True)
class DegeneracyThresholds:
    j_eps: float = 1e-10
    s_eps_rel: float = 1e-10
    s_max_rel: float = 100.0


def to_dimensionless(mp: MarketParams, c: ParisianContract) -> DimlessParams:
    if not mp.sigma > 0:
        raise ValidationError("sigma must be positive")
    half_var = 0.5 * mp.sigma * mp.sigma
    gamma = mp.r / half_var
    q = mp.D / half_var
    return DimlessParams(
        gamma=gamma,
        q=q,
        k=gamma - q - 1.0,
        x_bar=math.log(c.S_bar / c.K),
        J_bar_d=half_var * c.J_bar,
        T_d=half_var * c.T,
        sigma=mp.sigma,
        K=c.K,
    )


def from_dimensionless(dp: DimlessParams,
                       embedded_style: EmbeddedStyle = EmbeddedStyle.AMERICAN,
                       ) -> tuple[MarketParams, ParisianContract]:
    half_var = 0.5 * dp.sigma * dp.sigma
    mp = MarketParams(r=dp.gamma * half_var, D=dp.q * half_var, sigma=dp.sigma)
    c = ParisianContract(K=dp.K, S_bar=dp.K * math.exp(dp.x_bar),
                         J_bar=dp.J_bar_d / half_var, T=dp.T_d / half_var,
                         embedded_style=embedded_style)
    return mp, c


def tau_of(t: float, c: ParisianContract, sigma: float) -> float:
    return (c.T - c.J_bar - t) * 0.5 * sigma * sigma


def state_to_slide(sp: StatePoint, c: ParisianContract, dp: DimlessParams) -> DimlessState:
    """Map a state to the coordinates used by the pricing formulas.

    Region-II states ``(S, t, J)`` lie on the slide that left the barrier at
    ``t - J``; ``tau`` is evaluated at that base time and ``l = sigma^2 J / 2``
    is the clock already elapsed along the slide.
    """
    sp.validate(c)
    if sp.J > c.J_bar:
        raise ValidationError("option already knocked in")
    x = math.log(sp.S / c.K) if sp.S > 0 else -math.inf
    if sp.S > c.S_bar:
        return DimlessState(x=x, tau=tau_of(sp.t, c, dp.sigma), region=Region.I)
    half_var = 0.5 * dp.sigma * dp.sigma
    return DimlessState(x=x, tau=tau_of(sp.t - sp.J, c, dp.sigma),
                        l=half_var * sp.J, region=Region.II)


def classify(c: ParisianContract,
             thresholds: DegeneracyThresholds = DegeneracyThresholds()) -> Degeneracy:
    # thresholds act on S_bar / K with a rounding slack, so a barrier set
    # exactly at a threshold classifies the same at any currency scale
    ratio = c.S_bar / c.K
    slack = 1e-12
    if c.J_bar >= c.T or ratio <= thresholds.s_eps_rel * (1 + slack):
        return Degeneracy.WORTHLESS
    if c.J_bar <= thresholds.j_eps:
        return Degeneracy.ONE_TOUCH_LIMIT
    if ratio >= thresholds.s_max_rel * (1 - slack):
        return Degeneracy.VANILLA_AMERICAN_LIMIT
    return Degeneracy.NON_DEGENERATE


DEGENERACY_MESSAGES = {
    Degeneracy.WORTHLESS: "the knock-in clock cannot complete before expiry (or the barrier "
                          "is unreachable): the option values nothing",
    Degeneracy.ONE_TOUCH_LIMIT: "J_bar -> 0: the contract is a one-touch down-and-in call, "
                                "which this engine does not price",
    Degeneracy.VANILLA_AMERICAN_LIMIT: "S_bar -> infinity with J_bar < T: knock-in is certain, "
                                       "the price is that of the associated American call",
}
