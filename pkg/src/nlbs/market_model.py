"""Market parameters, transaction-cost models, payoffs, and scenarios.

Everything downstream (closed-form pricing, the cost term, the Jacobian
classifier, the ADI solver, the CLI) consumes the validated containers defined
here.  Validation happens eagerly in ``__post_init__`` and every error names
the offending field, so a bad config fails loudly at construction time instead
of producing NaNs three modules later.

All containers are frozen dataclasses; array-valued fields are stored as
read-only ``numpy`` arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any, Mapping, Union

import numpy as np

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, annotation only
    from .adi_solver import GridSpec

__all__ = [
    "ValidationError",
    "CostDerivativeError",
    "MarketParams",
    "ConstantCost",
    "ExponentialCost",
    "SampledCost",
    "CostModel",
    "BestCashOrNothing",
    "Scenario",
    "validate",
]


class ValidationError(ValueError):
    """Input rejected by a container; carries the offending field name."""

    def __init__(self, field_name: str, message: str) -> None:
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


class CostDerivativeError(ValidationError):
    """A cost model without derivative data was asked for its derivative."""


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


# ---------------------------------------------------------------------------
# market
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarketParams:
    """Risk-neutral market description for N lognormal assets.

    Attributes
    ----------
    sigmas:
        Per-asset volatilities, all strictly positive.
    rho:
        Correlation matrix.  A scalar is accepted for the two-asset case and
        expanded to ``[[1, rho], [rho, 1]]``.  Must be symmetric with unit
        diagonal and positive semidefinite (eigenvalue tolerance 1e-10).
    r:
        Risk-free rate (continuously compounded), nonnegative.
    T:
        Maturity in years, strictly positive.
    """

    sigmas: tuple[float, ...]
    rho: Any  # scalar or (N, N) array-like; normalized to ndarray below
    r: float
    T: float

    def __post_init__(self) -> None:
        sigmas = tuple(float(s) for s in np.atleast_1d(self.sigmas))
        if len(sigmas) == 0:
            raise ValidationError("sigmas", "at least one asset is required")
        for i, s in enumerate(sigmas):
            if not math.isfinite(s) or s <= 0.0:
                raise ValidationError("sigmas", f"volatility must be positive, got sigmas[{i}]={s}")
        object.__setattr__(self, "sigmas", sigmas)

        n = len(sigmas)
        rho = self.rho
        if np.ndim(rho) == 0:
            rho_val = float(rho)
            if n != 2:
                raise ValidationError("rho", f"scalar correlation only valid for 2 assets, got {n}")
            rho = np.array([[1.0, rho_val], [rho_val, 1.0]])
        rho = np.asarray(rho, dtype=float)
        if rho.shape != (n, n):
            raise ValidationError("rho", f"expected shape ({n}, {n}), got {rho.shape}")
        if not np.all(np.isfinite(rho)):
            raise ValidationError("rho", "correlation entries must be finite")
        if not np.allclose(rho, rho.T, atol=1e-12):
            raise ValidationError("rho", "correlation matrix must be symmetric")
        if not np.allclose(np.diag(rho), 1.0, atol=1e-12):
            raise ValidationError("rho", "correlation matrix must have unit diagonal")
        if np.any(np.abs(rho) > 1.0 + 1e-12):
            raise ValidationError("rho", "correlation entries must lie in [-1, 1]")
        if np.linalg.eigvalsh(rho).min() < -1e-10:
            raise ValidationError("rho", "correlation matrix not positive semidefinite")
        object.__setattr__(self, "rho", _readonly(rho))

        r = float(self.r)
        if not math.isfinite(r) or r < 0.0:
            raise ValidationError("r", f"risk-free rate must be nonnegative, got r={r}")
        object.__setattr__(self, "r", r)

        T = float(self.T)
        if not math.isfinite(T) or T <= 0.0:
            raise ValidationError("T", f"maturity must be positive, got T={T}")
        object.__setattr__(self, "T", T)

    @property
    def n_assets(self) -> int:
        return len(self.sigmas)

    def diffusion_matrix(self, spots: np.ndarray) -> np.ndarray:
        """Diffusion coefficient matrix A with A[i, j] = sigma_i sigma_j rho_ij S_i S_j."""
        spots = np.asarray(spots, dtype=float)
        if spots.shape != (self.n_assets,):
            raise ValidationError("spots", f"expected shape ({self.n_assets},), got {spots.shape}")
        v = np.asarray(self.sigmas) * spots
        return np.outer(v, v) * self.rho


# ---------------------------------------------------------------------------
# transaction-cost models
# ---------------------------------------------------------------------------
#
# A cost model maps traded volume x >= 0 to the per-unit transaction cost
# C(x) >= 0.  The engine only ever evaluates C (and, for Jacobian work, C')
# at nonnegative arguments.


@dataclass(frozen=True)
class ConstantCost:
    """Proportional cost: C(x) = c0 for all volumes."""

    c0: float

    def __post_init__(self) -> None:
        c0 = float(self.c0)
        if not math.isfinite(c0) or c0 < 0.0:
            raise ValidationError("cost.C0", f"cost level must be nonnegative, got {c0}")
        object.__setattr__(self, "c0", c0)

    def value(self, x: np.ndarray) -> np.ndarray:
        return np.full_like(np.asarray(x, dtype=float), self.c0)

    def derivative(self, x: np.ndarray) -> np.ndarray:
        return np.zeros_like(np.asarray(x, dtype=float))

    def bounds(self) -> tuple[float, float]:
        """(lower, upper) bounds of C over x >= 0."""
        return (self.c0, self.c0)


@dataclass(frozen=True)
class ExponentialCost:
    """Volume-discounted cost: C(x) = c0 * exp(-k x), decreasing in volume."""

    c0: float
    k: float

    def __post_init__(self) -> None:
        c0 = float(self.c0)
        if not math.isfinite(c0) or c0 < 0.0:
            raise ValidationError("cost.C0", f"cost level must be nonnegative, got {c0}")
        k = float(self.k)
        if not math.isfinite(k) or k < 0.0:
            raise ValidationError("cost.k", f"decay rate must be nonnegative, got {k}")
        object.__setattr__(self, "c0", c0)
        object.__setattr__(self, "k", k)

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.c0 * np.exp(-self.k * np.asarray(x, dtype=float))

    def derivative(self, x: np.ndarray) -> np.ndarray:
        return -self.k * self.c0 * np.exp(-self.k * np.asarray(x, dtype=float))

    def bounds(self) -> tuple[float, float]:
        """(lower, upper) bounds of C over x >= 0 (lower = infimum, not attained for k > 0)."""
        return (0.0 if self.k > 0.0 else self.c0, self.c0)


@dataclass(frozen=True)
class SampledCost:
    """Tabulated cost curve with linear interpolation and flat extrapolation.

    Attributes
    ----------
    x:
        Strictly increasing sample volumes (at least two, all >= 0).
    c:
        Cost values at the sample volumes, inside [c_lower, c_upper].
    c_lower, c_upper:
        A-priori bounds on the cost function (0 <= c_lower <= c_upper).
    dc:
        Optional tabulated derivative values at the sample volumes.  Required
        only for Jacobian/classification work; ``derivative`` raises a
        :class:`CostDerivativeError` when absent.
    """

    x: Any
    c: Any
    c_lower: float
    c_upper: float
    dc: Any = None

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        c = np.asarray(self.c, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise ValidationError("cost.x", "need at least two sample volumes")
        if np.any(~np.isfinite(x)) or x[0] < 0.0 or np.any(np.diff(x) <= 0.0):
            raise ValidationError("cost.x", "sample volumes must be finite, nonnegative, strictly increasing")
        if c.shape != x.shape:
            raise ValidationError("cost.c", f"expected shape {x.shape}, got {c.shape}")
        lo, hi = float(self.c_lower), float(self.c_upper)
        if not (math.isfinite(lo) and math.isfinite(hi)) or not (0.0 <= lo <= hi):
            raise ValidationError("cost.c_lower", f"bounds must satisfy 0 <= c_lower <= c_upper, got ({lo}, {hi})")
        if np.any(c < lo - 1e-15) or np.any(c > hi + 1e-15):
            raise ValidationError("cost.c", "sampled values must lie within [c_lower, c_upper]")
        dc = self.dc
        if dc is not None:
            dc = np.asarray(dc, dtype=float)
            if dc.shape != x.shape:
                raise ValidationError("cost.dc", f"expected shape {x.shape}, got {dc.shape}")
            if np.any(~np.isfinite(dc)):
                raise ValidationError("cost.dc", "derivative samples must be finite")
            dc = _readonly(dc)
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "c", _readonly(c))
        object.__setattr__(self, "c_lower", lo)
        object.__setattr__(self, "c_upper", hi)
        object.__setattr__(self, "dc", dc)

    def value(self, x: np.ndarray) -> np.ndarray:
        return np.interp(np.asarray(x, dtype=float), self.x, self.c)

    def derivative(self, x: np.ndarray) -> np.ndarray:
        if self.dc is None:
            raise CostDerivativeError("cost.dc", "cost derivative required but no derivative samples were given")
        return np.interp(np.asarray(x, dtype=float), self.x, self.dc)

    def bounds(self) -> tuple[float, float]:
        return (self.c_lower, self.c_upper)


CostModel = Union[ConstantCost, ExponentialCost, SampledCost]


# ---------------------------------------------------------------------------
# payoff
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BestCashOrNothing:
    """Digital on the best performer: pays K at maturity if max(S1, S2) >= X."""

    K: float
    X: float

    def __post_init__(self) -> None:
        K = float(self.K)
        if not math.isfinite(K) or K <= 0.0:
            raise ValidationError("payoff.K", f"cash amount must be positive, got K={K}")
        X = float(self.X)
        if not math.isfinite(X) or X <= 0.0:
            raise ValidationError("payoff.X", f"threshold must be positive, got X={X}")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "X", X)

    def value(self, s1: np.ndarray, s2: np.ndarray) -> np.ndarray:
        s1 = np.asarray(s1, dtype=float)
        s2 = np.asarray(s2, dtype=float)
        return np.where(np.maximum(s1, s2) >= self.X, self.K, 0.0)


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """A complete pricing problem: market + cost model + payoff + grid.

    ``dt_tc`` is the rebalancing interval of the hedger (e.g. 1/261 for daily
    rebalancing), distinct from the PDE time step.  ``grid`` defaults to log
    coordinates spanning ln(X) +- (3 sigma_max sqrt(T) + 1) with 100 space
    cells and 100 time steps.
    """

    market: MarketParams
    cost: CostModel
    payoff: BestCashOrNothing
    dt_tc: float
    grid: "GridSpec | None" = None

    def __post_init__(self) -> None:
        if not isinstance(self.market, MarketParams):
            raise ValidationError("market", f"expected MarketParams, got {type(self.market).__name__}")
        if not isinstance(self.cost, (ConstantCost, ExponentialCost, SampledCost)):
            raise ValidationError("cost", f"unknown cost model type {type(self.cost).__name__}")
        if not isinstance(self.payoff, BestCashOrNothing):
            raise ValidationError("payoff", f"expected BestCashOrNothing, got {type(self.payoff).__name__}")
        if self.market.n_assets != 2:
            raise ValidationError("market.sigmas", "the pricing engine is two-asset; provide exactly 2 volatilities")
        dt = float(self.dt_tc)
        if not math.isfinite(dt) or dt <= 0.0:
            raise ValidationError("dt_tc", f"rebalancing interval must be positive, got {dt}")
        object.__setattr__(self, "dt_tc", dt)

        from .adi_solver import GridSpec, default_grid  # deferred: avoids import cycle

        grid = self.grid
        if grid is None:
            grid = default_grid(self.market, self.payoff)
        elif not isinstance(grid, GridSpec):
            raise ValidationError("grid", f"expected GridSpec, got {type(grid).__name__}")
        object.__setattr__(self, "grid", grid)

    def with_dt(self, dt_tc: float) -> "Scenario":
        """Copy of this scenario with a different rebalancing interval."""
        return replace(self, dt_tc=dt_tc)

    def with_cost(self, cost: CostModel) -> "Scenario":
        return replace(self, cost=cost)

    def with_grid(self, grid: "GridSpec") -> "Scenario":
        return replace(self, grid=grid)


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

_COST_TYPES = {"constant", "exponential", "sampled"}


def _require(section: Mapping[str, Any], key: str, qualified: str) -> Any:
    value = section.get(key)
    if value is None:
        raise ValidationError(qualified, "missing required field")
    return value


def _build_cost(section: Mapping[str, Any]) -> CostModel:
    kind = str(section.get("type", "")).lower()
    if kind == "constant":
        c0 = section.get("C0", section.get("c0"))
        if c0 is None:
            raise ValidationError("cost.C0", "missing required field")
        return ConstantCost(c0=c0)
    if kind == "exponential":
        c0 = section.get("C0", section.get("c0"))
        if c0 is None:
            raise ValidationError("cost.C0", "missing required field")
        return ExponentialCost(c0=c0, k=_require(section, "k", "cost.k"))
    if kind == "sampled":
        return SampledCost(
            x=_require(section, "x", "cost.x"),
            c=_require(section, "c", "cost.c"),
            c_lower=section.get("c_lower", 0.0),
            c_upper=_require(section, "c_upper", "cost.c_upper"),
            dc=section.get("dc"),
        )
    raise ValidationError("cost.type", f"expected one of {sorted(_COST_TYPES)}, got {kind!r}")


def validate(raw: "Mapping[str, Any] | Scenario") -> Scenario:
    """Build a validated :class:`Scenario` from raw config fields.

    Accepts either a mapping with sections ``market``, ``cost``, ``payoff``,
    ``dt_tc`` and optional ``grid`` (the JSON config layout used by the CLI)
    or an already-built :class:`Scenario`.  Idempotent:
    ``validate(validate(x)) == validate(x)``.
    """
    if isinstance(raw, Scenario):
        return Scenario(market=raw.market, cost=raw.cost, payoff=raw.payoff, dt_tc=raw.dt_tc, grid=raw.grid)
    if not isinstance(raw, Mapping):
        raise ValidationError("scenario", f"expected a mapping or Scenario, got {type(raw).__name__}")

    for section in ("market", "cost", "payoff"):
        if section not in raw:
            raise ValidationError(section, "missing required section")
        if not isinstance(raw[section], Mapping):
            raise ValidationError(section, f"expected a mapping, got {type(raw[section]).__name__}")
    if "dt_tc" not in raw:
        raise ValidationError("dt_tc", "missing required field")

    m = raw["market"]
    market = MarketParams(
        sigmas=tuple(_require(m, "sigmas", "market.sigmas")),
        rho=_require(m, "rho", "market.rho"),
        r=_require(m, "r", "market.r"),
        T=_require(m, "T", "market.T"),
    )
    cost = _build_cost(raw["cost"])

    p = raw["payoff"]
    kind = str(p.get("type", "best_cash_or_nothing")).lower()
    if kind not in ("best_cash_or_nothing", "best-cash-or-nothing"):
        raise ValidationError("payoff.type", f"unsupported payoff type {kind!r}")
    payoff = BestCashOrNothing(K=_require(p, "K", "payoff.K"), X=_require(p, "X", "payoff.X"))

    grid = None
    if raw.get("grid") is not None:
        from .adi_solver import GridSpec

        g = raw["grid"]
        if not isinstance(g, Mapping):
            raise ValidationError("grid", f"expected a mapping, got {type(g).__name__}")
        grid = GridSpec(
            a=g.get("a"),
            b=g.get("b"),
            nx=g.get("nx", 100),
            nt=g.get("nt", 100),
            coord=g.get("coord", "log"),
        )

    return Scenario(market=market, cost=cost, payoff=payoff, dt_tc=raw["dt_tc"], grid=grid)
