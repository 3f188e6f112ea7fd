"""Well-posedness diagnostics for the nonlinear pricing operator.

The nonlinear operator F(B) = -tr(A B)/2 + G(B) (B the price Hessian, A the
diffusion matrix, G the transaction-cost term) stays parabolic only while its
matrix derivative D = dF/dB is negative definite.  This module evaluates that
derivative, classifies it, and scans whole solution surfaces node by node.

Two forms of the derivative are provided:

* ``form="exact"`` - the literal entrywise derivative.  Because
  dTheta_i/dB_lm = delta_il (A B)_mi + delta_im (B A)_il, each asset
  contributes a rank-two matrix R_i supported on row/column i, and
  D = -A/2 + sum_i g_i R_i with g_i = dG/dTheta_i.  This is what central
  finite differences of F converge to.
* ``form="aggregate"`` (default) - the per-asset sensitivities are summed
  first and multiplied by (A B + B A) = sum_i R_i, i.e.
  D = -A/2 + (sum_i g_i) (A B + B A).  The two forms coincide for a single
  asset.  With several assets the aggregate applies every asset's
  sensitivity to the whole anticommutator instead of to its own row/column
  slice, so it overweights the cost contribution even when the g_i are
  equal (in the fully symmetric two-asset case the cost part is exactly
  doubled); the test suite measures the gap against finite differences.

The scalar sensitivity is

    g_i = (2 S_i / sqrt(dt)) sqrt(2/pi)
          [ I1_i / (2 sqrt(Theta_i)) + sqrt(dt/2) I2_i ],

    I1_i = int_0^inf C(h_i y) y e^{-y^2} dy,
    I2_i = int_0^inf C'(h_i y) y^2 e^{-y^2} dy,    h_i = sqrt(2 dt Theta_i),

with closed forms for constant cost (I1 = c0/2, I2 = 0) and adaptive
quadrature otherwise.  Theta_i -> 0 makes g_i blow up; such nodes are
reported as degenerate rather than classified.

For a single asset under constant cost the sign of D reduces to the classical
Leland condition: D < 0 (for positive Hessian) iff the Leland number
sqrt(2/pi) * c / (sigma sqrt(dt)) < 1, with c the round-trip proportional
cost (a per-trade constant cost model c0 corresponds to c = 2 c0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, NamedTuple

import numpy as np
from scipy.integrate import quad

from .cost_engine import QuadratureError, _grid_derivatives, theta_from_hessian
from .market_model import (
    ConstantCost,
    CostModel,
    MarketParams,
    Scenario,
    ValidationError,
)

__all__ = [
    "DegenerateThetaError",
    "DyfInputs",
    "cost_integrals",
    "dyf_matrix",
    "is_negative_definite",
    "LelandNumber",
    "leland_number",
    "EllipticityReport",
    "scan_surface",
]

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)

DyfForm = Literal["aggregate", "exact"]


class DegenerateThetaError(ValueError):
    """The hedge-increment variance vanished; the sensitivity g_i is singular."""


class NegativeDefiniteness(NamedTuple):
    satisfied: bool
    max_eigenvalue: float


class LelandNumber(NamedTuple):
    value: float
    well_posed: bool


def is_negative_definite(mat: np.ndarray, tol: float = 1e-10) -> NegativeDefiniteness:
    """Check max eigenvalue <= tol for a (symmetrized) real matrix."""
    m = np.asarray(mat, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError("mat", f"expected a square matrix, got shape {m.shape}")
    sym = (m + m.T) / 2.0
    max_eig = float(np.linalg.eigvalsh(sym)[-1])
    return NegativeDefiniteness(satisfied=max_eig <= tol, max_eigenvalue=max_eig)


def leland_number(sigma: float, c0: float, dt: float) -> LelandNumber:
    """Le = sqrt(2/pi) * c0 / (sigma sqrt(dt)); well-posed iff Le < 1.

    ``c0`` is the round-trip proportional cost.  Example: sigma = 0.30,
    c0 = 0.005, dt = 1/261 gives Le ~ 0.2148.
    """
    sigma = float(sigma)
    c0 = float(c0)
    dt = float(dt)
    if not math.isfinite(sigma) or sigma <= 0.0:
        raise ValidationError("sigma", f"volatility must be positive, got {sigma}")
    if not math.isfinite(c0) or c0 < 0.0:
        raise ValidationError("c0", f"cost level must be nonnegative, got {c0}")
    if not math.isfinite(dt) or dt <= 0.0:
        raise ValidationError("dt", f"rebalancing interval must be positive, got {dt}")
    value = _SQRT_2_OVER_PI * c0 / (sigma * math.sqrt(dt))
    return LelandNumber(value=value, well_posed=value < 1.0)


# ---------------------------------------------------------------------------
# sensitivity integrals
# ---------------------------------------------------------------------------


def cost_integrals(cost: CostModel, h: float) -> tuple[float, float]:
    """(I1, I2) sensitivity integrals for cost argument scale h = sqrt(2 dt Theta).

    I1 = int_0^inf C(h y) y exp(-y^2) dy,
    I2 = int_0^inf C'(h y) y^2 exp(-y^2) dy.

    Constant cost has the closed form (c0/2, 0); other models use adaptive
    quadrature to relative tolerance 1e-8 (raising :class:`QuadratureError`
    on failure).  Sampled cost models must carry derivative samples.
    """
    h = float(h)
    if not math.isfinite(h) or h < 0.0:
        raise ValidationError("h", f"argument scale must be nonnegative, got {h}")
    if isinstance(cost, ConstantCost):
        return cost.c0 / 2.0, 0.0

    def f1(y: float) -> float:
        return float(cost.value(h * y)) * y * math.exp(-y * y)

    def f2(y: float) -> float:
        return float(cost.derivative(h * y)) * y * y * math.exp(-y * y)

    i1, e1 = quad(f1, 0.0, np.inf, epsabs=1e-14, epsrel=1e-10, limit=200)
    if e1 > 1e-8 * max(abs(i1), 1.0):
        raise QuadratureError(f"I1 quadrature reached error {e1:.3e} at scale h={h:.6e}")
    i2, e2 = quad(f2, 0.0, np.inf, epsabs=1e-14, epsrel=1e-10, limit=200)
    if e2 > 1e-8 * max(abs(i2), 1.0):
        raise QuadratureError(f"I2 quadrature reached error {e2:.3e} at scale h={h:.6e}")
    return i1, i2


# ---------------------------------------------------------------------------
# the matrix derivative at a single state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DyfInputs:
    """State at which the derivative of the nonlinear operator is evaluated.

    ``hessian`` is the price-coordinate Hessian of the value function at the
    node, ``spots`` the asset prices there, ``dt`` the rebalancing interval,
    ``cost`` the transaction-cost model.
    """

    hessian: np.ndarray
    spots: np.ndarray
    market: MarketParams
    dt: float
    cost: CostModel

    def __post_init__(self) -> None:
        n = self.market.n_assets
        b = np.asarray(self.hessian, dtype=float)
        if b.shape != (n, n):
            raise ValidationError("hessian", f"expected shape ({n}, {n}), got {b.shape}")
        if not np.allclose(b, b.T, atol=1e-8 * (1.0 + np.abs(b).max())):
            raise ValidationError("hessian", "Hessian must be symmetric")
        s = np.asarray(self.spots, dtype=float)
        if s.shape != (n,):
            raise ValidationError("spots", f"expected shape ({n},), got {s.shape}")
        if np.any(~np.isfinite(s)) or np.any(s <= 0.0):
            raise ValidationError("spots", "spot prices must be positive and finite")
        dt = float(self.dt)
        if not math.isfinite(dt) or dt <= 0.0:
            raise ValidationError("dt", f"rebalancing interval must be positive, got {dt}")
        object.__setattr__(self, "hessian", b)
        object.__setattr__(self, "spots", s)
        object.__setattr__(self, "dt", dt)


def _sensitivities(
    cost: CostModel, spots: np.ndarray, theta: np.ndarray, dt: float, theta_floor: float
) -> np.ndarray:
    """Per-asset g_i = dG/dTheta_i; raises for singular Theta."""
    n = theta.size
    g = np.empty(n)
    for i in range(n):
        if theta[i] <= theta_floor:
            raise DegenerateThetaError(f"theta singular at asset {i}: theta={theta[i]:.3e}")
        i1, i2 = cost_integrals(cost, math.sqrt(2.0 * dt * theta[i]))
        g[i] = (
            (2.0 * spots[i] / math.sqrt(dt))
            * _SQRT_2_OVER_PI
            * (0.5 * i1 / math.sqrt(theta[i]) + math.sqrt(dt / 2.0) * i2)
        )
    return g


def dyf_matrix(inputs: DyfInputs, form: DyfForm = "aggregate", theta_floor: float = 1e-14) -> np.ndarray:
    """Matrix derivative of the nonlinear operator at the given state.

    See the module docstring for the two forms.  Raises
    :class:`DegenerateThetaError` when any Theta_i <= theta_floor.
    """
    a = inputs.market.diffusion_matrix(inputs.spots)
    b = inputs.hessian
    theta = theta_from_hessian(b, inputs.spots, inputs.market)
    g = _sensitivities(inputs.cost, inputs.spots, theta, inputs.dt, theta_floor)
    ab = a @ b
    ba = b @ a
    if form == "aggregate":
        return -a / 2.0 + g.sum() * (ab + ba)
    if form == "exact":
        d = -a / 2.0
        n = inputs.market.n_assets
        for i in range(n):
            r = np.zeros((n, n))
            r[i, :] = ab[:, i]
            r[:, i] += ba[i, :]
            d = d + g[i] * r
        return d
    raise ValidationError("form", f"expected 'aggregate' or 'exact', got {form!r}")


# ---------------------------------------------------------------------------
# surface scan
# ---------------------------------------------------------------------------


@dataclass
class EllipticityReport:
    """Node-by-node classification of the operator derivative on a surface.

    ``eigenvalues`` holds the largest eigenvalue of D at each interior node
    (NaN where Theta was degenerate).  ``satisfied`` is True when every
    non-degenerate node has max eigenvalue <= eig_tol.
    """

    satisfied: bool
    max_eigenvalue: float
    worst_node: tuple[int, int] | None
    worst_spots: tuple[float, float] | None
    fraction_satisfied: float
    n_checked: int
    degenerate_count: int
    eig_tol: float
    theta_floor: float
    form: str
    eigenvalues: np.ndarray = field(repr=False)
    spot_axes: tuple[np.ndarray, np.ndarray] = field(repr=False)

    def to_json_dict(self) -> dict:
        return {
            "satisfied": bool(self.satisfied),
            "max_eigenvalue": None if math.isnan(self.max_eigenvalue) else float(self.max_eigenvalue),
            "worst_node": None if self.worst_node is None else list(self.worst_node),
            "worst_spots": None if self.worst_spots is None else [float(v) for v in self.worst_spots],
            "fraction_satisfied": float(self.fraction_satisfied),
            "n_checked": int(self.n_checked),
            "degenerate_count": int(self.degenerate_count),
            "eig_tol": float(self.eig_tol),
            "theta_floor": float(self.theta_floor),
            "form": self.form,
        }

    def write_nodes_csv(self, path) -> None:
        """One row per interior node: indices, spots, max eigenvalue, flags."""
        s1, s2 = self.spot_axes
        with open(path, "w", newline="") as fh:
            fh.write("i,j,S1,S2,max_eigenvalue,degenerate,satisfied\n")
            for ii in range(self.eigenvalues.shape[0]):
                for jj in range(self.eigenvalues.shape[1]):
                    ev = self.eigenvalues[ii, jj]
                    deg = math.isnan(ev)
                    ok = (not deg) and ev <= self.eig_tol
                    ev_txt = "" if deg else format(ev, ".17g")
                    fh.write(
                        f"{ii + 1},{jj + 1},{format(s1[ii], '.17g')},{format(s2[jj], '.17g')},"
                        f"{ev_txt},{int(deg)},{int(ok)}\n"
                    )


def scan_surface(
    surface,
    scenario: Scenario,
    *,
    form: DyfForm = "aggregate",
    eig_tol: float = 1e-10,
    theta_floor: float = 1e-14,
    first_derivative: str = "forward",
    mixed_stencil: str = "four_corner",
) -> EllipticityReport:
    """Classify the operator derivative at every interior node of a surface.

    The surface's finite-difference Hessian uses the same stencils as the
    PDE scheme.  Nodes where either Theta_i <= theta_floor (flat payoff
    regions, deep tails) are counted as degenerate and excluded from the
    eigenvalue statistics rather than misclassified.
    """
    u = np.asarray(getattr(surface, "values", surface), dtype=float)
    grid = scenario.grid
    n = grid.nx
    if u.shape != (n + 1, n + 1):
        raise ValidationError("surface", f"expected shape ({n + 1}, {n + 1}), got {u.shape}")
    market = scenario.market
    sig1, sig2 = market.sigmas
    rho = float(market.rho[0, 1])
    dt = scenario.dt_tc
    dx = grid.dx

    ux, uy, uxx, uyy, uxy = _grid_derivatives(u, dx, first_derivative, mixed_stencil)
    axis = grid.axis()[1:-1]
    if grid.coord == "log":
        s1 = np.exp(axis)[:, None]
        s2 = np.exp(axis)[None, :]
        b11 = (uxx - ux) / (s1 * s1)
        b12 = uxy / (s1 * s2)
        b22 = (uyy - uy) / (s2 * s2)
    else:
        s1 = axis[:, None]
        s2 = axis[None, :]
        b11, b12, b22 = uxx, uxy, uyy

    a11 = sig1 * sig1 * s1 * s1
    a12 = sig1 * sig2 * rho * s1 * s2
    a22 = sig2 * sig2 * s2 * s2

    theta1 = np.maximum(b11 * b11 * a11 + 2.0 * b11 * b12 * a12 + b12 * b12 * a22, 0.0)
    theta2 = np.maximum(b12 * b12 * a11 + 2.0 * b22 * b12 * a12 + b22 * b22 * a22, 0.0)
    degenerate = (theta1 <= theta_floor) | (theta2 <= theta_floor)

    s1b = np.broadcast_to(s1, theta1.shape)
    s2b = np.broadcast_to(s2, theta1.shape)

    # per-asset sensitivities g_i = dG/dTheta_i on non-degenerate nodes
    g1 = np.full(theta1.shape, np.nan)
    g2 = np.full(theta1.shape, np.nan)
    ok = ~degenerate
    if isinstance(scenario.cost, ConstantCost):
        c0 = scenario.cost.c0
        pref = _SQRT_2_OVER_PI / (2.0 * math.sqrt(dt))
        g1[ok] = pref * s1b[ok] * c0 / np.sqrt(theta1[ok])
        g2[ok] = pref * s2b[ok] * c0 / np.sqrt(theta2[ok])
    else:
        idx = np.argwhere(ok)
        for ii, jj in idx:
            i1, i2 = cost_integrals(scenario.cost, math.sqrt(2.0 * dt * theta1[ii, jj]))
            g1[ii, jj] = (
                (2.0 * s1b[ii, jj] / math.sqrt(dt))
                * _SQRT_2_OVER_PI
                * (0.5 * i1 / math.sqrt(theta1[ii, jj]) + math.sqrt(dt / 2.0) * i2)
            )
            i1, i2 = cost_integrals(scenario.cost, math.sqrt(2.0 * dt * theta2[ii, jj]))
            g2[ii, jj] = (
                (2.0 * s2b[ii, jj] / math.sqrt(dt))
                * _SQRT_2_OVER_PI
                * (0.5 * i1 / math.sqrt(theta2[ii, jj]) + math.sqrt(dt / 2.0) * i2)
            )

    ab11 = a11 * b11 + a12 * b12
    ab12 = a11 * b12 + a12 * b22
    ab21 = a12 * b11 + a22 * b12
    ab22 = a12 * b12 + a22 * b22
    if form == "aggregate":
        gs = g1 + g2
        d11 = -a11 / 2.0 + gs * 2.0 * ab11
        d12 = -a12 / 2.0 + gs * (ab12 + ab21)
        d22 = -a22 / 2.0 + gs * 2.0 * ab22
    elif form == "exact":
        d11 = -a11 / 2.0 + g1 * 2.0 * ab11
        d12 = -a12 / 2.0 + g1 * ab21 + g2 * ab12
        d22 = -a22 / 2.0 + g2 * 2.0 * ab22
    else:
        raise ValidationError("form", f"expected 'aggregate' or 'exact', got {form!r}")

    half_tr = (d11 + d22) / 2.0
    eigmax = half_tr + np.sqrt(((d11 - d22) / 2.0) ** 2 + d12 * d12)
    eigmax = np.where(degenerate, np.nan, eigmax)

    n_deg = int(degenerate.sum())
    n_checked = int(ok.sum())
    if n_checked == 0:
        return EllipticityReport(
            satisfied=True,
            max_eigenvalue=math.nan,
            worst_node=None,
            worst_spots=None,
            fraction_satisfied=1.0,
            n_checked=0,
            degenerate_count=n_deg,
            eig_tol=eig_tol,
            theta_floor=theta_floor,
            form=form,
            eigenvalues=eigmax,
            spot_axes=(np.exp(axis) if grid.coord == "log" else axis.copy(),) * 2,
        )

    good = eigmax[ok]
    max_eig = float(good.max())
    flat_idx = np.nanargmax(np.where(ok, eigmax, -np.inf))
    wi, wj = np.unravel_index(flat_idx, eigmax.shape)
    n_sat = int((good <= eig_tol).sum())
    spot_axis = np.exp(axis) if grid.coord == "log" else axis.copy()
    return EllipticityReport(
        satisfied=n_sat == n_checked,
        max_eigenvalue=max_eig,
        worst_node=(int(wi) + 1, int(wj) + 1),
        worst_spots=(float(spot_axis[wi]), float(spot_axis[wj])),
        fraction_satisfied=n_sat / n_checked,
        n_checked=n_checked,
        degenerate_count=n_deg,
        eig_tol=eig_tol,
        theta_floor=theta_floor,
        form=form,
        eigenvalues=eigmax,
        spot_axes=(spot_axis, spot_axis),
    )
