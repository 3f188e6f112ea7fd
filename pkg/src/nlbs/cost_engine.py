"""The nonlinear transaction-cost term of the two-asset pricing PDE.

With discrete rebalancing every ``dt`` years, the expected hedging cost per
unit time adds a nonlinear source term to the Black-Scholes equation:

    G = sum_i  (S_i / sqrt(dt)) * E[ C(sqrt(dt) |phi_i|) |phi_i| ],
    phi_i ~ N(0, Theta_i),
    Theta_i = (B A B)_ii,

where ``B`` is the price Hessian of the value function, ``A`` the diffusion
matrix ``A_ij = sigma_i sigma_j rho_ij S_i S_j``, and ``C`` the per-unit cost
model.  ``Theta_i`` is the variance of the change in the i-th hedge position
over one rebalancing interval; it is a positive-semidefinite quadratic form in
the Hessian row, so it is nonnegative by construction.

Closed forms for the half-normal expectation:

* constant C(x) = c0:           E = c0 sqrt(2 Theta / pi)
* exponential C(x) = c0 e^{-kx}: E = c0 sqrt(Theta) sqrt(2/pi) J(q),
  q = k sqrt(dt Theta), with the decay factor
  J(q) = 1 - sqrt(pi/2) q erfcx(q / sqrt(2)),
  J(0) = 1, strictly decreasing to 0 (erfcx is the scaled complementary error
  function, used for overflow safety).
* sampled cost curves fall back to adaptive quadrature.

``assemble_G`` evaluates the term on a finite-difference surface using the
same derivative stencils as the ADI scheme (central second derivatives,
forward first derivatives by default, four-corner mixed stencil by default).
"""

from __future__ import annotations

import math
from typing import Literal

import numpy as np
from scipy.integrate import quad
from scipy.special import erfcx

from .market_model import (
    ConstantCost,
    CostModel,
    ExponentialCost,
    MarketParams,
    SampledCost,
    Scenario,
    ValidationError,
)

__all__ = [
    "QuadratureError",
    "theta_from_hessian",
    "theta_log_coords",
    "exponential_decay_factor",
    "expected_cost",
    "assemble_G",
]

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_SQRT_PI_OVER_2 = math.sqrt(math.pi / 2.0)

FirstDerivative = Literal["forward", "central"]
MixedStencil = Literal["four_corner", "asymmetric"]
CostPrefactor = Literal["sqrt_dt", "dt"]


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


# ---------------------------------------------------------------------------
# Theta: variance of the hedge-position increment
# ---------------------------------------------------------------------------


def theta_from_hessian(hessian: np.ndarray, spots: np.ndarray, market: MarketParams) -> np.ndarray:
    """Per-asset Theta_i = (B A B)_ii from the price-coordinate Hessian.

    Tiny negative values from roundoff are clamped to zero; Theta is a PSD
    quadratic form and cannot be genuinely negative.
    """
    b = np.asarray(hessian, dtype=float)
    n = market.n_assets
    if b.shape != (n, n):
        raise ValidationError("hessian", f"expected shape ({n}, {n}), got {b.shape}")
    if not np.allclose(b, b.T, atol=1e-8 * (1.0 + np.abs(b).max())):
        raise ValidationError("hessian", "Hessian must be symmetric")
    a = market.diffusion_matrix(np.asarray(spots, dtype=float))
    theta = np.einsum("ij,jk,ki->i", b, a, b)
    return np.maximum(theta, 0.0)


def theta_log_coords(
    second: np.ndarray, grad: np.ndarray, x: np.ndarray, market: MarketParams
) -> np.ndarray:
    """Theta_i from log-coordinate derivatives of the value surface.

    ``second`` is the log-coordinate second-derivative matrix U_{x_i x_j},
    ``grad`` the gradient U_{x_i}, ``x`` the log-price point.  Uses the
    chain-rule expansion

        Theta_i = e^{-2 x_i} [ sum_{j!=i} sum_{k!=i} U_{x_i x_j} U_{x_i x_k}
                                 sigma_j sigma_k rho_jk
                   + 2 sum_{j!=i} U_{x_i x_j} (U_{x_i x_i} - U_{x_i})
                                 sigma_i sigma_j rho_ij
                   + (U_{x_i x_i} - U_{x_i})^2 sigma_i^2 ],

    which is an independent route from :func:`theta_from_hessian` (the test
    suite asserts they agree after converting derivatives).
    """
    u2 = np.asarray(second, dtype=float)
    g = np.asarray(grad, dtype=float)
    x = np.asarray(x, dtype=float)
    n = market.n_assets
    if u2.shape != (n, n):
        raise ValidationError("second", f"expected shape ({n}, {n}), got {u2.shape}")
    if g.shape != (n,):
        raise ValidationError("grad", f"expected shape ({n},), got {g.shape}")
    if x.shape != (n,):
        raise ValidationError("x", f"expected shape ({n},), got {x.shape}")
    sig = np.asarray(market.sigmas)
    rho = market.rho
    theta = np.empty(n)
    for i in range(n):
        ci = u2[i, i] - g[i]
        cross = 0.0
        corr = 0.0
        for j in range(n):
            if j == i:
                continue
            corr += 2.0 * u2[i, j] * ci * sig[i] * sig[j] * rho[i, j]
            for k in range(n):
                if k == i:
                    continue
                cross += u2[i, j] * u2[i, k] * sig[j] * sig[k] * rho[j, k]
        theta[i] = math.exp(-2.0 * x[i]) * (cross + corr + ci * ci * sig[i] * sig[i])
    return np.maximum(theta, 0.0)


# ---------------------------------------------------------------------------
# half-normal expected cost
# ---------------------------------------------------------------------------


def exponential_decay_factor(q):
    """J(q) = 1 - sqrt(pi/2) q erfcx(q/sqrt(2)) for q >= 0.

    The attenuation of the expected cost under an exponentially decaying cost
    curve relative to the constant-cost case: J(0) = 1, J strictly decreasing
    to 0 as q -> inf.
    """
    q = np.asarray(q, dtype=float)
    return 1.0 - _SQRT_PI_OVER_2 * q * erfcx(q / math.sqrt(2.0))


def _expected_cost_quad(cost: CostModel, theta: np.ndarray, dt: float) -> np.ndarray:
    """E[C(sqrt(dt)|phi|) |phi|] by adaptive quadrature (sampled cost curves)."""
    flat = np.atleast_1d(theta).ravel()
    out = np.empty(flat.shape)
    for idx, th in enumerate(flat):
        if th == 0.0:
            out[idx] = 0.0
            continue
        scale = math.sqrt(2.0 * dt * th)

        def integrand(y: float, s: float = scale) -> float:
            return float(cost.value(s * y)) * y * math.exp(-y * y)

        val, err = quad(integrand, 0.0, np.inf, epsabs=1e-14, epsrel=1e-10, limit=200)
        if err > 1e-8 * max(abs(val), 1.0):
            raise QuadratureError(
                f"expected-cost quadrature reached error {err:.3e} for theta={th:.6e}"
            )
        out[idx] = 2.0 * _SQRT_2_OVER_PI * math.sqrt(th) * val
    return out.reshape(np.shape(theta))


def expected_cost(cost: CostModel, theta, dt: float):
    """E[C(sqrt(dt) |phi|) |phi|] for phi ~ N(0, theta), vectorized over theta.

    Constant and exponential cost models use closed forms; sampled models use
    adaptive quadrature (raising :class:`QuadratureError` if the requested
    tolerance cannot be met).
    """
    dt = float(dt)
    if not math.isfinite(dt) or dt <= 0.0:
        raise ValidationError("dt", f"rebalancing interval must be positive, got {dt}")
    theta_arr = np.asarray(theta, dtype=float)
    if np.any(theta_arr < -1e-12):
        raise ValidationError("theta", "variance must be nonnegative")
    theta_arr = np.maximum(theta_arr, 0.0)

    if isinstance(cost, ConstantCost):
        out = cost.c0 * np.sqrt(2.0 * theta_arr / math.pi)
    elif isinstance(cost, ExponentialCost):
        q = cost.k * np.sqrt(dt * theta_arr)
        out = cost.c0 * np.sqrt(theta_arr) * _SQRT_2_OVER_PI * exponential_decay_factor(q)
    elif isinstance(cost, SampledCost):
        out = _expected_cost_quad(cost, theta_arr, dt)
    else:
        raise ValidationError("cost", f"unknown cost model type {type(cost).__name__}")
    if np.ndim(theta) == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# assembling the cost term on a grid
# ---------------------------------------------------------------------------


def _grid_derivatives(
    u: np.ndarray, dx: float, first: FirstDerivative, mixed: MixedStencil
) -> tuple[np.ndarray, ...]:
    """Interior finite differences (first both axes, second both axes, mixed).

    Matches the ADI scheme's stencils: central second derivatives, forward or
    central first derivatives, four-corner or one-sided mixed stencil.  All
    returned arrays cover interior nodes only, shape (n-1, n-1).
    """
    if first == "forward":
        ux = (u[2:, 1:-1] - u[1:-1, 1:-1]) / dx
        uy = (u[1:-1, 2:] - u[1:-1, 1:-1]) / dx
    elif first == "central":
        ux = (u[2:, 1:-1] - u[:-2, 1:-1]) / (2.0 * dx)
        uy = (u[1:-1, 2:] - u[1:-1, :-2]) / (2.0 * dx)
    else:
        raise ValidationError("first_derivative", f"expected 'forward' or 'central', got {first!r}")
    uxx = (u[2:, 1:-1] - 2.0 * u[1:-1, 1:-1] + u[:-2, 1:-1]) / (dx * dx)
    uyy = (u[1:-1, 2:] - 2.0 * u[1:-1, 1:-1] + u[1:-1, :-2]) / (dx * dx)
    if mixed == "four_corner":
        uxy = (u[2:, 2:] + u[:-2, :-2] - u[2:, :-2] - u[:-2, 2:]) / (4.0 * dx * dx)
    elif mixed == "asymmetric":
        uxy = (u[2:, 2:] + u[:-2, :-2] - u[:-2, 1:-1] - u[1:-1, :-2]) / (4.0 * dx * dx)
    else:
        raise ValidationError("mixed_stencil", f"expected 'four_corner' or 'asymmetric', got {mixed!r}")
    return ux, uy, uxx, uyy, uxy


def assemble_G(
    surface,
    scenario: Scenario,
    *,
    first_derivative: FirstDerivative = "forward",
    mixed_stencil: MixedStencil = "four_corner",
    cost_prefactor: CostPrefactor = "sqrt_dt",
) -> np.ndarray:
    """Evaluate the transaction-cost term on every interior grid node.

    ``surface`` is a value array of shape (nx+1, nx+1) on ``scenario.grid``
    (or any object with a ``values`` attribute holding one).  Returns an array
    of the same shape; the boundary ring is zero (the PDE never reads the
    source term on Dirichlet nodes, and one-sided second differences there
    would be meaningless).

    ``cost_prefactor`` selects the normalization of the per-interval expected
    cost into a per-unit-time term: ``"sqrt_dt"`` (default) divides by
    sqrt(dt), consistent with the classical discrete-rebalancing limit;
    ``"dt"`` divides by dt.
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
        x1 = axis[:, None]
        x2 = axis[None, :]
        c1 = uxx - ux
        c2 = uyy - uy
        theta1 = np.exp(-2.0 * x1) * (
            c1 * c1 * sig1 * sig1 + 2.0 * c1 * uxy * sig1 * sig2 * rho + uxy * uxy * sig2 * sig2
        )
        theta2 = np.exp(-2.0 * x2) * (
            uxy * uxy * sig1 * sig1 + 2.0 * c2 * uxy * sig1 * sig2 * rho + c2 * c2 * sig2 * sig2
        )
        s1 = np.exp(x1)
        s2 = np.exp(x2)
    else:
        s1 = axis[:, None]
        s2 = axis[None, :]
        a11 = sig1 * sig1 * s1 * s1
        a12 = sig1 * sig2 * rho * s1 * s2
        a22 = sig2 * sig2 * s2 * s2
        theta1 = uxx * uxx * a11 + 2.0 * uxx * uxy * a12 + uxy * uxy * a22
        theta2 = uxy * uxy * a11 + 2.0 * uyy * uxy * a12 + uyy * uyy * a22

    theta1 = np.maximum(theta1, 0.0)
    theta2 = np.maximum(theta2, 0.0)
    e1 = expected_cost(scenario.cost, theta1, dt)
    e2 = expected_cost(scenario.cost, theta2, dt)

    if cost_prefactor == "sqrt_dt":
        norm = math.sqrt(dt)
    elif cost_prefactor == "dt":
        norm = dt
    else:
        raise ValidationError("cost_prefactor", f"expected 'sqrt_dt' or 'dt', got {cost_prefactor!r}")

    g = np.zeros_like(u)
    g[1:-1, 1:-1] = (s1 * e1 + s2 * e2) / norm
    return g
