"""Market price and production rate at a single time slice.

Given u_x and the density m at time t, the price p solves

    p = l(p) - (l(p) - u_x)^+ / 2,   l(p) = a(m) + c(m) * pbar(p),

with a = 1/(1 + kappa*eta), c = 1 - a, eta the surviving mass and pbar the
m-average of p. The right-hand side is a contraction with factor
kappa*eta/(1 + kappa*eta) <= kappa/(1 + kappa) in the sup norm, so plain
Picard iteration from p = 1 converges geometrically. p depends on the
iterate only through the scalar pbar, which keeps each sweep cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence

ETA_FLOOR = 1e-12


@dataclass(frozen=True)
class MarketSlice:
    eta: float
    a: float
    c: float
    pbar: float
    qbar: float
    ell: float


def _weights(n: int, dx: float) -> np.ndarray:
    w = np.full(n, dx)
    w[0] = w[-1] = 0.5 * dx
    return w


def _coefficients(eta: float, kappa: float) -> tuple[float, float]:
    a = 1.0 / (1.0 + kappa * eta)
    return a, 1.0 - a


def _price_map(p, ux, m, w, eta, a, c):
    """One application of the fixed-point map; returns (new p, l)."""
    pbar = (p * m) @ w / eta if eta > ETA_FLOOR else 1.0
    ell = a + c * pbar
    return ell - 0.5 * np.maximum(ell - ux, 0.0), ell


def max_iterations(tol: float, kappa: float) -> int:
    return int(math.ceil(math.log(tol) / math.log(kappa / (1.0 + kappa)))) + 50


def clear_market_slice(ux, m, kappa: float, tol: float = 1e-12, dx: float | None = None,
                       p_init=None):
    """Solve the price fixed point on one slice.

    Args:
        ux: samples of u_x at the nx+1 nodes.
        m: nonnegative density samples at the same nodes.
        kappa: market interaction degree.
        tol: sup-norm residual target.
        dx: node spacing; defaults to 1/(len(ux) - 1), i.e. L = 1.
        p_init: starting iterate, default the upper bound p = 1.

    Returns:
        ``(p, q, slice, iterations)``.

    Raises:
        NoConvergence: if the residual is still above ``tol`` after the
            iteration cap implied by the contraction factor.
    """
    ux = np.asarray(ux, dtype=float)
    m = np.asarray(m, dtype=float)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if m.min() < 0:
        raise ValueError("density must be nonnegative")
    n = ux.shape[0]
    dx = 1.0 / (n - 1) if dx is None else dx
    w = _weights(n, dx)
    eta = float(m @ w)
    if eta > 1.0 + 1e-9:
        raise ValueError(f"surviving mass {eta} exceeds 1")
    a, c = _coefficients(eta, kappa)
    p = np.ones(n) if p_init is None else np.array(p_init, dtype=float)

    cap = max_iterations(tol, kappa)
    iterations = 0
    while True:
        p_new, ell = _price_map(p, ux, m, w, eta, a, c)
        resid = float(np.max(np.abs(p_new - p)))
        p = p_new
        iterations += 1
        if resid <= tol:
            break
        if iterations >= cap:
            raise NoConvergence(f"price residual {resid:.3e} after {iterations} iterations")

    pbar = float((p * m) @ w / eta) if eta > ETA_FLOOR else 1.0
    ell = a + c * pbar
    q = 0.5 * np.maximum(ell - ux, 0.0)
    qbar = float((q * m) @ w)
    return p, q, MarketSlice(eta, a, c, pbar, qbar, ell), iterations


def contraction_ratio_probe(ux, m, kappa: float, p_init_a, p_init_b, dx: float | None = None,
                            floor: float = 1e-14, max_steps: int = 10_000):
    """Sup-norm gaps between two Picard sequences started at different points."""
    ux = np.asarray(ux, dtype=float)
    m = np.asarray(m, dtype=float)
    n = ux.shape[0]
    dx = 1.0 / (n - 1) if dx is None else dx
    w = _weights(n, dx)
    eta = float(m @ w)
    a, c = _coefficients(eta, kappa)
    pa = np.broadcast_to(np.asarray(p_init_a, dtype=float), (n,)).copy()
    pb = np.broadcast_to(np.asarray(p_init_b, dtype=float), (n,)).copy()
    gaps = [float(np.max(np.abs(pa - pb)))]
    while gaps[-1] >= floor and len(gaps) < max_steps:
        pa, _ = _price_map(pa, ux, m, w, eta, a, c)
        pb, _ = _price_map(pb, ux, m, w, eta, a, c)
        gaps.append(float(np.max(np.abs(pa - pb))))
    return np.array(gaps)
