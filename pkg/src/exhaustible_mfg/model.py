"""Model parameters, grids, discrete fields and the data attached to them.

A model is the tuple (params, grid, terminal payoff, initial measure). The
terminal payoff is stored as nodal samples together with nodal samples of its
derivative; the initial measure keeps its exact representation (uniform law,
atoms or nodal density) so that Monte Carlo sampling and the Fourier series
never see the projection error of the grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    InvalidGrid,
    InvalidInitialMeasure,
    InvalidTerminalPayoff,
    ModelValidationError,
)

H1_TOL = 1e-9
MASS_TOL = 1e-12


@dataclass(frozen=True)
class ModelParams:
    """Scalar constants of the model.

    Attributes:
        sigma: volatility of reserves.
        r: discount rate.
        kappa: degree of market interaction.
        L: reserves cap (reflecting barrier).
        T: horizon.
    """

    sigma: float
    r: float
    kappa: float
    L: float
    T: float

    def __post_init__(self):
        for name in ("sigma", "r", "kappa", "L", "T"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def problems(self) -> list[str]:
        out = []
        for name in ("sigma", "kappa", "L", "T"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                out.append(f"{name} must be > 0 (got {v!r})")
        if not (np.isfinite(self.r) and self.r >= 0):
            out.append(f"r must be >= 0 (got {self.r!r})")
        return out


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid on [0, T] x [0, L]."""

    nx: int
    nt: int
    L: float
    T: float

    def __post_init__(self):
        probs = self.problems()
        if probs:
            raise InvalidGrid("; ".join(probs), probs)

    def problems(self) -> list[str]:
        out = []
        if int(self.nx) != self.nx or self.nx < 8:
            out.append(f"nx must be an integer >= 8 (got {self.nx!r})")
        if int(self.nt) != self.nt or self.nt < 8:
            out.append(f"nt must be an integer >= 8 (got {self.nt!r})")
        if not (self.L > 0 and self.T > 0):
            out.append("L and T must be positive")
        return out

    @property
    def dx(self) -> float:
        return self.L / self.nx

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.L, self.nx + 1)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights on the space nodes."""
        w = np.full(self.nx + 1, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w

    def refined(self, fx: int = 2, ft: int = 2) -> "Grid":
        return Grid(self.nx * fx, self.nt * ft, self.L, self.T)

    def same_as(self, other: "Grid") -> bool:
        return (self.nx, self.nt, self.L, self.T) == (other.nx, other.nt, other.L, other.T)


def trapezoid(values: np.ndarray, grid: Grid) -> float | np.ndarray:
    """Trapezoidal integral over space along the last axis."""
    return np.asarray(values) @ grid.weights


FIELD_KINDS = ("value", "density", "rate", "price")


@dataclass
class DiscreteField:
    """(nt+1) x (nx+1) samples of a quantity on the grid."""

    values: np.ndarray
    kind: str = "value"

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=float)

    @property
    def shape(self):
        return self.values.shape

    def __getitem__(self, idx):
        return self.values[idx]

    def violations(self, tol: float = 1e-10) -> list[str]:
        v = self.values
        out = []
        if self.kind == "density" and v.min() < -tol:
            out.append(f"density has negative entries (min {v.min():.3e})")
        if self.kind == "rate" and (v.min() < -tol or v.max() > 0.5 + tol):
            out.append(f"rate outside [0, 1/2] (range [{v.min():.3e}, {v.max():.6f}])")
        return out


def _centered_derivative(values: np.ndarray, dx: float) -> np.ndarray:
    d = np.empty_like(values)
    d[1:-1] = (values[2:] - values[:-2]) / (2 * dx)
    d[0] = (-3 * values[0] + 4 * values[1] - values[2]) / (2 * dx)
    d[-1] = (3 * values[-1] - 4 * values[-2] + values[-3]) / (2 * dx)
    return d


@dataclass
class TerminalPayoff:
    """Terminal reward u_T sampled on the grid nodes, with its derivative.

    ``coeffs`` (ascending powers) is kept when the payoff is a polynomial so
    that the particle simulation can evaluate it exactly off the grid.
    """

    values: np.ndarray
    derivative: np.ndarray
    coeffs: tuple[float, ...] | None = None

    @classmethod
    def zero(cls, grid: Grid) -> "TerminalPayoff":
        z = np.zeros(grid.nx + 1)
        return cls(z, z.copy(), (0.0,))

    @classmethod
    def polynomial(cls, coeffs: Sequence[float], grid: Grid) -> "TerminalPayoff":
        c = tuple(float(v) for v in coeffs) or (0.0,)
        poly = np.polynomial.Polynomial(c)
        x = grid.x
        return cls(poly(x), poly.deriv()(x), c)

    @classmethod
    def from_samples(cls, values: Sequence[float], grid: Grid) -> "TerminalPayoff":
        v = np.asarray(values, dtype=float)
        if v.shape != (grid.nx + 1,):
            raise InvalidTerminalPayoff(f"expected {grid.nx + 1} samples, got {v.shape}")
        return cls(v, _centered_derivative(v, grid.dx), None)

    def __call__(self, x, grid: Grid | None = None):
        if self.coeffs is not None:
            return np.polynomial.polynomial.polyval(x, self.coeffs)
        if grid is None:
            raise ValueError("sampled payoff needs the grid to interpolate")
        return np.interp(x, grid.x, self.values)

    def problems(self, tol: float = H1_TOL) -> list[str]:
        out = []
        if abs(self.values[0]) > tol:
            out.append(f"u_T(0) = {self.values[0]:.3e} != 0")
        if self.derivative.min() < -tol:
            j = int(np.argmin(self.derivative))
            out.append(f"u_T' negative at node {j} ({self.derivative[j]:.3e})")
        if abs(self.derivative[-1]) > tol:
            out.append(f"u_T'(L) = {self.derivative[-1]:.3e} != 0")
        return out


@dataclass
class InitialMeasure:
    """Initial law of reserves.

    ``kind`` is one of ``"uniform"`` (parameters ``a``, ``b``), ``"atoms"``
    (``locations``, ``masses``) or ``"density"`` (nodal ``values`` read as a
    piecewise linear density on a grid with ``L`` and ``nx`` cells).
    """

    kind: str
    a: float = 0.0
    b: float = 0.0
    locations: np.ndarray = field(default_factory=lambda: np.zeros(0))
    masses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    L: float = 1.0

    @classmethod
    def uniform(cls, a: float, b: float) -> "InitialMeasure":
        return cls("uniform", a=float(a), b=float(b))

    @classmethod
    def atoms(cls, atoms: Sequence[Sequence[float]]) -> "InitialMeasure":
        arr = np.asarray(atoms, dtype=float).reshape(-1, 2)
        return cls("atoms", locations=arr[:, 0].copy(), masses=arr[:, 1].copy())

    @classmethod
    def density(cls, values: Sequence[float], L: float) -> "InitialMeasure":
        return cls("density", values=np.asarray(values, dtype=float), L=float(L))

    @property
    def _dx(self) -> float:
        return self.L / (len(self.values) - 1)

    def total_mass(self) -> float:
        if self.kind == "uniform":
            return 1.0
        if self.kind == "atoms":
            return float(np.sum(self.masses))
        v = self.values
        return float(self._dx * (v.sum() - 0.5 * (v[0] + v[-1])))

    def support(self) -> tuple[float, float]:
        if self.kind == "uniform":
            return self.a, self.b
        if self.kind == "atoms":
            live = self.locations[self.masses > 0]
            return float(live.min()), float(live.max())
        nz = np.flatnonzero(self.values > 0)
        x = np.linspace(0.0, self.L, len(self.values))
        lo = x[max(nz[0] - 1, 0)]
        hi = x[min(nz[-1] + 1, len(x) - 1)]
        return float(lo), float(hi)

    def problems(self, L: float) -> list[str]:
        out = []
        if self.kind not in ("uniform", "atoms", "density"):
            return [f"unknown initial measure kind {self.kind!r}"]
        if self.kind == "uniform" and not self.b > self.a:
            return [f"uniform law needs a < b (got a={self.a}, b={self.b})"]
        if self.kind == "atoms":
            if len(self.masses) == 0:
                return ["atom list is empty"]
            if np.any(self.masses < 0):
                out.append("atom masses must be nonnegative")
        if self.kind == "density":
            if len(self.values) < 3 or np.any(self.values < 0):
                return ["density samples must be nonnegative with at least 3 nodes"]
            if abs(self.L - L) > 1e-12 * L:
                out.append("density grid length does not match L")
        mass = self.total_mass()
        if abs(mass - 1.0) > MASS_TOL:
            out.append(f"total mass {mass!r} != 1")
        if mass > 0:
            lo, hi = self.support()
            if not lo > 0:
                out.append(f"support touches 0 (min {lo!r})")
            if hi > L * (1 + 1e-14):
                out.append(f"support exceeds L (max {hi!r})")
        return out

    def sine_moments(self, lam: np.ndarray) -> np.ndarray:
        """Exact values of the integral of sin(lam*y) against the measure."""
        lam = np.asarray(lam, dtype=float)
        if self.kind == "uniform":
            return (np.cos(lam * self.a) - np.cos(lam * self.b)) / (lam * (self.b - self.a))
        if self.kind == "atoms":
            return np.sin(np.outer(lam, self.locations)) @ self.masses
        # piecewise linear density: integrate (alpha + beta*y) sin(lam*y) per cell
        v = self.values
        x = np.linspace(0.0, self.L, len(v))
        beta = np.diff(v) / self._dx
        alpha = v[:-1] - beta * x[:-1]
        lam_col = lam[:, None]

        def primitive(y):
            return (-(alpha + beta * y) * np.cos(lam_col * y) / lam_col
                    + beta * np.sin(lam_col * y) / lam_col**2)

        return (primitive(x[1:]) - primitive(x[:-1])).sum(axis=1)

    def sample(self, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
        """Draw positions by inversion from two arrays of uniforms in (0, 1)."""
        if self.kind == "uniform":
            return self.a + (self.b - self.a) * u1
        if self.kind == "atoms":
            cdf = np.cumsum(self.masses) / self.masses.sum()
            idx = np.minimum(np.searchsorted(cdf, u1, side="right"), len(cdf) - 1)
            return self.locations[idx]
        v = self.values
        dx = self._dx
        cell_mass = 0.5 * dx * (v[:-1] + v[1:])
        cdf = np.cumsum(cell_mass) / cell_mass.sum()
        j = np.minimum(np.searchsorted(cdf, u1, side="right"), len(cell_mass) - 1)
        f0, f1 = v[j], v[j + 1]
        target = u2 * cell_mass[j]
        slope = (f1 - f0) / dx
        # solve f0*s + slope*s^2/2 = target on [0, dx]
        with np.errstate(divide="ignore", invalid="ignore"):
            quad = (-f0 + np.sqrt(np.maximum(f0**2 + 2 * slope * target, 0.0))) / slope
        lin = np.where(f0 > 0, target / np.where(f0 > 0, f0, 1.0), 0.0)
        s = np.where(np.abs(slope) > 1e-14 * np.maximum(f0, 1.0), quad, lin)
        return j * dx + np.clip(s, 0.0, dx)


@dataclass
class Model:
    params: ModelParams
    grid: Grid
    terminal: TerminalPayoff
    initial: InitialMeasure


def validate_params(params: ModelParams, grid: Grid, uT: TerminalPayoff,
                    m0: InitialMeasure) -> Model:
    """Check every standing assumption and bundle the inputs.

    All violations are collected; the raised exception's type names the first
    failing category and ``violations`` lists everything found.
    """
    found: list[tuple[type, str]] = []
    found += [(ModelValidationError, p) for p in params.problems()]
    found += [(InvalidGrid, p) for p in grid.problems()]
    if abs(grid.L - params.L) > 1e-12 * params.L or abs(grid.T - params.T) > 1e-12 * params.T:
        found.append((InvalidGrid, "grid extent does not match (L, T)"))
    if uT.values.shape != (grid.nx + 1,):
        found.append((InvalidTerminalPayoff, "terminal samples do not match the grid"))
    else:
        found += [(InvalidTerminalPayoff, p) for p in uT.problems()]
    found += [(InvalidInitialMeasure, p) for p in m0.problems(params.L)]
    if found:
        messages = [msg for _, msg in found]
        raise found[0][0]("; ".join(messages), messages)
    return Model(params, grid, uT, m0)


def project_measure_to_cells(m0: InitialMeasure, grid: Grid) -> np.ndarray:
    """Nodal density whose trapezoidal integral equals the mass of ``m0``.

    Uniform laws are integrated exactly over each node's dual cell; atoms are
    split linearly between the two neighbouring nodes. Dividing node masses by
    the trapezoid weights turns them into densities.
    """
    x, w, dx = grid.x, grid.weights, grid.dx
    node_mass = np.zeros(grid.nx + 1)
    if m0.kind == "density":
        if len(m0.values) != grid.nx + 1:
            raise InvalidInitialMeasure("density samples do not match the grid")
        return m0.values.astype(float).copy()
    if m0.kind == "uniform":
        lo = np.clip(x - 0.5 * dx, 0.0, grid.L)
        hi = np.clip(x + 0.5 * dx, 0.0, grid.L)
        overlap = np.clip(np.minimum(hi, m0.b) - np.maximum(lo, m0.a), 0.0, None)
        node_mass = overlap / (m0.b - m0.a)
    else:
        pos = np.clip(m0.locations / dx, 0.0, grid.nx)
        j = np.minimum(np.floor(pos).astype(int), grid.nx - 1)
        theta = pos - j
        np.add.at(node_mass, j, (1 - theta) * m0.masses)
        np.add.at(node_mass, j + 1, theta * m0.masses)
    return node_mass / w


def model_from_dict(cfg: dict, nx: int | None = None, nt: int | None = None) -> Model:
    """Build and validate a model from the JSON model-file layout."""
    try:
        params = ModelParams(float(cfg["sigma"]), float(cfg["r"]), float(cfg["kappa"]),
                             float(cfg["L"]), float(cfg["T"]))
        g = cfg.get("grid", {})
        grid = Grid(int(nx if nx is not None else g["nx"]),
                    int(nt if nt is not None else g["nt"]), params.L, params.T)
        term = cfg.get("terminal", {"kind": "zero"})
        if term["kind"] == "zero":
            uT = TerminalPayoff.zero(grid)
        elif term["kind"] == "poly":
            uT = TerminalPayoff.polynomial(term["coeffs"], grid)
        else:
            raise InvalidTerminalPayoff(f"unknown terminal kind {term['kind']!r}")
        init = cfg["initial"]
        if init["kind"] == "uniform":
            m0 = InitialMeasure.uniform(init["a"], init["b"])
        elif init["kind"] == "atoms":
            m0 = InitialMeasure.atoms(init["atoms"])
        else:
            raise InvalidInitialMeasure(f"unknown initial kind {init['kind']!r}")
    except KeyError as exc:
        raise ModelValidationError(f"model file is missing key {exc}") from exc
    return validate_params(params, grid, uT, m0)


def model_to_dict(model: Model) -> dict:
    p, g = model.params, model.grid
    out = {"sigma": p.sigma, "r": p.r, "kappa": p.kappa, "L": p.L, "T": p.T,
           "grid": {"nx": g.nx, "nt": g.nt}}
    if model.terminal.coeffs is not None and not any(model.terminal.coeffs):
        out["terminal"] = {"kind": "zero"}
    elif model.terminal.coeffs is not None:
        out["terminal"] = {"kind": "poly", "coeffs": list(model.terminal.coeffs)}
    m0 = model.initial
    if m0.kind == "uniform":
        out["initial"] = {"kind": "uniform", "a": m0.a, "b": m0.b}
    elif m0.kind == "atoms":
        out["initial"] = {"kind": "atoms",
                          "atoms": [[float(x), float(w)] for x, w in zip(m0.locations, m0.masses)]}
    return out


def load_model(path: str | Path, nx: int | None = None, nt: int | None = None) -> Model:
    with open(path) as fh:
        cfg = json.load(fh)
    return model_from_dict(cfg, nx=nx, nt=nt)


def canonical_model(nx: int = 200, nt: int = 400) -> Model:
    """sigma=0.5, r=0.1, kappa=1, L=1, T=1, zero terminal payoff, m0 uniform on [1/2, 1]."""
    params = ModelParams(sigma=0.5, r=0.1, kappa=1.0, L=1.0, T=1.0)
    grid = Grid(nx, nt, params.L, params.T)
    return validate_params(params, grid, TerminalPayoff.zero(grid), InitialMeasure.uniform(0.5, 1.0))


def with_params(model: Model, **changes) -> Model:
    """Copy of ``model`` with some scalar parameters replaced."""
    fields = {k: getattr(model.params, k) for k in ("sigma", "r", "kappa", "L", "T")}
    fields.update(changes)
    params = ModelParams(**fields)
    return validate_params(params, model.grid, model.terminal, model.initial)


def ceil_log_ratio(tol: float, ratio: float) -> int:
    return int(math.ceil(math.log(tol) / math.log(ratio)))
