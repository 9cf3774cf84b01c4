"""Discretised model of the Hilbert space W^{1,2}([0,T]).

A path is stored as samples of its values and of its (Sobolev) derivative on
a uniform grid; the inner product pairs both with trapezoidal quadrature,

    <u, v> = int u v + int u' v'.

The module also provides the evaluation representer (the Green's function of
``v - v'' = delta_t`` with natural Neumann boundary conditions), a cosine
basis that is orthonormal simultaneously in the value and derivative
pairings, and projection / reconstruction onto that basis.

All objects are immutable after construction and all operations are pure,
so everything here may be shared freely across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, GridMismatch

__all__ = [
    "TimeGrid", "SobolevPath", "RieszRepresenter", "BasisSet",
    "inner_product", "norm", "embedding_constant", "embedding_check",
    "riesz_representer", "dense_representer", "basis", "project",
    "reconstruct", "constant_path", "random_bandlimited_paths",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, horizon] with ``n_steps`` subintervals."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not self.horizon > 0.0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        if self.n_steps < 2:
            raise DomainError(f"need at least 2 subintervals, got {self.n_steps}")

    @property
    def step(self) -> float:
        return self.horizon / self.n_steps

    @property
    def n_points(self) -> int:
        return self.n_steps + 1

    def points(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    def trapz_weights(self) -> np.ndarray:
        w = np.full(self.n_steps + 1, self.step)
        w[0] = w[-1] = 0.5 * self.step
        return w

    def index_of(self, t: float) -> int:
        """Grid index of a time expected to sit on the grid."""
        i = int(round(t / self.step))
        if not (0 <= i <= self.n_steps) or abs(i * self.step - t) > 1e-9 * max(1.0, self.horizon):
            raise DomainError(f"t={t} is not a grid point of {self}")
        return i


def _as_array(values, n: int, what: str) -> np.ndarray:
    a = np.asarray(values, dtype=float)
    if a.shape != (n,):
        raise GridMismatch(f"{what} must have shape ({n},), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{what} contains non-finite entries")
    a = a.copy()
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SobolevPath:
    """Discretised element of W^{1,2}: value and derivative samples."""

    grid: TimeGrid
    values: np.ndarray
    derivs: np.ndarray

    def __post_init__(self):
        n = self.grid.n_points
        object.__setattr__(self, "values", _as_array(self.values, n, "values"))
        object.__setattr__(self, "derivs", _as_array(self.derivs, n, "derivs"))

    @classmethod
    def from_callable(cls, grid: TimeGrid,
                      f: Callable[[np.ndarray], np.ndarray],
                      fprime: Callable[[np.ndarray], np.ndarray]) -> "SobolevPath":
        s = grid.points()
        return cls(grid, np.asarray(f(s), dtype=float) * np.ones_like(s),
                   np.asarray(fprime(s), dtype=float) * np.ones_like(s))

    @classmethod
    def from_samples(cls, grid: TimeGrid, values) -> "SobolevPath":
        """Build from value samples only; derivative by central differences
        (one-sided at the endpoints)."""
        v = np.asarray(values, dtype=float)
        d = np.gradient(v, grid.step)
        return cls(grid, v, d)

    def eval(self, t: float) -> float:
        """Linear interpolation of the value samples."""
        return float(np.interp(t, self.grid.points(), self.values))

    def __add__(self, other: "SobolevPath") -> "SobolevPath":
        _check_same_grid(self, other)
        return SobolevPath(self.grid, self.values + other.values,
                           self.derivs + other.derivs)

    def __mul__(self, c: float) -> "SobolevPath":
        return SobolevPath(self.grid, c * self.values, c * self.derivs)

    __rmul__ = __mul__

    def __sub__(self, other: "SobolevPath") -> "SobolevPath":
        return self + (-1.0) * other

    def to_csv(self, path) -> None:
        from .reporting import write_csv

        s = self.grid.points()
        write_csv(path, ["s", "value", "deriv"],
                  list(zip(s, self.values, self.derivs)))


def constant_path(c: float, grid: TimeGrid) -> SobolevPath:
    """The embedding of a point: the path identically equal to ``c``."""
    n = grid.n_points
    return SobolevPath(grid, np.full(n, float(c)), np.zeros(n))


def _check_same_grid(u: SobolevPath, v: SobolevPath) -> None:
    if u.grid != v.grid:
        raise GridMismatch(f"paths on different grids: {u.grid} vs {v.grid}")


def inner_product(u: SobolevPath, v: SobolevPath) -> float:
    """Trapezoidal quadrature of ``int u v + int u' v'``."""
    _check_same_grid(u, v)
    w = u.grid.trapz_weights()
    return float(w @ (u.values * v.values) + w @ (u.derivs * v.derivs))


def norm(u: SobolevPath) -> float:
    return math.sqrt(max(inner_product(u, u), 0.0))


def embedding_constant(horizon: float) -> float:
    """sqrt(T + 1/T): explicit constant in sup-norm <= C(T) * H-norm."""
    return math.sqrt(horizon + 1.0 / horizon)


def embedding_check(u: SobolevPath) -> tuple[float, float, bool]:
    """Returns (sup_norm, h_norm, sup_norm <= C(T) * h_norm)."""
    sup = float(np.max(np.abs(u.values)))
    h = norm(u)
    return sup, h, sup <= embedding_constant(u.grid.horizon) * h


@dataclass(frozen=True)
class RieszRepresenter:
    """Element v_t of H with <v_t, x> = x(t)."""

    eval_time: float
    rep: SobolevPath


def _greens_values(t: float, s: np.ndarray, horizon: float):
    """Closed form of v - v'' = delta_t with Neumann ends, and its s-derivative.

    At the kink s = t the derivative sample is the mean of the one-sided
    limits, which keeps trapezoidal quadrature equal to its piecewise value.
    """
    sh = math.sinh(horizon)
    below = s <= t
    vals = np.where(below,
                    np.cosh(s) * math.cosh(horizon - t) / sh,
                    math.cosh(t) * np.cosh(horizon - s) / sh)
    der_lo = np.sinh(s) * math.cosh(horizon - t) / sh
    der_hi = -math.cosh(t) * np.sinh(horizon - s) / sh
    ders = np.where(below, der_lo, der_hi)
    on_kink = np.isclose(s, t, rtol=0.0, atol=1e-12 * max(1.0, horizon))
    ders = np.where(on_kink, 0.5 * (der_lo + der_hi), ders)
    return vals, ders


def riesz_representer(t: float, grid: TimeGrid) -> RieszRepresenter:
    if not 0.0 <= t <= grid.horizon + 1e-12:
        raise DomainError(f"t={t} outside [0, {grid.horizon}]")
    t = min(max(t, 0.0), grid.horizon)
    vals, ders = _greens_values(t, grid.points(), grid.horizon)
    return RieszRepresenter(t, SobolevPath(grid, vals, ders))


def dense_representer(t: float, grid: TimeGrid) -> np.ndarray:
    """Brute-force representer: dense solve of ``(M + K) v = e_t``.

    ``M`` is the trapezoidal mass matrix and ``K`` the cell-difference
    stiffness matrix, i.e. the discrete counterpart of ``v - v''`` with
    natural boundary conditions.  Independent of the closed form above; used
    as its oracle.
    """
    if not 0.0 <= t <= grid.horizon + 1e-12:
        raise DomainError(f"t={t} outside [0, {grid.horizon}]")
    n = grid.n_points
    h = grid.step
    m = np.diag(grid.trapz_weights())
    k = np.zeros((n, n))
    for c in range(grid.n_steps):
        k[c, c] += 1.0 / h
        k[c + 1, c + 1] += 1.0 / h
        k[c, c + 1] -= 1.0 / h
        k[c + 1, c] -= 1.0 / h
    rhs = np.zeros(n)
    i = int(round(t / h))
    rhs[min(max(i, 0), n - 1)] = 1.0
    return np.linalg.solve(m + k, rhs)


@dataclass(frozen=True)
class BasisSet:
    """Orthonormal family in W^{1,2} on a shared grid."""

    grid: TimeGrid
    members: tuple[SobolevPath, ...] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.members)

    def value_matrix(self) -> np.ndarray:
        """(size, n_points) matrix of member values."""
        return np.stack([m.values for m in self.members])

    def deriv_matrix(self) -> np.ndarray:
        return np.stack([m.derivs for m in self.members])


def basis(n: int, grid: TimeGrid) -> BasisSet:
    """Neumann cosine family, orthonormal in the W^{1,2} pairing.

    e_0 = 1/sqrt(T); e_k(s) = sqrt(2/T) cos(k pi s / T) / sqrt(1 + (k pi/T)^2).
    The cosines are orthogonal in both the value and derivative pairings, so
    the family is orthonormal in H exactly.
    """
    if n < 1:
        raise DomainError(f"basis size must be >= 1, got {n}")
    T = grid.horizon
    s = grid.points()
    members = [SobolevPath(grid, np.full(grid.n_points, 1.0 / math.sqrt(T)),
                           np.zeros(grid.n_points))]
    for k in range(1, n):
        omega = k * math.pi / T
        scale = math.sqrt(2.0 / T) / math.sqrt(1.0 + omega ** 2)
        members.append(SobolevPath(grid, scale * np.cos(omega * s),
                                   -scale * omega * np.sin(omega * s)))
    return BasisSet(grid, tuple(members))


def project(x: SobolevPath, basis_set: BasisSet) -> np.ndarray:
    """Coefficient vector <x, e_k> for all members."""
    if x.grid != basis_set.grid:
        raise GridMismatch("path and basis on different grids")
    w = x.grid.trapz_weights()
    return basis_set.value_matrix() @ (w * x.values) + \
        basis_set.deriv_matrix() @ (w * x.derivs)


def reconstruct(coeffs: Sequence[float], basis_set: BasisSet) -> SobolevPath:
    c = np.asarray(coeffs, dtype=float)
    if c.shape != (basis_set.size,):
        raise GridMismatch(f"expected {basis_set.size} coefficients, got {c.shape}")
    vals = c @ basis_set.value_matrix()
    ders = c @ basis_set.deriv_matrix()
    return SobolevPath(basis_set.grid, vals, ders)


def random_bandlimited_paths(n_paths: int, grid: TimeGrid, seed: int,
                             n_modes: int = 12) -> list[SobolevPath]:
    """Seeded random combinations of the first cosine modes.

    Coefficients drawn with a 1/(1+k) profile through the package's
    counter-based streams, so the sweep is reproducible.
    """
    from .rng import normal_matrix

    b = basis(n_modes, grid)
    coef = normal_matrix(seed, n_paths, n_modes)
    coef *= 1.0 / (1.0 + np.arange(n_modes))
    vmat, dmat = b.value_matrix(), b.deriv_matrix()
    return [SobolevPath(grid, coef[p] @ vmat, coef[p] @ dmat)
            for p in range(n_paths)]
