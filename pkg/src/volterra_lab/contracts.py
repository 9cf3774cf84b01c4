"""Finite-dimensional reduction of the multi-exponential contracting problem.

When the discount factor is ``f(t) = sum_k beta_k exp(-rho_k t)`` the
doubly-indexed utility sheet and its controls stay inside the span of
``phi_k(s) = beta_k exp(rho_k s)``, so the principal's problem reduces to an
``N``-dimensional one.  This module provides that basis with its Gram
geometry, the reduced forward Euler scheme, the terminal target line, a
constructed admissible control that certifies line membership, span-residual
diagnostics on lifted sheets, and the two-representer Gram-determinant test
that falsifies the deterministic-contract conjecture for the exponential
utility (linear independence of the evaluation functionals at 0 and t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError
from .rng import brownian_increments
from .sobolev import (SobolevPath, TimeGrid, inner_product, riesz_representer)

__all__ = [
    "DiscountSpec", "PhiBasis", "ReducedEnsemble", "TargetLine",
    "phi_basis", "simulate_reduced", "target_line", "target_distance",
    "matched_control", "assemble_lifted", "span_residual",
    "gram_impossibility",
]


@dataclass(frozen=True)
class DiscountSpec:
    """Multi-exponential discount ``f(t) = sum_k beta_k exp(-rho_k t)``."""

    betas: tuple[float, ...]
    rhos: tuple[float, ...]

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=float)
        r = np.asarray(self.rhos, dtype=float)
        if b.shape != r.shape or b.ndim != 1 or b.size == 0:
            raise DomainError("betas and rhos must be matching nonempty vectors")
        if np.any(b <= 0):
            raise DomainError("betas must be positive")
        if np.any(r < 0):
            raise DomainError("rhos must be nonnegative")
        if abs(float(np.sum(b)) - 1.0) > 1e-12:
            raise DomainError(f"betas must sum to 1, got {float(np.sum(b))!r}")
        if len(set(float(x) for x in r)) != r.size:
            raise DomainError("rhos must be pairwise distinct")

    @property
    def size(self) -> int:
        return len(self.betas)

    def f(self, t):
        b = np.asarray(self.betas)[:, None]
        r = np.asarray(self.rhos)[:, None]
        return np.sum(b * np.exp(-r * np.atleast_1d(np.asarray(t, dtype=float))[None, :]), axis=0)

    def phi_values(self, s: np.ndarray) -> np.ndarray:
        """(N, len(s)) matrix of phi_k(s) = beta_k exp(rho_k s)."""
        b = np.asarray(self.betas)[:, None]
        r = np.asarray(self.rhos)[:, None]
        return b * np.exp(r * s[None, :])


@dataclass(frozen=True)
class PhiBasis:
    """Sampled discount basis with its W^{1,2} Gram geometry."""

    spec: DiscountSpec
    members: tuple[SobolevPath, ...] = dc_field(repr=False)
    gram: np.ndarray = dc_field(repr=False)
    min_eigenvalue: float = 0.0


def phi_basis(spec: DiscountSpec, grid: TimeGrid) -> PhiBasis:
    """phi_k sampled with analytic derivatives rho_k * phi_k.

    The Gram matrix is nonsingular whenever the rates are distinct; the
    smallest eigenvalue is reported as the conditioning certificate.
    """
    s = grid.points()
    vals = spec.phi_values(s)
    members = tuple(
        SobolevPath(grid, vals[k], spec.rhos[k] * vals[k])
        for k in range(spec.size))
    gram = np.array([[inner_product(a, b) for b in members] for a in members])
    min_eig = float(np.min(np.linalg.eigvalsh(gram)))
    return PhiBasis(spec, members, gram, min_eig)


@dataclass(frozen=True)
class ReducedEnsemble:
    """Trajectories of the reduced coordinates, one block per path."""

    spec: DiscountSpec
    grid: TimeGrid
    y_tilde: np.ndarray = dc_field(repr=False)   # (n_paths, n_t + 1, N)
    seed_base: int = 0

    @property
    def n_paths(self) -> int:
        return self.y_tilde.shape[0]

    def terminal(self) -> np.ndarray:
        return self.y_tilde[:, -1, :]


def simulate_reduced(spec: DiscountSpec,
                     z_rules: Callable[[float], Sequence[float]],
                     y0: Sequence[float], grid: TimeGrid, n_paths: int,
                     seed: int,
                     cost_rule: Callable[[float, np.ndarray], np.ndarray],
                     cost_cap: float | None = None) -> ReducedEnsemble:
    """Euler scheme for the reduced utility coordinates.

    ``dY~^k = exp(-rho_k t) c*(t, sum_k phi_k(t) Z~^k) dt + Z~^k dW`` with a
    deterministic control rule ``z_rules(t) -> (N,)``.  ``c*`` must stay in a
    compact range; probed on the fly when ``cost_cap`` is given.
    """
    N = spec.size
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (N,):
        raise DomainError(f"y0 must have shape ({N},)")
    nt, h = grid.n_steps, grid.step
    ts = grid.points()
    rho = np.asarray(spec.rhos)
    dw = brownian_increments(seed, n_paths, nt, h)
    y = np.tile(y0, (n_paths, 1))
    out = np.empty((n_paths, nt + 1, N))
    out[:, 0] = y
    for m in range(nt):
        t = ts[m]
        z = np.asarray(z_rules(t), dtype=float)
        if z.shape != (N,):
            raise DomainError(f"z_rules must return shape ({N},)")
        z_agg = float(spec.phi_values(np.array([t]))[:, 0] @ z)
        c = float(cost_rule(t, np.asarray(z_agg)))
        if cost_cap is not None and not 0.0 <= c <= cost_cap:
            raise DomainError(f"cost rule left [0, {cost_cap}] at t={t}: {c}")
        drift = np.exp(-rho * t) * c
        y = y + h * drift[None, :] + z[None, :] * dw[:, m][:, None]
        if not np.all(np.isfinite(y)):
            raise DomainError(f"reduced state became non-finite at step {m + 1}")
        out[:, m + 1] = y
    return ReducedEnsemble(spec, grid, out, seed)


@dataclass(frozen=True)
class TargetLine:
    """Terminal constraint line: multiples of d_k = beta_k exp(-rho_k T)."""

    spec: DiscountSpec
    horizon: float
    direction: np.ndarray = dc_field(repr=False)

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance of terminal vectors (n_paths, N) to the line."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.spec.size == 1:
            return np.zeros(pts.shape[0])
        d = self.direction / np.linalg.norm(self.direction)
        proj = pts @ d
        return np.linalg.norm(pts - proj[:, None] * d[None, :], axis=1)


def target_line(spec: DiscountSpec, horizon: float) -> TargetLine:
    d = np.asarray(spec.betas) * np.exp(-np.asarray(spec.rhos) * horizon)
    return TargetLine(spec, horizon, d)


def matched_control(spec: DiscountSpec, grid: TimeGrid,
                    cost_rule: Callable[[float, np.ndarray], np.ndarray],
                    zeta: Callable[[float], float] | None = None,
                    line_coord: float = 1.0,
                    quad_points: int = 20000):
    """Deterministic admissible control steering the terminal vector onto the line.

    Fluctuations stay on the line by aligning ``Z~`` with its direction,
    ``Z~(t) = zeta(t) d``; the initial condition absorbs the accumulated
    drift, computed by dense quadrature of the continuous dynamics, so the
    Euler scheme reaches the line up to its own O(dt) error.  Returns
    ``(z_rules, y0)``.
    """
    T = grid.horizon
    d = np.asarray(spec.betas) * np.exp(-np.asarray(spec.rhos) * T)
    zfun = zeta if zeta is not None else (lambda t: 0.0)

    def z_rules(t: float):
        return zfun(t) * d

    tt = np.linspace(0.0, T, quad_points + 1)
    rho = np.asarray(spec.rhos)
    zeta_vals = np.array([zfun(t) for t in tt])
    zagg = zeta_vals * (d @ spec.phi_values(tt))
    c = cost_rule(tt, zagg) * np.ones_like(tt)
    drift = np.exp(-rho[None, :] * tt[:, None]) * c[:, None]
    w = np.full(quad_points + 1, T / quad_points)
    w[0] = w[-1] = 0.5 * T / quad_points
    accrued = w @ drift
    y0 = line_coord * d - accrued
    return z_rules, y0


def target_distance(ens: ReducedEnsemble, line: TargetLine) -> np.ndarray:
    """Per-path distance of the terminal reduced vector to the line."""
    if line.spec.size != ens.spec.size:
        raise DomainError("line and ensemble have different dimensions")
    return line.distance(ens.terminal())


def assemble_lifted(ens: ReducedEnsemble, basis: PhiBasis,
                    inject: SobolevPath | None = None,
                    inject_scale: float = 0.0):
    """Lifted utility sheets ``Y_t(s) = sum_k phi_k(s) Y~_t^k`` (+ injection).

    Returns ``(values, derivs)`` of shape ``(n_paths, n_t + 1, n_s + 1)``;
    the optional injected path adds a component outside the span for
    residual-margin tests.
    """
    vmat = np.stack([m.values for m in basis.members])
    dmat = np.stack([m.derivs for m in basis.members])
    vals = np.einsum("pmk,ks->pms", ens.y_tilde, vmat)
    ders = np.einsum("pmk,ks->pms", ens.y_tilde, dmat)
    if inject is not None and inject_scale != 0.0:
        vals = vals + inject_scale * inject.values[None, None, :]
        ders = ders + inject_scale * inject.derivs[None, None, :]
    return vals, ders


def span_residual(values: np.ndarray, derivs: np.ndarray,
                  basis: PhiBasis, grid: TimeGrid) -> float:
    """Mean H-norm of the sheet component orthogonal to span{phi_k}.

    Projects every (path, time) slice onto the discount basis through the
    Gram system and measures what is left over; at discretisation level for
    states assembled inside the span.
    """
    w = grid.trapz_weights()
    vmat = np.stack([m.values for m in basis.members])
    dmat = np.stack([m.derivs for m in basis.members])
    # <Y, phi_k> for all (path, time)
    b = np.einsum("pms,ks->pmk", values * w[None, None, :], vmat) \
        + np.einsum("pms,ks->pmk", derivs * w[None, None, :], dmat)
    coef = np.linalg.solve(basis.gram, b[..., None])[..., 0]
    proj_vals = np.einsum("pmk,ks->pms", coef, vmat)
    proj_ders = np.einsum("pmk,ks->pms", coef, dmat)
    dv = values - proj_vals
    dd = derivs - proj_ders
    nrm2 = np.einsum("pms,s->pm", dv * dv, w) + np.einsum("pms,s->pm", dd * dd, w)
    return float(np.mean(np.sqrt(np.maximum(nrm2, 0.0))))


def gram_impossibility(t_values: Sequence[float], grid: TimeGrid):
    """Gram determinants of the evaluation representers {v_0, v_t}.

    ``det = 0`` exactly at t = 0 (identical functionals) and strictly
    positive for t in (0, T]: the evaluation functionals at 0 and t are
    linearly independent, so no control can satisfy the first-order
    stationarity condition that a deterministic optimal incentive would
    require.  Returns a list of ``(t, det)`` pairs.
    """
    v0 = riesz_representer(0.0, grid).rep
    g00 = inner_product(v0, v0)
    out = []
    for t in t_values:
        vt = riesz_representer(float(t), grid).rep
        gtt = inner_product(vt, vt)
        g0t = inner_product(v0, vt)
        out.append((float(t), g00 * gtt - g0t * g0t))
    return out
