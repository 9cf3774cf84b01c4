"""Named coefficient, kernel and problem presets shared by CLI and tests."""

from __future__ import annotations

import numpy as np

from .bsde import HamiltonianSpec, LiftedDynamics
from .contracts import DiscountSpec
from .errors import DomainError
from .lq import Kernel
from .simulate import CoefficientSet
from .sobolev import SobolevPath, TimeGrid, basis, constant_path

__all__ = [
    "kernel_preset", "coefficient_preset", "control_box", "control_preset_path",
    "bsde_preset",
    "contract_preset", "initial_path_preset",
]

_KERNELS = {
    "one": lambda u: np.ones_like(u),
    "exp": lambda u: np.exp(-u),
    "zero": lambda u: np.zeros_like(u),
}


def kernel_preset(name: str) -> Kernel:
    try:
        return Kernel(_KERNELS[name], name)
    except KeyError:
        raise DomainError(f"unknown kernel preset {name!r}; choose from {sorted(_KERNELS)}")


def _zero4(t, s, x, a):
    return np.zeros(np.broadcast(t, s, x, a).shape)


def coefficient_preset(name: str) -> CoefficientSet:
    """Coefficient families of the plain Volterra form (no slice dependence)."""
    K = _KERNELS["exp"]
    if name == "smooth-exp":
        # state-dependent volatility so the Euler strong rate 1/2 is visible
        return CoefficientSet(
            b1=lambda t, s, x, a: 0.3 * K(s - t) * x,
            s1=lambda t, s, x, a: K(s - t) * (0.2 + 0.5 * x),
            db1=lambda t, s, x, a: -0.3 * K(s - t) * x,
            ds1=lambda t, s, x, a: -K(s - t) * (0.2 + 0.5 * x),
            lipschitz_x=1.0)
    if name == "markov-exp":
        return CoefficientSet(
            b1=lambda t, s, x, a: -0.4 * K(s - t) * x,
            s1=lambda t, s, x, a: K(s - t) * (0.3 + 0.7 * x),
            db1=lambda t, s, x, a: 0.4 * K(s - t) * x,
            ds1=lambda t, s, x, a: -K(s - t) * (0.3 + 0.7 * x),
            lipschitz_x=1.0)
    if name == "kernel-noise":
        # additive kernel noise; variance of X_T has a closed form
        return CoefficientSet(
            b1=_zero4,
            s1=lambda t, s, x, a: K(s - t) * np.ones(np.broadcast(t, s, x, a).shape),
            db1=_zero4,
            ds1=lambda t, s, x, a: -K(s - t) * np.ones(np.broadcast(t, s, x, a).shape),
            lipschitz_x=1.0)
    raise DomainError(f"unknown coefficient preset {name!r}")


def control_box(name: str) -> tuple[float, float]:
    return {"smooth-exp": (-1.0, 1.0), "markov-exp": (-1.0, 1.0),
            "kernel-noise": (-1.0, 1.0)}.get(name, (-1.0, 1.0))


def control_preset_path(name: str):
    from .simulate import ControlPath

    if name == "zero":
        return ControlPath.constant(0.0)
    if name == "unit":
        return ControlPath.constant(1.0)
    if name == "damping":
        return ControlPath.feedback(lambda t, x: -0.5 * x, box=(-1.0, 1.0))
    raise DomainError(f"unknown control preset {name!r}")


def initial_path_preset(name: str, grid: TimeGrid) -> SobolevPath:
    if name == "one":
        return constant_path(1.0, grid)
    if name == "half":
        return constant_path(0.5, grid)
    if name == "ramp":
        return SobolevPath.from_callable(grid, lambda s: s, lambda s: np.ones_like(s))
    raise DomainError(f"unknown initial path preset {name!r}")


def bsde_preset(name: str, s_grid: TimeGrid, n_summary: int = 4):
    """Returns ``(spec, dynamics, terminal, analytic_y0 | None)``.

    ``drift-linear``: constant volatility, reward ``-a^2/2``, terminal equals
    the terminal diagonal; the optimal tilt is interior and the value is
    ``x0 + T sigma^2 / 2``.  ``quadratic-terminal``: same dynamics with
    ``G = -x^2``, no closed form, exercised through the comparison principle.
    """
    sigma0 = 0.8
    x0 = 0.5
    b = basis(max(n_summary, 2), s_grid)
    coeffs = CoefficientSet(
        b1=_zero4,
        s1=lambda t, s, x, a: sigma0 * np.ones(np.broadcast(t, s, x, a).shape),
        db1=_zero4, ds1=_zero4, lipschitz_x=1.0)
    dyn = LiftedDynamics(coeffs, constant_path(x0, s_grid), b, n_summary)
    a_grid = tuple(float(a) for a in np.round(np.linspace(-1.0, 1.0, 11), 12))
    if name == "drift-linear":
        spec = HamiltonianSpec(
            theta=lambda t, x, a: a * np.ones_like(x),
            reward=lambda t, x, a: -0.5 * np.square(a) * np.ones_like(x),
            a_grid=a_grid, theta_bound=1.0, f_growth=1.0)
        terminal = lambda xT: xT
        analytic = lambda horizon: x0 + 0.5 * sigma0 ** 2 * horizon
        return spec, dyn, terminal, analytic
    if name == "quadratic-terminal":
        spec = HamiltonianSpec(
            theta=lambda t, x, a: a * np.ones_like(x),
            reward=lambda t, x, a: -0.5 * np.square(a) * np.ones_like(x),
            a_grid=a_grid, theta_bound=1.0, f_growth=1.0)
        terminal = lambda xT: -np.square(xT)
        return spec, dyn, terminal, None
    raise DomainError(f"unknown bsde preset {name!r}")


def contract_preset(name: str = "two-factor"):
    """Returns ``(discount spec, cost rule, cost cap)``."""
    if name == "two-factor":
        spec = DiscountSpec((0.6, 0.4), (0.0, 1.0))
    elif name == "three-factor":
        spec = DiscountSpec((0.5, 0.3, 0.2), (0.0, 0.7, 1.5))
    else:
        raise DomainError(f"unknown contract preset {name!r}")
    cap = 0.5
    cost = lambda t, z: cap * np.square(z) / (1.0 + np.square(z))
    return spec, cost, cap
