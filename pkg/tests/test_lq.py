import math

import numpy as np
import pytest

from volterra_lab.errors import DomainError, SolverBlowUp
from volterra_lab.lq import (Kernel, RiccatiFeedback, feedback,
                             feedback_kernel, mc_cost_samples, mc_value,
                             solve_riccati, star, starter_check,
                             starter_pde_residual, starter_value, value)
from volterra_lab.presets import kernel_preset
from volterra_lab.simulate import ControlPath
from volterra_lab.sobolev import SobolevPath, TimeGrid, constant_path


def classical_lq_trajectory(horizon: float, n: int = 20000):
    """Scalar Riccati ODE for phi == 1 (then dX = (X + a) dt + dW):
    P' = P^2 - 2P - 1 with P(T) = 0, integrated backward with RK4.
    Independent of the field solver."""
    h = horizon / n
    f = lambda p: p * p - 2.0 * p - 1.0
    P = 0.0
    traj = [0.0]
    for _ in range(n):
        k1 = f(P)
        k2 = f(P - 0.5 * h * k1)
        k3 = f(P - 0.5 * h * k2)
        k4 = f(P - h * k3)
        P = P - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        traj.append(P)
    return np.array(traj[::-1]), h


def classical_lq_oracle(horizon: float, x0: float, n: int = 20000):
    """Value -(P(0) x0^2 + int_0^T P)/2 and feedback gain -P(0) x0 at a
    constant initial path."""
    traj, h = classical_lq_trajectory(horizon, n)
    integral = float(np.trapezoid(traj, dx=h))
    return -0.5 * (traj[0] * x0 ** 2 + integral), -traj[0] * x0


@pytest.fixture(scope="module")
def lq_grid():
    return TimeGrid(0.5, 128)


@pytest.fixture(scope="module")
def field_one(lq_grid):
    return solve_riccati(kernel_preset("one"), lq_grid)


class TestStar:
    def test_zero_kernel_gives_zero(self, field_one, lq_grid):
        z = star(field_one, kernel_preset("zero"), 0.25)
        np.testing.assert_array_equal(z, 0.0)

    def test_constant_field_times_constant_kernel(self, lq_grid):
        c = solve_riccati(kernel_preset("zero"), lq_grid)
        filled = np.ones_like(c.field)
        boxed = type(c)(c.grid, filled, c.diag_mass, c.noise_integral)
        t = lq_grid.points()[lq_grid.n_steps // 2]
        out = star(boxed, kernel_preset("one"), t)
        np.testing.assert_allclose(out, lq_grid.horizon - t, atol=1e-12)

    def test_separable_field_analytic(self):
        # c(t, r, th) = r * th, phi = e^{-u}, t = 0, T = 1:
        # (c * phi)(0, r) = r * int_0^1 th e^{-th} dth = r (1 - 2/e)
        grid = TimeGrid(1.0, 512)
        ts = grid.points()
        c0 = solve_riccati(kernel_preset("zero"), grid)
        filled = np.zeros_like(c0.field)
        filled[0] = np.outer(ts, ts)
        boxed = type(c0)(grid, filled, c0.diag_mass, c0.noise_integral)
        out = star(boxed, kernel_preset("exp"), 0.0)
        expected = ts * (1.0 - 2.0 * math.exp(-1.0))
        assert float(np.max(np.abs(out - expected))) < 1e-5


class TestSolveRiccati:
    def test_terminal_slice_is_zero(self, field_one):
        np.testing.assert_array_equal(field_one.field[-1], 0.0)

    def test_field_is_symmetric_with_triangular_support(self, field_one, lq_grid):
        n = lq_grid.n_steps
        for i in (0, n // 2):
            slab = field_one.field[i]
            np.testing.assert_allclose(slab, slab.T, atol=1e-14)
            assert np.all(slab[:i, :] == 0.0)
            assert np.all(slab[:, :i] == 0.0)

    def test_zero_kernel_leaves_zero_field(self, lq_grid):
        c = solve_riccati(kernel_preset("zero"), lq_grid)
        np.testing.assert_array_equal(c.field, 0.0)
        assert c.diag_mass == 1.0

    def test_boundary_slices_match_contraction_kernel(self, field_one, lq_grid):
        # one-sided convention: c(t, t, s) = (c * phi)(t, s) + phi(s - t),
        # up to the O(h) staleness of the birth update
        kern = kernel_preset("one")
        i = lq_grid.n_steps // 2
        t = lq_grid.points()[i]
        kap = feedback_kernel(field_one, kern, t)
        born = field_one.field[i][i]
        assert float(np.max(np.abs(born[i:] - kap[i:]))) < 5 * lq_grid.step

    def test_blow_up_reports_step(self, lq_grid):
        with pytest.raises(SolverBlowUp, match="step"):
            solve_riccati(Kernel(lambda u: 40.0 * np.ones_like(u), "big"), lq_grid,
                          cap=10.0)

    def test_discontinuous_kernel_rejected(self, lq_grid):
        jumpy = Kernel(lambda u: np.where(u > 0.25, 5.0, 0.0), "jump")
        with pytest.raises(DomainError):
            solve_riccati(jumpy, lq_grid)


class TestValueAndFeedback:
    def test_zero_path_gives_zero_quadratic_part(self, field_one, lq_grid):
        x = constant_path(0.0, lq_grid)
        kern = kernel_preset("one")
        assert feedback(field_one, kern, 0.0, x) == 0.0
        # only the control-independent noise term remains
        assert value(field_one, 0.0, x) == pytest.approx(
            -0.5 * field_one.noise_integral[0])

    def test_frozen_dynamics_value(self, lq_grid):
        # phi == 0: no controllability, no noise; value = -(1/2) int_t^T x^2
        c = solve_riccati(kernel_preset("zero"), lq_grid)
        x = SobolevPath.from_callable(lq_grid, lambda s: s, lambda s: np.ones_like(s))
        expected = -0.5 * (0.5 ** 3) / 3.0
        assert value(c, 0.0, x) == pytest.approx(expected, abs=1e-5)
        assert feedback(c, kernel_preset("zero"), 0.0, x) == 0.0
        t_mid = lq_grid.points()[lq_grid.n_steps // 2]
        expected_mid = -0.5 * (0.5 ** 3 - t_mid ** 3) / 3.0
        assert value(c, t_mid, x) == pytest.approx(expected_mid, abs=1e-5)

    def test_matches_classical_oracle(self, field_one, lq_grid):
        v_true, gain_true = classical_lq_oracle(0.5, 1.0)
        xp = constant_path(1.0, lq_grid)
        kern = kernel_preset("one")
        assert value(field_one, 0.0, xp) == pytest.approx(v_true, rel=5e-3)
        assert feedback(field_one, kern, 0.0, xp) == pytest.approx(gain_true, rel=5e-3)

    def test_dynamic_value_matches_oracle_at_interior_times(self, lq_grid, field_one):
        traj, h = classical_lq_trajectory(0.5)
        xp = constant_path(1.0, lq_grid)
        for frac in (0.25, 0.5, 0.75):
            t = lq_grid.points()[int(frac * lq_grid.n_steps)]
            j = int(round(t / h))
            expected = -0.5 * (traj[j] + float(np.trapezoid(traj[j:], dx=h)))
            assert value(field_one, t, xp) == pytest.approx(expected, abs=3e-4)

    def test_value_converges_first_order(self):
        v_true, _ = classical_lq_oracle(0.5, 1.0)
        gaps = []
        for n in (32, 64, 128):
            g = TimeGrid(0.5, n)
            c = solve_riccati(kernel_preset("one"), g)
            gaps.append(abs(value(c, 0.0, constant_path(1.0, g)) - v_true))
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[1] / gaps[2] == pytest.approx(2.0, abs=0.6)


class TestMonteCarloCrossValidation:
    def test_frozen_kernel_cost_is_exact(self):
        # phi == 0, zero control, x0 = 1, T = 1 -> cost -1/2 exactly
        g = TimeGrid(1.0, 64)
        mean, se = mc_value(kernel_preset("zero"), ControlPath.constant(0.0),
                            1.0, g, 50, 3)
        assert mean == pytest.approx(-0.5, abs=1e-12)
        assert se == 0.0

    def test_feedback_beats_zero_control(self, field_one, lq_grid):
        kern = kernel_preset("one")
        fb = mc_cost_samples(kern, RiccatiFeedback(field_one, kern), 1.0,
                             lq_grid, 4000, 77)
        z = mc_cost_samples(kern, ControlPath.constant(0.0), 1.0,
                            lq_grid, 4000, 77)
        diff = fb - z
        assert diff.mean() > 2 * diff.std(ddof=1) / math.sqrt(diff.size)

    def test_value_matches_mc_feedback(self, field_one, lq_grid):
        kern = kernel_preset("one")
        mean, se = mc_value(kern, RiccatiFeedback(field_one, kern), 1.0,
                            lq_grid, 20000, 2024)
        v = value(field_one, 0.0, constant_path(1.0, lq_grid))
        assert abs(mean - v) < max(3 * se, 0.01 * abs(v))

    def test_perturbed_gain_does_not_beat_feedback(self, field_one, lq_grid):
        kern = kernel_preset("one")
        base = mc_cost_samples(kern, RiccatiFeedback(field_one, kern), 1.0,
                               lq_grid, 4000, 99)
        for gain in (0.5, 1.5):
            pert = mc_cost_samples(kern, RiccatiFeedback(field_one, kern, gain),
                                   1.0, lq_grid, 4000, 99)
            diff = pert - base
            se = diff.std(ddof=1) / math.sqrt(diff.size)
            assert diff.mean() <= 2 * se


class TestStarter:
    def test_zero_path(self, fine_grid):
        assert starter_value(0.0, constant_path(0.0, fine_grid)) == 0.0

    def test_constant_path_gives_e(self, fine_grid):
        u = starter_value(0.0, constant_path(1.0, fine_grid))
        assert u == pytest.approx(math.e, abs=1e-5)

    def test_ramp_path_gives_e_minus_one(self, fine_grid):
        x = SobolevPath.from_callable(fine_grid, lambda s: s, lambda s: np.ones_like(s))
        assert starter_value(0.0, x) == pytest.approx(math.e - 1.0, abs=1e-5)

    def test_brute_force_ode_integration_agrees(self, fine_grid):
        # independent route: integrate y' = x + y, y(t) = 0, report x(T) + y(T)
        x = SobolevPath.from_callable(fine_grid, lambda s: np.sin(s), np.cos)
        t0 = 0.25
        n = 4000
        h = (fine_grid.horizon - t0) / n
        y = 0.0
        for k in range(n):
            s = t0 + k * h
            k1 = math.sin(s) + y
            k2 = math.sin(s + h / 2) + y + h / 2 * k1
            k3 = math.sin(s + h / 2) + y + h / 2 * k2
            k4 = math.sin(s + h) + y + h * k3
            y += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        expected = math.sin(1.0) + y
        assert starter_value(t0, x) == pytest.approx(expected, abs=1e-5)

    def test_pde_residual_is_second_order(self):
        resid = []
        for n in (256, 512, 1024):
            g = TimeGrid(1.0, n)
            x = constant_path(1.0, g)
            resid.append(max(abs(starter_pde_residual(t, x)) for t in g.points()[::16]))
        assert resid[0] / resid[1] == pytest.approx(4.0, abs=1.0)
        assert resid[1] / resid[2] == pytest.approx(4.0, abs=1.0)

    def test_monte_carlo_check_agrees_with_closed_form(self):
        s_grid = TimeGrid(1.0, 8)
        rep = starter_check(constant_path(1.0, s_grid), TimeGrid(1.0, 256),
                            20000, 42)
        assert abs(rep.mc_mean - rep.closed_form) < 3 * rep.std_err


class TestExponentialKernel:
    def test_value_matches_mc_for_smooth_kernel(self):
        # cross-validation away from the degenerate phi == 1 case
        kern = kernel_preset("exp")
        grid = TimeGrid(0.5, 128)
        field = solve_riccati(kern, grid)
        v = value(field, 0.0, constant_path(1.0, grid))
        mean, se = mc_value(kern, RiccatiFeedback(field, kern), 1.0, grid,
                            20000, 555)
        assert abs(v - mean) < max(3 * se, 0.015 * abs(v))

    def test_feedback_beats_zero_control_for_smooth_kernel(self):
        kern = kernel_preset("exp")
        grid = TimeGrid(0.5, 128)
        field = solve_riccati(kern, grid)
        fb = mc_cost_samples(kern, RiccatiFeedback(field, kern), 1.0, grid, 8000, 5)
        z = mc_cost_samples(kern, ControlPath.constant(0.0), 1.0, grid, 8000, 5)
        diff = fb - z
        assert diff.mean() > 2 * diff.std(ddof=1) / math.sqrt(diff.size)


def exp_kernel_oracle(horizon: float, x0: float, n: int = 40000):
    """Analytic oracle for phi(u) = e^{-u}.

    Writing Y = X - x0, the mean reversion of the kernel state cancels the
    state feedback and dY = (x0 + a) dt + dW, a plain controlled Brownian
    motion.  The value then solves the scalar backward system
    P' = P^2 - 1 (so P = tanh(T - t)), S' = PS - x0 (P + 1),
    Q' = -2 x0 S + S^2 - P - x0^2 with zero terminal data;
    the value is -Q(0)/2 and the time-zero feedback -S(0).  RK4 integration,
    independent of the field solver.
    """
    h = horizon / n
    P = S = Q = 0.0

    def rhs(p, s, q):
        return (p * p - 1.0, p * s - x0 * (p + 1.0),
                -2.0 * x0 * s + s * s - p - x0 * x0)

    for _ in range(n):
        k1 = rhs(P, S, Q)
        k2 = rhs(P - 0.5 * h * k1[0], S - 0.5 * h * k1[1], Q - 0.5 * h * k1[2])
        k3 = rhs(P - 0.5 * h * k2[0], S - 0.5 * h * k2[1], Q - 0.5 * h * k2[2])
        k4 = rhs(P - h * k3[0], S - h * k3[1], Q - h * k3[2])
        P -= h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        S -= h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        Q -= h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return -0.5 * Q, -S


class TestExponentialKernelOracle:
    @pytest.mark.parametrize("horizon,x0", [(0.5, 1.0), (1.0, 0.7)])
    def test_field_matches_analytic_reduction(self, horizon, x0):
        v_true, a_true = exp_kernel_oracle(horizon, x0)
        kern = kernel_preset("exp")
        grid = TimeGrid(horizon, 256)
        field = solve_riccati(kern, grid)
        xp = constant_path(x0, grid)
        assert value(field, 0.0, xp) == pytest.approx(v_true, rel=2e-3)
        assert feedback(field, kern, 0.0, xp) == pytest.approx(a_true, rel=2e-3)
