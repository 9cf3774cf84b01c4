import math

import numpy as np
import pytest

from volterra_lab.contracts import (DiscountSpec, assemble_lifted,
                                    gram_impossibility, matched_control,
                                    phi_basis, simulate_reduced, span_residual,
                                    target_distance, target_line)
from volterra_lab.errors import DomainError
from volterra_lab.presets import contract_preset
from volterra_lab.sobolev import SobolevPath, TimeGrid


@pytest.fixture(scope="module")
def grid():
    return TimeGrid(1.0, 256)


@pytest.fixture(scope="module")
def two_factor():
    return DiscountSpec((0.6, 0.4), (0.0, 1.0))


class TestDiscountSpec:
    def test_betas_must_sum_to_one(self):
        with pytest.raises(DomainError):
            DiscountSpec((0.5, 0.4), (0.0, 1.0))

    def test_rhos_must_be_distinct(self):
        with pytest.raises(DomainError):
            DiscountSpec((0.5, 0.5), (1.0, 1.0))

    def test_discount_function(self, two_factor):
        f0 = two_factor.f(np.array([0.0]))[0]
        assert f0 == pytest.approx(1.0)


class TestPhiBasis:
    def test_single_flat_factor_is_constant_one(self, grid):
        pb = phi_basis(DiscountSpec((1.0,), (0.0,)), grid)
        np.testing.assert_allclose(pb.members[0].values, 1.0)
        np.testing.assert_allclose(pb.members[0].derivs, 0.0)

    def test_values_at_zero_are_betas(self, grid, two_factor):
        pb = phi_basis(two_factor, grid)
        assert [m.values[0] for m in pb.members] == pytest.approx([0.6, 0.4])

    def test_gram_positive_definite(self, grid, two_factor):
        pb = phi_basis(two_factor, grid)
        assert pb.min_eigenvalue > 0.0
        assert np.linalg.det(pb.gram) > 0.0
        np.testing.assert_allclose(pb.gram, pb.gram.T, atol=1e-14)

    def test_gram_entry_analytic(self, grid):
        # <phi_1, phi_1> with beta = 1, rho = 1: (1 + 1) int_0^1 e^{2s} ds
        pb = phi_basis(DiscountSpec((1.0,), (1.0,)), grid)
        expected = 2.0 * (math.exp(2.0) - 1.0) / 2.0
        assert pb.gram[0, 0] == pytest.approx(expected, rel=1e-5)


class TestSimulateReduced:
    def test_zero_cost_zero_control_is_constant(self, grid, two_factor):
        ens = simulate_reduced(two_factor, lambda t: np.zeros(2), [1.0, 2.0],
                               grid, 50, 3, lambda t, z: 0.0 * np.asarray(z))
        np.testing.assert_array_equal(ens.y_tilde[:, -1, 0], 1.0)
        np.testing.assert_array_equal(ens.y_tilde[:, -1, 1], 2.0)

    def test_unit_cost_deterministic_integral(self, grid, two_factor):
        # c* == 1: E[Y~^k_T] = y0_k + int_0^T e^{-rho_k t} dt, left-point sum
        ens = simulate_reduced(two_factor, lambda t: np.array([0.0, 0.3]),
                               [0.0, 0.0], grid, 4000, 7,
                               lambda t, z: np.ones_like(np.asarray(z, dtype=float)))
        ts = grid.points()[:-1]
        for k, rho in enumerate(two_factor.rhos):
            drift = float(np.sum(np.exp(-rho * ts)) * grid.step)
            mean = ens.y_tilde[:, -1, k].mean()
            sd = ens.y_tilde[:, -1, k].std(ddof=1)
            assert abs(mean - drift) <= 4 * sd / math.sqrt(ens.n_paths) + 1e-12

    def test_single_flat_factor_recovers_plain_forward_dynamics(self, grid):
        spec = DiscountSpec((1.0,), (0.0,))
        ens = simulate_reduced(spec, lambda t: np.array([0.25]), [1.0],
                               grid, 200, 5,
                               lambda t, z: np.full_like(np.asarray(z, dtype=float), 0.5))
        # dY = 0.5 dt + 0.25 dW: exact mean, Gaussian fluctuation
        mean = ens.y_tilde[:, -1, 0].mean()
        assert abs(mean - 1.5) < 4 * 0.25 / math.sqrt(200)

    def test_cost_cap_enforced(self, grid, two_factor):
        with pytest.raises(DomainError):
            simulate_reduced(two_factor, lambda t: np.zeros(2), [0.0, 0.0],
                             grid, 10, 1,
                             lambda t, z: np.full_like(np.asarray(z, dtype=float), 2.0),
                             cost_cap=0.5)


class TestTargetLine:
    def test_single_factor_line_is_everything(self):
        spec = DiscountSpec((1.0,), (0.0,))
        line = target_line(spec, 1.0)
        np.testing.assert_array_equal(line.distance(np.array([[7.3]])), 0.0)

    def test_point_on_line_has_zero_distance(self, two_factor):
        line = target_line(two_factor, 1.0)
        pt = 2.5 * line.direction
        assert line.distance(pt[None, :])[0] == pytest.approx(0.0, abs=1e-14)

    def test_line_satisfies_ratio_equations(self, two_factor):
        line = target_line(two_factor, 1.0)
        y = 3.0 * line.direction
        b, r = two_factor.betas, two_factor.rhos
        assert y[0] == pytest.approx(
            (b[0] / b[1]) * math.exp((r[1] - r[0]) * 1.0) * y[1])

    def test_matched_control_reaches_line_at_euler_rate(self, two_factor):
        _, cost, cap = contract_preset("two-factor")
        line = target_line(two_factor, 1.0)
        means = []
        for n in (64, 128, 256):
            g = TimeGrid(1.0, n)
            zr, y0 = matched_control(two_factor, g, cost,
                                     zeta=lambda t: math.sin(3 * t))
            ens = simulate_reduced(two_factor, zr, y0, g, 200, 31, cost, cap)
            means.append(float(np.mean(target_distance(ens, line))))
        assert means[0] > means[1] > means[2]
        assert means[0] / means[2] == pytest.approx(4.0, rel=0.5)

    def test_zero_control_matched_start_is_exact_up_to_quadrature(self, grid, two_factor):
        _, cost, cap = contract_preset("two-factor")
        zr, y0 = matched_control(two_factor, grid, cost, zeta=None)
        ens = simulate_reduced(two_factor, zr, y0, grid, 10, 3, cost, cap)
        d = target_distance(ens, target_line(two_factor, 1.0))
        assert float(np.max(d)) < 5e-4


class TestSpanResidual:
    def test_in_span_assembly_is_numerically_zero(self, grid, two_factor):
        pb = phi_basis(two_factor, grid)
        _, cost, cap = contract_preset("two-factor")
        ens = simulate_reduced(two_factor, lambda t: np.array([0.1, -0.2]),
                               [1.0, 0.5], grid, 40, 11, cost, cap)
        vals, ders = assemble_lifted(ens, pb)
        assert span_residual(vals, ders, pb, grid) <= 1e-10

    def test_orthogonal_injection_is_detected(self, grid, two_factor):
        pb = phi_basis(two_factor, grid)
        _, cost, cap = contract_preset("two-factor")
        ens = simulate_reduced(two_factor, lambda t: np.array([0.1, -0.2]),
                               [1.0, 0.5], grid, 40, 11, cost, cap)
        inj = SobolevPath.from_callable(grid, lambda s: np.cos(math.pi * s),
                                        lambda s: -math.pi * np.sin(math.pi * s))
        vals, ders = assemble_lifted(ens, pb, inject=inj, inject_scale=0.25)
        assert span_residual(vals, ders, pb, grid) > 1e-3

    def test_residual_scales_with_injection(self, grid, two_factor):
        pb = phi_basis(two_factor, grid)
        _, cost, cap = contract_preset("two-factor")
        ens = simulate_reduced(two_factor, lambda t: np.zeros(2), [1.0, 0.5],
                               grid, 5, 11, cost, cap)
        inj = SobolevPath.from_callable(grid, lambda s: np.cos(math.pi * s),
                                        lambda s: -math.pi * np.sin(math.pi * s))
        r1 = span_residual(*assemble_lifted(ens, pb, inj, 0.1), pb, grid)
        r2 = span_residual(*assemble_lifted(ens, pb, inj, 0.2), pb, grid)
        assert r2 == pytest.approx(2 * r1, rel=1e-6)


class TestGramImpossibility:
    def test_zero_at_origin_positive_elsewhere(self, grid):
        probes = [0.0] + [grid.points()[k] for k in range(16, 257, 16)]
        res = gram_impossibility(probes, grid)
        assert abs(res[0][1]) < 1e-12
        assert all(det > 0 for _, det in res[1:])

    def test_quadrature_tracks_closed_form(self):
        # dets via the closed-form representer values; quadrature error is
        # O(h) through the kink of the self-pairing
        T = 1.0
        sh = math.sinh(T)

        def analytic(t):
            return (math.cosh(T) / sh) * (math.cosh(t) * math.cosh(T - t) / sh) \
                - (math.cosh(T - t) / sh) ** 2

        for n, tol in ((512, 3e-3), (1024, 1.5e-3)):
            g = TimeGrid(T, n)
            probes = [g.points()[n // 4], g.points()[n // 2]]
            res = gram_impossibility(probes, g)
            for t, det in res:
                assert det == pytest.approx(analytic(t), abs=tol)


class TestPropertyInvariants:
    from hypothesis import given, settings
    from hypothesis import strategies as st

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-5, 5), st.floats(0.1, 3))
    def test_line_multiples_have_zero_distance(self, c, scale):
        spec = DiscountSpec((0.6, 0.4), (0.0, 1.0))
        line = target_line(spec, scale)
        pt = c * line.direction
        assert line.distance(pt[None, :])[0] == pytest.approx(0.0, abs=1e-12)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_reduced_ensemble_reproducible_by_seed(self, seed):
        spec = DiscountSpec((0.6, 0.4), (0.0, 1.0))
        g = TimeGrid(1.0, 16)
        cost = lambda t, z: 0.1 * np.ones_like(np.asarray(z, dtype=float))
        a = simulate_reduced(spec, lambda t: np.array([0.1, 0.2]), [0.0, 0.0],
                             g, 7, seed, cost)
        b = simulate_reduced(spec, lambda t: np.array([0.1, 0.2]), [0.0, 0.0],
                             g, 7, seed, cost)
        assert np.array_equal(a.y_tilde, b.y_tilde)
