"""Tests for bilab.linear module."""
from unittest.mock import MagicMock, patch

import numpy as np
import pytest

from bilab.errors import SingularOperatorError, SolveError
from bilab.grid import DomainGrid, ScalarField, VectorField, boundary_mode, inner_product, laplacian
from bilab.linear import (
    EIGENVALUE_MESSAGE,
    ROUNDING_ALLOWANCE,
    SOLVE_TOL,
    NavierData,
    apply_L,
    apply_adjoint,
    assemble,
    interior_residual,
    linear_navier_to_neumann,
    residual_scale,
    solve_adjoint,
    solve_formal_adjoint,
    solve_linear,
    solve_navier,
    system_residual,
)


def manufactured_error(n: int) -> float:
    grid = DomainGrid(n, n)
    exact = ScalarField.from_function(grid, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    u = solve_linear(assemble(grid), 4.0 * np.pi**4 * exact, NavierData.zeros(grid))
    return (u - exact).sup()


class TestSolveNavier:
    """Tests for the mixed Navier solver."""

    def test_manufactured_solution_converges(self):
        """Test second-order convergence on sin(pi x) sin(pi y)."""
        coarse, fine = manufactured_error(17), manufactured_error(33)

        assert fine < 1e-2
        assert coarse / fine > 3.5

    def test_laplacian_of_solution_is_m(self):
        """Test that the solution carries m as its Laplacian trace."""
        grid = DomainGrid(17, 17)
        rng = np.random.default_rng(0)
        bc = NavierData.from_arrays(
            grid, rng.standard_normal(grid.n_boundary), rng.standard_normal(grid.n_boundary)
        )
        u, m = solve_navier(assemble(grid), ScalarField.zeros(grid), bc)

        assert np.allclose(laplacian(u).values, m.values, atol=1e-9)
        assert np.allclose(u.boundary_values(), bc.f0.values)
        assert np.allclose(m.boundary_values(), bc.f1.values)

    def test_interior_residual_with_coefficients(self):
        """Test that solutions satisfy L u = F on interior nodes."""
        grid = DomainGrid(17, 17)
        A = ScalarField.from_function(grid, lambda x, y: 1.0 + x)
        X = VectorField(grid, np.stack([grid.y, -grid.x]))
        V = ScalarField.constant(grid, 2.0)
        op = assemble(grid, A, X, V)
        F = ScalarField.from_function(grid, lambda x, y: np.cos(x * y))

        u = solve_linear(op, F, NavierData.zeros(grid))

        assert interior_residual(op, u, F) < 1e-10
        assert not op.is_biharmonic()

    def test_solve_is_linear(self):
        """Test that the solution depends linearly on source and Navier data."""
        grid = DomainGrid(17, 17)
        op = assemble(
            grid,
            ScalarField.constant(grid, 0.5),
            VectorField.zeros(grid),
            ScalarField.constant(grid, 1.0),
        )
        rng = np.random.default_rng(3)
        F1 = ScalarField(grid, rng.standard_normal(grid.shape))
        F2 = ScalarField(grid, rng.standard_normal(grid.shape))
        bc1 = NavierData.from_arrays(grid, boundary_mode(grid, 1), boundary_mode(grid, 2))
        bc2 = NavierData.from_arrays(grid, boundary_mode(grid, 3), np.zeros(grid.n_boundary))

        combined = solve_linear(op, 2.0 * F1 - 3.0 * F2, bc1 * 2.0 - bc2 * 3.0)
        separate = 2.0 * solve_linear(op, F1, bc1) - 3.0 * solve_linear(op, F2, bc2)

        assert (combined - separate).sup() <= 1e-10 * max(1.0, combined.sup())

    def test_zero_data_give_zero_solution(self):
        """Test that zero source and zero Navier data give u = 0."""
        grid = DomainGrid(9, 9)
        u, m = solve_navier(assemble(grid), ScalarField.zeros(grid), NavierData.zeros(grid))

        assert u.sup() == 0.0
        assert m.sup() == 0.0

    def test_resolve_from_cached_factorization_is_identical(self):
        """Test that solving twice with the cached factorization is bit-for-bit equal."""
        grid = DomainGrid(17, 17)
        op = assemble(grid)
        F = ScalarField.from_function(grid, lambda x, y: np.exp(x - y))
        bc = NavierData.from_arrays(grid, boundary_mode(grid, 2), boundary_mode(grid, 5))

        first = solve_linear(op, F, bc)
        second = solve_linear(op, F, bc)

        assert np.array_equal(first.values, second.values)

    def test_inaccurate_solve_raises(self):
        """Test that a solve whose residual exceeds the tolerance raises SolveError."""
        grid = DomainGrid(17, 17)
        op = assemble(grid)
        lu = op.factorization
        rng = np.random.default_rng(4)
        noisy = MagicMock()
        noisy.solve.side_effect = lambda rhs, trans="N": (
            lu.solve(rhs, trans=trans) + 1e-4 * rng.standard_normal(rhs.shape)
        )

        with patch.dict(op.__dict__, {"factorization": noisy}):
            with pytest.raises(SolveError, match="relative residual"):
                solve_linear(op, ScalarField.constant(grid, 1.0), NavierData.zeros(grid))

    def test_system_residual_of_exact_solve(self):
        """Test that a direct solve meets the accepted relative residual."""
        grid = DomainGrid(17, 17)
        op = assemble(grid)
        rhs = np.random.default_rng(5).standard_normal(op.dimension)

        assert system_residual(op, op.factorization.solve(rhs), rhs) < SOLVE_TOL
        assert system_residual(op, np.zeros(op.dimension), np.zeros(op.dimension)) == 0.0

    def test_factorization_failure_is_reported(self):
        """Test that a failing factorization raises SingularOperatorError."""
        grid = DomainGrid(9, 9)
        op = assemble(grid)

        with patch("bilab.linear.splu", side_effect=RuntimeError("Factor is exactly singular")):
            with pytest.raises(SingularOperatorError, match=EIGENVALUE_MESSAGE):
                solve_linear(op, ScalarField.zeros(grid), NavierData.zeros(grid))

    def test_factorization_is_cached(self):
        """Test that repeated solves reuse one factorization."""
        grid = DomainGrid(9, 9)
        op = assemble(grid)

        assert op.factorization is op.factorization


class TestAdjoint:
    """Tests for the adjoint solves."""

    def setup_method(self):
        """Set up an operator with non-trivial lower-order coefficients."""
        self.grid = DomainGrid(17, 17)
        self.op = assemble(
            self.grid,
            ScalarField.constant(self.grid, 0.5),
            VectorField(self.grid, np.stack([np.ones(self.grid.shape), self.grid.x])),
            ScalarField.from_function(self.grid, lambda x, y: x * y),
        )
        rng = np.random.default_rng(1)
        self.F = ScalarField(self.grid, rng.standard_normal(self.grid.shape))
        self.G = ScalarField(self.grid, rng.standard_normal(self.grid.shape))

    def test_duality_with_zero_navier_data(self):
        """Test <F, u> = <G, v> for L u = G and the adjoint response v of F."""
        u = solve_linear(self.op, self.G, NavierData.zeros(self.grid))
        v = solve_adjoint(self.op, self.F)

        lhs = inner_product(self.F, u)
        rhs = inner_product(self.G, v)
        assert lhs == pytest.approx(rhs, rel=1e-9)

    def test_adjoint_vanishes_on_boundary(self):
        """Test that both adjoint solutions vanish on the boundary."""
        assert np.all(solve_adjoint(self.op, self.F).boundary_values() == 0.0)
        assert np.all(solve_formal_adjoint(self.op, self.F).boundary_values() == 0.0)

    def test_formal_adjoint_solves_adjoint_equation(self):
        """Test that apply_adjoint reproduces F away from the boundary rows."""
        v = solve_formal_adjoint(self.op, self.F)
        inside = self.grid.layer >= 2

        result = apply_adjoint(self.op, v)

        assert np.allclose(result.values[inside], self.F.values[inside], atol=1e-8)

    def test_formal_adjoint_close_to_discrete_adjoint(self):
        """Test that both adjoints agree for smooth data on the interior."""
        smooth = ScalarField.from_function(
            self.grid, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
        )
        discrete = solve_adjoint(self.op, smooth)
        formal = solve_formal_adjoint(self.op, smooth)

        assert (discrete - formal).sup() < 0.2 * formal.sup()


class TestApplyL:
    """Tests for applying the operator to a field."""

    def test_bilaplacian_of_quartic(self):
        """Test that lap^2 (x^4) = 24 away from the one-sided boundary rows."""
        grid = DomainGrid(17, 17)
        u = ScalarField.from_function(grid, lambda x, y: x**4)
        result = apply_L(assemble(grid), u)

        assert np.allclose(result.values[4:-4, 4:-4], 24.0)

    def test_linear_navier_to_neumann_of_zero_data(self):
        """Test that zero Navier data give zero Neumann data."""
        grid = DomainGrid(9, 9)
        du_n, dlap_n = linear_navier_to_neumann(assemble(grid), NavierData.zeros(grid))

        assert du_n.sup() == 0.0
        assert dlap_n.sup() == 0.0

    def test_linear_navier_to_neumann_of_harmonic_quadratic(self):
        """Test the Neumann data of u = x^2 - y^2, for which lap u = 0."""
        grid = DomainGrid(17, 17)
        u = ScalarField.from_function(grid, lambda x, y: x**2 - y**2)
        bc = NavierData.from_arrays(grid, u.boundary_values(), np.zeros(grid.n_boundary))

        du_n, dlap_n = linear_navier_to_neumann(assemble(grid), bc)

        xb = grid.x.ravel()[grid.boundary_index]
        yb = grid.y.ravel()[grid.boundary_index]
        expected = grid.normal_sign * np.where(grid.normal_axis == 0, 2.0 * xb, -2.0 * yb)
        assert np.allclose(du_n.values, expected, atol=1e-8)
        assert np.allclose(dlap_n.values, 0.0, atol=1e-8)

    def test_adjoint_is_transpose_on_clamped_fields(self):
        """Test <L u, v> = <u, L* v> for fields vanishing on three boundary layers."""
        grid = DomainGrid(17, 17)
        op = assemble(
            grid,
            ScalarField.from_function(grid, lambda x, y: 1.0 + x * y),
            VectorField(grid, np.stack([np.cos(grid.y), grid.x**2])),
            ScalarField.from_function(grid, lambda x, y: np.sin(x + y)),
        )
        rng = np.random.default_rng(6)
        inside = grid.layer >= 3
        u = ScalarField(grid, np.where(inside, rng.standard_normal(grid.shape), 0.0))
        v = ScalarField(grid, np.where(inside, rng.standard_normal(grid.shape), 0.0))

        lhs = inner_product(apply_L(op, u), v)
        rhs = inner_product(u, apply_adjoint(op, v))

        assert lhs == pytest.approx(rhs, rel=1e-10)


class TestResidualScale:
    """Tests for the normalization of interior residuals."""

    def setup_method(self):
        """Set up a 33 by 33 grid."""
        self.grid = DomainGrid(33, 33)

    def test_small_fields_are_not_rescaled(self):
        """Test that fields with a small bi-Laplacian keep an absolute scale of one."""
        u = ScalarField.from_function(
            self.grid, lambda x, y: 1e-8 * np.sin(np.pi * x) * np.sin(np.pi * y)
        )

        assert residual_scale(u) == 1.0

    def test_source_enters_scale(self):
        """Test that a large source raises the scale."""
        u = ScalarField.zeros(self.grid)

        assert residual_scale(u, ScalarField.constant(self.grid, 5.0)) == 5.0

    def test_rounding_floor_of_large_fields(self):
        """Test the rounding floor for a large field with vanishing bi-Laplacian."""
        u = ScalarField.constant(self.grid, 1e3)

        expected = ROUNDING_ALLOWANCE * self.grid.bilaplacian_scale * 1e3
        assert residual_scale(u) == pytest.approx(expected)

    def test_non_solution_is_not_hidden(self):
        """Test that an O(1) residual of a tiny field stays O(1) after normalization."""
        op = assemble(self.grid)
        u = ScalarField.from_function(
            self.grid, lambda x, y: 1e-4 * (x * (1 - x) * y * (1 - y)) ** 2
        )
        absolute = float(np.max(np.abs(apply_L(op, u).values[self.grid.interior_mask])))

        assert interior_residual(op, u) == pytest.approx(absolute)

    def test_mask_restricts_scale(self):
        """Test that only masked nodes enter the scale."""
        values = np.zeros(self.grid.shape)
        values[1, 1] = 50.0
        F = ScalarField(self.grid, values)
        mask = self.grid.layer >= 4

        assert residual_scale(ScalarField.zeros(self.grid), F, mask) == 1.0
        assert residual_scale(ScalarField.zeros(self.grid), F) == 50.0
