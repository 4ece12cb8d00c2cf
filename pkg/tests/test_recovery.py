"""Tests for bilab.recovery module."""
import numpy as np
import pytest

from bilab.cauchy import random_linear_solution
from bilab.errors import PreconditionError
from bilab.grid import DomainGrid, ScalarField, inner_product
from bilab.linear import assemble
from bilab.nonlinearity import GaugeTransformed, eval_Q, make_nonlinearity
from bilab.recovery import (
    _chebyshev_degrees,
    assemble_identity_system,
    coefficient_basis,
    gauge_pair,
    gauge_transform,
    generate_solution_pairs,
    phi_independence_check,
    reachable_sweep,
    recover_coefficient_difference,
)
from bilab.runge import build_basis
from bilab.second_map import clamped_bump
from bilab.solution_map import FixedPointConfig, linearize, nonlinear_residual


class TestCoefficientBasis:
    """Tests for the Chebyshev coefficient basis."""

    def test_graded_order(self):
        """Test that degrees are listed by total degree."""
        assert _chebyshev_degrees(6) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]

    def test_first_member_is_constant(self):
        """Test the shape of the basis and its constant first member."""
        grid = DomainGrid(9, 9)
        basis = coefficient_basis(grid, 3)

        assert basis.shape == (3, 9, 9)
        assert np.allclose(basis[0], 1.0)
        assert np.allclose(basis[1], 2.0 * grid.x - 1.0)

    def test_invalid_size(self):
        """Test that an empty basis is rejected."""
        with pytest.raises(PreconditionError):
            coefficient_basis(DomainGrid(9, 9), 0)


class TestRecovery:
    """Tests for recovering linearized coefficient differences."""

    def setup_method(self):
        """Set up a biharmonic operator and a shifted copy."""
        self.grid = DomainGrid(17, 17)
        self.op1 = assemble(self.grid)
        self.op2 = assemble(
            self.grid, V=ScalarField.constant(self.grid, 0.5)
        )

    def test_identical_operators_give_zero_rhs(self):
        """Test that the identity right-hand side vanishes for equal operators."""
        pairs = generate_solution_pairs(self.op1, self.op1, 12, seed=0)
        system = assemble_identity_system(pairs, 4)
        result = recover_coefficient_difference(system)

        assert max(abs(p.rhs) for p in pairs) < 1e-10
        assert max(result.a.sup(), result.b.sup(), result.c.sup()) < 1e-6

    def test_row_residuals_of_homogeneous_system(self):
        """Test that every assembled row is consistent with zero coefficients."""
        pairs = generate_solution_pairs(self.op1, self.op1, 12, seed=0)
        system = assemble_identity_system(pairs, 3)

        rows = system.row_residuals(np.zeros(system.n_unknowns))

        assert rows.shape == (12,)
        assert np.max(rows) < 1e-10
        assert system.n_unknowns == 12

    def test_row_residuals_detect_inconsistent_rows(self):
        """Test that zero coefficients leave a row residual for a shifted operator."""
        pairs = generate_solution_pairs(self.op1, self.op2, 12, seed=0)
        system = assemble_identity_system(pairs, 3)

        assert np.max(system.row_residuals(np.zeros(system.n_unknowns))) > 1e-6

    def test_identity_holds_for_each_pair(self):
        """Test <v2, (V1 - V2) v1> against the boundary right-hand side."""
        pairs = generate_solution_pairs(self.op1, self.op2, 3, seed=1)
        difference = ScalarField.constant(self.grid, -0.5)

        for pair in pairs:
            lhs = inner_product(pair.v2, ScalarField(self.grid, difference.values * pair.v1.values))
            assert lhs == pytest.approx(pair.rhs, rel=1e-6, abs=1e-10)

    def test_recover_constant_shift(self):
        """Test that a constant shift of V is recovered."""
        pairs = generate_solution_pairs(self.op1, self.op2, 60, seed=2)
        result = recover_coefficient_difference(assemble_identity_system(pairs, 3))

        truth = ScalarField.constant(self.grid, -0.5)
        gap = result.c - truth
        relative = np.sqrt(inner_product(gap, gap) / inner_product(truth, truth))
        assert relative < 0.1

    def test_too_few_rows(self):
        """Test that underdetermined systems are rejected."""
        pairs = generate_solution_pairs(self.op1, self.op2, 5, seed=0)

        with pytest.raises(PreconditionError):
            recover_coefficient_difference(assemble_identity_system(pairs, 4))

    def test_pairs_are_reproducible(self):
        """Test that pair k depends only on the seed and k."""
        first = generate_solution_pairs(self.op1, self.op2, 3, seed=7)
        second = generate_solution_pairs(self.op1, self.op2, 2, seed=7)

        assert first[1].rhs == second[1].rhs


class TestGauge:
    """Tests for gauge transforms and gauge pairs."""

    def setup_method(self):
        """Set up a cubic nonlinearity and a clamped bump."""
        self.grid = DomainGrid(25, 25)
        self.Q = make_nonlinearity("power", (3.0,))
        self.w = ScalarField.zeros(self.grid)
        self.phi = clamped_bump(self.grid, amplitude=0.05)

    def test_zero_gauge_is_identity(self):
        """Test that T_0 Q is Q itself."""
        assert gauge_transform(self.Q, ScalarField.zeros(self.grid)) is self.Q

    def test_unclamped_gauge_rejected(self):
        """Test that gauge fields with non-zero Cauchy data are rejected."""
        phi = ScalarField.from_function(self.grid, lambda x, y: 0.01 * x)

        with pytest.raises(PreconditionError):
            gauge_transform(self.Q, phi)

    def test_gauge_pair_base_solves_equation(self):
        """Test that w2 = w1 + phi solves the Q2 equation."""
        Q2, w2 = gauge_pair(self.Q, self.w, self.phi)

        assert isinstance(Q2, GaugeTransformed)
        assert nonlinear_residual(Q2, w2) < 1e-10

    def test_round_trip_of_transforms(self):
        """Test T_phi T_-phi Q = Q on grid jets."""
        Q2, _ = gauge_pair(self.Q, self.w, self.phi)
        back = gauge_transform(Q2, self.phi)
        u = ScalarField.from_function(self.grid, lambda x, y: 0.1 * np.sin(np.pi * x) * y)

        assert np.allclose(eval_Q(back, u).values, eval_Q(self.Q, u).values, atol=1e-9)

    def test_phi_independence(self):
        """Test that u2 - u1 does not depend on v in the gauge scenario."""
        Q2, w2 = gauge_pair(self.Q, self.w, self.phi)
        op = linearize(self.Q, self.w)
        rng = np.random.default_rng(3)
        v_list = [ScalarField.zeros(self.grid)] + [
            random_linear_solution(op, rng, 5, 0.1) for _ in range(2)
        ]

        assert phi_independence_check(self.Q, Q2, self.w, w2, v_list) < 1e-6


class TestReachableSweep:
    """Tests for the reachable-set sweep."""

    def test_same_nonlinearity(self):
        """Test the sweep for Q2 = Q1 with a zero gauge."""
        grid = DomainGrid(17, 17)
        Q = make_nonlinearity("power", (3.0,))
        w = ScalarField.zeros(grid)
        op = linearize(Q, w)
        basis = build_basis(op, 16)

        result = reachable_sweep(
            Q, Q, ScalarField.zeros(grid), w, [(0.5, 0.5)], [-0.5, 0.0, 0.5], basis,
            FixedPointConfig(), op,
        )

        assert len(result.records) == 3
        assert result.max_residual == 0.0
        assert result.max_root_error < 1e-8
        assert result.records[1].t == 0.0
        assert len(result.rows()) == 3

    def test_gauge_scenario(self):
        """Test that Q1 and T_phi Q2 agree on the reached jets of a gauge pair."""
        grid = DomainGrid(17, 17)
        Q1 = make_nonlinearity("power", (3.0,))
        w = ScalarField.zeros(grid)
        phi = clamped_bump(grid, amplitude=0.05, radius=0.2)
        Q2, _ = gauge_pair(Q1, w, phi)
        op = linearize(Q1, w)
        basis = build_basis(op, 16)

        result = reachable_sweep(
            Q1, Q2, phi, w, [(0.5, 0.5), (0.4, 0.6)], [-0.5, 0.5], basis,
            FixedPointConfig(), op, reg=1e-8,
        )

        assert len(result.records) + 2 * len(result.skipped) == 4
        assert len(result.records) >= 2
        assert result.max_residual < 1e-5
        assert result.max_root_error < 1e-8
        assert all(abs(record.q1) > 0.0 for record in result.records)
