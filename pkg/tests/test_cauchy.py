"""Tests for bilab.cauchy module."""
import numpy as np
import pytest

from bilab.cauchy import (
    CauchyData,
    cauchy_data,
    cauchy_norm,
    navier_to_neumann,
    pair_ratio,
    random_linear_solution,
    stability_probe,
)
from bilab.grid import DomainGrid, ScalarField, c2_norm, laplacian, normal_derivative
from bilab.linear import NavierData, apply_L
from bilab.nonlinearity import make_nonlinearity
from bilab.second_map import clamped_bump
from bilab.solution_map import linearize, solution_map_S


class TestCauchyData:
    """Tests for Cauchy data and their norm."""

    def test_traces_of_polynomial(self):
        """Test the four traces of u = x^2 + y^2."""
        grid = DomainGrid(17, 17)
        u = ScalarField.from_function(grid, lambda x, y: x**2 + y**2)
        cd = cauchy_data(u)

        assert np.allclose(cd.lap_u.values, 4.0)
        assert np.allclose(cd.dlap_n.values, 0.0)
        assert cauchy_norm(cd) == pytest.approx(4.0)

    def test_arithmetic(self):
        """Test sums, differences and scaling of Cauchy data."""
        grid = DomainGrid(9, 9)
        cd = cauchy_data(ScalarField.from_function(grid, lambda x, y: x))

        assert cauchy_norm(cd - cd) == 0.0
        assert cauchy_norm(2.0 * cd) == pytest.approx(2.0 * cauchy_norm(cd))
        assert isinstance(cd + cd, CauchyData)

    def test_clamped_field_has_zero_cauchy_data(self):
        """Test that fields vanishing near the boundary have zero Cauchy data."""
        grid = DomainGrid(33, 33)

        assert cauchy_norm(cauchy_data(clamped_bump(grid))) == 0.0

    def test_cauchy_data_are_linear(self):
        """Test C(a u + b v) = a C(u) + b C(v)."""
        grid = DomainGrid(17, 17)
        rng = np.random.default_rng(7)
        u = ScalarField(grid, rng.standard_normal(grid.shape))
        v = ScalarField.from_function(grid, lambda x, y: np.exp(x) * np.cos(y))

        combined = cauchy_data(2.0 * u - 0.5 * v)
        separate = 2.0 * cauchy_data(u) - 0.5 * cauchy_data(v)

        assert cauchy_norm(combined - separate) <= 1e-10 * cauchy_norm(combined)

    def test_degenerate_pair(self):
        """Test that pairs with coincident Cauchy data are skipped."""
        grid = DomainGrid(9, 9)
        u = ScalarField.from_function(grid, lambda x, y: x * y)

        assert pair_ratio(u, u) is None


class TestNavierToNeumann:
    """Tests for the nonlinear Navier-to-Neumann map."""

    def test_consistent_with_solution_map(self):
        """Test that the map returns the normal derivatives of S(v)."""
        grid = DomainGrid(17, 17)
        Q = make_nonlinearity("power", (3.0,))
        w = ScalarField.zeros(grid)
        op = linearize(Q, w)
        v = random_linear_solution(op, np.random.default_rng(0), 5, 0.1)
        u = solution_map_S(Q, w, v, op=op)

        du_n, dlap_n = navier_to_neumann(Q, w, NavierData.of(u), op=op)

        assert (du_n - normal_derivative(u)).sup() < 1e-8
        assert (dlap_n - normal_derivative(laplacian(u))).sup() < 1e-8


class TestStabilityProbe:
    """Tests for the empirical stability probe."""

    def setup_method(self):
        """Set up a sine nonlinearity around the zero solution."""
        self.grid = DomainGrid(17, 17)
        self.Q = make_nonlinearity("sine")
        self.w = ScalarField.zeros(self.grid)

    def test_random_linear_solution_is_capped(self):
        """Test that random solutions solve L v = 0 and respect the cap."""
        op = linearize(self.Q, self.w)
        v = random_linear_solution(op, np.random.default_rng(2), 5, 0.05)

        assert c2_norm(v) <= 0.05 + 1e-15
        interior = apply_L(op, v).values[self.grid.interior_mask]
        assert np.max(np.abs(interior)) < 1e-6

    def test_ratios_are_finite(self):
        """Test that all probe ratios are finite and positive."""
        report = stability_probe(self.Q, self.w, 6, seed=0)

        assert len(report.ratios) + report.skipped == 6
        assert np.all(np.isfinite(report.ratios))
        assert report.max_ratio > 0.0

    def test_probe_is_reproducible(self):
        """Test that equal seeds give equal ratios."""
        first = stability_probe(self.Q, self.w, 3, seed=5)
        second = stability_probe(self.Q, self.w, 3, seed=5)

        assert first.ratios == second.ratios
        assert first.to_dict()["seed"] == 5
