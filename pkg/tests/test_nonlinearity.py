"""Tests for bilab.nonlinearity module."""
import numpy as np
import pytest

from bilab.errors import NonlinearityError, PreconditionError
from bilab.grid import DomainGrid, ScalarField, laplacian
from bilab.nonlinearity import (
    NONLINEARITY_KINDS,
    GaugeTransformed,
    derivative_bound_check,
    derivative_consistency,
    eval_Q,
    gauss_legendre,
    linearized_coeffs,
    make_nonlinearity,
    remainder_R,
    remainder_difference_expansion,
    taylor_identity_check,
)

ALL_KINDS = [
    ("zero", ()),
    ("power", (3.0,)),
    ("power", (4.0,)),
    ("sine", ()),
    ("zq", ()),
    ("pquad", ()),
    ("linear", (1.0, 0.5, -0.5, 2.0)),
]


def smooth_field(grid: DomainGrid, amplitude: float, kx: int = 1, ky: int = 1) -> ScalarField:
    return ScalarField.from_function(
        grid, lambda x, y: amplitude * np.sin(kx * np.pi * x) * np.cos(ky * np.pi * y)
    )


class TestMakeNonlinearity:
    """Tests for the nonlinearity registry."""

    def test_registry_contains_builtin_kinds(self):
        """Test that every built-in kind is registered."""
        assert set(NONLINEARITY_KINDS) == {"zero", "power", "sine", "zq", "pquad", "linear"}

    def test_power_defaults_to_cubic(self):
        """Test that a power nonlinearity without parameters is cubic."""
        Q = make_nonlinearity("power")

        assert Q.k == 3
        assert Q.describe() == "power(3)*gamma[one]"

    def test_unknown_kind(self):
        """Test that unknown kinds raise NonlinearityError."""
        with pytest.raises(NonlinearityError, match="Unknown nonlinearity kind"):
            make_nonlinearity("exp")

    def test_invalid_parameters(self):
        """Test parameter validation."""
        with pytest.raises(NonlinearityError):
            make_nonlinearity("power", (2.5,))
        with pytest.raises(NonlinearityError):
            make_nonlinearity("linear", (1.0,))
        with pytest.raises(NonlinearityError):
            make_nonlinearity("sine", (), gamma="square")

    def test_gamma_scales_values(self):
        """Test that the gamma factor multiplies Q."""
        grid = DomainGrid(9, 9)
        u = ScalarField.constant(grid, 0.5)
        plain = eval_Q(make_nonlinearity("power", (2.0,)), u)
        scaled = eval_Q(make_nonlinearity("power", (2.0,), gamma="cosx"), u)

        expected = 0.25 * (1.0 + 0.5 * np.cos(np.pi * grid.x))
        assert np.allclose(plain.values, 0.25)
        assert np.allclose(scaled.values, expected)


class TestDerivatives:
    """Tests for analytic partial derivatives."""

    @pytest.mark.parametrize("kind,params", ALL_KINDS)
    def test_derivative_consistency(self, kind, params):
        """Test supplied partials against central differences for every kind."""
        assert derivative_consistency(make_nonlinearity(kind, params), seed=0) < 1e-6

    def test_derivative_order_limit(self):
        """Test that derivatives beyond third order are rejected."""
        Q = make_nonlinearity("sine")
        jets = np.zeros((4, 3))

        with pytest.raises(NonlinearityError):
            Q.derivative(4, np.zeros(3), np.zeros(3), jets)

    def test_linearized_coefficients_of_linear_kind(self):
        """Test A, X and V of a linear nonlinearity."""
        grid = DomainGrid(9, 9)
        Q = make_nonlinearity("linear", (1.0, 0.5, -0.5, 2.0))
        coeffs = linearized_coeffs(Q, smooth_field(grid, 0.3))

        assert np.allclose(coeffs.V.values, 1.0)
        assert np.allclose(coeffs.X.values[0], 0.5)
        assert np.allclose(coeffs.X.values[1], -0.5)
        assert np.allclose(coeffs.A.values, 2.0)

    def test_derivative_bounds_hold(self):
        """Test measured derivatives against the box bounds."""
        grid = DomainGrid(17, 17)
        report = derivative_bound_check(make_nonlinearity("power", (3.0,)), smooth_field(grid, 0.4))

        assert report.max_ratio <= 1.0 + 1e-12
        assert report.box_radius > 0.4


class TestRemainder:
    """Tests for the Taylor remainder R(h)."""

    def setup_method(self):
        """Set up a grid with a base field and a direction."""
        self.grid = DomainGrid(17, 17)
        self.w = smooth_field(self.grid, 0.1)
        self.h = smooth_field(self.grid, 0.05, kx=2, ky=1)

    def test_gauss_legendre_nodes(self):
        """Test quadrature nodes on [0, 1]."""
        nodes, weights = gauss_legendre(8)

        assert weights.sum() == pytest.approx(1.0)
        assert np.all((nodes > 0.0) & (nodes < 1.0))
        with pytest.raises(PreconditionError):
            gauss_legendre(1)

    def test_quadratic_remainder_is_h_squared(self):
        """Test that R(h) = h^2 for Q = z^2."""
        Q = make_nonlinearity("power", (2.0,))
        R = remainder_R(Q, self.w, self.h)

        assert np.allclose(R.values, self.h.values**2)

    def test_linear_remainder_vanishes(self):
        """Test that linear nonlinearities have no remainder."""
        Q = make_nonlinearity("linear", (1.0, 0.5, -0.5, 2.0))

        assert remainder_R(Q, self.w, self.h).sup() < 1e-14

    @pytest.mark.parametrize("kind,params", ALL_KINDS)
    def test_taylor_identity(self, kind, params):
        """Test Q(w + h) = Q(w) + linear part + R(h)."""
        Q = make_nonlinearity(kind, params)

        assert taylor_identity_check(Q, self.w, self.h).sup() < 1e-8

    @pytest.mark.parametrize("kind,params", [("power", (3.0,)), ("sine", ()), ("zq", ())])
    def test_remainder_difference_expansion(self, kind, params):
        """Test the nested-integral expansion of R(v + r1) - R(v + r2)."""
        Q = make_nonlinearity(kind, params)
        r1 = smooth_field(self.grid, 0.02, kx=1, ky=2)
        r2 = smooth_field(self.grid, -0.03, kx=3, ky=1)

        direct, expanded = remainder_difference_expansion(Q, self.w, self.h, r1, r2)

        assert (direct - expanded).sup() < 1e-7


class TestGaugeTransformed:
    """Tests for gauge-transformed nonlinearities."""

    def test_values(self):
        """Test T_phi Q (u) = lap^2 phi + Q(u + phi)."""
        grid = DomainGrid(17, 17)
        Q = make_nonlinearity("power", (3.0,))
        phi = smooth_field(grid, 0.05, kx=2, ky=2)
        u = smooth_field(grid, 0.1)

        transformed = eval_Q(GaugeTransformed(Q, phi), u)
        expected = laplacian(laplacian(phi)).values + eval_Q(Q, u + phi).values

        assert np.allclose(transformed.values, expected)

    def test_requires_grid_jets(self):
        """Test that gauge transforms reject jets off the grid of phi."""
        grid = DomainGrid(9, 9)
        Q = GaugeTransformed(make_nonlinearity("sine"), ScalarField.zeros(grid))

        with pytest.raises(NonlinearityError):
            Q.derivative(0, np.zeros(3), np.zeros(3), np.zeros((4, 3)))

    def test_derivative_bounds_hold(self):
        """Test measured derivatives of a gauge transform against its box bounds."""
        grid = DomainGrid(17, 17)
        phi = smooth_field(grid, 0.05, kx=2, ky=2)
        Q = GaugeTransformed(make_nonlinearity("power", (3.0,), "bump"), phi)

        report = derivative_bound_check(Q, smooth_field(grid, 0.2))

        assert report.max_ratio <= 1.0 + 1e-12
        assert report.bound[0] >= float(np.max(np.abs(laplacian(laplacian(phi)).values)))
        assert report.bound[1] > 0.0
