"""Linear Navier problem for L = lap^2 + A lap + X . grad + V in mixed form.

The stacked unknown is ``(u, m)`` with ``m = lap u``. Interior rows read

    lap u - m = 0
    lap m + A m + X . grad u + V u = F

and boundary rows impose the Navier data ``u = f0``, ``m = f1``.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from bilab.errors import GridError, SingularOperatorError, SolveError
from bilab.grid import (
    BoundaryTrace,
    DomainGrid,
    ScalarField,
    VectorField,
    gradient,
    laplacian,
    normal_derivative,
)
from bilab.logging import configure_module_logger

logger = configure_module_logger(__name__)

EIGENVALUE_MESSAGE = "0 is (numerically) a Navier eigenvalue"
PIVOT_RATIO = 1e-14
# relative residual of the mixed system accepted from a direct solve
SOLVE_TOL = 1e-10
# fraction of the bi-Laplacian stencil magnitude kept as rounding floor of residuals
ROUNDING_ALLOWANCE = 1e-5


@dataclass(frozen=True, eq=False)
class NavierData:
    """Boundary pair ``(f0, f1) = (u, lap u)``."""

    f0: BoundaryTrace
    f1: BoundaryTrace

    def __post_init__(self):
        if self.f0.grid != self.f1.grid:
            raise GridError("Navier traces live on different grids")

    @property
    def grid(self) -> DomainGrid:
        return self.f0.grid

    @classmethod
    def zeros(cls, grid: DomainGrid) -> "NavierData":
        return cls(BoundaryTrace.zeros(grid), BoundaryTrace.zeros(grid))

    @classmethod
    def from_arrays(cls, grid: DomainGrid, f0, f1) -> "NavierData":
        return cls(BoundaryTrace(grid, f0), BoundaryTrace(grid, f1))

    @classmethod
    def of(cls, u: ScalarField) -> "NavierData":
        """Navier traces of a field, using its carried Laplacian trace when present."""
        return cls.from_arrays(u.grid, u.boundary_values(), u.laplacian_trace())

    def sup(self) -> float:
        return max(self.f0.sup(), self.f1.sup())

    def __add__(self, other: "NavierData") -> "NavierData":
        return NavierData(self.f0 + other.f0, self.f1 + other.f1)

    def __sub__(self, other: "NavierData") -> "NavierData":
        return NavierData(self.f0 - other.f0, self.f1 - other.f1)

    def __mul__(self, scalar: float) -> "NavierData":
        return NavierData(scalar * self.f0, scalar * self.f1)

    __rmul__ = __mul__


def _indicator(grid: DomainGrid, index: np.ndarray) -> sparse.dia_matrix:
    mask = np.zeros(grid.size)
    mask[index] = 1.0
    return sparse.diags(mask)


def _check_coefficient_grid(grid: DomainGrid, *coefficients) -> None:
    for coefficient in coefficients:
        if coefficient.grid != grid:
            logger.error(f"Coefficient grid {coefficient.grid} does not match {grid}")
            raise GridError(f"Coefficient grid {coefficient.grid} does not match {grid}")


@dataclass(frozen=True, eq=False)
class AssembledOperator:
    """Sparse mixed system of one linear operator with lazily computed factorizations.

    ``cache`` holds further factorizations derived from the operator (the clamped
    projection) so they share its lifetime.
    """

    grid: DomainGrid
    A: ScalarField
    X: VectorField
    V: ScalarField
    matrix: sparse.csc_matrix
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def factorization(self):
        logger.debug(f"Factorizing Navier system of dimension {self.dimension}")
        try:
            lu = splu(self.matrix)
        except RuntimeError as e:
            logger.error(f"Factorization failed: {e}")
            raise SingularOperatorError(EIGENVALUE_MESSAGE) from e
        pivots = np.abs(lu.U.diagonal())
        if pivots.min() <= PIVOT_RATIO * pivots.max():
            logger.error(f"Smallest pivot ratio {pivots.min() / pivots.max():.3e}")
            raise SingularOperatorError(EIGENVALUE_MESSAGE)
        return lu

    @cached_property
    def operator_matrix(self) -> sparse.csr_matrix:
        """L acting on flattened fields, one-sided stencils at the boundary rows."""
        ops = self.grid.operators
        return (
            ops.lap @ ops.lap
            + sparse.diags(self.A.flat) @ ops.lap
            + sparse.diags(self.X.values[0].ravel()) @ ops.dx
            + sparse.diags(self.X.values[1].ravel()) @ ops.dy
            + sparse.diags(self.V.flat)
        ).tocsr()

    def is_biharmonic(self) -> bool:
        return not (np.any(self.A.values) or np.any(self.X.values) or np.any(self.V.values))


def _mixed_system(
    grid: DomainGrid,
    lap_u: sparse.spmatrix,
    coupling_u: sparse.spmatrix,
    lap_m: sparse.spmatrix,
) -> sparse.csc_matrix:
    interior = _indicator(grid, grid.interior_index)
    boundary = _indicator(grid, grid.boundary_index)
    return sparse.bmat(
        [
            [interior @ lap_u + boundary, -interior],
            [interior @ coupling_u, interior @ lap_m + boundary],
        ],
        format="csc",
    )


def assemble(
    grid: DomainGrid,
    A: Optional[ScalarField] = None,
    X: Optional[VectorField] = None,
    V: Optional[ScalarField] = None,
) -> AssembledOperator:
    """Assemble the mixed Navier system; missing coefficients are zero."""
    A = ScalarField.zeros(grid) if A is None else A
    X = VectorField.zeros(grid) if X is None else X
    V = ScalarField.zeros(grid) if V is None else V
    _check_coefficient_grid(grid, A, X, V)

    ops = grid.operators
    coupling = (
        sparse.diags(X.values[0].ravel()) @ ops.dx
        + sparse.diags(X.values[1].ravel()) @ ops.dy
        + sparse.diags(V.flat)
    )
    matrix = _mixed_system(grid, ops.lap, coupling, ops.lap + sparse.diags(A.flat))
    logger.debug(f"Assembled Navier system with {matrix.nnz} nonzeros")
    return AssembledOperator(grid=grid, A=A, X=X, V=V, matrix=matrix)


def _navier_rhs(op: AssembledOperator, F: ScalarField, bc: NavierData) -> np.ndarray:
    grid = op.grid
    _check_coefficient_grid(grid, F, bc.f0)
    n = grid.size
    rhs = np.zeros(2 * n)
    rhs[grid.boundary_index] = bc.f0.values
    rhs[n + grid.interior_index] = F.flat[grid.interior_index]
    rhs[n + grid.boundary_index] = bc.f1.values
    return rhs


def system_residual(op: AssembledOperator, solution: np.ndarray, rhs: np.ndarray) -> float:
    """``|K x - b| / (|K|_inf |x| + |b|)`` of the mixed system."""
    scale = sparse.linalg.norm(op.matrix, np.inf) * np.linalg.norm(solution) + np.linalg.norm(rhs)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(op.matrix @ solution - rhs) / scale)


def solve_navier(
    op: AssembledOperator, F: ScalarField, bc: NavierData
) -> Tuple[ScalarField, ScalarField]:
    """Solve L u = F with Navier data ``bc``.

    Returns ``(u, m)``. ``u`` carries the boundary values of ``m`` as its Laplacian
    trace, so ``laplacian(u)`` equals ``m`` at every node.

    Raises ``SolveError`` when the relative residual of the mixed system exceeds
    ``SOLVE_TOL``.
    """
    grid = op.grid
    rhs = _navier_rhs(op, F, bc)
    solution = op.factorization.solve(rhs)
    if not np.all(np.isfinite(solution)):
        logger.error("Navier solve produced non-finite values")
        raise SingularOperatorError(EIGENVALUE_MESSAGE)

    relative = system_residual(op, solution, rhs)
    if relative > SOLVE_TOL:
        logger.error(f"Navier solve relative residual {relative:.3e} exceeds {SOLVE_TOL:.0e}")
        raise SolveError(f"Navier solve relative residual {relative:.3e} exceeds {SOLVE_TOL:.0e}")

    n = grid.size
    m_values = solution[n:].reshape(grid.shape)
    u = ScalarField(grid, solution[:n].reshape(grid.shape), m_values.ravel()[grid.boundary_index])
    return u, ScalarField(grid, m_values)


def solve_linear(op: AssembledOperator, F: ScalarField, bc: NavierData) -> ScalarField:
    return solve_navier(op, F, bc)[0]


def apply_L(op: AssembledOperator, u: ScalarField) -> ScalarField:
    """(lap^2 + A lap + X . grad + V) u with m = laplacian(u) substituted."""
    m = laplacian(u)
    grad = gradient(u).values
    values = (
        laplacian(m).values
        + op.A.values * m.values
        + op.X.values[0] * grad[0]
        + op.X.values[1] * grad[1]
        + op.V.values * u.values
    )
    return ScalarField(op.grid, values)


def apply_adjoint(op: AssembledOperator, v: ScalarField) -> ScalarField:
    """Formal adjoint lap(lap v + A v) - div(X v) + V v, discretized directly."""
    grid = op.grid
    ops = grid.operators
    inner = laplacian(v.without_trace()).values + op.A.values * v.values
    divergence = ops.dx @ (op.X.values[0] * v.values).ravel() + ops.dy @ (
        op.X.values[1] * v.values
    ).ravel()
    values = (
        laplacian(ScalarField(grid, inner)).values
        - divergence.reshape(grid.shape)
        + op.V.values * v.values
    )
    return ScalarField(grid, values)


def residual_scale(
    u: ScalarField, F: Optional[ScalarField] = None, mask: Optional[np.ndarray] = None
) -> float:
    """Normalization of residuals of ``lap^2 u + ... = F`` over ``mask``.

    ``max(1, sup |lap^2 u|, sup |F|)`` on the masked nodes (interior nodes by default),
    raised to ``ROUNDING_ALLOWANCE * bilaplacian_scale * sup |u|`` where the rounding
    of the two stencil applications dominates.
    """
    mask = u.grid.interior_mask if mask is None else mask
    scale = max(1.0, float(np.max(np.abs(laplacian(laplacian(u)).values[mask]))))
    if F is not None:
        scale = max(scale, float(np.max(np.abs(F.values[mask]))))
    return max(scale, ROUNDING_ALLOWANCE * u.grid.bilaplacian_scale * u.sup())


def interior_residual(
    op: AssembledOperator, u: ScalarField, F: Optional[ScalarField] = None
) -> float:
    """Normalized interior sup of L u - F."""
    residual = apply_L(op, u).values
    if F is not None:
        residual = residual - F.values
    return float(np.max(np.abs(residual[op.grid.interior_mask]))) / residual_scale(u, F)


def solve_transposed(op: AssembledOperator, rhs: np.ndarray) -> np.ndarray:
    """Solve the transpose of the assembled mixed system with the cached factorization."""
    if rhs.shape != (op.dimension,):
        raise GridError(f"Transposed right-hand side must have {op.dimension} entries")
    solution = op.factorization.solve(np.asarray(rhs, dtype=float), trans="T")
    if not np.all(np.isfinite(solution)):
        raise SingularOperatorError(EIGENVALUE_MESSAGE)
    return solution


def _interior_field(op: AssembledOperator, values: np.ndarray) -> ScalarField:
    grid = op.grid
    values = values.reshape(grid.shape).copy()
    values[~grid.interior_mask] = 0.0
    return ScalarField(grid, values)


def solve_adjoint(op: AssembledOperator, F: ScalarField) -> ScalarField:
    """Adjoint solve with zero Navier data through the transposed mixed system.

    The returned field ``v`` satisfies ``<F, u> = <G, v>`` for every ``u`` solving
    ``L u = G`` with zero Navier data, with interior weights of the trapezoidal rule.
    """
    grid = op.grid
    n = grid.size
    rhs = np.zeros(2 * n)
    rhs[grid.interior_index] = F.flat[grid.interior_index]
    return _interior_field(op, solve_transposed(op, rhs)[n:])


def solve_formal_adjoint(op: AssembledOperator, F: ScalarField) -> ScalarField:
    """Discretize L* = lap^2 + lap A - div X + V in mixed form and solve it.

    Unknowns are ``(v, p)`` with ``p = lap v + A v``; both vanish on the boundary.
    """
    grid = op.grid
    ops = grid.operators
    transport = (
        -ops.dx @ sparse.diags(op.X.values[0].ravel())
        - ops.dy @ sparse.diags(op.X.values[1].ravel())
        + sparse.diags(op.V.flat)
    )
    matrix = _mixed_system(grid, ops.lap + sparse.diags(op.A.flat), transport, ops.lap)
    n = grid.size
    rhs = np.zeros(2 * n)
    rhs[n + grid.interior_index] = F.flat[grid.interior_index]
    try:
        solution = splu(matrix).solve(rhs)
    except RuntimeError as e:
        logger.error(f"Formal adjoint factorization failed: {e}")
        raise SingularOperatorError(EIGENVALUE_MESSAGE) from e
    return _interior_field(op, solution[:n])


def linear_navier_to_neumann(
    op: AssembledOperator, bc: NavierData
) -> Tuple[BoundaryTrace, BoundaryTrace]:
    """Neumann pair ``(d_nu u, d_nu lap u)`` of the solution with zero source."""
    u, m = solve_navier(op, ScalarField.zeros(op.grid), bc)
    return normal_derivative(u), normal_derivative(m)


def trace_functional(grid: DomainGrid, eta_u: np.ndarray, eta_m: np.ndarray) -> np.ndarray:
    """``T^T eta`` for the normal-difference rows ``T`` acting on the mixed unknown."""
    normal = grid.operators.normal
    return np.concatenate([normal.T @ eta_u, normal.T @ eta_m])


def trace_adjoint_response(
    op: AssembledOperator, eta_u: np.ndarray, eta_m: np.ndarray
) -> Tuple[ScalarField, np.ndarray]:
    """Field representing the functional ``bc -> eta_u . d_nu u + eta_m . d_nu lap u``.

    With ``x = (u, m)`` the mixed solution, the functional is ``eta^T T x``. Solving
    ``K^T z = T^T eta`` gives the response ``z``; its m-block divided by the interior
    quadrature weight is returned on the interior, together with ``z`` itself.
    """
    grid = op.grid
    z = solve_transposed(op, trace_functional(grid, eta_u, eta_m))
    return _interior_field(op, z[grid.size :] / (grid.hx * grid.hy)), z
