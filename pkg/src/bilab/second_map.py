"""Clamped space Y, the projection onto Z = L(Y), its inverse and the second solution map.

Elements of Z are compared on interior nodes only. The boundary rows of L carry the
one-sided closure and are not part of the interior equation, so ``project_Z`` returns
fields that vanish on the boundary.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from bilab.cauchy import cauchy_data, cauchy_norm
from bilab.errors import (
    ContractionError,
    GridError,
    NotInRangeError,
    PreconditionError,
    ProjectionError,
)
from bilab.grid import DomainGrid, ScalarField, gradient, laplacian
from bilab.linear import AssembledOperator, apply_L
from bilab.logging import configure_module_logger
from bilab.nonlinearity import Nonlinearity, eval_Q, linearized_coeffs
from bilab.solution_map import (
    FixedPointConfig,
    linearize,
    nonlinear_residual,
    solution_map_S,
)

logger = configure_module_logger(__name__)

# zero on this many outer node layers makes all four one-sided Cauchy traces vanish
CLAMPED_LAYERS = 4
RANGE_TOL = 1e-8
MATCH_TOL = 1e-8
COEFFICIENT_TOL = 1e-10
PROJECTION_KEY = "clamped_projection"


@dataclass(frozen=True)
class ClampedSpace:
    """Fields vanishing on the ``layers`` outermost node layers."""

    grid: DomainGrid
    layers: int = CLAMPED_LAYERS

    def __post_init__(self):
        if 2 * self.layers >= min(self.grid.nx, self.grid.ny):
            raise GridError(
                f"Grid {self.grid.nx}x{self.grid.ny} has no nodes beyond {self.layers} layers"
            )

    @cached_property
    def free_mask(self) -> np.ndarray:
        return self.grid.layer >= self.layers

    @cached_property
    def free_index(self) -> np.ndarray:
        return np.flatnonzero(self.free_mask.ravel())

    @property
    def dimension(self) -> int:
        return self.free_index.size

    def contains(self, u: ScalarField, tol: float = 0.0) -> bool:
        return float(np.max(np.abs(u.values[~self.free_mask]), initial=0.0)) <= tol

    def restrict(self, u: ScalarField) -> ScalarField:
        """Zero the clamped layers; idempotent."""
        return ScalarField(self.grid, np.where(self.free_mask, u.values, 0.0))

    def embed(self, coefficients: np.ndarray) -> ScalarField:
        values = np.zeros(self.grid.size)
        values[self.free_index] = coefficients
        return ScalarField(self.grid, values.reshape(self.grid.shape))


def clamped_bump(
    grid: DomainGrid,
    amplitude: float = 0.05,
    center: Tuple[float, float] = (0.5, 0.5),
    radius: float = 0.3,
) -> ScalarField:
    """Smooth compactly supported bump ``amplitude * exp(1 - 1 / (1 - r^2 / radius^2))``."""
    r2 = ((grid.x - center[0]) ** 2 + (grid.y - center[1]) ** 2) / radius**2
    gap = np.clip(1.0 - r2, 1e-300, None)
    values = np.where(r2 < 1.0, amplitude * np.exp(1.0 - 1.0 / gap), 0.0)
    return ClampedSpace(grid).restrict(ScalarField(grid, values))


@dataclass(frozen=True)
class _ClampedProjection:
    space: ClampedSpace
    lu: object
    scale: float
    n_rows: int


def _projection(op: AssembledOperator) -> _ClampedProjection:
    cached = op.cache.get(PROJECTION_KEY)
    if cached is not None:
        return cached

    grid = op.grid
    space = ClampedSpace(grid)
    scale = (grid.hx * grid.hy) ** 2
    rows = op.operator_matrix[grid.interior_index]
    basis = (rows[:, space.free_index] * scale).tocsc()
    n_rows = basis.shape[0]
    augmented = sparse.bmat(
        [[sparse.identity(n_rows), basis], [basis.T, None]], format="csc"
    )
    logger.debug(f"Factorizing projection system of dimension {augmented.shape[0]}")
    try:
        lu = splu(augmented)
    except RuntimeError as e:
        logger.error(f"Projection system is singular: {e}")
        raise ProjectionError("L restricted to the clamped space is rank deficient") from e
    pivots = np.abs(lu.U.diagonal())
    if pivots.min() <= 1e-14 * pivots.max():
        logger.error(f"Projection pivot ratio {pivots.min() / pivots.max():.3e}")
        raise ProjectionError("L restricted to the clamped space is rank deficient")

    projection = _ClampedProjection(space=space, lu=lu, scale=scale, n_rows=n_rows)
    op.cache[PROJECTION_KEY] = projection
    return projection


def apply_L_clamped(op: AssembledOperator, y: ScalarField) -> ScalarField:
    """L y on interior nodes, zero on the boundary: the element of Z represented by y."""
    values = np.where(op.grid.interior_mask, apply_L(op, y).values, 0.0)
    return ScalarField(op.grid, values)


def project_Z(op: AssembledOperator, u: ScalarField) -> Tuple[ScalarField, ScalarField]:
    """Least-squares projection of u onto Z.

    Solves ``min ||L y - u||`` over clamped y on the interior nodes through the
    augmented system ``[[I, B], [B^T, 0]]``, whose second block row is the normal
    equation ``L^T (L y - u) = 0``.

    Returns:
        ``(P u, y)`` with ``P u = L y`` on the interior
    """
    grid = op.grid
    projection = _projection(op)
    rhs = np.zeros(projection.n_rows + projection.space.dimension)
    rhs[: projection.n_rows] = u.flat[grid.interior_index]
    solution = projection.lu.solve(rhs)
    if not np.all(np.isfinite(solution)):
        raise ProjectionError("Projection produced non-finite values")
    y = projection.space.embed(projection.scale * solution[projection.n_rows :])
    return apply_L_clamped(op, y), y


def distance_to_Z(op: AssembledOperator, z: ScalarField) -> Tuple[float, ScalarField]:
    """Relative interior sup-distance of z to Z, and the clamped preimage of its projection."""
    projected, y = project_Z(op, z)
    interior = op.grid.interior_mask
    size = float(np.max(np.abs(z.values[interior])))
    if size == 0.0:
        return 0.0, y
    gap = float(np.max(np.abs(z.values[interior] - projected.values[interior])))
    return gap / size, y


def inverse_on_Z(op: AssembledOperator, z: ScalarField, tol: float = RANGE_TOL) -> ScalarField:
    """Clamped y with L y = z on the interior."""
    distance, y = distance_to_Z(op, z)
    if distance > tol:
        logger.error(f"Field is not in Z: relative distance {distance:.3e}")
        raise NotInRangeError(f"Field is not in the range of L on clamped fields ({distance:.3e})")
    return y


def _lower_order(op: AssembledOperator, r: ScalarField) -> np.ndarray:
    """(A lap + X . grad + V) r."""
    grad = gradient(r).values
    return (
        op.A.values * laplacian(r).values
        + op.X.values[0] * grad[0]
        + op.X.values[1] * grad[1]
        + op.V.values * r.values
    )


@dataclass
class SecondMapResult:
    u2: ScalarField
    cauchy_defect: float
    iterations: int
    residual: float
    r: ScalarField

    def to_dict(self) -> dict:
        return {
            "cauchy_defect": self.cauchy_defect,
            "iterations": self.iterations,
            "q2_residual": self.residual,
            "r_sup": self.r.sup(),
        }


def _check_base_pair(
    Q1: Nonlinearity,
    Q2: Nonlinearity,
    w1: ScalarField,
    w2: ScalarField,
    cfg: FixedPointConfig,
) -> None:
    for name, Q, w in (("w1", Q1, w1), ("w2", Q2, w2)):
        residual = nonlinear_residual(Q, w)
        if residual > cfg.base_tol:
            logger.error(f"{name} does not solve its equation: residual {residual:.3e}")
            raise PreconditionError(f"{name} does not solve its equation ({residual:.3e})")
    mismatch = cauchy_norm(cauchy_data(w1) - cauchy_data(w2))
    if mismatch > MATCH_TOL:
        logger.error(f"Base solutions have different Cauchy data: {mismatch:.3e}")
        raise PreconditionError(f"Base solutions have different Cauchy data ({mismatch:.3e})")


def second_solution_map_T(
    Q1: Nonlinearity,
    Q2: Nonlinearity,
    w1: ScalarField,
    w2: ScalarField,
    v: ScalarField,
    cfg: FixedPointConfig = FixedPointConfig(),
    op1: Optional[AssembledOperator] = None,
    op2: Optional[AssembledOperator] = None,
) -> SecondMapResult:
    """Solution of the Q2 equation with the Cauchy data of u_{1,v} = S_{Q1,w1}(v).

    Iterates ``r -> G(P f(v, r))`` with
    ``f(v, r) = (A2 lap + X2 . grad + V2) r + Q2(u_{1,v} - r) - Q1(u_{1,v})``
    from ``r = w1 - w2`` and returns ``u2 = u_{1,v} - r``. A large Q2 residual of the
    result means f left Z, i.e. the Cauchy data of u_{1,v} are not reached by Q2.
    """
    _check_base_pair(Q1, Q2, w1, w2, cfg)
    op2 = linearize(Q2, w2) if op2 is None else op2
    u1 = solution_map_S(Q1, w1, v, cfg, op1)
    q1_values = eval_Q(Q1, u1).values

    r = w1 - w2
    previous = np.inf
    for iteration in range(1, cfg.max_iter + 1):
        f = _lower_order(op2, r) + eval_Q(Q2, u1 - r).values - q1_values
        _, r_next = project_Z(op2, ScalarField(op2.grid, f))
        step = (r_next - r).sup()
        r = r_next
        logger.debug(f"Second-map iteration {iteration}: step {step:.3e}")
        if not np.isfinite(step) or step > 1e3 * max(1.0, cfg.delta_cap):
            logger.error(f"Second-map iteration diverged at step {iteration}")
            raise ContractionError(f"Second-map iteration diverged at step {iteration}")
        stalled = step < 1e-9 * max(1.0, r.sup()) and step >= 0.5 * previous
        if step < cfg.tol or stalled:
            break
        previous = step
    else:
        logger.error(f"Second-map iteration did not converge in {cfg.max_iter} steps")
        raise ContractionError(f"Second-map iteration did not converge in {cfg.max_iter} steps")

    u2 = u1 - r
    defect = cauchy_norm(cauchy_data(u2) - cauchy_data(u1))
    residual = nonlinear_residual(Q2, u2)
    logger.info(
        f"Second map: {iteration} iterations, defect {defect:.3e}, Q2 residual {residual:.3e}"
    )
    return SecondMapResult(
        u2=u2, cauchy_defect=defect, iterations=iteration, residual=residual, r=r
    )


def dT_identity_check(
    Q1: Nonlinearity,
    Q2: Nonlinearity,
    w1: ScalarField,
    w2: ScalarField,
    h: ScalarField,
    eps: float,
    cfg: FixedPointConfig = FixedPointConfig(),
) -> float:
    """sup |DT(0) h - h| with DT(0) h taken by central differences."""
    mismatch = linearized_coeffs(Q1, w1).max_difference(linearized_coeffs(Q2, w2))
    if mismatch > COEFFICIENT_TOL:
        logger.error(f"Linearized coefficients differ by {mismatch:.3e}")
        raise PreconditionError(
            f"Linearized coefficients of the two pairs differ by {mismatch:.3e}"
        )
    if eps <= 0:
        raise PreconditionError(f"eps must be positive, got {eps}")
    op1 = linearize(Q1, w1)
    op2 = linearize(Q2, w2)
    plus = second_solution_map_T(Q1, Q2, w1, w2, eps * h, cfg, op1, op2).u2
    minus = second_solution_map_T(Q1, Q2, w1, w2, -eps * h, cfg, op1, op2).u2
    return ((plus - minus) / (2.0 * eps) - h).sup()
