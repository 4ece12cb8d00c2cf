"""Global solution bases, Runge approximation on sub-rectangles and point control."""

from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Sequence, Tuple

import numpy as np
from scipy import linalg

from bilab.errors import GridError, PreconditionError, RankDeficientError
from bilab.grid import DomainGrid, ScalarField, boundary_mode, jet
from bilab.linear import AssembledOperator, NavierData, apply_L, residual_scale, solve_linear
from bilab.logging import configure_module_logger

logger = configure_module_logger(__name__)

LOCAL_RESIDUAL_TOL = 1e-8
CONSTRAINT_TOL = 1e-6
RANK_TOL = 1e-10

Targets = Tuple[float, Tuple[float, float], float]


@dataclass
class SolutionBasis:
    """Solutions of L u = 0 for the first K perimeter modes.

    Member ``j`` carries mode ``j // 2`` in the ``f0`` slot when ``j`` is even and in the
    ``f1`` slot when it is odd.
    """

    op: AssembledOperator
    members: List[ScalarField] = field(default_factory=list)
    boundary_data: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def grid(self) -> DomainGrid:
        return self.op.grid

    def __len__(self) -> int:
        return len(self.members)

    @cached_property
    def jets(self) -> np.ndarray:
        """Jets of all members, shape ``(K, 4, nx, ny)``."""
        return np.stack([jet(u) for u in self.members])

    def combine(self, coefficients: np.ndarray) -> ScalarField:
        values = np.tensordot(coefficients, np.stack([u.values for u in self.members]), axes=1)
        traces = np.tensordot(
            coefficients, np.stack([u.laplacian_trace() for u in self.members]), axes=1
        )
        return ScalarField(self.grid, values, traces)

    def truncated(self, K: int) -> "SolutionBasis":
        """The first K members, sharing the already computed solutions."""
        if not 1 <= K <= len(self):
            raise PreconditionError(f"Cannot truncate a basis of {len(self)} members to {K}")
        return SolutionBasis(op=self.op, members=self.members[:K], boundary_data=self.boundary_data[:K])

    def boundary_singular_values(self) -> np.ndarray:
        return linalg.svdvals(self.boundary_data)


def build_basis(op: AssembledOperator, K: int) -> SolutionBasis:
    if K < 1:
        raise PreconditionError(f"Basis size must be positive, got {K}")
    grid = op.grid
    zero = np.zeros(grid.n_boundary)
    source = ScalarField.zeros(grid)
    members = []
    data = []
    for j in range(K):
        mode = boundary_mode(grid, j // 2)
        f0, f1 = (mode, zero) if j % 2 == 0 else (zero, mode)
        members.append(solve_linear(op, source, NavierData.from_arrays(grid, f0, f1)))
        data.append(np.concatenate([f0, f1]))
    logger.debug(f"Built solution basis with {K} members")
    return SolutionBasis(op=op, members=members, boundary_data=np.array(data))


@dataclass(frozen=True)
class Subdomain:
    """Closed sub-rectangle of nodes ``i0..i1`` by ``j0..j1``."""

    grid: DomainGrid
    i0: int
    i1: int
    j0: int
    j1: int

    def __post_init__(self):
        grid = self.grid
        if not (0 <= self.i0 < self.i1 < grid.nx and 0 <= self.j0 < self.j1 < grid.ny):
            raise GridError(f"Invalid subdomain bounds {self.bounds}")
        spans_x = self.i0 == 0 and self.i1 == grid.nx - 1
        spans_y = self.j0 == 0 and self.j1 == grid.ny - 1
        if spans_x and spans_y:
            raise GridError("Subdomain covers the whole grid")
        if (spans_x and 0 < self.j0 and self.j1 < grid.ny - 1) or (
            spans_y and 0 < self.i0 and self.i1 < grid.nx - 1
        ):
            raise GridError(f"Complement of subdomain {self.bounds} is not connected")

    @classmethod
    def centered(
        cls, grid: DomainGrid, diameter: float, center: Tuple[float, float] = (0.5, 0.5)
    ) -> "Subdomain":
        """Square around ``center`` with the given diagonal length."""
        half = diameter / (2.0 * np.sqrt(2.0))
        i0, j0 = grid.node(center[0] - half, center[1] - half)
        i1, j1 = grid.node(center[0] + half, center[1] + half)
        return cls(grid, i0, i1, j0, j1)

    @property
    def bounds(self) -> Tuple[int, int, int, int]:
        return (self.i0, self.i1, self.j0, self.j1)

    @cached_property
    def mask(self) -> np.ndarray:
        mask = np.zeros(self.grid.shape, dtype=bool)
        mask[self.i0 : self.i1 + 1, self.j0 : self.j1 + 1] = True
        return mask

    @cached_property
    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.grid.shape, dtype=bool)
        mask[self.i0 + 1 : self.i1, self.j0 + 1 : self.j1] = True
        return mask & self.grid.interior_mask


def local_residual(op: AssembledOperator, u: ScalarField, omega1: Subdomain) -> float:
    """Normalized sup of L u over the nodes strictly inside the subdomain."""
    residual = apply_L(op, u).values[omega1.interior_mask]
    if residual.size == 0:
        return 0.0
    return float(np.max(np.abs(residual))) / residual_scale(u, mask=omega1.interior_mask)


def local_c2_error(difference: np.ndarray, omega1: Subdomain) -> float:
    """Sup over the subdomain of value, gradient and Laplacian entries of a jet."""
    return float(np.max(np.abs(difference[:, omega1.mask])))


def point_source_solution(
    op: AssembledOperator, omega1: Subdomain, source: Tuple[float, float]
) -> ScalarField:
    """Discrete point source with zero Navier data, scaled to unit C2 surrogate on the subdomain."""
    grid = op.grid
    i, j = grid.node(*source)
    if omega1.mask[i, j] or not grid.interior_mask[i, j]:
        raise PreconditionError(f"Source node ({i}, {j}) must be interior and outside the subdomain")
    F = np.zeros(grid.shape)
    F[i, j] = 1.0 / (grid.hx * grid.hy)
    u = solve_linear(op, ScalarField(grid, F), NavierData.zeros(grid))
    return u / local_c2_error(jet(u), omega1)


@dataclass
class LocalApproximation:
    coefficients: np.ndarray
    error: float
    condition: float


def _weighted_rows(jets: np.ndarray, mask: np.ndarray, weights: Sequence[float]) -> np.ndarray:
    """Rows ``sqrt(w) * jet entries`` over masked nodes; jets have shape ``(..., 4, nx, ny)``."""
    scale = np.sqrt(np.array([weights[0], weights[1], weights[1], weights[2]], dtype=float))
    selected = jets[..., mask] * scale[:, None]
    return selected.reshape(selected.shape[:-2] + (-1,))


def approximate_local_solution(
    basis: SolutionBasis,
    u_local: ScalarField,
    omega1: Subdomain,
    reg: float = 1e-14,
    weights: Sequence[float] = (1.0, 1.0, 1.0),
) -> LocalApproximation:
    """Regularized least-squares fit of u_local on the subdomain by basis combinations.

    Misfits of value, gradient and Laplacian enter with ``weights``; the regularization
    is ``reg`` times the largest squared singular value of the equilibrated design.
    """
    residual = local_residual(basis.op, u_local, omega1)
    if residual > LOCAL_RESIDUAL_TOL:
        logger.error(f"Local field does not solve L u = 0 on the subdomain: {residual:.3e}")
        raise PreconditionError(f"Local field is not a solution on the subdomain ({residual:.3e})")

    design = _weighted_rows(basis.jets, omega1.mask, weights).T
    target = _weighted_rows(jet(u_local), omega1.mask, weights)
    column_scale = np.linalg.norm(design, axis=0)
    column_scale[column_scale == 0.0] = 1.0
    design = design / column_scale

    singular = linalg.svdvals(design)
    condition = float(singular[0] / singular[-1]) if singular[-1] > 0 else float("inf")
    penalty = np.sqrt(reg) * singular[0] * np.eye(design.shape[1])
    stacked = np.vstack([design, penalty])
    rhs = np.concatenate([target, np.zeros(design.shape[1])])
    solution, *_ = linalg.lstsq(stacked, rhs)
    coefficients = solution / column_scale

    difference = np.tensordot(coefficients, basis.jets, axes=1) - jet(u_local)
    error = local_c2_error(difference, omega1)
    if condition > 1e12:
        logger.warning(f"Runge design is badly conditioned ({condition:.3e}); error {error:.3e}")
    logger.debug(f"Runge approximation with K={len(basis)}: error {error:.3e}")
    return LocalApproximation(coefficients=coefficients, error=error, condition=condition)


def point_control(
    basis: SolutionBasis,
    x0: Tuple[float, float],
    targets: Targets = (4.0, (4.0, 4.0), 4.0),
    reg: float = 0.0,
) -> ScalarField:
    """Minimum-norm basis combination with prescribed value, gradient and Laplacian at x0.

    Singular values of the 4 point constraints below ``max(RANK_TOL, reg)`` times the
    largest one count as rank deficiency.
    """
    if len(basis) <= 4:
        raise PreconditionError(f"Point control needs more than 4 basis members, got {len(basis)}")
    i, j = basis.grid.node(*x0)
    constraints = basis.jets[:, :, i, j].T
    value, (gx, gy), lap = targets
    goal = np.array([value, gx, gy, lap], dtype=float)

    singular = linalg.svdvals(constraints)
    cutoff = max(RANK_TOL, reg)
    if singular[-1] <= cutoff * singular[0]:
        logger.error(f"Point constraints at node ({i}, {j}) are rank deficient")
        raise RankDeficientError(f"Point constraints at node ({i}, {j}) are rank deficient")

    coefficients, *_ = linalg.lstsq(constraints, goal, cond=cutoff)
    u = basis.combine(coefficients)
    reached = jet(u)[:, i, j]
    miss = float(np.max(np.abs(reached - goal)))
    if miss > CONSTRAINT_TOL * max(1.0, float(np.max(np.abs(goal)))):
        logger.error(f"Point control missed its targets by {miss:.3e}")
        raise RankDeficientError(f"Point control missed its targets by {miss:.3e}")
    return u
