"""Contraction fixed point, the solution map S(v) = w + v + Phi(v) and its converse.

All maps work around a base solution ``w`` of ``lap^2 w + Q(x, w, grad w, lap w) = 0``
with the linearization ``L = lap^2 + A lap + X . grad + V`` taken at the jet of ``w``.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from bilab.errors import ContractionError, NewtonError, PreconditionError
from bilab.grid import ScalarField, c2_norm, laplacian
from bilab.linear import (
    AssembledOperator,
    NavierData,
    assemble,
    interior_residual,
    residual_scale,
    solve_linear,
)
from bilab.logging import configure_module_logger
from bilab.nonlinearity import Nonlinearity, eval_Q, linearized_coeffs, remainder_R

logger = configure_module_logger(__name__)


@dataclass(frozen=True)
class FixedPointConfig:
    """Iteration controls for the contraction ``r -> -G(R(v + r))``.

    Attributes:
        tol: Stop when successive iterates differ by less than this in sup-norm
        max_iter: Iteration limit
        delta_cap: Radius of the contraction ball in the c2 surrogate norm
        quad_nodes: Gauss-Legendre nodes for the remainder integral
        base_tol: Admissible normalized residual of the base solution
    """

    tol: float = 1e-12
    max_iter: int = 50
    delta_cap: float = 0.5
    quad_nodes: int = 8
    base_tol: float = 1e-8

    def __post_init__(self):
        if self.tol <= 0 or self.delta_cap <= 0 or self.base_tol <= 0:
            raise PreconditionError("Fixed-point tolerances and delta_cap must be positive")
        if self.max_iter < 1:
            raise PreconditionError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.quad_nodes < 2:
            raise PreconditionError(f"quad_nodes must be >= 2, got {self.quad_nodes}")


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-10
    max_iter: int = 30
    divergence_factor: float = 1e6


def linearize(Q: Nonlinearity, w: ScalarField) -> AssembledOperator:
    """Assemble L with the coefficients of Q linearized at the jet of w."""
    coeffs = linearized_coeffs(Q, w)
    return assemble(w.grid, coeffs.A, coeffs.X, coeffs.V)


def nonlinear_residual(
    Q: Nonlinearity, u: ScalarField, F: Optional[ScalarField] = None
) -> float:
    """Normalized interior sup of lap^2 u + Q(x, u, grad u, lap u) - F."""
    residual = laplacian(laplacian(u)).values + eval_Q(Q, u).values
    if F is not None:
        residual = residual - F.values
    return float(np.max(np.abs(residual[u.grid.interior_mask]))) / residual_scale(u, F)


def _check_base(Q: Nonlinearity, w: ScalarField, cfg: FixedPointConfig) -> None:
    residual = nonlinear_residual(Q, w)
    if residual > cfg.base_tol:
        logger.error(f"Base field is not a solution: residual {residual:.3e}")
        raise PreconditionError(
            f"Base field does not solve the nonlinear equation (residual {residual:.3e})"
        )


def _check_ball(h: ScalarField, cfg: FixedPointConfig, what: str) -> None:
    norm = c2_norm(h)
    if norm > cfg.delta_cap:
        logger.error(f"{what} has c2 norm {norm:.3e} > delta_cap {cfg.delta_cap}")
        raise ContractionError(f"contraction ball exceeded; shrink v ({what} = {norm:.3e})")


def fixed_point_Phi(
    Q: Nonlinearity,
    w: ScalarField,
    v: ScalarField,
    cfg: FixedPointConfig = FixedPointConfig(),
    op: Optional[AssembledOperator] = None,
    history: Optional[List[float]] = None,
) -> Tuple[ScalarField, int]:
    """Solve L r = -R(v + r) with zero Navier data by fixed-point iteration from r = 0.

    Args:
        Q: Nonlinearity
        w: Base solution
        v: Solution of the linearized equation inside the contraction ball
        cfg: Iteration controls
        op: Linearization at w, assembled on demand when omitted
        history: If given, receives the sup-difference of every iteration

    Returns:
        The fixed point r and the number of iterations used
    """
    _check_base(Q, w, cfg)
    _check_ball(v, cfg, "v")
    op = linearize(Q, w) if op is None else op
    zero_bc = NavierData.zeros(w.grid)

    r = ScalarField.zeros(w.grid)
    for iteration in range(1, cfg.max_iter + 1):
        source = remainder_R(Q, w, v + r, cfg.quad_nodes)
        r_next = -1.0 * solve_linear(op, source, zero_bc)
        step = (r_next - r).sup()
        r = r_next
        if history is not None:
            history.append(step)
        logger.debug(f"Fixed-point iteration {iteration}: step {step:.3e}")
        _check_ball(r, cfg, "Phi(v)")
        if step < cfg.tol:
            return r, iteration

    logger.error(f"Fixed point did not converge in {cfg.max_iter} iterations")
    raise ContractionError(f"Fixed point did not converge in {cfg.max_iter} iterations")


def solution_map_S(
    Q: Nonlinearity,
    w: ScalarField,
    v: ScalarField,
    cfg: FixedPointConfig = FixedPointConfig(),
    op: Optional[AssembledOperator] = None,
) -> ScalarField:
    """u = w + v + Phi(v)."""
    r, _ = fixed_point_Phi(Q, w, v, cfg, op)
    return w + v + r


def converse_v(
    Q: Nonlinearity,
    w: ScalarField,
    u: ScalarField,
    cfg: FixedPointConfig = FixedPointConfig(),
    op: Optional[AssembledOperator] = None,
) -> ScalarField:
    """v = G(0, (u - w)|bd, lap(u - w)|bd), the preimage of u under the solution map."""
    residual = nonlinear_residual(Q, u)
    if residual > cfg.base_tol:
        logger.error(f"Field is not a solution: residual {residual:.3e}")
        raise PreconditionError(
            f"Field does not solve the nonlinear equation (residual {residual:.3e})"
        )
    difference = u - w
    _check_ball(difference, cfg, "u - w")
    op = linearize(Q, w) if op is None else op
    return solve_linear(op, ScalarField.zeros(w.grid), NavierData.of(difference))


def directional_derivative_S(
    Q: Nonlinearity,
    w: ScalarField,
    v: ScalarField,
    h: ScalarField,
    eps: float,
    cfg: FixedPointConfig = FixedPointConfig(),
    op: Optional[AssembledOperator] = None,
) -> ScalarField:
    """Central difference (S(v + eps h) - S(v - eps h)) / (2 eps)."""
    if eps <= 0:
        raise PreconditionError(f"eps must be positive, got {eps}")
    op = linearize(Q, w) if op is None else op
    plus = solution_map_S(Q, w, v + eps * h, cfg, op)
    minus = solution_map_S(Q, w, v - eps * h, cfg, op)
    return (plus - minus) / (2.0 * eps)


def solve_nonlinear(
    Q: Nonlinearity,
    F: ScalarField,
    bc: NavierData,
    u0: Optional[ScalarField] = None,
    cfg: NewtonConfig = NewtonConfig(),
) -> ScalarField:
    """Newton iteration for lap^2 u + Q(x, u, grad u, lap u) = F with Navier data bc.

    The first step also corrects the boundary data of ``u0``; later steps use zero data.
    """
    grid = F.grid
    u = ScalarField.zeros(grid) if u0 is None else u0
    initial = None
    for iteration in range(cfg.max_iter + 1):
        bc_defect = bc - NavierData.of(u)
        residual = nonlinear_residual(Q, u, F)
        if not np.isfinite(residual):
            raise NewtonError(f"Newton iteration produced a non-finite residual at step {iteration}")
        initial = residual if initial is None else initial
        logger.debug(f"Newton step {iteration}: residual {residual:.3e}, bc defect {bc_defect.sup():.3e}")
        if residual <= cfg.tol and bc_defect.sup() <= cfg.tol:
            logger.info(f"Newton converged in {iteration} steps (residual {residual:.3e})")
            return u
        if iteration == cfg.max_iter:
            break
        if residual > cfg.divergence_factor * max(initial, cfg.tol):
            logger.error(f"Newton diverged: residual {residual:.3e}")
            raise NewtonError(f"Newton iteration diverged (residual {residual:.3e})")

        op = linearize(Q, u)
        defect = F.values - laplacian(laplacian(u)).values - eval_Q(Q, u).values
        u = u + solve_linear(op, ScalarField(grid, defect), bc_defect)

    logger.error(f"Newton did not converge in {cfg.max_iter} steps")
    raise NewtonError(f"Newton iteration did not converge in {cfg.max_iter} steps")


@dataclass
class QuadraticSmallnessReport:
    """c2_norm(Phi(s v)) / c2_norm(s v)^2 along a fixed direction."""

    scales: List[float] = field(default_factory=list)
    phi_norms: List[float] = field(default_factory=list)
    ratios: List[float] = field(default_factory=list)
    iterations: List[int] = field(default_factory=list)

    @property
    def bounded(self) -> bool:
        """Ratios at smaller scales stay within a factor 2 of the first one."""
        return bool(self.ratios) and max(self.ratios) <= 2.0 * self.ratios[0]


def quadratic_smallness(
    Q: Nonlinearity,
    w: ScalarField,
    v: ScalarField,
    scales: Sequence[float] = (1.0, 0.5, 0.25),
    cfg: FixedPointConfig = FixedPointConfig(),
    op: Optional[AssembledOperator] = None,
) -> QuadraticSmallnessReport:
    op = linearize(Q, w) if op is None else op
    report = QuadraticSmallnessReport()
    for scale in scales:
        scaled = scale * v
        r, iterations = fixed_point_Phi(Q, w, scaled, cfg, op)
        norm = c2_norm(r)
        report.scales.append(float(scale))
        report.phi_norms.append(norm)
        report.ratios.append(norm / c2_norm(scaled) ** 2)
        report.iterations.append(iterations)
        logger.debug(f"Scale {scale}: |Phi| = {norm:.3e} in {iterations} iterations")
    return report


@dataclass
class TangencyReport:
    """sup |DS(0) h - h| for each finite-difference step."""

    eps: List[float] = field(default_factory=list)
    errors: List[float] = field(default_factory=list)

    @property
    def ratios(self) -> List[float]:
        return [a / b if b > 0 else float("inf") for a, b in zip(self.errors, self.errors[1:])]


def tangency_check(
    Q: Nonlinearity,
    w: ScalarField,
    h: ScalarField,
    eps: Sequence[float] = (1e-3, 5e-4),
    cfg: FixedPointConfig = FixedPointConfig(),
    op: Optional[AssembledOperator] = None,
) -> TangencyReport:
    op = linearize(Q, w) if op is None else op
    zero = ScalarField.zeros(w.grid)
    report = TangencyReport()
    for step in eps:
        derivative = directional_derivative_S(Q, w, zero, h, step, cfg, op)
        report.eps.append(float(step))
        report.errors.append((derivative - h).sup())
    return report


def linearized_residual(Q: Nonlinearity, u: ScalarField, h: ScalarField) -> float:
    """Normalized interior residual of h for the linearization at the jet of u."""
    return interior_residual(linearize(Q, u), h)
