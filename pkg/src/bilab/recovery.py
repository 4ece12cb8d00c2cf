"""Linearized coefficient recovery, gauge transforms and the reachable-set sweep.

For two operators ``L1``, ``L2`` with the same Navier data ``g`` and mixed solutions
``x1``, ``x2``, and a boundary functional ``eta`` on the normal traces ``T x``, the
transposed response ``v2`` of ``L2`` satisfies

    <v2, (A1 - A2) lap v1 + (X1 - X2) . grad v1 + (V1 - V2) v1> = eta . (T x2 - T x1)

exactly in the trapezoidal inner product. Expanding the coefficient differences in a
polynomial basis turns a set of such pairs into a linear system.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize

from bilab.cauchy import cauchy_data, cauchy_norm
from bilab.errors import PreconditionError
from bilab.grid import (
    DomainGrid,
    ScalarField,
    VectorField,
    c2_norm,
    gradient,
    inner_product,
    jet,
    laplacian,
    normal_derivative,
    random_boundary_data,
)
from bilab.linear import (
    AssembledOperator,
    NavierData,
    solve_navier,
    trace_adjoint_response,
)
from bilab.logging import configure_module_logger
from bilab.nonlinearity import (
    GaugeTransformed,
    Nonlinearity,
    eval_Q,
    linearized_coeffs,
)
from bilab.runge import SolutionBasis, point_control
from bilab.second_map import second_solution_map_T
from bilab.solution_map import FixedPointConfig, linearize, solution_map_S

logger = configure_module_logger(__name__)

CLAMPED_TOL = 1e-12
EQUAL_COEFFICIENT_TOL = 1e-8
ROOT_XTOL = 1e-12
CONDITION_WARNING = 1e12


@dataclass(frozen=True, eq=False)
class SolutionPair:
    """One forward solution of each operator for shared Navier data, plus the adjoint response.

    ``adjoint_state`` is the full transposed-system solution behind ``v2``.
    """

    index: int
    v1: ScalarField
    u2: ScalarField
    v2: ScalarField
    eta_u: np.ndarray
    eta_m: np.ndarray
    adjoint_state: np.ndarray
    rhs: float


def generate_solution_pairs(
    op1: AssembledOperator,
    op2: AssembledOperator,
    n_pairs: int,
    seed: int,
    n_modes: int = 6,
) -> List[SolutionPair]:
    """Random Navier data and boundary functionals, one generator ``[seed, k]`` per pair."""
    grid = op1.grid
    if op2.grid != grid:
        raise PreconditionError("Operators live on different grids")
    zero = ScalarField.zeros(grid)
    pairs = []
    for k in range(n_pairs):
        rng = np.random.default_rng([seed, k])
        bc = NavierData.from_arrays(
            grid,
            random_boundary_data(grid, rng, n_modes),
            random_boundary_data(grid, rng, n_modes),
        )
        eta_u = random_boundary_data(grid, rng, n_modes)
        eta_m = random_boundary_data(grid, rng, n_modes)

        v1, m1 = solve_navier(op1, zero, bc)
        u2, m2 = solve_navier(op2, zero, bc)
        rhs = float(
            eta_u @ (normal_derivative(u2).values - normal_derivative(v1).values)
            + eta_m @ (normal_derivative(m2).values - normal_derivative(m1).values)
        )
        v2, adjoint_state = trace_adjoint_response(op2, eta_u, eta_m)
        pairs.append(
            SolutionPair(
                index=k,
                v1=v1,
                u2=u2,
                v2=v2,
                eta_u=eta_u,
                eta_m=eta_m,
                adjoint_state=adjoint_state,
                rhs=rhs,
            )
        )
    logger.debug(f"Generated {n_pairs} solution pairs (seed {seed})")
    return pairs


def _chebyshev_degrees(K: int) -> List[Tuple[int, int]]:
    degrees = []
    total = 0
    while len(degrees) < K:
        for a in range(total, -1, -1):
            degrees.append((a, total - a))
        total += 1
    return degrees[:K]


def coefficient_basis(grid: DomainGrid, K: int) -> np.ndarray:
    """Products ``T_a(2x - 1) T_b(2y - 1)`` in graded total-degree order, shape ``(K, nx, ny)``."""
    if K < 1:
        raise PreconditionError(f"Basis dimension must be positive, got {K}")
    cheb = np.polynomial.chebyshev.Chebyshev
    return np.stack(
        [
            cheb.basis(a)(2.0 * grid.x - 1.0) * cheb.basis(b)(2.0 * grid.y - 1.0)
            for a, b in _chebyshev_degrees(K)
        ]
    )


@dataclass
class IdentitySystem:
    """Rows ``[<lap v1 v2, e_j>, <dx v1 v2, e_j>, <dy v1 v2, e_j>, <v1 v2, e_j>]`` per pair."""

    grid: DomainGrid
    K: int
    matrix: np.ndarray
    rhs: np.ndarray
    pair_index: List[int] = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_unknowns(self) -> int:
        return self.matrix.shape[1]

    def row_residuals(self, coefficients: np.ndarray) -> np.ndarray:
        """``|M c - rhs|`` of every row, relative to the largest row entry when that exceeds 1."""
        scale = np.maximum(np.max(np.abs(self.matrix), axis=1), 1.0)
        return np.abs(self.matrix @ coefficients - self.rhs) / scale


def identity_row(pair: SolutionPair, basis: np.ndarray) -> np.ndarray:
    grid = pair.v1.grid
    grad = gradient(pair.v1).values
    products = (
        laplacian(pair.v1).values * pair.v2.values,
        grad[0] * pair.v2.values,
        grad[1] * pair.v2.values,
        pair.v1.values * pair.v2.values,
    )
    weighted = [grid.weights * product for product in products]
    return np.concatenate(
        [np.tensordot(basis, product, axes=([1, 2], [0, 1])) for product in weighted]
    )


def assemble_identity_system(pairs: Sequence[SolutionPair], K: int) -> IdentitySystem:
    if not pairs:
        raise PreconditionError("At least one solution pair is required")
    grid = pairs[0].v1.grid
    basis = coefficient_basis(grid, K)
    matrix = np.array([identity_row(pair, basis) for pair in pairs])
    rhs = np.array([pair.rhs for pair in pairs])
    return IdentitySystem(
        grid=grid, K=K, matrix=matrix, rhs=rhs, pair_index=[p.index for p in pairs]
    )


@dataclass
class RecoveryResult:
    """Recovered differences a = A1 - A2, b = X1 - X2, c = V1 - V2."""

    a: ScalarField
    b: VectorField
    c: ScalarField
    residual: float
    condition: float
    coefficients: np.ndarray

    def to_dict(self) -> dict:
        return {
            "residual": self.residual,
            "condition": self.condition,
            "a_sup": self.a.sup(),
            "b_sup": self.b.sup(),
            "c_sup": self.c.sup(),
        }


def recover_coefficient_difference(system: IdentitySystem, reg: float = 1e-8) -> RecoveryResult:
    """Tikhonov-regularized least squares on the equilibrated identity system.

    The penalty is ``reg`` times the largest squared singular value of the equilibrated
    matrix.
    """
    K = system.K
    if system.n_rows < 3 * K:
        raise PreconditionError(f"Need at least {3 * K} rows, got {system.n_rows}")

    column_scale = np.linalg.norm(system.matrix, axis=0)
    column_scale[column_scale == 0.0] = 1.0
    scaled = system.matrix / column_scale
    row_scale = np.linalg.norm(scaled, axis=1)
    row_scale[row_scale == 0.0] = 1.0
    scaled = scaled / row_scale[:, None]
    rhs = system.rhs / row_scale

    singular = linalg.svdvals(scaled)
    condition = float(singular[0] / singular[-1]) if singular[-1] > 0 else float("inf")
    if condition > CONDITION_WARNING:
        logger.warning(f"Identity system is badly conditioned: {condition:.3e}")
    n_unknowns = scaled.shape[1]
    stacked = np.vstack([scaled, np.sqrt(reg) * singular[0] * np.eye(n_unknowns)])
    solution, *_ = linalg.lstsq(stacked, np.concatenate([rhs, np.zeros(n_unknowns)]))
    coefficients = solution / column_scale

    misfit = np.linalg.norm(system.matrix @ coefficients - system.rhs)
    residual = float(misfit / max(np.linalg.norm(system.rhs), np.finfo(float).tiny))

    basis = coefficient_basis(system.grid, K)
    fields = [np.tensordot(coefficients[k * K : (k + 1) * K], basis, axes=1) for k in range(4)]
    logger.info(f"Recovered coefficient differences: condition {condition:.3e}")
    return RecoveryResult(
        a=ScalarField(system.grid, fields[0]),
        b=VectorField(system.grid, np.stack(fields[1:3])),
        c=ScalarField(system.grid, fields[3]),
        residual=residual,
        condition=condition,
        coefficients=coefficients,
    )


def gauge_transform(Q: Nonlinearity, phi: ScalarField) -> Nonlinearity:
    """T_phi Q: (x, z, p, q) -> lap^2 phi + Q(x, z + phi, p + grad phi, q + lap phi)."""
    if phi.sup() == 0.0:
        return Q
    defect = cauchy_norm(cauchy_data(phi))
    if defect > CLAMPED_TOL * max(1.0, c2_norm(phi)):
        logger.error(f"Gauge field is not clamped: Cauchy norm {defect:.3e}")
        raise PreconditionError(f"Gauge field must have zero Cauchy data (got {defect:.3e})")
    return GaugeTransformed(Q, phi.without_trace())


def gauge_pair(
    Q1: Nonlinearity, w1: ScalarField, phi: ScalarField
) -> Tuple[Nonlinearity, ScalarField]:
    """Q2 = T_{-phi} Q1 and w2 = w1 + phi, so that T_phi Q2 = Q1 and u_{2,v} = u_{1,v} + phi."""
    return gauge_transform(Q1, -phi), w1 + phi


def phi_independence_check(
    Q1: Nonlinearity,
    Q2: Nonlinearity,
    w1: ScalarField,
    w2: ScalarField,
    v_list: Sequence[ScalarField],
    cfg: FixedPointConfig = FixedPointConfig(),
) -> float:
    """max_v c2_norm(phi_v - phi_ref), phi_v = u_{2,v} - u_{1,v}, reference = first entry of v_list."""
    mismatch = linearized_coeffs(Q1, w1).max_difference(linearized_coeffs(Q2, w2))
    if mismatch > EQUAL_COEFFICIENT_TOL:
        logger.error(f"Linearized coefficients differ by {mismatch:.3e}")
        raise PreconditionError(f"Linearized coefficients differ by {mismatch:.3e}")
    if len(v_list) <= 1:
        return 0.0
    op1, op2 = linearize(Q1, w1), linearize(Q2, w2)
    phis = []
    for v in v_list:
        u1 = solution_map_S(Q1, w1, v, cfg, op1)
        u2 = second_solution_map_T(Q1, Q2, w1, w2, v, cfg, op1, op2).u2
        phis.append(u2 - u1)
    return max(c2_norm(phi - phis[0]) for phi in phis[1:])


@dataclass
class SweepRecord:
    x: Tuple[float, float]
    lam: float
    t: float
    rho: float
    rho_lap: float
    rho_grad: Tuple[float, float]
    jet: Tuple[float, float, float, float]
    q1: float
    q2: float

    @property
    def residual(self) -> float:
        return abs(self.q1 - self.q2)

    @property
    def root_error(self) -> float:
        return abs(self.rho - self.lam)


@dataclass
class SweepResult:
    records: List[SweepRecord] = field(default_factory=list)
    epsilon: List[float] = field(default_factory=list)
    skipped: List[Tuple[Tuple[float, float], str]] = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        return max((r.residual for r in self.records), default=0.0)

    @property
    def max_root_error(self) -> float:
        return max((r.root_error for r in self.records), default=0.0)

    def rows(self) -> List[dict]:
        return [
            {
                "x": r.x[0],
                "y": r.x[1],
                "lambda": r.lam,
                "t": r.t,
                "rho": r.rho,
                "rho_lap": r.rho_lap,
                "rho_x": r.rho_grad[0],
                "rho_y": r.rho_grad[1],
                "u": r.jet[0],
                "ux": r.jet[1],
                "uy": r.jet[2],
                "lap_u": r.jet[3],
                "q1": r.q1,
                "q2": r.q2,
                "residual": r.residual,
            }
            for r in self.records
        ]


def reachable_sweep(
    Q1: Nonlinearity,
    Q2: Nonlinearity,
    phi: ScalarField,
    w: ScalarField,
    x_list: Sequence[Tuple[float, float]],
    lambda_fractions: Sequence[float],
    basis: SolutionBasis,
    cfg: FixedPointConfig = FixedPointConfig(),
    op: Optional[AssembledOperator] = None,
    reg: float = 0.0,
) -> SweepResult:
    """Compare Q1 with T_phi Q2 on jets reached by u_{1, t v_x}.

    For each point the control ``v_x`` has value, gradient and Laplacian 4 at the point.
    ``t`` ranges over the ball ``c2_norm(t v_x) <= 0.9 delta_cap``; the usable lambda
    range is ``eps = 0.9 min(-rho(-t_max), rho(t_max))`` and the sweep visits
    ``lambda = fraction * eps``, solving ``rho(t) = lambda`` by bisection.
    """
    op = linearize(Q1, w) if op is None else op
    Q2_gauged = gauge_transform(Q2, phi)
    grid = w.grid
    jet_w = jet(w)
    result = SweepResult()

    for x in x_list:
        i, j = grid.node(*x)
        v = point_control(basis, x, reg=reg)
        t_max = 0.9 * cfg.delta_cap / c2_norm(v)

        def reached(t: float) -> ScalarField:
            return solution_map_S(Q1, w, t * v, cfg, op)

        def rho(t: float) -> float:
            return float(reached(t).values[i, j] - w.values[i, j])

        low, high = rho(-t_max), rho(t_max)
        epsilon = 0.9 * min(-low, high)
        if epsilon <= 0.0:
            logger.warning(f"No bracket at {x}: rho(-t)={low:.3e}, rho(t)={high:.3e}")
            result.skipped.append((tuple(x), "rho does not change sign over the ball"))
            continue
        result.epsilon.append(epsilon)

        for fraction in lambda_fractions:
            lam = float(fraction) * epsilon
            if lam == 0.0:
                t = 0.0
            else:
                t = optimize.bisect(lambda s: rho(s) - lam, -t_max, t_max, xtol=ROOT_XTOL)
            u = reached(t)
            jet_u = jet(u)
            record = SweepRecord(
                x=tuple(x),
                lam=lam,
                t=float(t),
                rho=float(jet_u[0, i, j] - jet_w[0, i, j]),
                rho_lap=float(jet_u[3, i, j] - jet_w[3, i, j]),
                rho_grad=(
                    float(jet_u[1, i, j] - jet_w[1, i, j]),
                    float(jet_u[2, i, j] - jet_w[2, i, j]),
                ),
                jet=tuple(float(value) for value in jet_u[:, i, j]),
                q1=float(eval_Q(Q1, u).values[i, j]),
                q2=float(eval_Q(Q2_gauged, u).values[i, j]),
            )
            logger.debug(
                f"Sweep {x} lambda={lam:.3e}: t={t:.6e}, residual {record.residual:.3e}"
            )
            result.records.append(record)
    logger.info(
        f"Reachable sweep: {len(result.records)} points, max residual {result.max_residual:.3e}"
    )
    return result
