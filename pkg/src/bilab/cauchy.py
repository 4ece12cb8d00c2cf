"""Cauchy data, their sup-norm and the empirical stability probe."""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from bilab.grid import (
    BoundaryTrace,
    ScalarField,
    c2_norm,
    laplacian,
    normal_derivative,
    random_boundary_data,
)
from bilab.linear import AssembledOperator, NavierData, solve_linear
from bilab.logging import configure_module_logger
from bilab.nonlinearity import Nonlinearity
from bilab.solution_map import FixedPointConfig, linearize, solution_map_S

logger = configure_module_logger(__name__)

DEGENERATE_NORM = 1e-12


@dataclass(frozen=True, eq=False)
class CauchyData:
    """Boundary quadruple (u, d_nu u, lap u, d_nu lap u)."""

    u: BoundaryTrace
    du_n: BoundaryTrace
    lap_u: BoundaryTrace
    dlap_n: BoundaryTrace

    def traces(self) -> Tuple[BoundaryTrace, ...]:
        return (self.u, self.du_n, self.lap_u, self.dlap_n)

    def __add__(self, other: "CauchyData") -> "CauchyData":
        return CauchyData(*(a + b for a, b in zip(self.traces(), other.traces())))

    def __sub__(self, other: "CauchyData") -> "CauchyData":
        return CauchyData(*(a - b for a, b in zip(self.traces(), other.traces())))

    def __mul__(self, scalar: float) -> "CauchyData":
        return CauchyData(*(scalar * a for a in self.traces()))

    __rmul__ = __mul__


def cauchy_data(u: ScalarField) -> CauchyData:
    """Traces of u; the Laplacian trace comes from the mixed solver when u carries it."""
    lap = laplacian(u)
    return CauchyData(
        u=BoundaryTrace(u.grid, u.boundary_values()),
        du_n=normal_derivative(u),
        lap_u=BoundaryTrace(u.grid, u.laplacian_trace()),
        dlap_n=normal_derivative(lap),
    )


def cauchy_norm(cd: CauchyData) -> float:
    return max(trace.sup() for trace in cd.traces())


def navier_to_neumann(
    Q: Nonlinearity,
    w: ScalarField,
    bc: NavierData,
    cfg: FixedPointConfig = FixedPointConfig(),
    op: Optional[AssembledOperator] = None,
) -> Tuple[BoundaryTrace, BoundaryTrace]:
    """Neumann pair of the nonlinear solution near w with Navier data bc."""
    op = linearize(Q, w) if op is None else op
    v = solve_linear(op, ScalarField.zeros(w.grid), bc - NavierData.of(w))
    u = solution_map_S(Q, w, v, cfg, op)
    return normal_derivative(u), normal_derivative(laplacian(u))


def pair_ratio(u1: ScalarField, u2: ScalarField) -> Optional[float]:
    """c2_norm(u1 - u2) / cauchy_norm(cauchy_data(u1 - u2)), None for degenerate pairs."""
    difference = u1 - u2
    boundary = cauchy_norm(cauchy_data(difference))
    if boundary < DEGENERATE_NORM:
        return None
    return c2_norm(difference) / boundary


@dataclass
class StabilityReport:
    seed: int
    ratios: List[float] = field(default_factory=list)
    skipped: int = 0

    @property
    def max_ratio(self) -> float:
        return max(self.ratios) if self.ratios else float("nan")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "ratios": self.ratios,
            "max_ratio": self.max_ratio,
            "skipped": self.skipped,
        }


def random_linear_solution(
    op: AssembledOperator,
    rng: np.random.Generator,
    n_modes: int,
    cap: float,
) -> ScalarField:
    """Solution of L v = 0 with random Fourier Navier data, scaled to c2 norm at most cap."""
    grid = op.grid
    bc = NavierData.from_arrays(
        grid,
        random_boundary_data(grid, rng, n_modes),
        random_boundary_data(grid, rng, n_modes),
    )
    v = solve_linear(op, ScalarField.zeros(grid), bc)
    norm = c2_norm(v)
    return v * (cap / norm) if norm > cap else v


def stability_probe(
    Q: Nonlinearity,
    w: ScalarField,
    n_pairs: int,
    seed: int,
    cfg: FixedPointConfig = FixedPointConfig(),
    n_modes: int = 5,
    radius: float = 0.1,
) -> StabilityReport:
    """Ratios of interior to Cauchy-data differences over random pairs of solutions near w.

    Pair ``k`` draws from its own generator ``default_rng([seed, k])``.
    """
    op = linearize(Q, w)
    cap = min(radius, 0.5 * cfg.delta_cap)
    report = StabilityReport(seed=seed)
    for k in range(n_pairs):
        rng = np.random.default_rng([seed, k])
        u1 = solution_map_S(Q, w, random_linear_solution(op, rng, n_modes, cap), cfg, op)
        u2 = solution_map_S(Q, w, random_linear_solution(op, rng, n_modes, cap), cfg, op)
        ratio = pair_ratio(u1, u2)
        if ratio is None:
            report.skipped += 1
            logger.debug(f"Pair {k} skipped as degenerate")
            continue
        report.ratios.append(ratio)
    logger.info(
        f"Stability probe (seed {seed}): {len(report.ratios)} pairs, "
        f"max ratio {report.max_ratio:.4g}, {report.skipped} skipped"
    )
    return report
